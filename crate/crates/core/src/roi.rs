//! Salient regions of interest: connected components of a thresholded map,
//! patch tiling for fixed-size downstream models, and super-resolution
//! scale selection.

use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::imageio;
use crate::saliency::SaliencyMap;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MIN_AREA: usize = 16;
pub const DEFAULT_PATCH: usize = 256;

/// Bounding box of one 8-connected salient component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    /// Salient pixels in the component.
    pub pixel_area: usize,
    /// Label in raster order of each component's first pixel.
    pub component_id: usize,
}

/// Labels 8-connected components of `mask` (row-major, `w` columns).
/// Returns a label per pixel (`0` for background, then `1..`) in raster
/// order of first appearance, and the component count.
pub fn label_components(mask: &[bool], w: usize) -> (Vec<usize>, usize) {
    let h = if w == 0 { 0 } else { mask.len() / w };
    let mut labels = vec![0usize; mask.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask[j] && labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, next)
}

/// Components of `map >= threshold` with at least `min_area` pixels, largest
/// first; ties go to the smaller `(y0, x0)`.
pub fn extract_rois(map: &SaliencyMap, threshold: f64, min_area: usize) -> Result<Vec<Roi>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    let w = map.width();
    let (labels, count) = label_components(&map.binarize(threshold), w);
    let mut boxes = vec![(usize::MAX, usize::MAX, 0usize, 0usize, 0usize); count];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (y, x) = (i / w, i % w);
        let b = &mut boxes[l - 1];
        b.0 = b.0.min(x);
        b.1 = b.1.min(y);
        b.2 = b.2.max(x);
        b.3 = b.3.max(y);
        b.4 += 1;
    }
    let mut rois: Vec<Roi> = boxes
        .into_iter()
        .enumerate()
        .filter(|(_, b)| b.4 >= min_area.max(1))
        .map(|(id, (x0, y0, x1, y1, area))| Roi {
            x0,
            y0,
            width: x1 - x0 + 1,
            height: y1 - y0 + 1,
            pixel_area: area,
            component_id: id + 1,
        })
        .collect();
    rois.sort_by(|a, b| b.pixel_area.cmp(&a.pixel_area).then((a.y0, a.x0).cmp(&(b.y0, b.x0))));
    Ok(rois)
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// Patch-aligned region around a RoI and its tiling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchPlan {
    pub region: Rect,
    pub patch_size: usize,
    /// Row-major tiles of `region`; the index in this list is the patch index.
    pub patches: Vec<Rect>,
}

/// One axis of the snapping: grow `len` to a multiple of `ps` (capped at the
/// largest multiple that fits), centre it on the RoI, then shift it inside
/// `[0, extent)`.
fn snap_axis(start: usize, len: usize, extent: usize, ps: usize) -> (usize, usize) {
    let cap = extent / ps * ps;
    let snapped = len.div_ceil(ps).max(1) * ps;
    let snapped = snapped.min(cap);
    let centre2 = 2 * start + len;
    let lo = centre2.saturating_sub(snapped) / 2;
    let lo = lo.min(extent - snapped);
    (lo, snapped)
}

/// Snaps `roi` outward to whole patches and tiles the result.
pub fn plan_patches(roi: &Roi, image_w: usize, image_h: usize, patch_size: usize) -> Result<PatchPlan> {
    if patch_size == 0 || patch_size > image_w || patch_size > image_h {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch_size} must be positive and fit in a {image_w}x{image_h} image"
        )));
    }
    if roi.width == 0 || roi.height == 0 || roi.x0 + roi.width > image_w || roi.y0 + roi.height > image_h {
        return Err(Error::InvalidArgument(format!(
            "RoI {}x{} at ({}, {}) lies outside the {image_w}x{image_h} image",
            roi.width, roi.height, roi.x0, roi.y0
        )));
    }
    let (x0, width) = snap_axis(roi.x0, roi.width, image_w, patch_size);
    let (y0, height) = snap_axis(roi.y0, roi.height, image_h, patch_size);
    let mut patches = Vec::new();
    for ty in (0..height).step_by(patch_size) {
        for tx in (0..width).step_by(patch_size) {
            patches.push(Rect {
                x0: x0 + tx,
                y0: y0 + ty,
                width: patch_size,
                height: patch_size,
            });
        }
    }
    Ok(PatchPlan {
        region: Rect { x0, y0, width, height },
        patch_size,
        patches,
    })
}

/// `clamp(⌊target / max(w, h)⌋, 1, 4)`.
pub fn sr_scale_for(roi: &Roi, target_size: usize) -> usize {
    let side = roi.width.max(roi.height).max(1);
    (target_size / side).clamp(1, 4)
}

/// `index,x0,y0,width,height` rows.
pub fn manifest_csv(plan: &PatchPlan) -> String {
    let mut out = String::from("index,x0,y0,width,height\n");
    for (i, r) in plan.patches.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{},{},{}", r.x0, r.y0, r.width, r.height);
    }
    out
}

pub fn crop(image: &RgbImage, r: &Rect) -> RgbImage {
    image::imageops::crop_imm(image, r.x0 as u32, r.y0 as u32, r.width as u32, r.height as u32).to_image()
}

/// Writes each patch as `patch_NNN.png` plus `manifest.csv` into `out_dir`.
/// Returns the manifest text.
pub fn crop_and_emit(image: &RgbImage, plan: &PatchPlan, out_dir: impl AsRef<Path>) -> Result<String> {
    let out_dir = out_dir.as_ref();
    let (w, h) = image.dimensions();
    if plan.region.x0 + plan.region.width > w as usize || plan.region.y0 + plan.region.height > h as usize {
        return Err(Error::InvalidArgument(format!("plan region exceeds the {w}x{h} image")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (i, r) in plan.patches.iter().enumerate() {
        imageio::write_rgb(out_dir.join(format!("patch_{i:03}.png")), &crop(image, r))?;
    }
    let manifest = manifest_csv(plan);
    let path = out_dir.join("manifest.csv");
    std::fs::write(&path, &manifest).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn roi(x0: usize, y0: usize, w: usize, h: usize) -> Roi {
        Roi {
            x0,
            y0,
            width: w,
            height: h,
            pixel_area: w * h,
            component_id: 1,
        }
    }

    /// Pixel sets of 8-connected components found by breadth-first search.
    fn flood_fill(mask: &[bool], w: usize, h: usize) -> BTreeSet<BTreeSet<usize>> {
        let mut seen = vec![false; mask.len()];
        let mut out = BTreeSet::new();
        for s in 0..mask.len() {
            if !mask[s] || seen[s] {
                continue;
            }
            let mut comp = BTreeSet::new();
            let mut queue = std::collections::VecDeque::from([s]);
            seen[s] = true;
            while let Some(i) = queue.pop_front() {
                comp.insert(i);
                let (y, x) = ((i / w) as i64, (i % w) as i64);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let j = (ny * w as i64 + nx) as usize;
                        if mask[j] && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
            out.insert(comp);
        }
        out
    }

    fn components(labels: &[usize], n: usize) -> BTreeSet<BTreeSet<usize>> {
        (1..=n)
            .map(|l| labels.iter().enumerate().filter(|(_, &v)| v == l).map(|(i, _)| i).collect())
            .collect()
    }

    #[test]
    fn single_square() {
        let m = SaliencyMap::from_fn(32, 32, |y, x| ((5..15).contains(&y) && (5..15).contains(&x)) as u8 as f64).unwrap();
        let r = extract_rois(&m, 0.5, 16).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!((r[0].x0, r[0].y0, r[0].width, r[0].height, r[0].pixel_area), (5, 5, 10, 10, 100));
    }

    #[test]
    fn larger_blob_first_and_speckle_dropped() {
        let m = SaliencyMap::from_fn(32, 32, |y, x| {
            let a = (2..6).contains(&y) && (2..7).contains(&x);
            let b = (10..20).contains(&y) && (15..25).contains(&x);
            let speck = y == 30 && x == 30;
            (a || b || speck) as u8 as f64
        })
        .unwrap();
        let r = extract_rois(&m, 0.5, 16).unwrap();
        assert_eq!(r.iter().map(|r| r.pixel_area).collect::<Vec<_>>(), vec![100, 20]);
        assert!(extract_rois(&SaliencyMap::filled(8, 8, 0.0).unwrap(), 0.5, 1).unwrap().is_empty());
        assert!(extract_rois(&m, 1.0, 1).is_err());
    }

    #[test]
    fn diagonal_pixels_join() {
        let mask = [true, false, false, true];
        assert_eq!(label_components(&mask, 2).1, 1);
    }

    #[test]
    fn reference_region_shapes() {
        let plan = plan_patches(&roi(300, 200, 300, 200), 1024, 768, 256).unwrap();
        assert_eq!((plan.region.width, plan.region.height, plan.patches.len()), (512, 256, 2));
        let plan = plan_patches(&roi(100, 100, 400, 400), 1024, 768, 256).unwrap();
        assert_eq!((plan.region.width, plan.region.height, plan.patches.len()), (512, 512, 4));
        let aligned = plan_patches(&roi(256, 0, 256, 512), 1024, 768, 256).unwrap();
        assert_eq!(
            aligned.region,
            Rect {
                x0: 256,
                y0: 0,
                width: 256,
                height: 512
            }
        );
    }

    #[test]
    fn snapping_shifts_inward_at_edges() {
        let plan = plan_patches(&roi(1000, 740, 24, 28), 1024, 768, 256).unwrap();
        assert_eq!(
            plan.region,
            Rect {
                x0: 768,
                y0: 512,
                width: 256,
                height: 256
            }
        );
        let big = plan_patches(&roi(0, 0, 1000, 700), 1000, 700, 256).unwrap();
        assert_eq!((big.region.width, big.region.height), (768, 512));
        assert!(plan_patches(&roi(900, 0, 200, 10), 1024, 768, 256).is_err());
        assert!(plan_patches(&roi(0, 0, 8, 8), 100, 100, 256).is_err());
    }

    #[test]
    fn sr_scale_examples() {
        assert_eq!(sr_scale_for(&roi(0, 0, 64, 50), 256), 4);
        assert_eq!(sr_scale_for(&roi(0, 0, 128, 96), 256), 2);
        assert_eq!(sr_scale_for(&roi(0, 0, 300, 300), 256), 1);
        assert_eq!(sr_scale_for(&roi(0, 0, 10, 10), 256), 4);
        assert_eq!(sr_scale_for(&roi(0, 0, 80, 10), 256), 3);
    }

    #[test]
    fn emit_and_reassemble() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(64, 48, |x, y| image::Rgb([x as u8, y as u8, (x ^ y) as u8]));
        let plan = plan_patches(&roi(10, 5, 30, 12), 64, 48, 16).unwrap();
        assert_eq!(plan.patches.len(), 2);
        let manifest = crop_and_emit(&img, &plan, dir.path()).unwrap();
        assert_eq!(manifest.lines().count(), 3);
        let mut rebuilt = RgbImage::new(plan.region.width as u32, plan.region.height as u32);
        for line in manifest.lines().skip(1) {
            let f: Vec<usize> = line.split(',').map(|v| v.parse().unwrap()).collect();
            let patch = imageio::read_rgb(dir.path().join(format!("patch_{:03}.png", f[0]))).unwrap();
            let (dx, dy) = (f[1] - plan.region.x0, f[2] - plan.region.y0);
            image::imageops::replace(&mut rebuilt, &patch, dx as i64, dy as i64);
        }
        assert_eq!(rebuilt, crop(&img, &plan.region));

        let empty = PatchPlan {
            region: plan.region,
            patch_size: 16,
            patches: vec![],
        };
        let out = dir.path().join("empty");
        assert_eq!(crop_and_emit(&img, &empty, &out).unwrap().lines().count(), 1);
        assert_eq!(std::fs::read_dir(&out).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn labels_match_flood_fill(bits in proptest::collection::vec(any::<bool>(), 16 * 16)) {
            let (labels, n) = label_components(&bits, 16);
            prop_assert_eq!(components(&labels, n), flood_fill(&bits, 16, 16));
        }

        #[test]
        fn tiling_is_exact(x0 in 0usize..200, y0 in 0usize..150, w in 1usize..200, h in 1usize..150, ps in 1usize..64) {
            let (iw, ih) = (400usize, 300usize);
            let r = roi(x0.min(iw - 1), y0.min(ih - 1), w.min(iw - x0.min(iw - 1)), h.min(ih - y0.min(ih - 1)));
            let plan = plan_patches(&r, iw, ih, ps).unwrap();
            let reg = plan.region;
            prop_assert!(reg.x0 + reg.width <= iw && reg.y0 + reg.height <= ih);
            prop_assert_eq!(reg.width % ps, 0);
            let mut cover = vec![0u8; reg.width * reg.height];
            for p in &plan.patches {
                for y in p.y0..p.y0 + p.height {
                    for x in p.x0..p.x0 + p.width {
                        cover[(y - reg.y0) * reg.width + (x - reg.x0)] += 1;
                    }
                }
            }
            prop_assert!(cover.iter().all(|&c| c == 1));
        }

        #[test]
        fn lower_threshold_never_shrinks(vals in proptest::collection::vec(0.0..1.0f64, 12 * 12), t in 0.2..0.8f64) {
            let m = SaliencyMap::new(12, 12, vals).unwrap();
            let hi = extract_rois(&m, t, 1).unwrap();
            let lo_mask = m.binarize(t - 0.1);
            let (labels, _) = label_components(&lo_mask, 12);
            for r in hi {
                let mask = m.binarize(t);
                let (hl, _) = label_components(&mask, 12);
                let first = hl.iter().position(|&l| l == r.component_id).unwrap();
                let grown = labels.iter().filter(|&&l| l == labels[first]).count();
                prop_assert!(grown >= r.pixel_area);
            }
        }

        #[test]
        fn scale_non_increasing(a in 1usize..600, b in 1usize..600) {
            let (s, l) = (a.min(b), a.max(b));
            prop_assert!(sr_scale_for(&roi(0, 0, s, 1), 256) >= sr_scale_for(&roi(0, 0, l, 1), 256));
        }
    }
}
