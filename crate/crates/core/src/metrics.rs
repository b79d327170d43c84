//! Saliency evaluation: MAE, precision/recall over the 256 binarization
//! thresholds, F-measure, and the structure measure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data::MASK_THRESHOLD;
use crate::error::{Error, Result};
use crate::fmt::g6;
use crate::imageio;
use crate::saliency::{quantize, SaliencyMap};

/// Weight of precision relative to recall in the F-measure.
pub const BETA2: f64 = 0.3;
pub const THRESHOLDS: usize = 256;

fn check_extent(op: &'static str, pred: &SaliencyMap, gt: &SaliencyMap) -> Result<()> {
    if pred.same_extent(gt) {
        Ok(())
    } else {
        Err(Error::InvalidShape {
            op,
            msg: format!(
                "prediction is {}x{} but ground truth is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            ),
        })
    }
}

fn binary_gt(op: &'static str, gt: &SaliencyMap) -> Result<Vec<bool>> {
    gt.data()
        .iter()
        .map(|&v| {
            if v == 0.0 || v == 1.0 {
                Ok(v == 1.0)
            } else {
                Err(Error::InvalidArgument(format!("{op}: ground truth value {v} is not binary")))
            }
        })
        .collect()
}

/// Mean absolute difference.
pub fn mae(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    check_extent("mae", pred, gt)?;
    Ok(pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

/// `(1 + β²)·P·R / (β²·P + R)`, or 0 when the denominator vanishes.
pub fn f_beta(precision: f64, recall: f64, beta2: f64) -> f64 {
    let den = beta2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / den
    }
}

/// Precision and recall at each threshold `t = 0..=255`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl PrCurve {
    pub fn f_beta(&self, t: usize) -> f64 {
        f_beta(self.precision[t], self.recall[t], BETA2)
    }

    /// Best F-measure and the first threshold attaining it.
    pub fn f_beta_max(&self) -> (f64, usize) {
        (0..THRESHOLDS).fold((f64::NEG_INFINITY, 0), |(best, bt), t| {
            let f = self.f_beta(t);
            if f > best {
                (f, t)
            } else {
                (best, bt)
            }
        })
    }

    /// `threshold,precision,recall,fbeta` with one row per threshold.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall,fbeta\n");
        for t in 0..THRESHOLDS {
            let _ = writeln!(
                out,
                "{t},{},{},{}",
                g6(self.precision[t]),
                g6(self.recall[t]),
                g6(self.f_beta(t))
            );
        }
        out
    }
}

/// Counts of positive and negative ground-truth pixels per quantized level.
struct LevelCounts {
    fg: [u64; 256],
    bg: [u64; 256],
}

fn level_counts(pred: &SaliencyMap, gt: &[bool]) -> LevelCounts {
    let mut c = LevelCounts {
        fg: [0; 256],
        bg: [0; 256],
    };
    for (&p, &g) in pred.data().iter().zip(gt) {
        let q = quantize(p) as usize;
        if g {
            c.fg[q] += 1;
        } else {
            c.bg[q] += 1;
        }
    }
    c
}

fn pr_from_counts(tp: u64, fp: u64, positives: u64) -> (f64, f64) {
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if positives == 0 { 1.0 } else { tp as f64 / positives as f64 };
    (precision, recall)
}

/// Single-image curve. A pixel is predicted salient at threshold `t` when
/// its 8-bit level `q` satisfies `q ≥ t + 0.5`.
pub fn image_pr(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<PrCurve> {
    check_extent("pr", pred, gt)?;
    let gt = binary_gt("pr", gt)?;
    let c = level_counts(pred, &gt);
    let positives: u64 = c.fg.iter().sum();
    let mut precision = vec![0.0; THRESHOLDS];
    let mut recall = vec![0.0; THRESHOLDS];
    // Levels strictly above t, accumulated from the top.
    let (mut tp, mut fp) = (0u64, 0u64);
    for t in (0..THRESHOLDS).rev() {
        (precision[t], recall[t]) = pr_from_counts(tp, fp, positives);
        tp += c.fg[t];
        fp += c.bg[t];
    }
    Ok(PrCurve { precision, recall })
}

pub fn pr_at_threshold(pred: &SaliencyMap, gt: &SaliencyMap, t: usize) -> Result<(f64, f64)> {
    if t >= THRESHOLDS {
        return Err(Error::InvalidArgument(format!("threshold {t} outside 0..=255")));
    }
    let c = image_pr(pred, gt)?;
    Ok((c.precision[t], c.recall[t]))
}

/// Per-threshold means of the image curves, then the best F-measure.
pub fn dataset_pr_and_fmax(pairs: &[(SaliencyMap, SaliencyMap)]) -> Result<(PrCurve, f64)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no image pairs to evaluate".into()));
    }
    let curves = pairs
        .par_iter()
        .map(|(p, g)| image_pr(p, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_curve(&curves))
}

fn mean_curve(curves: &[PrCurve]) -> (PrCurve, f64) {
    let n = curves.len() as f64;
    let avg = |f: fn(&PrCurve) -> &Vec<f64>| -> Vec<f64> {
        (0..THRESHOLDS).map(|t| curves.iter().map(|c| f(c)[t]).sum::<f64>() / n).collect()
    };
    let curve = PrCurve {
        precision: avg(|c| &c.precision),
        recall: avg(|c| &c.recall),
    };
    let (fmax, _) = curve.f_beta_max();
    (curve, fmax)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased standard deviation; 0 for fewer than two values.
fn std_unbiased(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn object_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let x = mean(values);
    2.0 * x / (x * x + 1.0 + std_unbiased(values) + f64::EPSILON)
}

fn s_object(pred: &[f64], gt: &[bool]) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p).collect();
    let u = fg.len() as f64 / gt.len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

fn region_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let (x, y) = (mean(pred), mean(gt));
    let den = n - 1.0 + f64::EPSILON;
    let sxx = pred.iter().map(|p| (p - x) * (p - x)).sum::<f64>() / den;
    let syy = gt.iter().map(|g| (g - y) * (g - y)).sum::<f64>() / den;
    let sxy = pred.iter().zip(gt).map(|(p, g)| (p - x) * (g - y)).sum::<f64>() / den;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pred: &SaliencyMap, gt: &[bool]) -> f64 {
    let (h, w) = (pred.height(), pred.width());
    let total = gt.iter().filter(|&&g| g).count() as f64;
    // 1-based rounded centroid: the first `cx` columns and `cy` rows form
    // the left and top quadrants.
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, _) in gt.iter().enumerate().filter(|(_, &g)| g) {
        sx += (i % w + 1) as f64;
        sy += (i / w + 1) as f64;
    }
    let cx = (sx / total).round() as usize;
    let cy = (sy / total).round() as usize;
    let area = (h * w) as f64;
    let quads = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let mut score = 0.0;
    for (y0, y1, x0, x1) in quads {
        if y1 <= y0 || x1 <= x0 {
            continue;
        }
        let mut p = Vec::with_capacity((y1 - y0) * (x1 - x0));
        let mut g = Vec::with_capacity(p.capacity());
        for y in y0..y1 {
            for x in x0..x1 {
                p.push(pred.get(y, x));
                g.push(gt[y * w + x] as u8 as f64);
            }
        }
        let weight = p.len() as f64 / area;
        score += weight * region_ssim(&p, &g);
    }
    score
}

/// Structure measure `α·S_object + (1 − α)·S_region` with `α = 0.5`.
/// An all-background target scores `1 − mean(pred)`, an all-foreground one
/// `mean(pred)`.
pub fn s_measure(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    check_extent("s_measure", pred, gt)?;
    let gtb = binary_gt("s_measure", gt)?;
    let y = gt.mean();
    let q = if y == 0.0 {
        1.0 - pred.mean()
    } else if y == 1.0 {
        pred.mean()
    } else {
        let alpha = 0.5;
        alpha * s_object(pred.data(), &gtb) + (1.0 - alpha) * s_region(pred, &gtb)
    };
    Ok(q.max(0.0))
}

/// Dataset-level scores.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub f_beta_max: f64,
    /// Threshold at which `f_beta_max` is reached.
    pub best_threshold: usize,
    pub s_measure_mean: f64,
    pub mae_mean: f64,
    pub pr: PrCurve,
    pub n_images: usize,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        format!(
            "Fmax={:.4} Sm={:.4} MAE={:.4}",
            self.f_beta_max, self.s_measure_mean, self.mae_mean
        )
    }
}

/// Scores a list of `(prediction, binary ground truth)` pairs.
pub fn evaluate_pairs(pairs: &[(SaliencyMap, SaliencyMap)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no image pairs to evaluate".into()));
    }
    let per_image = pairs
        .par_iter()
        .map(|(p, g)| Ok((image_pr(p, g)?, s_measure(p, g)?, mae(p, g)?)))
        .collect::<Result<Vec<_>>>()?;
    let curves: Vec<PrCurve> = per_image.iter().map(|(c, _, _)| c.clone()).collect();
    let (pr, _) = mean_curve(&curves);
    let (f_beta_max, best_threshold) = pr.f_beta_max();
    let sm: Vec<f64> = per_image.iter().map(|(_, s, _)| *s).collect();
    let ma: Vec<f64> = per_image.iter().map(|(_, _, m)| *m).collect();
    Ok(EvalReport {
        f_beta_max,
        best_threshold,
        s_measure_mean: mean(&sm),
        mae_mean: mean(&ma),
        pr,
        n_images: pairs.len(),
    })
}

fn by_stem(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if imageio::is_image_path(&path) {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
            out.insert(stem, path);
        }
    }
    Ok(out)
}

/// Loads a saved 8-bit prediction, resized bilinearly to `w×h` if needed.
pub fn load_prediction(path: &Path, w: u32, h: u32) -> Result<SaliencyMap> {
    let img = imageio::read_gray(path)?;
    let (sw, sh) = img.dimensions();
    if (sw, sh) == (w, h) {
        return SaliencyMap::from_u8(h as usize, w as usize, img.as_raw());
    }
    let unit: Vec<f32> = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    let data = imageio::resize_map(&unit, sw, sh, w, h).into_iter().map(|v| (v as f64).clamp(0.0, 1.0)).collect();
    SaliencyMap::new(h as usize, w as usize, data)
}

/// Loads a mask binarized at 128.
pub fn load_mask(path: &Path) -> Result<SaliencyMap> {
    let img = imageio::read_gray(path)?;
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| (v >= MASK_THRESHOLD) as u8 as f64).collect();
    SaliencyMap::new(h as usize, w as usize, data)
}

/// Pairs files by stem and scores them. Predictions whose size differs from
/// the mask are resized to the mask.
pub fn evaluate_dataset(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>) -> Result<EvalReport> {
    let preds = by_stem(pred_dir.as_ref())?;
    let gts = by_stem(gt_dir.as_ref())?;
    let missing_pred: Vec<&str> = gts.keys().filter(|k| !preds.contains_key(*k)).map(String::as_str).collect();
    let missing_gt: Vec<&str> = preds.keys().filter(|k| !gts.contains_key(*k)).map(String::as_str).collect();
    if !missing_pred.is_empty() || !missing_gt.is_empty() {
        return Err(Error::Dataset(format!(
            "unmatched files: no prediction for [{}], no ground truth for [{}]",
            missing_pred.join(", "),
            missing_gt.join(", ")
        )));
    }
    if gts.is_empty() {
        return Err(Error::Dataset("no images to evaluate".into()));
    }
    let pairs = gts
        .iter()
        .map(|(stem, gpath)| {
            let gt = load_mask(gpath)?;
            let pred = load_prediction(&preds[stem], gt.width() as u32, gt.height() as u32)?;
            Ok((pred, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_pairs(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(h: usize, w: usize, v: &[f64]) -> SaliencyMap {
        SaliencyMap::new(h, w, v.to_vec()).unwrap()
    }

    /// Thresholds each pixel directly and counts.
    fn brute_pr(pred: &[f64], gt: &[f64], t: usize) -> (f64, f64) {
        let (mut tp, mut fp, mut pos) = (0, 0, 0);
        for (&p, &g) in pred.iter().zip(gt) {
            let level = (255.0 * p + 0.5).floor();
            let hit = level >= t as f64 + 0.5;
            let salient = g == 1.0;
            tp += (hit && salient) as u32;
            fp += (hit && !salient) as u32;
            pos += salient as u32;
        }
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if pos == 0 { 1.0 } else { tp as f64 / pos as f64 };
        (precision, recall)
    }

    #[test]
    fn mae_examples() {
        let g = map(1, 2, &[0.0, 1.0]);
        assert_eq!(mae(&g, &g).unwrap(), 0.0);
        assert!((mae(&map(1, 2, &[0.2, 0.8]), &g).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(mae(&map(1, 2, &[1.0, 1.0]), &map(1, 2, &[0.0, 0.0])).unwrap(), 1.0);
        assert!(mae(&map(1, 1, &[0.0]), &g).is_err());
    }

    #[test]
    fn pr_examples() {
        let g = map(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        for t in [1, 100, 254] {
            assert_eq!(pr_at_threshold(&g, &g, t).unwrap(), (1.0, 1.0));
        }
        assert_eq!(pr_at_threshold(&map(2, 2, &[1.0; 4]), &g, 0).unwrap(), (0.5, 1.0));
        let dim = map(2, 2, &[254.0 / 255.0; 4]);
        assert_eq!(pr_at_threshold(&dim, &g, 255).unwrap(), (1.0, 0.0));
        assert!(pr_at_threshold(&g, &map(2, 2, &[0.5; 4]), 3).is_err());
    }

    #[test]
    fn f_beta_examples() {
        assert!((f_beta(0.8, 0.5, BETA2) - 0.702703).abs() < 1e-6);
        assert!((f_beta(0.37, 0.37, 0.7) - 0.37).abs() < 1e-15);
        assert_eq!(f_beta(1.0, 0.0, BETA2), 0.0);
        assert_eq!(f_beta(0.0, 0.0, BETA2), 0.0);
    }

    #[test]
    fn s_measure_examples() {
        let g = map(4, 4, &[0., 0., 0., 0., 0., 1., 1., 0., 0., 1., 1., 0., 0., 0., 0., 0.]);
        assert!((s_measure(&g, &g).unwrap() - 1.0).abs() < 1e-12);
        let inv = map(4, 4, &g.data().iter().map(|v| 1.0 - v).collect::<Vec<_>>());
        assert!(s_measure(&inv, &g).unwrap() < s_measure(&g, &g).unwrap());
        let zero = SaliencyMap::filled(4, 4, 0.0).unwrap();
        assert_eq!(s_measure(&zero, &zero).unwrap(), 1.0);
        let ones = SaliencyMap::filled(4, 4, 1.0).unwrap();
        assert_eq!(s_measure(&SaliencyMap::filled(4, 4, 0.25).unwrap(), &ones).unwrap(), 0.25);
    }

    #[test]
    fn s_measure_reference_value() {
        // Hand evaluation of the object and region terms for a 2×2 target
        // with one salient pixel at the top left and a uniform 0.5 prediction.
        let g = map(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let p = SaliencyMap::filled(2, 2, 0.5).unwrap();
        let obj_fg = 2.0 * 0.5 / (0.25 + 1.0 + 0.0 + f64::EPSILON);
        let obj_bg = obj_fg;
        let s_obj = 0.25 * obj_fg + 0.75 * obj_bg;
        // Centroid (1, 1): quadrants are single pixels, each constant in both
        // maps, so alpha = beta = 0 and every SSIM term is 1.
        let s_reg = 1.0;
        let want = 0.5 * s_obj + 0.5 * s_reg;
        assert!((s_measure(&p, &g).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn eight_by_eight_degradation() {
        let g = SaliencyMap::from_fn(8, 8, |y, x| ((2..6).contains(&y) && (1..5).contains(&x)) as u8 as f64).unwrap();
        let inv = SaliencyMap::from_fn(8, 8, |y, x| 1.0 - g.get(y, x)).unwrap();
        let blur = SaliencyMap::from_fn(8, 8, |y, x| 0.25 + 0.5 * g.get(y, x)).unwrap();
        let s_perfect = s_measure(&g, &g).unwrap();
        let s_blur = s_measure(&blur, &g).unwrap();
        let s_inv = s_measure(&inv, &g).unwrap();
        assert!(s_perfect > s_blur && s_blur > s_inv, "{s_perfect} {s_blur} {s_inv}");
        assert_eq!(mae(&inv, &g).unwrap(), 1.0);
        assert_eq!(pr_at_threshold(&inv, &g, 128).unwrap().0, 0.0);
    }

    #[test]
    fn report_extremes() {
        let g = map(2, 3, &[1., 0., 1., 0., 0., 1.]);
        let r = evaluate_pairs(&[(g.clone(), g.clone())]).unwrap();
        assert_eq!((r.f_beta_max, r.mae_mean), (1.0, 0.0));
        assert!((r.s_measure_mean - 1.0).abs() < 1e-12);
        assert_eq!(r.summary(), "Fmax=1.0000 Sm=1.0000 MAE=0.0000");
        let gray = SaliencyMap::filled(2, 3, 0.5).unwrap();
        assert_eq!(evaluate_pairs(&[(gray, g)]).unwrap().mae_mean, 0.5);
        assert!(evaluate_pairs(&[]).is_err());
    }

    #[test]
    fn csv_shape() {
        let g = map(1, 2, &[1.0, 0.0]);
        let csv = image_pr(&g, &g).unwrap().to_csv();
        assert_eq!(csv.lines().count(), 257);
        assert!(csv.starts_with("threshold,precision,recall,fbeta\n0,1,1,1\n"));
        assert!(csv.ends_with("255,1,0,0\n"));
    }

    #[test]
    fn directory_evaluation_matches_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let (pd, gd) = (dir.path().join("pred"), dir.path().join("gt"));
        let g = image::GrayImage::from_fn(6, 4, |x, y| image::Luma([if x > y { 255 } else { 0 }]));
        let p = image::GrayImage::from_fn(6, 4, |x, y| image::Luma([(x * 40 + y * 10) as u8]));
        imageio::write_gray(gd.join("a.png"), &g).unwrap();
        imageio::write_gray(pd.join("a.png"), &p).unwrap();
        let r = evaluate_dataset(&pd, &gd).unwrap();
        let pm = SaliencyMap::from_u8(4, 6, p.as_raw()).unwrap();
        let gm = load_mask(&gd.join("a.png")).unwrap();
        assert_eq!(r, evaluate_pairs(&[(pm, gm)]).unwrap());
        imageio::write_gray(gd.join("b.png"), &g).unwrap();
        let err = evaluate_dataset(&pd, &gd).unwrap_err().to_string();
        assert!(err.contains("[b]"), "{err}");
    }

    fn pairs(n: usize) -> impl Strategy<Value = Vec<(Vec<f64>, Vec<f64>)>> {
        proptest::collection::vec(
            (
                proptest::collection::vec(0.0..=1.0f64, 64),
                proptest::collection::vec(any::<bool>(), 64),
            )
                .prop_map(|(p, g)| (p, g.into_iter().map(|b| b as u8 as f64).collect())),
            1..=n,
        )
    }

    proptest! {
        #[test]
        fn matches_brute_force(raw in pairs(4)) {
            let maps: Vec<_> = raw.iter().map(|(p, g)| (map(8, 8, p), map(8, 8, g))).collect();
            let (curve, fmax) = dataset_pr_and_fmax(&maps).unwrap();
            let mut best = 0.0f64;
            for t in 0..THRESHOLDS {
                let (mut sp, mut sr) = (0.0, 0.0);
                for (p, g) in &raw {
                    let (a, b) = brute_pr(p, g, t);
                    sp += a;
                    sr += b;
                }
                let (ap, ar) = (sp / raw.len() as f64, sr / raw.len() as f64);
                prop_assert!((curve.precision[t] - ap).abs() < 1e-9);
                prop_assert!((curve.recall[t] - ar).abs() < 1e-9);
                best = best.max(f_beta(ap, ar, BETA2));
            }
            prop_assert!((fmax - best).abs() < 1e-9);
        }

        #[test]
        fn ranges_and_monotone_recall(raw in pairs(1)) {
            let (p, g) = (map(8, 8, &raw[0].0), map(8, 8, &raw[0].1));
            let c = image_pr(&p, &g).unwrap();
            for t in 1..THRESHOLDS {
                prop_assert!(c.recall[t] <= c.recall[t - 1]);
            }
            let r = evaluate_pairs(&[(p, g)]).unwrap();
            for v in [r.f_beta_max, r.s_measure_mean, r.mae_mean] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn order_independent(raw in pairs(4)) {
            let maps: Vec<_> = raw.iter().map(|(p, g)| (map(8, 8, p), map(8, 8, g))).collect();
            let mut rev = maps.clone();
            rev.reverse();
            let a = dataset_pr_and_fmax(&maps).unwrap().1;
            let b = dataset_pr_and_fmax(&rev).unwrap().1;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
