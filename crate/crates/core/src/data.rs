//! Image/mask datasets: directory discovery, loading, batching, and a
//! synthetic generator for toy-scale runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageio;
use crate::saliency::SaliencyMap;
use crate::tensor::{Element, Shape, Tensor};

/// Mask pixels at or above this 8-bit value are salient.
pub const MASK_THRESHOLD: u8 = 128;

/// `(image, mask)` file pairs matched by file stem under `images/` and `masks/`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub pairs: Vec<(PathBuf, PathBuf)>,
}

fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !imageio::is_image_path(&path) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Dataset(format!(
                "`{stem}` is ambiguous: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

impl DatasetIndex {
    /// Pairs every file in `root/images` with the same-stem file in
    /// `root/masks`, sorted by stem.
    pub fn discover(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let images = stems(&root.join("images"))?;
        let masks = stems(&root.join("masks"))?;
        let no_mask: Vec<&str> = images.keys().filter(|k| !masks.contains_key(*k)).map(String::as_str).collect();
        let no_image: Vec<&str> = masks.keys().filter(|k| !images.contains_key(*k)).map(String::as_str).collect();
        if !no_mask.is_empty() || !no_image.is_empty() {
            return Err(Error::Dataset(format!(
                "unmatched files: images without mask [{}], masks without image [{}]",
                no_mask.join(", "),
                no_image.join(", ")
            )));
        }
        if images.is_empty() {
            return Err(Error::Dataset(format!("no images under {}", root.join("images").display())));
        }
        let pairs = images.into_iter().map(|(k, img)| (img, masks[&k].clone())).collect();
        Ok(DatasetIndex { pairs })
    }
}

/// One training example at network resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `size·size·3` values in `[0, 1]`.
    pub image: Vec<f32>,
    /// `size·size` values in `{0, 1}`.
    pub mask: Vec<f32>,
}

/// In-memory samples of a single square size.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    size: usize,
    samples: Vec<Sample>,
}

/// Binarizes an 8-bit mask at [`MASK_THRESHOLD`].
pub fn binarize_mask(mask: &GrayImage) -> Vec<f32> {
    mask.as_raw().iter().map(|&v| (v >= MASK_THRESHOLD) as u8 as f32).collect()
}

impl Dataset {
    pub fn new(size: usize, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.image.len() != size * size * 3 || s.mask.len() != size * size {
                return Err(Error::Dataset(format!("sample {i} does not match size {size}")));
            }
        }
        Ok(Dataset { size, samples })
    }

    /// Loads every pair, resizing images bilinearly and masks by nearest
    /// sampling after binarization.
    pub fn load(index: &DatasetIndex, size: usize) -> Result<Self> {
        let s = size as u32;
        let samples = index
            .pairs
            .iter()
            .map(|(img, mask)| {
                let rgb = imageio::resize_rgb(&imageio::read_rgb(img)?, s, s);
                let m = imageio::read_gray(mask)?;
                let m = if m.dimensions() == (s, s) {
                    m
                } else {
                    image::imageops::resize(&m, s, s, image::imageops::FilterType::Nearest)
                };
                Ok(Sample {
                    image: imageio::rgb_to_unit(&rgb),
                    mask: binarize_mask(&m),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(size, samples)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// `(N×S×S×3 images, N×S×S×1 masks)` for the given sample indices.
    pub fn batch<T: Element>(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let s = self.size;
        let mut x = Vec::with_capacity(indices.len() * s * s * 3);
        let mut y = Vec::with_capacity(indices.len() * s * s);
        for &i in indices {
            let sample = self
                .samples
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("sample index {i} out of range")))?;
            x.extend(sample.image.iter().map(|&v| T::from_f64(v as f64)));
            y.extend(sample.mask.iter().map(|&v| T::from_f64(v as f64)));
        }
        Ok((
            Tensor::new(Shape::nhwc(indices.len(), s, s, 3)?, x)?,
            Tensor::new(Shape::nhwc(indices.len(), s, s, 1)?, y)?,
        ))
    }

    pub fn mask_map(&self, i: usize) -> SaliencyMap {
        let data = self.samples[i].mask.iter().map(|&v| v as f64).collect();
        SaliencyMap::new(self.size, self.size, data).expect("binary mask")
    }
}

/// Deterministic toy scenes: a bright square on a dark textured background,
/// with the square as the mask.
pub fn synthetic(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    let (images, masks) = synthetic_images(n, size, seed);
    let samples = images
        .iter()
        .zip(&masks)
        .map(|(img, m)| Sample {
            image: imageio::rgb_to_unit(img),
            mask: binarize_mask(m),
        })
        .collect();
    Dataset::new(size, samples)
}

/// 8-bit versions of [`synthetic`].
pub fn synthetic_images(n: usize, size: usize, seed: u64) -> (Vec<RgbImage>, Vec<GrayImage>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as u32;
    let mut images = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for _ in 0..n {
        let side = rng.random_range(s / 4..=s / 2);
        let x0 = rng.random_range(0..=s - side);
        let y0 = rng.random_range(0..=s - side);
        let fg = [rng.random_range(190..=255u8), rng.random_range(150..=230u8), rng.random_range(40..=120u8)];
        let bg = [rng.random_range(0..=40u8), rng.random_range(40..=90u8), rng.random_range(70..=120u8)];
        let inside = |x: u32, y: u32| x >= x0 && x < x0 + side && y >= y0 && y < y0 + side;
        let mut img = RgbImage::new(s, s);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let base = if inside(x, y) { fg } else { bg };
            let jitter: i16 = rng.random_range(-12..=12);
            *px = Rgb(base.map(|c| (c as i16 + jitter).clamp(0, 255) as u8));
        }
        let mask = GrayImage::from_fn(s, s, |x, y| Luma([if inside(x, y) { 255 } else { 0 }]));
        images.push(img);
        masks.push(mask);
    }
    (images, masks)
}

/// Writes [`synthetic_images`] as `root/images/NNN.png` and `root/masks/NNN.png`.
pub fn write_synthetic(root: impl AsRef<Path>, n: usize, size: usize, seed: u64) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let (images, masks) = synthetic_images(n, size, seed);
    for (i, (img, m)) in images.iter().zip(&masks).enumerate() {
        imageio::write_rgb(root.join("images").join(format!("{i:03}.png")), img)?;
        imageio::write_gray(root.join("masks").join(format!("{i:03}.png")), m)?;
    }
    DatasetIndex::discover(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_seeded_and_balanced() {
        let a = synthetic(4, 32, 1).unwrap();
        assert_eq!(a, synthetic(4, 32, 1).unwrap());
        assert_ne!(a, synthetic(4, 32, 2).unwrap());
        for i in 0..a.len() {
            let m = a.mask_map(i).mean();
            assert!((1.0 / 16.0..=0.25).contains(&m), "{m}");
        }
    }

    #[test]
    fn disk_round_trip_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let index = write_synthetic(dir.path(), 3, 32, 5).unwrap();
        assert_eq!(index.pairs.len(), 3);
        assert_eq!(Dataset::load(&index, 32).unwrap(), synthetic(3, 32, 5).unwrap());
    }

    #[test]
    fn discover_reports_unmatched_stems() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic(dir.path(), 2, 32, 0).unwrap();
        std::fs::remove_file(dir.path().join("masks/001.png")).unwrap();
        let err = DatasetIndex::discover(dir.path()).unwrap_err().to_string();
        assert!(err.contains("001"), "{err}");
    }

    #[test]
    fn batch_layout() {
        let d = synthetic(3, 32, 0).unwrap();
        let (x, y) = d.batch::<f32>(&[2, 0]).unwrap();
        assert_eq!(x.dims(), &[2, 32, 32, 3]);
        assert_eq!(y.dims(), &[2, 32, 32, 1]);
        assert_eq!(&x.data()[..96], &d.samples()[2].image[..96]);
        assert!(Dataset::new(32, vec![]).is_err());
    }
}
