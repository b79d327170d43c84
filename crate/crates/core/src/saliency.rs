use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Single-channel map of per-pixel saliency probabilities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidShape {
                op: "saliency map",
                msg: format!("{height}x{width} map needs {} values, got {}", height * width, data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("saliency value {bad} outside [0, 1]")));
        }
        Ok(SaliencyMap { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        SaliencyMap::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (y, x))).map(|(y, x)| f(y, x)).collect();
        SaliencyMap::new(height, width, data)
    }

    /// Extracts batch item `index` of an `N×H×W×1` tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let (n, h, w, c) = t.shape().nhwc_dims("saliency map")?;
        if c != 1 || index >= n {
            return Err(Error::InvalidShape {
                op: "saliency map",
                msg: format!("cannot take item {index} of a {} tensor as a single-channel map", t.shape()),
            });
        }
        let data = t.data()[index * h * w..][..h * w].iter().map(|v| v.to_f64()).collect();
        SaliencyMap::new(h, w, data)
    }

    /// `1×H×W×1` tensor.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f64(v)).collect();
        Tensor::from_vec([1, self.height, self.width, 1], data).expect("map extents are positive")
    }

    /// `value / 255` per pixel.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        SaliencyMap::new(height, width, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    /// 8-bit quantization `floor(255·p + 0.5)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&p| quantize(p)).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Pixels with value `>= threshold`.
    pub fn binarize(&self, threshold: f64) -> Vec<bool> {
        self.data.iter().map(|&v| v >= threshold).collect()
    }

    pub fn same_extent(&self, other: &SaliencyMap) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Round-half-up 8-bit quantization of a probability.
pub fn quantize(p: f64) -> u8 {
    (255.0 * p.clamp(0.0, 1.0) + 0.5).floor() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.5 / 255.0), 1);
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(SaliencyMap::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(SaliencyMap::new(1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn u8_round_trip_within_quantization_bound() {
        let m = SaliencyMap::from_fn(4, 4, |y, x| ((y * 4 + x) as f64 / 15.0).powi(2)).unwrap();
        let back = SaliencyMap::from_u8(4, 4, &m.to_u8()).unwrap();
        for (a, b) in m.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
