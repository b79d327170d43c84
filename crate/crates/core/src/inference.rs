//! Deployment pipelines pruned from a trained model.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::imageio;
use crate::model::{forward, param_specs, ModelConfig, ModelParams, Variant};
use crate::saliency::SaliencyMap;
use crate::tensor::{Element, ParamSource, Shape, Tensor};

/// A pruned network that produces one saliency map per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline<T: Element = f32> {
    variant: Variant,
    config: ModelConfig,
    params: ModelParams<T>,
}

/// Head configuration evaluated by `variant`.
pub fn variant_config(cfg: &ModelConfig, variant: Variant) -> Result<ModelConfig> {
    let out = match variant {
        Variant::Full => {
            if !cfg.enable_td {
                return Err(Error::Config("the full pipeline needs the top-down head".into()));
            }
            ModelConfig {
                enable_aux: false,
                enable_bu: false,
                ..cfg.clone()
            }
        }
        Variant::Light => {
            if !cfg.enable_bu {
                return Err(Error::Config("the light pipeline needs the bottom-up head".into()));
            }
            ModelConfig {
                enable_aux: false,
                enable_td: false,
                enable_rrm: false,
                ..cfg.clone()
            }
        }
    };
    out.validate()?;
    Ok(out)
}

/// Keeps exactly the parameters `variant` evaluates. Values are copied
/// unchanged.
pub fn decouple<T: Element>(params: &ModelParams<T>, cfg: &ModelConfig, variant: Variant) -> Result<Pipeline<T>> {
    let config = variant_config(cfg, variant)?;
    let mut kept = ModelParams::new();
    for spec in param_specs(&config) {
        let t = params.get(&spec.name).ok_or_else(|| Error::UnknownParameter(spec.name.clone()))?;
        if t.dims() != spec.dims.as_slice() {
            return Err(Error::InvalidShape {
                op: "decouple",
                msg: format!("`{}` is {} but the configuration expects {:?}", spec.name, t.shape(), spec.dims),
            });
        }
        kept.insert(spec.name, t.clone());
    }
    Ok(Pipeline {
        variant,
        config,
        params: kept,
    })
}

impl<T: Element> Pipeline<T> {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size
    }

    /// Runs a batch `N×S×S×3` through `source` and returns the output head
    /// as `N×S×S×1`.
    pub fn predict_tensor_with(&self, source: &dyn ParamSource<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.config.input_size;
        let (_, h, w, c) = x.shape().nhwc_dims("predict")?;
        if (h, w, c) != (s, s, 3) {
            return Err(Error::InvalidShape {
                op: "predict",
                msg: format!("expected N x {s} x {s} x 3 input, got {}", x.shape()),
            });
        }
        let heads = forward(source, &self.config, x)?;
        let out = match self.variant {
            Variant::Full => heads.y_tdr.or(heads.y_td),
            Variant::Light => heads.y_bu,
        };
        Ok(out.expect("variant head is enabled"))
    }

    pub fn predict_tensor(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.predict_tensor_with(&self.params, x)
    }

    /// Single image `1×S×S×3` (or `S×S×3`) in `[0, 1]`.
    pub fn predict(&self, image: &Tensor<T>) -> Result<SaliencyMap> {
        let x = if image.shape().rank() == 3 {
            let mut dims = vec![1];
            dims.extend_from_slice(image.dims());
            image.reshape(dims)?
        } else {
            image.clone()
        };
        if x.dims().first() != Some(&1) {
            return Err(Error::InvalidShape {
                op: "predict",
                msg: format!("expected a single image, got {}", image.shape()),
            });
        }
        SaliencyMap::from_tensor(&self.predict_tensor(&x)?, 0)
    }

    /// Resizes an 8-bit image to the network input and predicts.
    pub fn predict_rgb(&self, img: &RgbImage) -> Result<SaliencyMap> {
        let s = self.config.input_size;
        let resized = imageio::resize_rgb(img, s as u32, s as u32);
        let data = imageio::rgb_to_unit(&resized).into_iter().map(|v| T::from_f64(v as f64)).collect();
        self.predict(&Tensor::new(Shape::nhwc(1, s, s, 3)?, data)?)
    }
}

/// Outcome of [`predict_file`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictSummary {
    pub seconds: f64,
    pub mean_saliency: f64,
}

pub fn map_to_gray(map: &SaliencyMap) -> GrayImage {
    GrayImage::from_raw(map.width() as u32, map.height() as u32, map.to_u8()).expect("extent matches data")
}

/// Salient pixels (`>= 0.5`) with a non-salient 4-neighbour or on the
/// image border.
pub fn contour(mask: &[bool], w: usize) -> Vec<bool> {
    let h = mask.len() / w;
    (0..mask.len())
        .map(|i| {
            if !mask[i] {
                return false;
            }
            let (y, x) = (i / w, i % w);
            y == 0 || x == 0 || y == h - 1 || x == w - 1 || !mask[i - w] || !mask[i + w] || !mask[i - 1] || !mask[i + 1]
        })
        .collect()
}

/// Source image with saliency in the green channel and the thresholded
/// object outline in red, at source resolution.
pub fn overlay(img: &RgbImage, map: &SaliencyMap) -> RgbImage {
    let (w, h) = img.dimensions();
    let data: Vec<f32> = map.data().iter().map(|&v| v as f32).collect();
    let up = imageio::resize_map(&data, map.width() as u32, map.height() as u32, w, h);
    let mut out = img.clone();
    for (px, &s) in out.pixels_mut().zip(&up) {
        let g = (255.0 * s.clamp(0.0, 1.0) + 0.5).floor() as u8;
        px.0[1] = px.0[1].max(g);
    }
    let mask: Vec<bool> = up.iter().map(|&v| v >= 0.5).collect();
    imageio::paint(&out, &contour(&mask, w as usize), [255, 0, 0])
}

/// Reads an image, predicts, and writes the 8-bit map at network resolution.
pub fn predict_file<T: Element>(
    pipeline: &Pipeline<T>,
    in_path: impl AsRef<Path>,
    out_path: impl AsRef<Path>,
    contour_path: Option<&Path>,
) -> Result<PredictSummary> {
    let img = imageio::read_rgb(in_path)?;
    let start = Instant::now();
    let map = pipeline.predict_rgb(&img)?;
    let seconds = start.elapsed().as_secs_f64();
    imageio::write_gray(out_path, &map_to_gray(&map))?;
    if let Some(p) = contour_path {
        imageio::write_rgb(p, &overlay(&img, &map))?;
    }
    Ok(PredictSummary {
        seconds,
        mean_saliency: map.mean(),
    })
}

/// Parameter source that records every name looked up.
pub struct AuditedParams<'a, T: Element> {
    inner: &'a dyn ParamSource<T>,
    accessed: Mutex<BTreeSet<String>>,
}

impl<'a, T: Element> AuditedParams<'a, T> {
    pub fn new(inner: &'a dyn ParamSource<T>) -> Self {
        AuditedParams {
            inner,
            accessed: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn accessed(&self) -> BTreeSet<String> {
        self.accessed.lock().expect("audit lock").clone()
    }
}

impl<T: Element> ParamSource<T> for AuditedParams<'_, T> {
    fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.accessed.lock().expect("audit lock").insert(name.to_owned());
        self.inner.get(name)
    }
}
