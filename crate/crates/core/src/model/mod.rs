//! Network definition: configuration, parameter table, initialization and
//! the forward pass.

pub mod arch;
mod config;
mod forward;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use arch::{param_specs, ParamKind, ParamSpec};
pub use config::{ModelConfig, Module, WidthScale};
pub use forward::{
    encoder_forward, forward_heads, rrm_forward, sam_aux_forward, sam_bu_forward, sam_td_forward, EncoderTaps,
    HeadOutputs,
};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Mode, ParamSource, Shape, ShapeTracer, Tensor};

/// Named weights of one network instance, ordered by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Element = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Default for ModelParams<T> {
    fn default() -> Self {
        ModelParams {
            tensors: BTreeMap::new(),
        }
    }
}

impl<T: Element> ModelParams<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Keeps only the parameters of the given sub-networks.
    pub fn retain_modules(&self, modules: &[Module]) -> Self {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .filter(|(name, _)| Module::of(name).is_some_and(|m| modules.contains(&m)))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn trainable_scalars(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(name, _)| ParamKind::of(name).trainable())
            .map(|(_, t)| t.len())
            .sum()
    }
}

impl<T: Element> ParamSource<T> for ModelParams<T> {
    fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }
}

impl<T: Element> FromIterator<(String, Tensor<T>)> for ModelParams<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        ModelParams {
            tensors: iter.into_iter().collect(),
        }
    }
}

/// Deployment pipeline: the full top-down path or the light bottom-up path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// encoder → top-down decoder → refinement → `y_tdr`
    Full,
    /// encoder → bottom-up head → `y_bu`
    Light,
}

impl Variant {
    pub fn modules(self) -> &'static [Module] {
        match self {
            Variant::Full => &[Module::Encoder, Module::TopDown, Module::Refinement],
            Variant::Light => &[Module::Encoder, Module::BottomUp],
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "light" => Ok(Variant::Light),
            other => Err(Error::Config(format!("unknown pipeline variant `{other}` (full|light)"))),
        }
    }
}

fn name_stream(name: &str) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(name.as_bytes());
    h.finish()
}

/// Fresh parameters for `cfg`. Kernels are He-normal (`std = sqrt(2 /
/// fan_in)`), biases and BN shifts zero, BN scales one, running variance one.
///
/// Each tensor draws from its own ChaCha stream keyed by its name, so a
/// parameter's initial value does not depend on which heads are enabled.
pub fn build_model<T: Element>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut params = ModelParams::new();
    for spec in param_specs(cfg) {
        let shape = Shape::new(spec.dims.clone())?;
        let t = match spec.kind {
            ParamKind::Kernel { fan_in } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(name_stream(&spec.name));
                let std = (2.0 / fan_in as f64).sqrt();
                let data = (0..shape.numel())
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::from_f64(z * std)
                    })
                    .collect();
                Tensor::new(shape, data)?
            }
            ParamKind::Gamma | ParamKind::RunningVar => Tensor::full(shape, T::ONE),
            ParamKind::Bias | ParamKind::Beta | ParamKind::RunningMean => Tensor::zeros(shape),
        };
        params.insert(spec.name, t);
    }
    Ok(params)
}

/// `base` with the head switches set by which modules have parameters in
/// `params`.
pub fn heads_of<T: Element>(base: &ModelConfig, params: &ModelParams<T>) -> Result<ModelConfig> {
    let has = |m: Module| params.names().any(|n| Module::of(n) == Some(m));
    let cfg = ModelConfig {
        enable_aux: has(Module::Auxiliary),
        enable_bu: has(Module::BottomUp),
        enable_td: has(Module::TopDown),
        enable_rrm: has(Module::Refinement),
        ..base.clone()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Trainable scalars reachable by `variant`.
pub fn parameter_count<T: Element>(params: &ModelParams<T>, variant: Variant) -> usize {
    params.retain_modules(variant.modules()).trainable_scalars()
}

/// Shape-only forward pass for a batch of `batch` images.
pub fn trace_shapes(cfg: &ModelConfig, batch: usize) -> Result<(ShapeTracer, HeadOutputs<Shape>)> {
    cfg.validate()?;
    let specs = param_specs(cfg);
    let mut tracer = ShapeTracer::new(specs.into_iter().map(|s| (s.name, Shape::new(s.dims).expect("positive dims"))));
    let x = tracer.input(Shape::nhwc(batch, cfg.input_size, cfg.input_size, 3)?);
    let heads = forward_heads(&mut tracer, cfg, x)?;
    let shapes = heads.map(|v| crate::tensor::Backend::shape_of(&tracer, v));
    Ok((tracer, shapes))
}

/// Inference-mode forward pass returning every enabled head as a tensor.
pub fn forward<T: Element>(
    params: &dyn ParamSource<T>,
    cfg: &ModelConfig,
    x: &Tensor<T>,
) -> Result<HeadOutputs<Tensor<T>>> {
    let mut g = Graph::with_params(params, Mode::Infer);
    let xv = g.constant(x.clone());
    let heads = forward_heads(&mut g, cfg, xv)?;
    Ok(heads.map(|v| g.value(v).clone()))
}

/// Plain-text architecture table: one row per parameter (name, shape,
/// scalar count), per-module totals, then the feature-map shapes of a
/// single-image forward pass.
pub fn describe(cfg: &ModelConfig) -> Result<String> {
    let specs = param_specs(cfg);
    let (tracer, _) = trace_shapes(cfg, 1)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# input {s}x{s}x3, width scale {}",
        cfg.width_scale,
        s = cfg.input_size
    );
    let _ = writeln!(out, "{:<28} {:<16} {:>10}", "parameter", "shape", "count");
    let mut totals: BTreeMap<Module, usize> = BTreeMap::new();
    for spec in &specs {
        let shape = spec.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        let _ = writeln!(out, "{:<28} {:<16} {:>10}", spec.name, shape, spec.numel());
        if spec.kind.trainable() {
            *totals.entry(spec.module()).or_default() += spec.numel();
        }
    }
    let _ = writeln!(out);
    for (module, n) in &totals {
        let _ = writeln!(out, "{:<45} {:>10}", format!("trainable {module:?}"), n);
    }
    let _ = writeln!(out, "{:<45} {:>10}", "trainable total", totals.values().sum::<usize>());
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<28} {}", "feature map", "shape");
    for (name, shape) in tracer.taps() {
        let _ = writeln!(out, "{:<28} {}", name, shape);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ablations() -> Vec<ModelConfig> {
        let base = ModelConfig::toy();
        let mut out = Vec::new();
        for bits in 0..16u32 {
            let cfg = ModelConfig {
                enable_aux: bits & 1 != 0,
                enable_bu: bits & 2 != 0,
                enable_td: bits & 4 != 0,
                enable_rrm: bits & 8 != 0,
                ..base.clone()
            };
            if cfg.validate().is_ok() {
                out.push(cfg);
            }
        }
        out
    }

    #[test]
    fn heads_follow_stored_modules() {
        let cfg = ModelConfig {
            enable_aux: false,
            enable_rrm: false,
            ..ModelConfig::toy()
        };
        let p = build_model::<f32>(&cfg, 0).unwrap();
        assert_eq!(heads_of(&ModelConfig::toy(), &p).unwrap(), cfg);
        assert!(heads_of(&ModelConfig::toy(), &ModelParams::<f32>::new()).is_err());
    }

    #[test]
    fn table_matches_forward() {
        for cfg in ablations() {
            let (tracer, _) = trace_shapes(&cfg, 1).unwrap();
            let mut used: Vec<&str> = tracer.used_params().iter().map(String::as_str).collect();
            let specs = param_specs(&cfg);
            let mut declared: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
            used.sort_unstable();
            declared.sort_unstable();
            assert_eq!(used, declared, "{cfg:?}");
        }
    }

    #[test]
    fn first_kernel_shapes() {
        let full = build_model::<f32>(&ModelConfig::default(), 0).unwrap();
        assert_eq!(full.get("e1.conv1.w").unwrap().dims(), &[3, 3, 3, 64]);
        let toy = build_model::<f32>(&ModelConfig::toy(), 0).unwrap();
        assert_eq!(toy.get("e1.conv1.w").unwrap().dims(), &[3, 3, 3, 8]);
    }

    #[test]
    fn build_is_deterministic_and_seed_sensitive() {
        let cfg = ModelConfig::toy();
        let a = build_model::<f32>(&cfg, 11).unwrap();
        let b = build_model::<f32>(&cfg, 11).unwrap();
        let c = build_model::<f32>(&cfg, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_independent_of_enabled_heads() {
        let full = build_model::<f32>(&ModelConfig::toy(), 3).unwrap();
        let pre = build_model::<f32>(&ModelConfig::toy().pretrain_view(), 3).unwrap();
        for (name, t) in pre.iter() {
            assert_eq!(full.get(name), Some(t), "{name}");
        }
    }

    #[test]
    fn light_is_smaller_than_full() {
        for cfg in ablations().into_iter().filter(|c| c.enable_bu && c.enable_td) {
            let p = build_model::<f32>(&cfg, 0).unwrap();
            assert!(parameter_count(&p, Variant::Light) < parameter_count(&p, Variant::Full), "{cfg:?}");
        }
    }

    #[test]
    fn half_width_roughly_quarters_conv_parameters() {
        let full = build_model::<f32>(&ModelConfig { input_size: 64, ..Default::default() }, 0).unwrap();
        let half = build_model::<f32>(
            &ModelConfig {
                input_size: 64,
                width_scale: WidthScale::new(1, 2).unwrap(),
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let ratio = parameter_count(&half, Variant::Full) as f64 / parameter_count(&full, Variant::Full) as f64;
        assert!((0.24..0.27).contains(&ratio), "{ratio}");
    }

    #[test]
    fn ablation_removes_exactly_its_parameters() {
        let full = build_model::<f32>(&ModelConfig::toy(), 0).unwrap();
        let no_aux_bu = build_model::<f32>(
            &ModelConfig {
                enable_aux: false,
                enable_bu: false,
                ..ModelConfig::toy()
            },
            0,
        )
        .unwrap();
        let removed: usize = full
            .iter()
            .filter(|(n, _)| matches!(Module::of(n), Some(Module::Auxiliary | Module::BottomUp)))
            .map(|(_, t)| t.len())
            .sum();
        assert_eq!(full.trainable_scalars() - no_aux_bu.trainable_scalars(), removed);
    }

    #[test]
    fn describe_lists_every_parameter() {
        let cfg = ModelConfig::toy();
        let text = describe(&cfg).unwrap();
        for spec in param_specs(&cfg) {
            assert!(text.contains(&spec.name), "{}", spec.name);
        }
        assert!(text.contains("s_td"));
    }
}
