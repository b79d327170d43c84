//! Finite-difference gradient checks for every differentiable primitive and
//! for the full network under the combined objective.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data;
use crate::error::{Error, Result};
use crate::losses::{self, LossWeights};
use crate::model::{build_model, forward_heads, param_specs, ModelConfig, ModelParams, WidthScale};
use crate::tensor::gradcheck::{relative_error, ridders};
use crate::tensor::{ConvSpec, Element, Graph, Mode, Padding, Shape, Tensor, Var};

/// Name of the end-to-end check.
pub const COMPOSITE: &str = "svam_e2e";

/// Weights sampled by the end-to-end check.
pub const COMPOSITE_SAMPLES: usize = 50;

/// Arithmetic of the analytic gradients in the primitive checks. Central
/// differences are always taken in 64-bit, as is the end-to-end check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::F32 => 1e-3,
            Precision::F64 => 1e-6,
        }
    }
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}` (f32|f64)"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    pub width_scale: WidthScale,
    pub precision: Precision,
    /// Check whose analytic gradient is deliberately scaled by 1.01.
    pub corrupt: Option<String>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            seed: 0,
            width_scale: ModelConfig::toy().width_scale,
            precision: Precision::F64,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    /// False for NaN errors.
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

type Build<T> = dyn Fn(&mut Graph<'_, T>, &[Var]) -> Result<Var>;

enum Body<T: Element> {
    Plain(Box<Build<T>>),
    BatchNorm(Mode),
}

struct Case<T: Element> {
    name: &'static str,
    inputs: Vec<Tensor<T>>,
    body: Body<T>,
}

fn tensor<T: Element>(dims: &[usize], values: impl IntoIterator<Item = f64>) -> Tensor<T> {
    let data = values.into_iter().map(T::from_f64).collect();
    Tensor::from_vec(dims.to_vec(), data).expect("case dims match data")
}

fn numel(dims: &[usize]) -> usize {
    dims.iter().product()
}

fn uniform<T: Element>(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let v: Vec<f64> = (0..numel(dims)).map(|_| rng.random_range(lo..hi)).collect();
    tensor(dims, v)
}

/// Uniform in `[-1, 1]` but at least `margin` from every kink.
fn away_from<T: Element>(rng: &mut ChaCha8Rng, dims: &[usize], kinks: &[f64], margin: f64) -> Tensor<T> {
    let v: Vec<f64> = (0..numel(dims))
        .map(|_| loop {
            let x = rng.random_range(-1.0..1.0);
            if kinks.iter().all(|k| (x - k).abs() >= margin) {
                break x;
            }
        })
        .collect();
    tensor(dims, v)
}

/// Evenly spaced distinct values in random order, so no pooling window has
/// a near tie.
fn distinct<T: Element>(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<T> {
    let n = numel(dims);
    let mut v: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
    v.shuffle(rng);
    tensor(dims, v)
}

fn binary_mask<T: Element>(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<T> {
    let n = numel(dims);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_bool(0.4) as u8 as f64).collect();
    v[0] = 1.0;
    v[n - 1] = 0.0;
    tensor(dims, v)
}

fn plain<T: Element>(
    name: &'static str,
    inputs: Vec<Tensor<T>>,
    f: impl Fn(&mut Graph<'_, T>, &[Var]) -> Result<Var> + 'static,
) -> Case<T> {
    Case {
        name,
        inputs,
        body: Body::Plain(Box::new(f)),
    }
}

fn primitive_cases<T: Element>(seed: u64, margin: f64) -> Vec<Case<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let img = [1, 4, 5, 2];
    let mut cases = vec![
        plain(
            "conv2d",
            vec![uniform(r, &[1, 5, 6, 2], -1.0, 1.0), uniform(r, &[3, 3, 2, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), &ConvSpec::same(3, 2, 3)),
        ),
        plain(
            "conv2d_strided",
            vec![uniform(r, &[2, 7, 6, 2], -1.0, 1.0), uniform(r, &[3, 3, 2, 2], -1.0, 1.0)],
            |g, v| {
                let spec = ConvSpec::new(3, 3, 2, Padding::uniform(1), 2, 2)?;
                g.conv2d(v[0], v[1], None, &spec)
            },
        ),
        plain(
            "deconv2d",
            vec![uniform(r, &[1, 3, 4, 2], -1.0, 1.0), uniform(r, &[2, 2, 2, 3], -1.0, 1.0)],
            |g, v| g.deconv2d(v[0], v[1], &ConvSpec::strided(2, 2, 2, 3)),
        ),
        plain("maxpool2d", vec![distinct(r, &[1, 4, 6, 2])], |g, v| g.maxpool2d(v[0], 2, 2)),
        plain("upsample_x2", vec![uniform(r, &[1, 3, 2, 2], -1.0, 1.0)], |g, v| g.upsample(v[0], 2)),
        plain("upsample_x4", vec![uniform(r, &[1, 2, 3, 1], -1.0, 1.0)], |g, v| g.upsample(v[0], 4)),
        Case {
            name: "batchnorm_train",
            inputs: vec![uniform(r, &[2, 3, 3, 2], -1.0, 1.0), uniform(r, &[2], 0.5, 1.5), uniform(r, &[2], -1.0, 1.0)],
            body: Body::BatchNorm(Mode::Train),
        },
        Case {
            name: "batchnorm_infer",
            inputs: vec![uniform(r, &[1, 4, 4, 2], -1.0, 1.0), uniform(r, &[2], 0.5, 1.5), uniform(r, &[2], -1.0, 1.0)],
            body: Body::BatchNorm(Mode::Infer),
        },
        plain("relu", vec![away_from(r, &img, &[0.0], margin)], |g, v| Ok(g.relu(v[0]))),
        plain("sigmoid", vec![uniform(r, &img, -1.0, 1.0)], |g, v| Ok(g.sigmoid(v[0]))),
        plain("tanh", vec![uniform(r, &img, -1.0, 1.0)], |g, v| Ok(g.tanh(v[0]))),
        plain("abs", vec![away_from(r, &img, &[0.0], margin)], |g, v| Ok(g.abs(v[0]))),
        plain("ln", vec![uniform(r, &img, 0.2, 1.0)], |g, v| Ok(g.ln(v[0]))),
        plain("clamp", vec![away_from(r, &img, &[-0.5, 0.5], margin)], |g, v| {
            Ok(g.clamp(v[0], T::from_f64(-0.5), T::from_f64(0.5)))
        }),
        plain("scale", vec![uniform(r, &img, -1.0, 1.0)], |g, v| Ok(g.scale(v[0], T::from_f64(-1.7)))),
        plain("offset", vec![uniform(r, &img, -1.0, 1.0)], |g, v| Ok(g.offset(v[0], T::from_f64(0.3)))),
        plain("add", vec![uniform(r, &img, -1.0, 1.0), uniform(r, &img, -1.0, 1.0)], |g, v| g.add(v[0], v[1])),
        plain("sub", vec![uniform(r, &img, -1.0, 1.0), uniform(r, &img, -1.0, 1.0)], |g, v| g.sub(v[0], v[1])),
        plain("mul", vec![uniform(r, &img, -1.0, 1.0), uniform(r, &img, -1.0, 1.0)], |g, v| g.mul(v[0], v[1])),
        plain(
            "concat_channels",
            vec![uniform(r, &[1, 3, 2, 2], -1.0, 1.0), uniform(r, &[1, 3, 2, 1], -1.0, 1.0), uniform(r, &[1, 3, 2, 3], -1.0, 1.0)],
            |g, v| g.concat_channels(v),
        ),
        plain("mean", vec![uniform(r, &img, -1.0, 1.0)], |g, v| Ok(g.mean(v[0]))),
        plain("sum", vec![uniform(r, &img, -1.0, 1.0)], |g, v| Ok(g.sum(v[0]))),
        plain("laplacian", vec![uniform(r, &[1, 5, 5, 1], 0.05, 0.95)], |g, v| losses::laplacian_var(g, v[0])),
    ];
    let map = [2, 5, 4, 1];
    for (name, loss) in [
        ("bce", losses::bce_var::<T> as fn(&mut Graph<'_, T>, Var, &Tensor<T>) -> Result<Var>),
        ("wce", losses::wce_var::<T>),
        ("ble", losses::ble_var::<T>),
    ] {
        let gt = binary_mask::<T>(r, &map);
        cases.push(plain(name, vec![uniform(r, &map, 0.05, 0.95)], move |g, v| loss(g, v[0], &gt)));
    }
    cases
}

fn projection<T: Element>(shape: &Shape, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform(&mut rng, shape.dims(), -1.0, 1.0)
}

/// `Σ op(inputs) ⊙ R` for a fixed random `R`, and optionally its gradient
/// with respect to each input.
fn evaluate<T: Element>(case: &Case<T>, inputs: &[Tensor<T>], seed: u64, grad: bool) -> Result<(f64, Vec<Tensor<T>>)> {
    let bn_params;
    let mut g = match case.body {
        Body::Plain(_) => Graph::new(),
        Body::BatchNorm(mode) => {
            let c = inputs[1].len();
            let mut p = ModelParams::new();
            p.insert("bn.gamma", inputs[1].clone());
            p.insert("bn.beta", inputs[2].clone());
            p.insert("bn.running_mean", tensor(&[c], (0..c).map(|i| 0.1 * i as f64 - 0.05)));
            p.insert("bn.running_var", tensor(&[c], (0..c).map(|i| 0.6 + 0.3 * i as f64)));
            bn_params = p;
            Graph::with_params(&bn_params, mode)
        }
    };
    let (y, vars) = match &case.body {
        Body::Plain(f) => {
            let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
            (f(&mut g, &vars)?, vars)
        }
        Body::BatchNorm(_) => {
            let x = g.variable(inputs[0].clone());
            (g.batchnorm(x, "bn")?, vec![x])
        }
    };
    let r = g.constant(projection(g.shape(y), seed));
    let weighted = g.mul(y, r)?;
    let loss = g.sum(weighted);
    let value = g.value(loss).item().expect("scalar").to_f64();
    if !grad {
        return Ok((value, Vec::new()));
    }
    let grads = g.backward(loss)?;
    let mut out: Vec<Tensor<T>> = vars.iter().map(|&v| grads.wrt(v).expect("variable gradient").clone()).collect();
    if matches!(case.body, Body::BatchNorm(_)) {
        for name in ["bn.gamma", "bn.beta"] {
            out.push(grads.param(name).ok_or_else(|| Error::MissingGradient(name.into()))?.clone());
        }
    }
    Ok((value, out))
}

fn corrupt<T: Element>(grads: &mut [Tensor<T>]) {
    for g in grads {
        *g = g.map(|v| v * T::from_f64(1.01));
    }
}

/// Largest step of the extrapolated central differences.
pub const MAX_STEP: f64 = 1e-4;

/// Smallest step of the extrapolated central differences.
pub const MIN_STEP: f64 = 1e-6;

fn run_case<T: Element>(case: &Case<T>, reference: &Case<f64>, seed: u64, tol: f64, corrupted: bool) -> Result<CheckResult> {
    let (_, mut analytic) = evaluate(case, &case.inputs, seed, true)?;
    if corrupted {
        corrupt(&mut analytic);
    }
    let point: Vec<Tensor<f64>> = case.inputs.iter().map(Tensor::cast).collect();
    let mut worst = 0.0f64;
    for (k, (input, grad)) in point.iter().zip(&analytic).enumerate() {
        for i in 0..input.len() {
            let at = |delta: f64| {
                let mut inputs = point.clone();
                let mut data = input.data().to_vec();
                data[i] += delta;
                inputs[k] = Tensor::new(input.shape().clone(), data)?;
                Ok(evaluate(reference, &inputs, seed, false)?.0)
            };
            let (numeric, _) = ridders(MAX_STEP, MIN_STEP, |h| Ok(Some((at(h)? - at(-h)?) / (2.0 * h))))?
                .expect("every step is usable");
            let err = relative_error(grad.data()[i].to_f64(), numeric);
            worst = if err.is_nan() || worst.is_nan() { f64::NAN } else { worst.max(err) };
        }
    }
    Ok(CheckResult {
        name: case.name.to_string(),
        max_rel_error: worst,
        tolerance: tol,
    })
}

fn primitives<T: Element>(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let margin = 1e-3;
    let cases = primitive_cases::<T>(opts.seed, margin);
    let references = primitive_cases::<f64>(opts.seed, margin);
    cases
        .iter()
        .zip(&references)
        .enumerate()
        .map(|(i, (case, reference))| {
            let corrupted = opts.corrupt.as_deref() == Some(case.name);
            let seed = opts.seed.wrapping_add(1 + i as u64);
            run_case(case, reference, seed, opts.precision.tolerance(), corrupted)
        })
        .collect()
}

/// Names of the primitive checks, in run order.
pub fn primitive_names() -> Vec<&'static str> {
    primitive_cases::<f64>(0, 1e-5).iter().map(|c| c.name).collect()
}

/// Tolerance of the end-to-end check.
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;

/// Draw budget of the end-to-end check.
pub const COMPOSITE_MAX_DRAWS: usize = 20 * COMPOSITE_SAMPLES;

/// A draw is judged only when the numeric estimate's own error bound is this
/// small relative to the gradient.
const RESOLUTION: f64 = COMPOSITE_TOLERANCE / 10.0;

fn e2e_eval(params: &ModelParams<f64>, cfg: &ModelConfig, x: &Tensor<f64>, y: &Tensor<f64>) -> Result<(f64, u64)> {
    let mut g = Graph::with_params(params, Mode::Train);
    let xv = g.constant(x.clone());
    let heads = forward_heads(&mut g, cfg, xv)?;
    let l = losses::combined_e2e_var(&mut g, &heads, y, &LossWeights::default())?;
    Ok((g.value(l.total).item().expect("scalar"), g.branch_signature()))
}

/// Full toy network in training mode under the combined objective, checked
/// on randomly sampled trainable weights. Steps whose probe interval crosses
/// a relu, abs, clamp or pooling switch are unusable; a draw whose numeric
/// estimate cannot be resolved to the required accuracy is redrawn.
pub fn composite(opts: &CheckOptions) -> Result<CheckResult> {
    let cfg = ModelConfig {
        width_scale: opts.width_scale,
        ..ModelConfig::toy()
    };
    let params = build_model::<f64>(&cfg, opts.seed)?;
    let (x, y) = data::synthetic(1, cfg.input_size, opts.seed)?.batch::<f64>(&[0])?;

    let (signature, mut grads) = {
        let mut g = Graph::with_params(&params, Mode::Train);
        let xv = g.constant(x.clone());
        let heads = forward_heads(&mut g, &cfg, xv)?;
        let l = losses::combined_e2e_var(&mut g, &heads, &y, &LossWeights::default())?;
        (g.branch_signature(), g.backward(l.total)?.into_params())
    };
    if opts.corrupt.as_deref() == Some(COMPOSITE) {
        for g in grads.values_mut() {
            *g = g.map(|v| v * 1.01);
        }
    }

    let trainable: Vec<String> = param_specs(&cfg)
        .into_iter()
        .filter(|s| s.kind.trainable())
        .map(|s| s.name)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..COMPOSITE_MAX_DRAWS {
        if checked == COMPOSITE_SAMPLES {
            break;
        }
        let name = &trainable[rng.random_range(0..trainable.len())];
        let point = params.get(name).expect("built parameter");
        let index = rng.random_range(0..point.len());
        let analytic = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?.data()[index];
        let at = |delta: f64| {
            let mut data = point.data().to_vec();
            data[index] += delta;
            let mut p = params.clone();
            p.insert(name.clone(), Tensor::new(point.shape().clone(), data)?);
            e2e_eval(&p, &cfg, &x, &y)
        };
        let estimate = ridders(MAX_STEP, MIN_STEP, |h| {
            let ((plus, s_plus), (minus, s_minus)) = (at(h)?, at(-h)?);
            Ok((s_plus == signature && s_minus == signature).then(|| (plus - minus) / (2.0 * h)))
        })?;
        let Some((numeric, bound)) = estimate else { continue };
        if numeric.is_nan() || !analytic.is_finite() {
            worst = f64::NAN;
            break;
        }
        if bound > RESOLUTION * analytic.abs().max(numeric.abs()) {
            continue;
        }
        worst = worst.max(relative_error(analytic, numeric));
        checked += 1;
    }
    if checked < COMPOSITE_SAMPLES && !worst.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "{COMPOSITE}: only {checked} of {COMPOSITE_MAX_DRAWS} draws were resolvable"
        )));
    }
    Ok(CheckResult {
        name: COMPOSITE.to_string(),
        max_rel_error: worst,
        tolerance: COMPOSITE_TOLERANCE,
    })
}

/// Every primitive check followed by the end-to-end check.
pub fn run_all(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    if let Some(name) = &opts.corrupt {
        if name != COMPOSITE && !primitive_names().contains(&name.as_str()) {
            return Err(Error::Config(format!("unknown check `{name}`")));
        }
    }
    let mut out = match opts.precision {
        Precision::F32 => primitives::<f32>(opts)?,
        Precision::F64 => primitives::<f64>(opts)?,
    };
    out.push(composite(opts)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_primitives_pass() {
        let results = primitives::<f64>(&CheckOptions::default()).unwrap();
        assert_eq!(results.len(), primitive_names().len());
        for r in &results {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn f32_primitives_pass_at_looser_tolerance() {
        let opts = CheckOptions {
            precision: Precision::F32,
            ..CheckOptions::default()
        };
        for r in primitives::<f32>(&opts).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn corruption_is_detected_and_isolated() {
        let opts = CheckOptions {
            corrupt: Some("deconv2d".into()),
            ..CheckOptions::default()
        };
        let results = primitives::<f64>(&opts).unwrap();
        let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
        assert_eq!(failed, ["deconv2d"]);
    }

    #[test]
    fn unknown_corruption_target_is_rejected() {
        let opts = CheckOptions {
            corrupt: Some("nope".into()),
            ..CheckOptions::default()
        };
        assert!(matches!(run_all(&opts), Err(Error::Config(_))));
    }

    #[test]
    fn composite_passes_and_detects_corruption() {
        let opts = CheckOptions {
            seed: 14,
            ..CheckOptions::default()
        };
        let clean = composite(&opts).unwrap();
        assert!(clean.passed(), "{clean:?}");
        let bad = composite(&CheckOptions {
            corrupt: Some(COMPOSITE.into()),
            ..opts
        })
        .unwrap();
        assert!(!bad.passed(), "{bad:?}");
        assert!((bad.max_rel_error - 0.01 / 1.01).abs() < 1e-4, "{bad:?}");
    }

    #[test]
    fn nan_never_passes() {
        let r = CheckResult {
            name: "x".into(),
            max_rel_error: f64::NAN,
            tolerance: 1.0,
        };
        assert!(!r.passed());
    }
}
