//! Saliency training objectives.
//!
//! Every loss is a pixel mean over an `N×H×W×1` prediction and a constant
//! target of the same shape. The graph builders (`*_var`) record onto a
//! [`Graph`] so the result can be differentiated; the [`SaliencyMap`]
//! functions evaluate the same graphs in `f64` for a single image.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::HeadOutputs;
use crate::saliency::SaliencyMap;
use crate::tensor::kernels::{self, ConvSpec};
use crate::tensor::{Element, Graph, Shape, Tensor, Var};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

/// 3×3 Laplacian stencil, row-major.
pub const LAPLACIAN: [f64; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];

/// Coefficients of the per-head and combined objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_w: f64,
    pub lambda_b: f64,
    pub lambda_aux: f64,
    pub lambda_bu: f64,
    pub lambda_td: f64,
    pub lambda_tdr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_w: 0.7,
            lambda_b: 0.3,
            lambda_aux: 0.5,
            lambda_bu: 1.0,
            lambda_td: 2.0,
            lambda_tdr: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_w", self.lambda_w),
            ("lambda_b", self.lambda_b),
            ("lambda_aux", self.lambda_aux),
            ("lambda_bu", self.lambda_bu),
            ("lambda_td", self.lambda_td),
            ("lambda_tdr", self.lambda_tdr),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a finite nonnegative number, got {v}")));
            }
        }
        Ok(())
    }

    fn head_weight(&self, head: Head) -> f64 {
        match head {
            Head::Aux => self.lambda_aux,
            Head::Bu => self.lambda_bu,
            Head::Td => self.lambda_td,
            Head::Tdr => self.lambda_tdr,
        }
    }
}

/// Output head a loss term is attached to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    Aux,
    Bu,
    Td,
    Tdr,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::Aux, Head::Bu, Head::Td, Head::Tdr];

    pub fn as_str(self) -> &'static str {
        match self {
            Head::Aux => "aux",
            Head::Bu => "bu",
            Head::Td => "td",
            Head::Tdr => "tdr",
        }
    }

    /// Selects this head's output.
    pub fn pick<V: Copy>(self, heads: &HeadOutputs<V>) -> Option<V> {
        match self {
            Head::Aux => heads.y_aux,
            Head::Bu => heads.y_bu,
            Head::Td => heads.y_td,
            Head::Tdr => heads.y_tdr,
        }
    }
}

impl FromStr for Head {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Head::ALL
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown head `{s}` (aux|bu|td|tdr)")))
    }
}

fn check_target<T: Element>(g: &Graph<'_, T>, op: &'static str, pred: Var, gt: &Tensor<T>) -> Result<()> {
    kernels::same_shape(op, g.shape(pred), gt.shape())?;
    let (_, _, _, c) = gt.shape().nhwc_dims(op)?;
    if c != 1 {
        return Err(Error::InvalidShape {
            op,
            msg: format!("expected a single-channel map, got {}", gt.shape()),
        });
    }
    Ok(())
}

/// `ln(clamp(p))` and `ln(1 − clamp(p))`.
fn log_terms<T: Element>(g: &mut Graph<'_, T>, pred: Var) -> (Var, Var) {
    let p = g.clamp(pred, T::from_f64(EPS), T::from_f64(1.0 - EPS));
    let log_p = g.ln(p);
    let neg = g.scale(p, -T::ONE);
    let one_minus = g.offset(neg, T::ONE);
    let log_q = g.ln(one_minus);
    (log_p, log_q)
}

/// `−mean(wp·ln p + wn·ln(1 − p)) + offset`.
fn weighted_ce<T: Element>(g: &mut Graph<'_, T>, pred: Var, wp: Tensor<T>, wn: Tensor<T>, offset: f64) -> Result<Var> {
    let (log_p, log_q) = log_terms(g, pred);
    let wp = g.constant(wp);
    let wn = g.constant(wn);
    let a = g.mul(log_p, wp)?;
    let b = g.mul(log_q, wn)?;
    let s = g.add(a, b)?;
    let m = g.mean(s);
    let loss = g.scale(m, -T::ONE);
    Ok(if offset == 0.0 { loss } else { g.offset(loss, T::from_f64(offset)) })
}

/// Binary cross-entropy.
pub fn bce_var<T: Element>(g: &mut Graph<'_, T>, pred: Var, gt: &Tensor<T>) -> Result<Var> {
    check_target(g, "bce", pred, gt)?;
    let wn = gt.map(|y| T::ONE - y);
    weighted_ce(g, pred, gt.clone(), wn, 0.0)
}

/// Per-image positive and negative class weights: `(1 − p, p)` with `p` the
/// mean target value, or `(1, 1)` when the target is all background or all
/// foreground.
pub fn class_weights(target: &[f64]) -> (f64, f64) {
    let p = target.iter().sum::<f64>() / target.len() as f64;
    if p <= 0.0 || p >= 1.0 {
        (1.0, 1.0)
    } else {
        (1.0 - p, p)
    }
}

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Class-balanced cross-entropy, measured relative to the target's own
/// weighted entropy. It vanishes at `pred == gt`, soft targets included.
/// For binary targets the entropy is zero and this is plain weighted BCE.
pub fn wce_var<T: Element>(g: &mut Graph<'_, T>, pred: Var, gt: &Tensor<T>) -> Result<Var> {
    check_target(g, "wce", pred, gt)?;
    let (n, h, w, _) = gt.shape().nhwc_dims("wce")?;
    let per_image = h * w;
    let mut wp = Vec::with_capacity(gt.len());
    let mut wn = Vec::with_capacity(gt.len());
    let mut entropy = 0.0;
    for img in gt.data().chunks(per_image).take(n) {
        let y: Vec<f64> = img.iter().map(|v| v.to_f64()).collect();
        let (a, b) = class_weights(&y);
        for &yi in &y {
            wp.push(T::from_f64(a * yi));
            wn.push(T::from_f64(b * (1.0 - yi)));
            entropy += a * xlnx(yi) + b * xlnx(1.0 - yi);
        }
    }
    let entropy = entropy / gt.len() as f64;
    let shape = gt.shape().clone();
    weighted_ce(g, pred, Tensor::new(shape.clone(), wp)?, Tensor::new(shape, wn)?, entropy)
}

fn laplacian_kernel<T: Element>() -> Tensor<T> {
    Tensor::from_vec(vec![3, 3, 1, 1], LAPLACIAN.iter().map(|&v| T::from_f64(v)).collect()).expect("3x3x1x1")
}

/// `|tanh(K ⋆ m)|` with zero padding, on a differentiable map.
pub fn laplacian_var<T: Element>(g: &mut Graph<'_, T>, m: Var) -> Result<Var> {
    let k = g.constant(laplacian_kernel());
    let c = g.conv2d(m, k, None, &ConvSpec::same(3, 1, 1))?;
    let t = g.tanh(c);
    Ok(g.abs(t))
}

/// Laplacian map of a constant tensor.
pub fn laplacian_tensor<T: Element>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let v = g.constant(m.clone());
    let out = laplacian_var(&mut g, v)?;
    Ok(g.value(out).clone())
}

/// Boundary localization error: WCE between Laplacian maps.
pub fn ble_var<T: Element>(g: &mut Graph<'_, T>, pred: Var, gt: &Tensor<T>) -> Result<Var> {
    check_target(g, "ble", pred, gt)?;
    let lp = laplacian_var(g, pred)?;
    let lg = laplacian_tensor(gt)?;
    wce_var(g, lp, &lg)
}

/// Loss attached to one output head.
pub fn head_loss_var<T: Element>(
    g: &mut Graph<'_, T>,
    head: Head,
    pred: Var,
    gt: &Tensor<T>,
    w: &LossWeights,
) -> Result<Var> {
    match head {
        Head::Aux | Head::Tdr => bce_var(g, pred, gt),
        Head::Bu | Head::Td => {
            let wce = wce_var(g, pred, gt)?;
            let ble = ble_var(g, pred, gt)?;
            let a = g.scale(wce, T::from_f64(w.lambda_w));
            let b = g.scale(ble, T::from_f64(w.lambda_b));
            g.add(a, b)
        }
    }
}

/// Combined objective with each present head's weighted term.
#[derive(Clone, Copy, Debug)]
pub struct E2eLoss {
    pub total: Var,
    /// `λ_head · L_head`, or `None` for absent heads.
    pub terms: [(Head, Option<Var>); 4],
}

/// `Σ λ_head · L_head` over the heads present in `heads`.
pub fn combined_e2e_var<T: Element>(
    g: &mut Graph<'_, T>,
    heads: &HeadOutputs<Var>,
    gt: &Tensor<T>,
    w: &LossWeights,
) -> Result<E2eLoss> {
    let mut terms = Head::ALL.map(|h| (h, None));
    let mut total: Option<Var> = None;
    for (head, slot) in terms.iter_mut() {
        let Some(pred) = head.pick(heads) else { continue };
        let l = head_loss_var(g, *head, pred, gt, w)?;
        let term = g.scale(l, T::from_f64(w.head_weight(*head)));
        *slot = Some(term);
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(T::ZERO)),
    };
    Ok(E2eLoss { total, terms })
}

/// Stage-one objective: BCE on the top-down head.
pub fn pretrain_loss_var<T: Element>(g: &mut Graph<'_, T>, y_td: Var, gt: &Tensor<T>) -> Result<Var> {
    bce_var(g, y_td, gt)
}

fn map_tensor(m: &SaliencyMap) -> Tensor<f64> {
    m.to_tensor()
}

fn eval_pair(
    pred: &SaliencyMap,
    gt: &SaliencyMap,
    f: impl FnOnce(&mut Graph<'static, f64>, Var, &Tensor<f64>) -> Result<Var>,
) -> Result<f64> {
    if !pred.same_extent(gt) {
        return Err(Error::ShapeMismatch {
            op: "loss",
            axis: "spatial",
            expected: gt.height() * gt.width(),
            actual: pred.height() * pred.width(),
        });
    }
    let mut g = Graph::new();
    let p = g.constant(map_tensor(pred));
    let out = f(&mut g, p, &map_tensor(gt))?;
    Ok(g.value(out).item().expect("scalar loss"))
}

pub fn bce(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    eval_pair(pred, gt, |g, p, y| bce_var(g, p, y))
}

pub fn wce(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    eval_pair(pred, gt, |g, p, y| wce_var(g, p, y))
}

pub fn laplacian_map(m: &SaliencyMap) -> SaliencyMap {
    let t = laplacian_tensor(&map_tensor(m)).expect("single-channel map");
    SaliencyMap::from_tensor(&t, 0).expect("values in [0, 1)")
}

pub fn ble(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    eval_pair(pred, gt, |g, p, y| ble_var(g, p, y))
}

pub fn head_loss(head: Head, pred: &SaliencyMap, gt: &SaliencyMap, w: &LossWeights) -> Result<f64> {
    eval_pair(pred, gt, |g, p, y| head_loss_var(g, head, p, y, w))
}

pub fn pretrain_loss(y_td: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    eval_pair(y_td, gt, |g, p, y| pretrain_loss_var(g, p, y))
}

/// Combined objective over single-image head maps.
pub fn combined_e2e(heads: &HeadOutputs<SaliencyMap>, gt: &SaliencyMap, w: &LossWeights) -> Result<f64> {
    let mut g = Graph::new();
    let mut vars = HeadOutputs::empty();
    let mut bind = |m: &Option<SaliencyMap>| -> Result<Option<Var>> {
        m.as_ref()
            .map(|m| {
                if !m.same_extent(gt) {
                    return Err(Error::InvalidArgument("head and target extents differ".into()));
                }
                Ok(g.constant(map_tensor(m)))
            })
            .transpose()
    };
    vars.y_aux = bind(&heads.y_aux)?;
    vars.y_bu = bind(&heads.y_bu)?;
    vars.y_td = bind(&heads.y_td)?;
    vars.y_tdr = bind(&heads.y_tdr)?;
    let loss = combined_e2e_var(&mut g, &vars, &map_tensor(gt), w)?;
    Ok(g.value(loss.total).item().expect("scalar loss"))
}

/// Shape of a single-image target for `size × size` inputs.
pub fn target_shape(batch: usize, size: usize) -> Result<Shape> {
    Shape::nhwc(batch, size, size, 1)
}
