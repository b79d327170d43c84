//! Recorded computation graph with reverse-mode differentiation.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use super::kernels::{self, ConvSpec};
use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Read-only lookup of named parameter tensors.
pub trait ParamSource<T>: Sync {
    fn get(&self, name: &str) -> Option<&Tensor<T>>;
}

/// A parameter source with no entries.
pub struct EmptyParams;

impl<T> ParamSource<T> for EmptyParams {
    fn get(&self, _name: &str) -> Option<&Tensor<T>> {
        None
    }
}

impl<T, P: ParamSource<T> + ?Sized> ParamSource<T> for &P {
    fn get(&self, name: &str) -> Option<&Tensor<T>> {
        (**self).get(name)
    }
}

/// Whether batch normalization uses batch statistics (and updates the
/// running averages) or the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    Deconv { x: Var, w: Var, spec: ConvSpec },
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample { x: Var, factor: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, training: bool },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Ln(Var),
    Clamp { x: Var, lo: T, hi: T },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale { x: Var, factor: T },
    Offset(Var),
    Concat(Vec<Var>),
    Mean(Var),
    Sum(Var),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Momentum of the running-statistics update: `r ← (1 − m)·r + m·batch`.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Define-by-run graph. Every op evaluates eagerly and records what its
/// backward pass needs. Nodes are appended in evaluation order, so reverse
/// index order is a valid reverse topological order.
pub struct Graph<'p, T: Element> {
    nodes: Vec<Node<T>>,
    params: &'p dyn ParamSource<T>,
    param_vars: BTreeMap<String, Var>,
    mode: Mode,
    running_updates: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Default for Graph<'static, T> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<T: Element> Graph<'static, T> {
    /// A graph without parameters, in inference mode.
    pub fn new() -> Self {
        Graph::with_params(&EmptyParams, Mode::Infer)
    }
}

impl<'p, T: Element> Graph<'p, T> {
    pub fn with_params(params: &'p dyn ParamSource<T>, mode: Mode) -> Self {
        Graph {
            nodes: Vec::new(),
            params,
            param_vars: BTreeMap::new(),
            mode,
            running_updates: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Input that receives a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Named parameter from the graph's parameter source. Repeated lookups of
    /// the same name share one node, so gradients accumulate.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.variable(t);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Names of all parameters this graph has read.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.param_vars.keys().map(String::as_str)
    }

    /// Hash of every branch taken by a non-smooth op: relu and abs signs,
    /// clamp regions and pooling winners. Two evaluations with equal
    /// signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = std::hash::DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let input = |x: &Var| self.nodes[x.0].value.data();
            match &node.op {
                Op::Relu(x) | Op::Abs(x) => {
                    i.hash(&mut h);
                    for &v in input(x) {
                        (v > T::ZERO).hash(&mut h);
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    i.hash(&mut h);
                    for &v in input(x) {
                        ((v < *lo) as u8 | (((v > *hi) as u8) << 1)).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => {
                    i.hash(&mut h);
                    argmax.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Running statistics computed by training-mode batch norm layers.
    pub fn running_updates(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.running_updates
    }

    pub fn take_running_updates(&mut self) -> BTreeMap<String, Tensor<T>> {
        std::mem::take(&mut self.running_updates)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let y = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Op::Conv { x, w, b, spec: *spec }, y, rg))
    }

    pub fn deconv2d(&mut self, x: Var, w: Var, spec: &ConvSpec) -> Result<Var> {
        let y = kernels::deconv2d_forward(self.value(x), self.value(w), spec)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Op::Deconv { x, w, spec: *spec }, y, rg))
    }

    pub fn maxpool2d(&mut self, x: Var, size: usize, stride: usize) -> Result<Var> {
        let (y, argmax) = kernels::maxpool2d_forward(self.value(x), size, stride)?;
        let rg = self.rg(x);
        Ok(self.push(Op::MaxPool { x, argmax }, y, rg))
    }

    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = kernels::upsample_forward(self.value(x), factor)?;
        let rg = self.rg(x);
        Ok(self.push(Op::Upsample { x, factor }, y, rg))
    }

    /// Batch normalization whose parameters live under `prefix`
    /// (`.gamma`, `.beta`, `.running_mean`, `.running_var`).
    pub fn batchnorm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let mean_name = format!("{prefix}.running_mean");
        let var_name = format!("{prefix}.running_var");
        let lookup = |name: &str| {
            self.params
                .get(name)
                .cloned()
                .ok_or_else(|| Error::UnknownParameter(name.to_string()))
        };
        let (rm, rv) = (lookup(&mean_name)?, lookup(&var_name)?);
        let eps = T::from_f64(BN_EPS);
        let training = self.mode == Mode::Train;
        let out = kernels::batchnorm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            eps,
            (!training).then_some((&rm, &rv)),
        )?;
        if let Some((mean, var)) = &out.batch_stats {
            let m = T::from_f64(BN_MOMENTUM);
            let blend = |old: &Tensor<T>, new: &[T]| {
                let data = old.data().iter().zip(new).map(|(&o, &n)| (T::ONE - m) * o + m * n).collect();
                Tensor::new(old.shape().clone(), data)
            };
            self.running_updates.insert(mean_name, blend(&rm, mean)?);
            self.running_updates.insert(var_name, blend(&rv, var)?);
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: out.xhat,
                inv_std: out.inv_std,
                training,
            },
            out.y,
            rg,
        ))
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let y = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(op, y, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::ZERO { v } else { T::ZERO })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| T::ONE / (T::ONE + (-v).exp()))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), |v| v.ln())
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| {
            if v < lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            }
        })
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.unary(x, Op::Scale { x, factor }, |v| v * factor)
    }

    pub fn offset(&mut self, x: Var, value: T) -> Var {
        self.unary(x, Op::Offset(x), |v| v + value)
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        kernels::same_shape(op_name, self.shape(a), self.shape(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let y = Tensor::new(va.shape().clone(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op, y, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let shapes: Vec<&Shape> = parts.iter().map(|&p| self.shape(p)).collect();
        let out_shape = kernels::concat_shape(&shapes)?;
        let (_, _, _, c_out) = out_shape.nhwc_dims("concat_channels")?;
        let pixels = out_shape.numel() / c_out;
        let mut data = Vec::with_capacity(out_shape.numel());
        let chans: Vec<usize> = parts.iter().map(|&p| *self.shape(p).dims().last().unwrap()).collect();
        for px in 0..pixels {
            for (&p, &c) in parts.iter().zip(&chans) {
                data.extend_from_slice(&self.value(p).data()[px * c..][..c]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let y = Tensor::new(out_shape, data)?;
        Ok(self.push(Op::Concat(parts.to_vec()), y, rg))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / T::from_f64(v.len() as f64);
        let rg = self.rg(x);
        self.push(Op::Mean(x), Tensor::scalar(m), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    /// Reverse pass from a scalar node. Every node that requires a gradient
    /// receives one; parameters that do not influence `loss` get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss);
        if !loss_shape.is_scalar() {
            return Err(Error::NonScalarLoss(loss_shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let contributions = self.node_backward(node, g.clone())?;
            grads[idx] = Some(g);
            for (target, delta) in contributions {
                if !self.rg(target) {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
                    slot => *slot = Some(delta),
                }
            }
        }

        let by_node = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                if !node.requires_grad {
                    return Ok(None);
                }
                let data = g.unwrap_or_else(|| vec![T::ZERO; node.value.len()]);
                Tensor::new(node.value.shape().clone(), data).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;
        let params = self
            .param_vars
            .iter()
            .filter_map(|(name, v)| by_node[v.0].clone().map(|g| (name.clone(), g)))
            .collect();
        Ok(Gradients { by_node, params })
    }

    fn node_backward(&self, node: &Node<T>, g: Vec<T>) -> Result<Vec<(Var, Vec<T>)>> {
        let val = |v: Var| self.value(v);
        let gt = || Tensor::new(node.value.shape().clone(), g.clone());
        let map_x = |x: Var, f: &dyn Fn(T, T, T) -> T| -> Vec<T> {
            // f(input, output, upstream)
            val(x)
                .data()
                .iter()
                .zip(node.value.data())
                .zip(&g)
                .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
                .collect()
        };
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv { x, w, b, spec } => {
                let grads = kernels::conv2d_backward(val(*x), val(*w), b.is_some(), spec, &gt()?, self.rg(*x))?;
                let mut out = vec![(*w, grads.dw.into_vec())];
                if let Some(dx) = grads.dx {
                    out.push((*x, dx.into_vec()));
                }
                if let (Some(b), Some(db)) = (b, grads.db) {
                    out.push((*b, db.into_vec()));
                }
                out
            }
            Op::Deconv { x, w, spec } => {
                let (dx, dw) = kernels::deconv2d_backward(val(*x), val(*w), spec, &gt()?, self.rg(*x))?;
                let mut out = vec![(*w, dw.into_vec())];
                if let Some(dx) = dx {
                    out.push((*x, dx.into_vec()));
                }
                out
            }
            Op::MaxPool { x, argmax } => {
                vec![(*x, kernels::maxpool2d_backward(val(*x).shape(), argmax, &gt()?).into_vec())]
            }
            Op::Upsample { x, factor } => {
                vec![(*x, kernels::upsample_backward(val(*x).shape(), *factor, &gt()?)?.into_vec())]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let (dx, dgamma, dbeta) = kernels::batchnorm_backward(xhat, inv_std, val(*gamma).data(), &g, *training);
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Relu(x) => vec![(*x, map_x(*x, &|xi, _, gi| if xi > T::ZERO { gi } else { T::ZERO }))],
            Op::Sigmoid(x) => vec![(*x, map_x(*x, &|_, yi, gi| gi * yi * (T::ONE - yi)))],
            Op::Tanh(x) => vec![(*x, map_x(*x, &|_, yi, gi| gi * (T::ONE - yi * yi)))],
            Op::Abs(x) => vec![(
                *x,
                map_x(*x, &|xi, _, gi| {
                    if xi > T::ZERO {
                        gi
                    } else if xi < T::ZERO {
                        -gi
                    } else {
                        T::ZERO
                    }
                }),
            )],
            Op::Ln(x) => vec![(*x, map_x(*x, &|xi, _, gi| gi / xi))],
            Op::Clamp { x, lo, hi } => {
                vec![(*x, map_x(*x, &|xi, _, gi| if xi >= *lo && xi <= *hi { gi } else { T::ZERO }))]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g)],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.iter().map(|&v| -v).collect())],
            Op::Mul(a, b) => {
                let da = g.iter().zip(val(*b).data()).map(|(&gi, &bi)| gi * bi).collect();
                let db = g.iter().zip(val(*a).data()).map(|(&gi, &ai)| gi * ai).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Scale { x, factor } => vec![(*x, g.iter().map(|&v| v * *factor).collect())],
            Op::Offset(x) => vec![(*x, g)],
            Op::Concat(parts) => {
                let chans: Vec<usize> = parts.iter().map(|&p| *self.shape(p).dims().last().unwrap()).collect();
                let c_out: usize = chans.iter().sum();
                let pixels = g.len() / c_out;
                let mut outs: Vec<Vec<T>> = chans.iter().map(|&c| Vec::with_capacity(pixels * c)).collect();
                for px in g.chunks(c_out) {
                    let mut off = 0;
                    for (buf, &c) in outs.iter_mut().zip(&chans) {
                        buf.extend_from_slice(&px[off..off + c]);
                        off += c;
                    }
                }
                parts.iter().copied().zip(outs).collect()
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                vec![(*x, vec![g[0] / T::from_f64(n as f64); n])]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).len()])],
        };
        Ok(out)
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient with respect to a node, if that node requires one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// Gradients of every parameter the graph read, keyed by name.
    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }
}
