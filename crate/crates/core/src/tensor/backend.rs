use std::collections::BTreeMap;

use super::graph::{Graph, Var};
use super::kernels::{self, ConvSpec};
use super::{Element, Shape};
use crate::error::{Error, Result};

/// The layer vocabulary the network is written against.
///
/// [`Graph`] evaluates and records for differentiation; [`ShapeTracer`]
/// only propagates shapes, which makes full-resolution architecture checks
/// cheap.
pub trait Backend {
    type Value: Copy;

    fn param(&mut self, name: &str) -> Result<Self::Value>;
    fn shape_of(&self, v: Self::Value) -> Shape;
    fn conv2d(&mut self, x: Self::Value, w: Self::Value, b: Option<Self::Value>, spec: &ConvSpec) -> Result<Self::Value>;
    fn deconv2d(&mut self, x: Self::Value, w: Self::Value, spec: &ConvSpec) -> Result<Self::Value>;
    fn maxpool2d(&mut self, x: Self::Value, size: usize, stride: usize) -> Result<Self::Value>;
    fn upsample(&mut self, x: Self::Value, factor: usize) -> Result<Self::Value>;
    fn batchnorm(&mut self, x: Self::Value, prefix: &str) -> Result<Self::Value>;
    fn relu(&mut self, x: Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, x: Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: Self::Value, b: Self::Value) -> Result<Self::Value>;
    fn concat_channels(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;

    /// Marks a named intermediate. No-op unless the backend records taps.
    fn tap(&mut self, _name: &str, _v: Self::Value) {}
}

impl<T: Element> Backend for Graph<'_, T> {
    type Value = Var;

    fn param(&mut self, name: &str) -> Result<Var> {
        Graph::param(self, name)
    }
    fn shape_of(&self, v: Var) -> Shape {
        self.shape(v).clone()
    }
    fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        Graph::conv2d(self, x, w, b, spec)
    }
    fn deconv2d(&mut self, x: Var, w: Var, spec: &ConvSpec) -> Result<Var> {
        Graph::deconv2d(self, x, w, spec)
    }
    fn maxpool2d(&mut self, x: Var, size: usize, stride: usize) -> Result<Var> {
        Graph::maxpool2d(self, x, size, stride)
    }
    fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        Graph::upsample(self, x, factor)
    }
    fn batchnorm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        Graph::batchnorm(self, x, prefix)
    }
    fn relu(&mut self, x: Var) -> Result<Var> {
        Ok(Graph::relu(self, x))
    }
    fn sigmoid(&mut self, x: Var) -> Result<Var> {
        Ok(Graph::sigmoid(self, x))
    }
    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        Graph::add(self, a, b)
    }
    fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        Graph::concat_channels(self, parts)
    }
}

/// Shape-only backend. Applies the same shape rules as the real kernels and
/// records every tapped intermediate.
#[derive(Default)]
pub struct ShapeTracer {
    params: BTreeMap<String, Shape>,
    values: Vec<Shape>,
    taps: BTreeMap<String, Shape>,
    used: Vec<String>,
}

impl ShapeTracer {
    pub fn new(params: impl IntoIterator<Item = (String, Shape)>) -> Self {
        ShapeTracer {
            params: params.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn input(&mut self, shape: Shape) -> usize {
        self.values.push(shape);
        self.values.len() - 1
    }

    pub fn taps(&self) -> &BTreeMap<String, Shape> {
        &self.taps
    }

    pub fn tap_shape(&self, name: &str) -> Option<&Shape> {
        self.taps.get(name)
    }

    /// Parameters read so far, in first-use order.
    pub fn used_params(&self) -> &[String] {
        &self.used
    }

    fn get(&self, v: usize) -> &Shape {
        &self.values[v]
    }

    fn param_shape(&self, name: &str) -> Result<&Shape> {
        self.params.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }
}

impl Backend for ShapeTracer {
    type Value = usize;

    fn param(&mut self, name: &str) -> Result<usize> {
        let shape = self.param_shape(name)?.clone();
        if !self.used.iter().any(|n| n == name) {
            self.used.push(name.to_string());
        }
        Ok(self.input(shape))
    }
    fn shape_of(&self, v: usize) -> Shape {
        self.get(v).clone()
    }
    fn conv2d(&mut self, x: usize, w: usize, b: Option<usize>, spec: &ConvSpec) -> Result<usize> {
        let s = kernels::conv2d_shape(self.get(x), self.get(w), b.map(|b| self.get(b)), spec)?;
        Ok(self.input(s))
    }
    fn deconv2d(&mut self, x: usize, w: usize, spec: &ConvSpec) -> Result<usize> {
        let s = kernels::deconv2d_shape(self.get(x), self.get(w), spec)?;
        Ok(self.input(s))
    }
    fn maxpool2d(&mut self, x: usize, size: usize, stride: usize) -> Result<usize> {
        let s = kernels::maxpool2d_shape(self.get(x), size, stride)?;
        Ok(self.input(s))
    }
    fn upsample(&mut self, x: usize, factor: usize) -> Result<usize> {
        let s = kernels::upsample_shape(self.get(x), factor)?;
        Ok(self.input(s))
    }
    fn batchnorm(&mut self, x: usize, prefix: &str) -> Result<usize> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        for stat in ["running_mean", "running_var"] {
            self.param(&format!("{prefix}.{stat}"))?;
        }
        let s = kernels::batchnorm_shape(self.get(x), self.get(gamma), self.get(beta))?;
        Ok(self.input(s))
    }
    fn relu(&mut self, x: usize) -> Result<usize> {
        Ok(self.input(self.get(x).clone()))
    }
    fn sigmoid(&mut self, x: usize) -> Result<usize> {
        Ok(self.input(self.get(x).clone()))
    }
    fn add(&mut self, a: usize, b: usize) -> Result<usize> {
        kernels::same_shape("add", self.get(a), self.get(b))?;
        Ok(self.input(self.get(a).clone()))
    }
    fn concat_channels(&mut self, parts: &[usize]) -> Result<usize> {
        let shapes: Vec<&Shape> = parts.iter().map(|&p| self.get(p)).collect();
        let s = kernels::concat_shape(&shapes)?;
        Ok(self.input(s))
    }
    fn tap(&mut self, name: &str, v: usize) {
        self.taps.insert(name.to_string(), self.get(v).clone());
    }
}
