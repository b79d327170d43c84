//! Dense tensors, layer kernels and reverse-mode differentiation.
//!
//! Feature maps use batch-height-width-channels (NHWC) layout, row-major.
//! Convolution kernels are stored as (kernel_h, kernel_w, in_ch, out_ch).

mod backend;
mod element;
pub mod gradcheck;
mod graph;
pub mod kernels;

use std::fmt;
use std::sync::Arc;

pub use backend::{Backend, ShapeTracer};
pub use element::Element;
pub use graph::{EmptyParams, Gradients, Graph, Mode, ParamSource, Var};
pub use kernels::{ConvSpec, Padding};

use crate::error::{Error, Result};

/// Ordered list of tensor extents.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::InvalidShape {
                op: "shape",
                msg: "rank must be at least 1".into(),
            });
        }
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidShape {
                op: "shape",
                msg: format!("extent of axis {axis} is zero"),
            });
        }
        Ok(Shape(dims))
    }

    /// Shape of a batch of feature maps.
    pub fn nhwc(n: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        Shape::new(vec![n, h, w, c])
    }

    pub fn scalar() -> Self {
        Shape(vec![1, 1, 1, 1])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Interprets the shape as (batch, height, width, channels).
    pub fn nhwc_dims(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.0[..] {
            [n, h, w, c] => Ok((n, h, w, c)),
            _ => Err(Error::InvalidShape {
                op,
                msg: format!("expected a rank-4 NHWC tensor, got {self}"),
            }),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Shape({self})")
    }
}

/// Immutable dense tensor. Cloning shares the underlying buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Arc<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                msg: format!("shape {shape} needs {} values, got {}", shape.numel(), data.len()),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn from_vec(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        Tensor::new(Shape::new(dims)?, data)
    }

    pub fn full(shape: Shape, value: T) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, T::ZERO)
    }

    pub fn scalar(value: T) -> Self {
        Tensor::full(Shape::scalar(), value)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Mutable access; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.len() {
            return Err(Error::InvalidShape {
                op: "reshape",
                msg: format!("cannot view {} as {shape}", self.shape),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    /// Converts the element type, rounding when narrowing.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| U::from_f64(v.to_f64())).collect()),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<f64> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
                .fold(0.0, f64::max)
        })
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        let head: Vec<String> = self.data.iter().take(SHOWN).map(|v| format!("{v}")).collect();
        let more = if self.len() > SHOWN { ", .." } else { "" };
        write!(f, "Tensor<{}>[{}]({}{more})", T::NAME, self.shape, head.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_extent() {
        assert!(Shape::new(vec![1, 0, 3]).is_err());
        assert!(Shape::new(Vec::new()).is_err());
    }

    #[test]
    fn length_must_match_shape() {
        assert!(Tensor::<f32>::from_vec([2, 2], vec![1.0; 3]).is_err());
        let t = Tensor::<f32>::from_vec([2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(t.shape().numel(), t.len());
    }

    #[test]
    fn clone_is_copy_on_write() {
        let a = Tensor::<f64>::zeros(Shape::new(vec![3]).unwrap());
        let mut b = a.clone();
        b.data_mut()[0] = 1.0;
        assert_eq!(a.data()[0], 0.0);
        assert_eq!(b.data()[0], 1.0);
    }
}
