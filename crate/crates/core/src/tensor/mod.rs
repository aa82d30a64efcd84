//! Dense row-major `f32` tensors and the kernels the forward pass needs.
//!
//! Three-axis tensors are laid out channel, row, column. The only four-axis
//! tensors are convolution kernels (out, in, kernel rows, kernel columns). Every kernel returns
//! a fresh tensor and rejects non-finite results.

mod conv;
mod ops;

pub use conv::{conv2d, conv2d_with, ConvParams, PadMode, BN_EPS};
pub use ops::{
    add, avgpool, concat_channels, linear, maxpool2, mul, mul_broadcast, pixel_shuffle,
    pixel_unshuffle, relu, sigmoid, softmax_channels, softplus, Pool,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::shape(format!("rank must be 1..=4, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} implies {n} elements, data has {}",
                data.len()
            )));
        }
        let t = Tensor { shape, data };
        t.ensure_finite("Tensor::new")?;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(!shape.is_empty() && shape.len() <= 4, "rank must be 1..=4");
        assert!(value.is_finite());
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Builds a (C, H, W) tensor from an index function.
    pub fn from_fn(
        (c, h, w): (usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ci, y, x));
                }
            }
        }
        Tensor::new(vec![c, h, w], data)
    }

    /// Internal constructor for kernels that already validated extents.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>, op: &'static str) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let t = Tensor { shape, data };
        t.ensure_finite(op)?;
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extents of a three-axis tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(format!(
                "expected (C, H, W), got {:?}",
                self.shape
            ))),
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        let (_, h, w) = self.dims3().expect("three-axis tensor");
        self.data[(c * h + y) * w + x]
    }

    /// Contiguous slice of one channel plane.
    pub fn channel(&self, c: usize) -> &[f32] {
        let (_, h, w) = self.dims3().expect("three-axis tensor");
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }

    /// Circularly rotates every row by `shift` columns to the right.
    pub fn roll_columns(&self, shift: usize) -> Result<Self> {
        let (c, h, w) = self.dims3()?;
        Tensor::from_fn((c, h, w), |ci, y, x| self.get(ci, y, (x + w - shift % w) % w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_data() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let err = Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn roll_columns_wraps() {
        let t = Tensor::new(vec![1, 1, 4], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(t.roll_columns(1).unwrap().data(), &[4., 1., 2., 3.]);
        assert_eq!(t.roll_columns(4).unwrap().data(), t.data());
    }
}
