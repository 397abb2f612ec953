//! Dense `N x C x H x W` activations.
//!
//! A single feature map is a tensor with `N = 1`; vectors per sample (pooled
//! descriptors, logits) are tensors with `H = W = 1`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

/// A single-sample activation grid.
pub type FeatureMap = Tensor;

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            shape: [n, c, h, w],
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// `N x D` matrix stored as `N x D x 1 x 1`.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec([rows, cols, 1, 1], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let s = self.sample_len();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let s = self.sample_len();
        &mut self.data[n * s..(n + 1) * s]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks tensors along the batch axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::EmptyInput)?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.shape[1..] != [c, h, w] {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    p.shape, first.shape
                )));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }

    /// Samples `[start, end)` as a new tensor.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor {
        let s = self.sample_len();
        Tensor {
            shape: [end - start, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[start * s..end * s].to_vec(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_and_slice_round_trip() {
        let a = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec([2, 2, 1, 1], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = Tensor::concat_batch(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), [3, 2, 1, 1]);
        assert_eq!(c.slice_batch(1, 3), b);
        assert_eq!(c.sample(0), a.data());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = Tensor::zeros(1, 2, 2, 2);
        let b = Tensor::zeros(1, 3, 2, 2);
        assert!(Tensor::concat_batch(&[&a, &b]).is_err());
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let mut t = Tensor::zeros(2, 3, 4, 5);
        t.set(1, 2, 3, 4, 9.0);
        assert_eq!(*t.data().last().unwrap(), 9.0);
        assert_eq!(t.index(0, 1, 0, 0), 20);
    }
}
