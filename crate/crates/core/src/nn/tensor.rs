use serde::{Deserialize, Serialize};

use super::{NnError, Result};

/// Dense row-major tensor, either (N, C, H, W) or (N, D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() != 2 && shape.len() != 4 {
            return Err(NnError::ShapeMismatch(format!(
                "tensor rank must be 2 or 4, got {}",
                shape.len()
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// (C, H, W) of a rank-4 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [_, c, h, w] => Ok((c, h, w)),
            _ => Err(NnError::ShapeMismatch(format!(
                "expected an (N, C, H, W) tensor, got {:?}",
                self.shape
            ))),
        }
    }

    /// Values of sample `n`.
    pub fn sample(&self, n: usize) -> &[f64] {
        let stride = self.data.len() / self.shape[0];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
