//! Differentiable model contract and the analytic reference models.
//!
//! All models are immutable after construction. `forward` and
//! `input_gradient` take `&self` and may be called from many threads.

mod classifier;
mod generator;

pub use classifier::{Activation, FeatureMap, PrototypeClassifier, RealismDiscriminator};
pub use generator::{Blob, BlobGenerator, BlobParams, FrameWindow, GeneratorConfig, render_blobs};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::losses;
use crate::tensor::{ImageShape, ImageTensor, LatentVector};

/// A model that exposes its forward pass and vector-Jacobian products with
/// respect to its input. Inputs and outputs are flat `f64` buffers.
pub trait DifferentiableModel: Send + Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn forward(&self, input: &[f64]) -> Result<Vec<f64>>;
    /// `cotangent^T * d forward / d input`, shaped like `input`.
    fn input_gradient(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>>;
}

/// A differentiable model over images that returns class logits.
pub trait ImageClassifier: DifferentiableModel {
    fn input_shape(&self) -> ImageShape;

    fn num_classes(&self) -> usize {
        self.output_len()
    }

    fn classify(&self, x: &ImageTensor) -> Result<(LogitVector, ScoreVector)> {
        ensure!(
            x.shape() == self.input_shape(),
            "classifier expects {}, got {}",
            self.input_shape(),
            x.shape()
        );
        let logits = LogitVector::new(self.forward(x.data())?)?;
        let scores = losses::softmax(&logits)?;
        Ok((logits, scores))
    }
}

/// Generator split into a mapping network `Z -> W` and a synthesis network `W -> X`.
pub trait ImagePrior: Send + Sync {
    fn z_dim(&self) -> usize;
    fn w_dim(&self) -> usize;
    fn output_shape(&self) -> ImageShape;
    fn map_latent(&self, z: &LatentVector, truncation_psi: f64, cutoff: usize)
        -> Result<LatentVector>;
    fn synthesize(&self, w: &LatentVector) -> Result<ImageTensor>;
    /// Gradient of `<cotangent, synthesize(w)>` with respect to `w`.
    fn synthesis_gradient(&self, w: &LatentVector, cotangent: &[f64]) -> Result<Vec<f64>>;
}

/// Raw class logits. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure!(!values.is_empty(), "logit vector is empty");
        ensure!(
            values.iter().all(|v| v.is_finite()),
            "logit vector contains non-finite entries"
        );
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Softmax prediction scores; entries in `[0, 1]` summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure!(
            values.iter().all(|v| (0.0..=1.0).contains(v)),
            "scores must lie in [0, 1]"
        );
        let total: f64 = values.iter().sum();
        ensure!((total - 1.0).abs() < 1e-6, "scores sum to {total}, expected 1");
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// First index of the maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Dense row-major matrix, serialized as `{rows, cols, data}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            "matrix {rows}x{cols} needs {} values, got {}",
            rows * cols,
            data.len()
        );
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self^T * y`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        ensure!(
            self.cols == other.rows,
            "cannot multiply {}x{} by {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, b) in out.row_mut(r).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }
}

/// `x -> A x`; the simplest model honoring the contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Matrix,
}

impl DifferentiableModel for LinearModel {
    fn input_len(&self) -> usize {
        self.weights.cols
    }

    fn output_len(&self) -> usize {
        self.weights.rows
    }

    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            input.len() == self.weights.cols,
            "linear model expects input of length {}, got {}",
            self.weights.cols,
            input.len()
        );
        Ok(self.weights.matvec(input))
    }

    fn input_gradient(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        ensure!(input.len() == self.weights.cols, "input length mismatch");
        ensure!(
            cotangent.len() == self.weights.rows,
            "cotangent length {} does not match output length {}",
            cotangent.len(),
            self.weights.rows
        );
        Ok(self.weights.matvec_t(cotangent))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_gradient_is_transpose() {
        let a = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        let m = LinearModel { weights: a };
        let g = m.input_gradient(&[0.0; 3], &[2.0, -1.0]).unwrap();
        assert_eq!(g, vec![3.0, 3.5, 2.0]);
        let zero = m.input_gradient(&[1.0, 1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(zero, vec![0.0; 3]);
        assert!(m.input_gradient(&[0.0; 3], &[1.0]).is_err());
    }

    #[test]
    fn logits_reject_non_finite() {
        assert!(LogitVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(LogitVector::new(vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn matmul_matches_matvec() {
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::new(2, 1, vec![5.0, 6.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data, a.matvec(&[5.0, 6.0]));
    }
}
