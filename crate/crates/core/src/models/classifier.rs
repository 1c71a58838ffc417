use serde::{Deserialize, Serialize};

use super::{DifferentiableModel, ImageClassifier, Matrix};
use crate::error::{ensure, Result};
use crate::tensor::{squared_distance, ImageShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
}

/// `phi(x) = act(W vec(x) + b)` for images of a fixed shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub input_shape: ImageShape,
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl FeatureMap {
    pub fn new(
        input_shape: ImageShape,
        weights: Matrix,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        ensure!(
            weights.cols == input_shape.len(),
            "feature weights have {} columns, input {} has {} values",
            weights.cols,
            input_shape,
            input_shape.len()
        );
        ensure!(bias.len() == weights.rows, "feature bias length mismatch");
        Ok(Self {
            input_shape,
            weights,
            bias,
            activation,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.rows
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            x.len() == self.input_shape.len(),
            "feature map expects {} ({} values), got {} values",
            self.input_shape,
            self.input_shape.len(),
            x.len()
        );
        let mut f = self.weights.matvec(x);
        for (v, b) in f.iter_mut().zip(&self.bias) {
            *v += b;
            if self.activation == Activation::Tanh {
                *v = v.tanh();
            }
        }
        Ok(f)
    }

    /// Backpropagates a feature-space cotangent to the image.
    pub fn features_gradient(&self, x: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        ensure!(cotangent.len() == self.dim(), "feature cotangent length mismatch");
        let pre_cot = match self.activation {
            Activation::Identity => cotangent.to_vec(),
            Activation::Tanh => {
                let f = self.features(x)?;
                f.iter().zip(cotangent).map(|(y, c)| c * (1.0 - y * y)).collect()
            }
        };
        ensure!(x.len() == self.input_shape.len(), "feature map input length mismatch");
        Ok(self.weights.matvec_t(&pre_cot))
    }
}

/// Nearest-prototype classifier with logits `o_c = -sharpness * ||phi(x) - mu_c||^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeClassifier {
    pub feature_map: FeatureMap,
    /// One row per class.
    pub prototypes: Matrix,
    pub sharpness: f64,
}

impl PrototypeClassifier {
    pub fn new(feature_map: FeatureMap, prototypes: Matrix, sharpness: f64) -> Result<Self> {
        ensure!(prototypes.rows > 0, "classifier needs at least one class");
        ensure!(
            prototypes.cols == feature_map.dim(),
            "prototype dimension {} does not match feature dimension {}",
            prototypes.cols,
            feature_map.dim()
        );
        ensure!(sharpness > 0.0, "sharpness must be positive");
        Ok(Self {
            feature_map,
            prototypes,
            sharpness,
        })
    }

    pub fn logits_from_features(&self, f: &[f64]) -> Vec<f64> {
        (0..self.prototypes.rows)
            .map(|c| -self.sharpness * squared_distance(f, self.prototypes.row(c)))
            .collect()
    }
}

impl DifferentiableModel for PrototypeClassifier {
    fn input_len(&self) -> usize {
        self.feature_map.input_shape.len()
    }

    fn output_len(&self) -> usize {
        self.prototypes.rows
    }

    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let f = self.feature_map.features(input)?;
        Ok(self.logits_from_features(&f))
    }

    fn input_gradient(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            cotangent.len() == self.output_len(),
            "cotangent length {} does not match {} classes",
            cotangent.len(),
            self.output_len()
        );
        let f = self.feature_map.features(input)?;
        let mut df = vec![0.0; f.len()];
        for (c, &g) in cotangent.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for ((d, fi), mu) in df.iter_mut().zip(&f).zip(self.prototypes.row(c)) {
                *d += -2.0 * self.sharpness * g * (fi - mu);
            }
        }
        self.feature_map.features_gradient(input, &df)
    }
}

impl ImageClassifier for PrototypeClassifier {
    fn input_shape(&self) -> ImageShape {
        self.feature_map.input_shape
    }
}

/// Scalar realism critic `d(x) = bias - sharpness * ||phi(x) - center||^2`;
/// larger means more like the real data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealismDiscriminator {
    pub feature_map: FeatureMap,
    pub center: Vec<f64>,
    pub bias: f64,
    pub sharpness: f64,
}

impl DifferentiableModel for RealismDiscriminator {
    fn input_len(&self) -> usize {
        self.feature_map.input_shape.len()
    }

    fn output_len(&self) -> usize {
        1
    }

    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let f = self.feature_map.features(input)?;
        Ok(vec![self.bias - self.sharpness * squared_distance(&f, &self.center)])
    }

    fn input_gradient(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        ensure!(cotangent.len() == 1, "discriminator cotangent must have length 1");
        let f = self.feature_map.features(input)?;
        let df: Vec<f64> = f
            .iter()
            .zip(&self.center)
            .map(|(fi, m)| -2.0 * self.sharpness * cotangent[0] * (fi - m))
            .collect();
        self.feature_map.features_gradient(input, &df)
    }
}
