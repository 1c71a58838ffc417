//! Images and latent vectors.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Height, width and channel count of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// An `H x W x C` image stored row-major with interleaved channels.
///
/// Pixel values produced by the generator and the transforms stay in `[-1, 1]`.
/// The constructor only checks the buffer size; use [`ImageTensor::check_range`]
/// where the value range matters.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: ImageShape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(shape: ImageShape, data: Vec<f64>) -> Result<Self> {
        ensure!(
            shape.height > 0 && shape.width > 0 && shape.channels > 0,
            "image dimensions must be positive, got {shape}"
        );
        ensure!(
            data.len() == shape.len(),
            "image buffer has {} values, shape {shape} needs {}",
            data.len(),
            shape.len()
        );
        Ok(Self { shape, data })
    }

    pub fn filled(shape: ImageShape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
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

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.shape.width + col) * self.shape.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[self.index(row, col, channel)]
    }

    pub fn check_range(&self) -> Result<()> {
        let bad = self.data.iter().position(|v| !(-1.0..=1.0).contains(v));
        ensure!(
            bad.is_none(),
            "pixel {} = {} outside [-1, 1]",
            bad.unwrap_or(0),
            bad.map(|i| self.data[i]).unwrap_or(0.0)
        );
        Ok(())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Which latent space a vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSpace {
    /// The generator input space `Z`.
    Input,
    /// The intermediate space `W` produced by the mapping network.
    Intermediate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub values: Vec<f64>,
    pub space: LatentSpace,
}

impl LatentVector {
    pub fn input(values: Vec<f64>) -> Self {
        Self {
            values,
            space: LatentSpace::Input,
        }
    }

    pub fn intermediate(values: Vec<f64>) -> Self {
        Self {
            values,
            space: LatentSpace::Intermediate,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub type LatentBatch = Vec<LatentVector>;

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
