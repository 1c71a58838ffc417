//! Procedural blob generator standing in for a style-based GAN.
//!
//! Mapping: `m(z) = s * tanh(A z + a)`. Synthesis decodes `w` linearly into raw
//! blob parameters (`R w + r`), squashes them into valid ranges and renders
//! `tanh(bg + sum_k amp_k * g_k(p) * color_k)` where `g_k` is an isotropic
//! Gaussian. The final `tanh` keeps every pixel inside `[-1, 1]`.

use serde::{Deserialize, Serialize};

use super::{DifferentiableModel, ImagePrior, Matrix};
use crate::error::{ensure, Result};
use crate::rng::{stage_stream_id, RngStream};
use crate::tensor::{ImageShape, ImageTensor, LatentSpace, LatentVector};

/// World-coordinate interval covered by the rendered frame (same on both axes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameWindow {
    pub min: f64,
    pub max: f64,
}

impl FrameWindow {
    pub const UNIT: FrameWindow = FrameWindow { min: 0.0, max: 1.0 };

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    /// World coordinate of the center of pixel `index` along an axis of `len` pixels.
    pub fn pixel_center(&self, index: usize, len: usize) -> f64 {
        self.min + (index as f64 + 0.5) / len as f64 * self.span()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// `(x, y)` in world coordinates; `x` runs along columns.
    pub center: [f64; 2],
    pub sigma: f64,
    pub amplitude: f64,
    /// Pre-squash color, one entry per channel.
    pub color: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    pub blobs: Vec<Blob>,
    pub background: Vec<f64>,
}

/// Renders blob parameters onto a pixel grid covering `window`.
pub fn render_blobs(params: &BlobParams, shape: ImageShape, window: FrameWindow) -> Result<ImageTensor> {
    let c = shape.channels;
    ensure!(params.background.len() == c, "background needs {c} channels");
    ensure!(
        params.blobs.iter().all(|b| b.color.len() == c && b.sigma > 0.0),
        "every blob needs {c} color channels and positive sigma"
    );
    let mut data = vec![0.0; shape.len()];
    for i in 0..shape.height {
        let y = window.pixel_center(i, shape.height);
        for j in 0..shape.width {
            let x = window.pixel_center(j, shape.width);
            let base = (i * shape.width + j) * c;
            let px = &mut data[base..base + c];
            px.copy_from_slice(&params.background);
            for b in &params.blobs {
                let r2 = (x - b.center[0]).powi(2) + (y - b.center[1]).powi(2);
                let g = b.amplitude * (-r2 / (2.0 * b.sigma * b.sigma)).exp();
                for (p, col) in px.iter_mut().zip(&b.color) {
                    *p += g * col;
                }
            }
            for p in px.iter_mut() {
                *p = p.tanh();
            }
        }
    }
    ImageTensor::new(shape, data)
}

/// Hyperparameters used to draw a random [`BlobGenerator`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub z_dim: usize,
    pub w_dim: usize,
    pub blobs: usize,
    pub output_size: usize,
    pub channels: usize,
    pub window: FrameWindow,
    pub sigma_range: [f64; 2],
    pub mapping_gain: f64,
    pub mapping_scale: f64,
    pub readout_gain: f64,
    /// Raw amplitude bias per blob; blobs past the list end use the last entry.
    pub amplitude_bias: Vec<f64>,
    /// Background level around which `background_scale * tanh(raw)` varies.
    pub background_bias: f64,
    pub background_scale: f64,
    /// Blob colors are `color_scale * tanh(raw)`.
    pub color_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            z_dim: 32,
            w_dim: 32,
            blobs: 2,
            output_size: 21,
            channels: 3,
            window: FrameWindow {
                min: -2.0 / 17.0,
                max: 19.0 / 17.0,
            },
            sigma_range: [0.08, 0.4],
            mapping_gain: 1.0,
            mapping_scale: 1.5,
            readout_gain: 1.0,
            amplitude_bias: vec![1.0, -1.0],
            background_bias: -0.2,
            background_scale: 0.5,
            color_scale: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobGenerator {
    pub z_dim: usize,
    pub w_dim: usize,
    pub blobs: usize,
    pub output: ImageShape,
    pub window: FrameWindow,
    pub sigma_range: [f64; 2],
    pub mapping_weights: Matrix,
    pub mapping_bias: Vec<f64>,
    pub mapping_scale: f64,
    pub mean_latent: Vec<f64>,
    /// `(blobs * (4 + channels) + channels) x w_dim`; per blob the rows are
    /// `cx, cy, sigma, amplitude, color...`, then the background channels.
    pub readout: Matrix,
    pub readout_bias: Vec<f64>,
    pub background_bias: f64,
    pub background_scale: f64,
    pub color_scale: f64,
}

const MEAN_LATENT_SAMPLES: usize = 10_000;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl BlobGenerator {
    /// Draws mapping and readout weights from `seed` and estimates the mean latent.
    pub fn random(config: &GeneratorConfig, seed: u64) -> Result<Self> {
        ensure!(config.z_dim > 0 && config.w_dim > 0, "latent dimensions must be positive");
        ensure!(config.blobs > 0, "generator needs at least one blob");
        ensure!(
            config.sigma_range[0] > 0.0 && config.sigma_range[0] <= config.sigma_range[1],
            "invalid sigma range"
        );
        let mut rng = RngStream::new(seed, stage_stream_id("generator-weights"));
        let c = config.channels;
        let a_scale = config.mapping_gain / (config.z_dim as f64).sqrt();
        let mapping_weights = Matrix::new(
            config.w_dim,
            config.z_dim,
            (0..config.w_dim * config.z_dim)
                .map(|_| a_scale * rng.standard_normal())
                .collect(),
        )?;
        let mapping_bias = (0..config.w_dim).map(|_| 0.1 * rng.standard_normal()).collect();

        let per_blob = 4 + c;
        let n_params = config.blobs * per_blob + c;
        let r_scale = config.readout_gain / (config.w_dim as f64).sqrt();
        let readout = Matrix::new(
            n_params,
            config.w_dim,
            (0..n_params * config.w_dim)
                .map(|_| r_scale * rng.standard_normal())
                .collect(),
        )?;
        let mut readout_bias = vec![0.0; n_params];
        for k in 0..config.blobs {
            let amp = config
                .amplitude_bias
                .get(k)
                .or(config.amplitude_bias.last())
                .copied()
                .unwrap_or(0.0);
            readout_bias[k * per_blob + 3] = amp;
        }

        let mut gen = Self {
            z_dim: config.z_dim,
            w_dim: config.w_dim,
            blobs: config.blobs,
            output: ImageShape::new(config.output_size, config.output_size, c),
            window: config.window,
            sigma_range: config.sigma_range,
            mapping_weights,
            mapping_bias,
            mapping_scale: config.mapping_scale,
            mean_latent: vec![0.0; config.w_dim],
            readout,
            readout_bias,
            background_bias: config.background_bias,
            background_scale: config.background_scale,
            color_scale: config.color_scale,
        };
        gen.mean_latent = gen.estimate_mean_latent(seed);
        Ok(gen)
    }

    fn estimate_mean_latent(&self, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, stage_stream_id("generator-mean-latent"));
        let mut acc = vec![0.0; self.w_dim];
        let mut z = vec![0.0; self.z_dim];
        for _ in 0..MEAN_LATENT_SAMPLES {
            for v in z.iter_mut() {
                *v = rng.standard_normal();
            }
            for (a, m) in acc.iter_mut().zip(self.mapping(&z)) {
                *a += m;
            }
        }
        acc.iter().map(|a| a / MEAN_LATENT_SAMPLES as f64).collect()
    }

    /// Untruncated mapping network output `m(z)`.
    pub fn mapping(&self, z: &[f64]) -> Vec<f64> {
        self.mapping_weights
            .matvec(z)
            .into_iter()
            .zip(&self.mapping_bias)
            .map(|(v, b)| self.mapping_scale * (v + b).tanh())
            .collect()
    }

    fn per_blob(&self) -> usize {
        4 + self.output.channels
    }

    fn raw_params(&self, w: &[f64]) -> Vec<f64> {
        let mut raw = self.readout.matvec(w);
        for (r, b) in raw.iter_mut().zip(&self.readout_bias) {
            *r += b;
        }
        raw
    }

    fn decode(&self, raw: &[f64]) -> BlobParams {
        let c = self.output.channels;
        let pb = self.per_blob();
        let [s_lo, s_hi] = self.sigma_range;
        let blobs = (0..self.blobs)
            .map(|k| {
                let r = &raw[k * pb..(k + 1) * pb];
                Blob {
                    center: [
                        self.window.min + self.window.span() * sigmoid(r[0]),
                        self.window.min + self.window.span() * sigmoid(r[1]),
                    ],
                    sigma: s_lo + (s_hi - s_lo) * sigmoid(r[2]),
                    amplitude: sigmoid(r[3]),
                    color: r[4..4 + c].iter().map(|v| self.color_scale * v.tanh()).collect(),
                }
            })
            .collect();
        BlobParams {
            blobs,
            background: raw[self.blobs * pb..]
                .iter()
                .map(|v| self.background_bias + self.background_scale * v.tanh())
                .collect(),
        }
    }

    /// Decoded blob parameters for an intermediate latent.
    pub fn blob_params(&self, w: &LatentVector) -> Result<BlobParams> {
        self.check_w(w)?;
        Ok(self.decode(&self.raw_params(&w.values)))
    }

    fn check_w(&self, w: &LatentVector) -> Result<()> {
        ensure!(
            w.space == LatentSpace::Intermediate,
            "synthesis expects an intermediate latent, got {:?}",
            w.space
        );
        ensure!(
            w.dim() == self.w_dim,
            "intermediate latent has dimension {}, generator expects {}",
            w.dim(),
            self.w_dim
        );
        Ok(())
    }

    fn synthesis_vjp(&self, w: &[f64], cotangent: &[f64]) -> Vec<f64> {
        let raw = self.raw_params(w);
        let params = self.decode(&raw);
        let img = render_blobs(&params, self.output, self.window).expect("decoded params are valid");
        let shape = self.output;
        let c = shape.channels;
        let pb = self.per_blob();
        let mut d_raw = vec![0.0; raw.len()];
        let mut d_pre = vec![0.0; c];
        for i in 0..shape.height {
            let y = self.window.pixel_center(i, shape.height);
            for j in 0..shape.width {
                let x = self.window.pixel_center(j, shape.width);
                let base = (i * shape.width + j) * c;
                for ch in 0..c {
                    let out = img.data()[base + ch];
                    d_pre[ch] = cotangent[base + ch] * (1.0 - out * out);
                }
                for ch in 0..c {
                    d_raw[self.blobs * pb + ch] += d_pre[ch];
                }
                for (k, b) in params.blobs.iter().enumerate() {
                    let dx = x - b.center[0];
                    let dy = y - b.center[1];
                    let s2 = b.sigma * b.sigma;
                    let r2 = dx * dx + dy * dy;
                    let g = (-r2 / (2.0 * s2)).exp();
                    let mut s = 0.0;
                    for ch in 0..c {
                        s += d_pre[ch] * b.color[ch];
                        d_raw[k * pb + 4 + ch] += d_pre[ch] * b.amplitude * g;
                    }
                    // d(a*g)/d(.) pieces, accumulated in decoded units for now
                    let dg = s * b.amplitude * g;
                    d_raw[k * pb] += dg * dx / s2;
                    d_raw[k * pb + 1] += dg * dy / s2;
                    d_raw[k * pb + 2] += dg * r2 / (s2 * b.sigma);
                    d_raw[k * pb + 3] += s * g;
                }
            }
        }
        // Chain decoded -> raw through the squashing functions.
        let [s_lo, s_hi] = self.sigma_range;
        for k in 0..self.blobs {
            for (off, scale) in [
                (0, self.window.span()),
                (1, self.window.span()),
                (2, s_hi - s_lo),
                (3, 1.0),
            ] {
                let sg = sigmoid(raw[k * pb + off]);
                d_raw[k * pb + off] *= scale * sg * (1.0 - sg);
            }
            for ch in 0..c {
                let t = raw[k * pb + 4 + ch].tanh();
                d_raw[k * pb + 4 + ch] *= self.color_scale * (1.0 - t * t);
            }
        }
        for ch in 0..c {
            let t = raw[self.blobs * pb + ch].tanh();
            d_raw[self.blobs * pb + ch] *= self.background_scale * (1.0 - t * t);
        }
        self.readout.matvec_t(&d_raw)
    }
}

impl ImagePrior for BlobGenerator {
    fn z_dim(&self) -> usize {
        self.z_dim
    }

    fn w_dim(&self) -> usize {
        self.w_dim
    }

    fn output_shape(&self) -> ImageShape {
        self.output
    }

    /// `w = w_mean + psi * (m(z) - w_mean)`.
    ///
    /// The toy generator feeds one intermediate vector to a single style
    /// layer, so truncation applies to the whole vector whatever `cutoff` is.
    fn map_latent(&self, z: &LatentVector, truncation_psi: f64, _cutoff: usize) -> Result<LatentVector> {
        ensure!(
            z.space == LatentSpace::Input,
            "mapping expects an input-space latent, got {:?}",
            z.space
        );
        ensure!(
            z.dim() == self.z_dim,
            "input latent has dimension {}, generator expects {}",
            z.dim(),
            self.z_dim
        );
        ensure!(
            (0.0..=1.0).contains(&truncation_psi),
            "truncation psi {truncation_psi} outside [0, 1]"
        );
        let w = self
            .mapping(&z.values)
            .into_iter()
            .zip(&self.mean_latent)
            .map(|(m, mean)| mean + truncation_psi * (m - mean))
            .collect();
        Ok(LatentVector::intermediate(w))
    }

    fn synthesize(&self, w: &LatentVector) -> Result<ImageTensor> {
        let params = self.blob_params(w)?;
        render_blobs(&params, self.output, self.window)
    }

    fn synthesis_gradient(&self, w: &LatentVector, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check_w(w)?;
        ensure!(
            cotangent.len() == self.output.len(),
            "image cotangent has {} values, expected {}",
            cotangent.len(),
            self.output.len()
        );
        Ok(self.synthesis_vjp(&w.values, cotangent))
    }
}

impl DifferentiableModel for BlobGenerator {
    fn input_len(&self) -> usize {
        self.w_dim
    }

    fn output_len(&self) -> usize {
        self.output.len()
    }

    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .synthesize(&LatentVector::intermediate(input.to_vec()))?
            .into_data())
    }

    fn input_gradient(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        self.synthesis_gradient(&LatentVector::intermediate(input.to_vec()), cotangent)
    }
}
