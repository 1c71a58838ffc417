//! Differentiable image transformations.
//!
//! Applying a pipeline returns the transformed image together with a
//! [`TransformTrace`] that records the concrete crop boxes and sizes used, so
//! the vector-Jacobian product can be replayed in reverse order.
//!
//! Bilinear resizing maps destination index `d` to source coordinate
//! `s = (d + 0.5) * in / out - 0.5`, clamped to `[0, in - 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::RngStream;
use crate::tensor::{ImageShape, ImageTensor};

/// Attempts at sampling a patch before falling back to the centered patch.
pub const RANDOM_CROP_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformSpec {
    CenterCrop {
        size: [usize; 2],
    },
    Resize {
        size: [usize; 2],
    },
    Hflip {
        #[serde(default = "one")]
        p: f64,
    },
    /// `area` is a fraction of the input area, `ratio` is width / height.
    RandomResizedCrop {
        area: [f64; 2],
        ratio: [f64; 2],
        size: [usize; 2],
    },
}

fn one() -> f64 {
    1.0
}

impl TransformSpec {
    pub fn is_random(&self) -> bool {
        match self {
            TransformSpec::CenterCrop { .. } | TransformSpec::Resize { .. } => false,
            TransformSpec::Hflip { p } => *p > 0.0 && *p < 1.0,
            TransformSpec::RandomResizedCrop { .. } => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TransformSpec::CenterCrop { size } | TransformSpec::Resize { size } => {
                ensure!(size[0] > 0 && size[1] > 0, "transform size must be positive");
            }
            TransformSpec::Hflip { p } => {
                ensure!((0.0..=1.0).contains(p), "flip probability {p} outside [0, 1]");
            }
            TransformSpec::RandomResizedCrop { area, ratio, size } => {
                ensure!(
                    area[0] > 0.0 && area[0] <= area[1] && area[1] <= 1.0,
                    "area range {area:?} must satisfy 0 < min <= max <= 1"
                );
                ensure!(
                    ratio[0] > 0.0 && ratio[0] <= ratio[1],
                    "ratio range {ratio:?} must satisfy 0 < min <= max"
                );
                ensure!(size[0] > 0 && size[1] > 0, "transform size must be positive");
            }
        }
        Ok(())
    }
}

/// One concrete transformation as it was applied.
#[derive(Debug, Clone, PartialEq)]
pub enum AppliedTransform {
    Crop {
        input: ImageShape,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    Resize {
        input: ImageShape,
        output: ImageShape,
    },
    Flip {
        shape: ImageShape,
    },
    Identity,
}

impl AppliedTransform {
    pub fn backward(&self, cotangent: &[f64]) -> Vec<f64> {
        match *self {
            AppliedTransform::Crop {
                input,
                top,
                left,
                height,
                width,
            } => crop_backward(input, top, left, height, width, cotangent),
            AppliedTransform::Resize { input, output } => resize_backward(input, output, cotangent),
            AppliedTransform::Flip { shape } => flip_buffer(shape, cotangent),
            AppliedTransform::Identity => cotangent.to_vec(),
        }
    }
}

/// Record of applied transforms, in application order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransformTrace {
    pub ops: Vec<AppliedTransform>,
}

impl TransformTrace {
    /// Pulls an output cotangent back to the pipeline input.
    pub fn backward(&self, cotangent: &[f64]) -> Vec<f64> {
        self.ops
            .iter()
            .rev()
            .fold(cotangent.to_vec(), |g, op| op.backward(&g))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransformPipeline {
    pub specs: Vec<TransformSpec>,
}

impl TransformPipeline {
    pub fn new(specs: Vec<TransformSpec>) -> Self {
        Self { specs }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_deterministic(&self) -> bool {
        self.specs.iter().all(|s| !s.is_random())
    }

    /// The pipeline with every random step removed.
    pub fn without_random(&self) -> Self {
        Self::new(self.specs.iter().filter(|s| !s.is_random()).cloned().collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.specs.iter().try_for_each(TransformSpec::validate)
    }

    /// Output shape for a given input shape, checking every intermediate step.
    pub fn output_shape(&self, input: ImageShape) -> Result<ImageShape> {
        let mut shape = input;
        for spec in &self.specs {
            shape = match spec {
                TransformSpec::CenterCrop { size } => {
                    ensure!(
                        size[0] <= shape.height && size[1] <= shape.width,
                        "center crop {}x{} larger than image {shape}",
                        size[0],
                        size[1]
                    );
                    ImageShape::new(size[0], size[1], shape.channels)
                }
                TransformSpec::Resize { size } | TransformSpec::RandomResizedCrop { size, .. } => {
                    ImageShape::new(size[0], size[1], shape.channels)
                }
                TransformSpec::Hflip { .. } => shape,
            };
        }
        Ok(shape)
    }

    /// Applies the transforms left to right.
    pub fn apply(&self, x: &ImageTensor, rng: &mut RngStream) -> Result<(ImageTensor, TransformTrace)> {
        let mut trace = TransformTrace::default();
        let mut cur = x.clone();
        for spec in &self.specs {
            cur = apply_one(spec, &cur, rng, &mut trace.ops)?;
        }
        Ok((cur, trace))
    }
}

fn apply_one(
    spec: &TransformSpec,
    x: &ImageTensor,
    rng: &mut RngStream,
    ops: &mut Vec<AppliedTransform>,
) -> Result<ImageTensor> {
    match *spec {
        TransformSpec::CenterCrop { size } => {
            let (top, left) = center_crop_offsets(x.shape(), size)?;
            ops.push(AppliedTransform::Crop {
                input: x.shape(),
                top,
                left,
                height: size[0],
                width: size[1],
            });
            crop(x, top, left, size[0], size[1])
        }
        TransformSpec::Resize { size } => {
            let out = resize_bilinear(x, size)?;
            ops.push(AppliedTransform::Resize {
                input: x.shape(),
                output: out.shape(),
            });
            Ok(out)
        }
        TransformSpec::Hflip { p } => {
            if p >= 1.0 || (p > 0.0 && rng.bernoulli(p)) {
                ops.push(AppliedTransform::Flip { shape: x.shape() });
                Ok(hflip(x))
            } else {
                ops.push(AppliedTransform::Identity);
                Ok(x.clone())
            }
        }
        TransformSpec::RandomResizedCrop { area, ratio, size } => {
            let b = sample_crop_box(x.shape(), area, ratio, rng)?;
            let patch = crop(x, b.top, b.left, b.height, b.width)?;
            let out = resize_bilinear(&patch, size)?;
            ops.push(AppliedTransform::Crop {
                input: x.shape(),
                top: b.top,
                left: b.left,
                height: b.height,
                width: b.width,
            });
            ops.push(AppliedTransform::Resize {
                input: patch.shape(),
                output: out.shape(),
            });
            Ok(out)
        }
    }
}

/// `(top, left)` of a centered `size` window: `floor((H - h) / 2)`, `floor((W - w) / 2)`.
pub fn center_crop_offsets(shape: ImageShape, size: [usize; 2]) -> Result<(usize, usize)> {
    ensure!(
        size[0] > 0 && size[1] > 0 && size[0] <= shape.height && size[1] <= shape.width,
        "crop {}x{} does not fit image {shape}",
        size[0],
        size[1]
    );
    Ok(((shape.height - size[0]) / 2, (shape.width - size[1]) / 2))
}

pub fn crop(x: &ImageTensor, top: usize, left: usize, height: usize, width: usize) -> Result<ImageTensor> {
    ensure!(
        height > 0 && width > 0 && top + height <= x.height() && left + width <= x.width(),
        "crop window {height}x{width} at ({top}, {left}) exceeds image {}",
        x.shape()
    );
    let c = x.channels();
    let mut data = Vec::with_capacity(height * width * c);
    for i in top..top + height {
        let start = x.index(i, left, 0);
        data.extend_from_slice(&x.data()[start..start + width * c]);
    }
    ImageTensor::new(ImageShape::new(height, width, c), data)
}

fn crop_backward(
    input: ImageShape,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
    cotangent: &[f64],
) -> Vec<f64> {
    let c = input.channels;
    let mut grad = vec![0.0; input.len()];
    for r in 0..height {
        let dst = ((top + r) * input.width + left) * c;
        let src = r * width * c;
        grad[dst..dst + width * c].copy_from_slice(&cotangent[src..src + width * c]);
    }
    grad
}

pub fn center_crop(x: &ImageTensor, size: [usize; 2]) -> Result<ImageTensor> {
    let (top, left) = center_crop_offsets(x.shape(), size)?;
    crop(x, top, left, size[0], size[1])
}

/// Source taps `(lo, hi, frac)` for each destination index along one axis.
fn axis_taps(len_in: usize, len_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (len_in - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(len_in - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub fn resize_bilinear(x: &ImageTensor, size: [usize; 2]) -> Result<ImageTensor> {
    ensure!(size[0] > 0 && size[1] > 0, "resize target must be positive");
    let shape = x.shape();
    let out_shape = ImageShape::new(size[0], size[1], shape.channels);
    if out_shape == shape {
        return Ok(x.clone());
    }
    let rows = axis_taps(shape.height, size[0]);
    let cols = axis_taps(shape.width, size[1]);
    let c = shape.channels;
    let src = x.data();
    let mut data = vec![0.0; out_shape.len()];
    for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
        for (q, &(c0, c1, fc)) in cols.iter().enumerate() {
            let w00 = (1.0 - fr) * (1.0 - fc);
            let w01 = (1.0 - fr) * fc;
            let w10 = fr * (1.0 - fc);
            let w11 = fr * fc;
            let i00 = (r0 * shape.width + c0) * c;
            let i01 = (r0 * shape.width + c1) * c;
            let i10 = (r1 * shape.width + c0) * c;
            let i11 = (r1 * shape.width + c1) * c;
            let o = (r * size[1] + q) * c;
            for ch in 0..c {
                data[o + ch] = w00 * src[i00 + ch]
                    + w01 * src[i01 + ch]
                    + w10 * src[i10 + ch]
                    + w11 * src[i11 + ch];
            }
        }
    }
    ImageTensor::new(out_shape, data)
}

fn resize_backward(input: ImageShape, output: ImageShape, cotangent: &[f64]) -> Vec<f64> {
    if input == output {
        return cotangent.to_vec();
    }
    let rows = axis_taps(input.height, output.height);
    let cols = axis_taps(input.width, output.width);
    let c = input.channels;
    let mut grad = vec![0.0; input.len()];
    for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
        for (q, &(c0, c1, fc)) in cols.iter().enumerate() {
            let o = (r * output.width + q) * c;
            let taps = [
                ((r0 * input.width + c0) * c, (1.0 - fr) * (1.0 - fc)),
                ((r0 * input.width + c1) * c, (1.0 - fr) * fc),
                ((r1 * input.width + c0) * c, fr * (1.0 - fc)),
                ((r1 * input.width + c1) * c, fr * fc),
            ];
            for ch in 0..c {
                let g = cotangent[o + ch];
                for (idx, w) in taps {
                    grad[idx + ch] += w * g;
                }
            }
        }
    }
    grad
}

fn flip_buffer(shape: ImageShape, data: &[f64]) -> Vec<f64> {
    let c = shape.channels;
    let mut out = vec![0.0; data.len()];
    for i in 0..shape.height {
        for j in 0..shape.width {
            let src = (i * shape.width + j) * c;
            let dst = (i * shape.width + (shape.width - 1 - j)) * c;
            out[dst..dst + c].copy_from_slice(&data[src..src + c]);
        }
    }
    out
}

/// Reverses column order.
pub fn hflip(x: &ImageTensor) -> ImageTensor {
    ImageTensor::new(x.shape(), flip_buffer(x.shape(), x.data())).expect("same shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Samples a patch: area uniform in `area * H * W`, aspect ratio (width / height)
/// log-uniform in `ratio`, up to ten attempts, then the largest centered patch
/// whose ratio lies in range. The offset is uniform over valid positions.
pub fn sample_crop_box(
    shape: ImageShape,
    area: [f64; 2],
    ratio: [f64; 2],
    rng: &mut RngStream,
) -> Result<CropBox> {
    ensure!(
        area[0] > 0.0 && area[0] <= area[1] && ratio[0] > 0.0 && ratio[0] <= ratio[1],
        "invalid crop ranges area={area:?} ratio={ratio:?}"
    );
    let (h_in, w_in) = (shape.height, shape.width);
    let total = (h_in * w_in) as f64;
    let (log_lo, log_hi) = (ratio[0].ln(), ratio[1].ln());
    for _ in 0..RANDOM_CROP_ATTEMPTS {
        let target = total * rng.uniform(area[0], area[1]);
        let aspect = rng.uniform(log_lo, log_hi).exp();
        let w = (target * aspect).sqrt().round() as usize;
        let h = (target / aspect).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= w_in && h <= h_in {
            let top = rng.index_inclusive(h_in - h);
            let left = rng.index_inclusive(w_in - w);
            return Ok(CropBox {
                top,
                left,
                height: h,
                width: w,
            });
        }
    }
    let in_ratio = w_in as f64 / h_in as f64;
    let (h, w) = if in_ratio < ratio[0] {
        (((w_in as f64) / ratio[0]).round() as usize, w_in)
    } else if in_ratio > ratio[1] {
        (h_in, ((h_in as f64) * ratio[1]).round() as usize)
    } else {
        (h_in, w_in)
    };
    ensure!(
        h > 0 && w > 0 && h <= h_in && w <= w_in,
        "no feasible crop for image {shape} with ratio range {ratio:?}"
    );
    Ok(CropBox {
        top: (h_in - h) / 2,
        left: (w_in - w) / 2,
        height: h,
        width: w,
    })
}

pub fn random_resized_crop(
    x: &ImageTensor,
    area: [f64; 2],
    ratio: [f64; 2],
    out_size: [usize; 2],
    rng: &mut RngStream,
) -> Result<ImageTensor> {
    ensure!(out_size[0] > 0 && out_size[1] > 0, "output size must be positive");
    let b = sample_crop_box(x.shape(), area, ratio, rng)?;
    resize_bilinear(&crop(x, b.top, b.left, b.height, b.width)?, out_size)
}
