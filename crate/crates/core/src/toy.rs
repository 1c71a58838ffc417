//! Desk-scale benchmark: colored-blob classes, a blob generator prior whose
//! frame carries a margin the target never saw, and independently built
//! target, evaluation and "face" feature extractors.
//!
//! Training images are rendered at the classifiers' native 16x16 resolution
//! over the unit world window. The generator renders a 21x21 frame covering a
//! wider window, so a center crop to 17 pixels followed by a resize to 16
//! recovers the target's field of view.

use serde::{Deserialize, Serialize};

use crate::attack::{AttackModels, TOY_FRAME_CROP, TOY_INPUT};
use crate::error::{ensure, ConfigViolation, Error, Result};
use crate::metrics::{FeatureMatrix, FeatureSource};
use crate::models::{
    Activation, Blob, BlobGenerator, BlobParams, FeatureMap, FrameWindow, GeneratorConfig, ImageClassifier, LogitVector,
    DifferentiableModel, Matrix, PrototypeClassifier, RealismDiscriminator,
};
use crate::losses;
use crate::rng::{stage_stream_id, RngStream};
use crate::tensor::{squared_distance, ImageShape, ImageTensor};
use crate::transforms::{TransformPipeline, TransformSpec};

/// Single-blob appearance of one class before jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTemplate {
    pub center: [f64; 2],
    pub sigma: f64,
    pub amplitude: f64,
    pub color: [f64; 3],
}

impl ClassTemplate {
    fn new(center: [f64; 2], sigma: f64, color: [f64; 3]) -> Self {
        Self {
            center,
            sigma,
            amplitude: 1.0,
            color,
        }
    }
}

/// Ten classes in five look-alike pairs.
pub fn default_class_templates() -> Vec<ClassTemplate> {
    vec![
        ClassTemplate::new([0.45, 0.50], 0.22, [2.0, -1.0, -1.0]),
        ClassTemplate::new([0.55, 0.50], 0.20, [2.0, 0.2, -1.0]),
        ClassTemplate::new([0.50, 0.45], 0.22, [-1.0, 2.0, -1.0]),
        ClassTemplate::new([0.50, 0.55], 0.20, [-1.0, 2.0, 0.4]),
        ClassTemplate::new([0.45, 0.45], 0.22, [-1.0, -1.0, 2.0]),
        ClassTemplate::new([0.55, 0.55], 0.20, [0.4, -1.0, 2.0]),
        ClassTemplate::new([0.50, 0.50], 0.18, [2.0, 2.0, -1.0]),
        ClassTemplate::new([0.50, 0.50], 0.24, [2.0, 2.0, 1.0]),
        ClassTemplate::new([0.40, 0.55], 0.20, [2.0, -1.0, 2.0]),
        ClassTemplate::new([0.60, 0.45], 0.22, [-1.5, -1.5, -1.5]),
    ]
}

/// Linear (optionally tanh-squashed) feature extractor built from Gaussian
/// pooling windows and checkerboard detectors, mixed by a random matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    /// Pooling windows per axis; each window pools every channel separately.
    pub pool_grid: usize,
    /// Pooling window width in world units.
    pub pool_sigma: f64,
    /// Adds one pooled global mean per channel.
    pub global_pool: bool,
    /// Number of checkerboard detectors.
    pub detectors: usize,
    pub detector_gain: f64,
    /// Width of a detector's Gaussian envelope in world units.
    pub detector_sigma: f64,
    pub dim: usize,
    pub mixing_gain: f64,
    pub activation: Activation,
    /// Classifier sharpness relative to the median squared prototype distance.
    pub sharpness: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self::target()
    }
}

impl ExtractorConfig {
    pub fn target() -> Self {
        Self {
            pool_grid: 3,
            pool_sigma: 0.2,
            global_pool: false,
            detectors: 16,
            detector_gain: 4.0,
            detector_sigma: 0.2,
            dim: 16,
            mixing_gain: 1.0,
            activation: Activation::Identity,
            sharpness: 300.0,
        }
    }

    pub fn evaluation() -> Self {
        Self {
            pool_grid: 4,
            pool_sigma: 0.14,
            global_pool: false,
            detectors: 0,
            detector_gain: 0.0,
            detector_sigma: 0.2,
            dim: 16,
            mixing_gain: 1.5,
            activation: Activation::Tanh,
            sharpness: 8.0,
        }
    }

    pub fn face() -> Self {
        Self {
            pool_grid: 2,
            pool_sigma: 0.3,
            global_pool: true,
            detectors: 0,
            detector_gain: 0.0,
            detector_sigma: 0.2,
            dim: 8,
            mixing_gain: 1.5,
            activation: Activation::Tanh,
            sharpness: 4.0,
        }
    }

    fn violations(&self, prefix: &str, out: &mut Vec<ConfigViolation>) {
        let mut bad = |key: &str, message: &str| {
            out.push(ConfigViolation {
                key: format!("{prefix}{key}"),
                message: message.into(),
            })
        };
        if self.pool_grid == 0 && !self.global_pool && self.detectors == 0 {
            bad("pool_grid", "extractor has no pooling windows or detectors");
        }
        if self.dim == 0 {
            bad("dim", "must be positive");
        }
        if !(self.pool_sigma > 0.0) {
            bad("pool_sigma", "must be positive");
        }
        if !(self.detector_sigma > 0.0) {
            bad("detector_sigma", "must be positive");
        }
        if !(self.sharpness > 0.0) {
            bad("sharpness", "must be positive");
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    /// Seed for every random model parameter and the training set.
    pub model_seed: u64,
    pub generator: GeneratorConfig,
    pub classes: Vec<ClassTemplate>,
    pub background: [f64; 3],
    pub train_per_class: usize,
    pub center_jitter: f64,
    pub sigma_jitter: f64,
    pub color_jitter: f64,
    pub amplitude_range: [f64; 2],
    pub target: ExtractorConfig,
    pub evaluation: ExtractorConfig,
    pub face: ExtractorConfig,
    /// Pooling extractor the realism discriminator looks through.
    pub discriminator: ExtractorConfig,
    /// Applied to generated frames before the evaluation and face extractors.
    pub eval_preprocess: TransformPipeline,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            model_seed: 7,
            generator: GeneratorConfig {
                readout_gain: 5.0,
                background_scale: 0.2,
                ..GeneratorConfig::default()
            },
            classes: default_class_templates(),
            background: [-0.2; 3],
            train_per_class: 30,
            center_jitter: 0.06,
            sigma_jitter: 0.15,
            color_jitter: 0.15,
            amplitude_range: [0.85, 1.0],
            target: ExtractorConfig::target(),
            evaluation: ExtractorConfig::evaluation(),
            face: ExtractorConfig::face(),
            discriminator: ExtractorConfig {
                pool_grid: 3,
                pool_sigma: 0.2,
                global_pool: true,
                detectors: 0,
                detector_gain: 0.0,
                detector_sigma: 0.2,
                dim: 12,
                mixing_gain: 1.0,
                activation: Activation::Identity,
                sharpness: 1.0,
            },
            eval_preprocess: native_preprocess(),
        }
    }
}

/// `[center_crop 17, resize 16]`: maps a generator frame onto the classifiers'
/// field of view.
pub fn native_preprocess() -> TransformPipeline {
    TransformPipeline::new(vec![
        TransformSpec::CenterCrop {
            size: [TOY_FRAME_CROP; 2],
        },
        TransformSpec::Resize { size: [TOY_INPUT; 2] },
    ])
}

pub fn native_shape() -> ImageShape {
    ImageShape::new(TOY_INPUT, TOY_INPUT, 3)
}

impl ToyConfig {
    /// Every problem with this configuration; keys start with `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        let mut bad = |key: &str, message: String| {
            out.push(ConfigViolation {
                key: format!("{prefix}{key}"),
                message,
            })
        };
        if self.classes.len() < 2 {
            bad("classes", "need at least two classes".into());
        }
        if self.train_per_class < 2 {
            bad("train_per_class", "need at least two samples per class".into());
        }
        if self.generator.channels != 3 {
            bad("generator.channels", "the toy benchmark renders RGB".into());
        }
        if !(self.amplitude_range[0] <= self.amplitude_range[1]) {
            bad("amplitude_range", "lower bound exceeds upper bound".into());
        }
        if let Err(e) = self.eval_preprocess.validate() {
            bad("eval_preprocess", e.to_string());
        }
        for (name, e) in [
            ("target", &self.target),
            ("evaluation", &self.evaluation),
            ("face", &self.face),
            ("discriminator", &self.discriminator),
        ] {
            e.violations(&format!("{prefix}{name}."), &mut out);
        }
        out
    }
}

fn gaussian_window(shape: ImageShape, center: [f64; 2], sigma: f64) -> Vec<f64> {
    let mut w = Vec::with_capacity(shape.height * shape.width);
    for i in 0..shape.height {
        let y = FrameWindow::UNIT.pixel_center(i, shape.height);
        for j in 0..shape.width {
            let x = FrameWindow::UNIT.pixel_center(j, shape.width);
            let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
            w.push((-r2 / (2.0 * sigma * sigma)).exp());
        }
    }
    w
}

fn grid_centers(n: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            out.push([(b as f64 + 0.5) / n as f64, (a as f64 + 0.5) / n as f64]);
        }
    }
    out
}

/// Rows of the unmixed basis: pooling windows first, then detectors.
fn basis_rows(cfg: &ExtractorConfig, shape: ImageShape, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let c = shape.channels;
    let plane = shape.height * shape.width;
    let mut rows = Vec::new();
    let spread = |win: &[f64], ch: usize| {
        let mut row = vec![0.0; plane * c];
        for (p, &v) in win.iter().enumerate() {
            row[p * c + ch] = v;
        }
        row
    };
    for center in grid_centers(cfg.pool_grid) {
        let mut win = gaussian_window(shape, center, cfg.pool_sigma);
        let total: f64 = win.iter().sum();
        win.iter_mut().for_each(|v| *v /= total);
        for ch in 0..c {
            rows.push(spread(&win, ch));
        }
    }
    if cfg.global_pool {
        let win = vec![1.0 / plane as f64; plane];
        for ch in 0..c {
            rows.push(spread(&win, ch));
        }
    }
    for k in 0..cfg.detectors {
        let center = [rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75)];
        let env = gaussian_window(shape, center, cfg.detector_sigma);
        let mut win: Vec<f64> = env
            .iter()
            .enumerate()
            .map(|(p, e)| {
                let (i, j) = (p / shape.width, p % shape.width);
                if (i + j) % 2 == 0 {
                    *e
                } else {
                    -*e
                }
            })
            .collect();
        let mean = win.iter().sum::<f64>() / plane as f64;
        win.iter_mut().for_each(|v| *v -= mean);
        let norm: f64 = win.iter().map(|v| v.abs()).sum();
        win.iter_mut().for_each(|v| *v *= cfg.detector_gain / norm);
        rows.push(spread(&win, k % c));
    }
    rows
}

/// Draws an extractor `phi(x) = act(M B x)` for images of `shape`.
pub fn build_feature_map(cfg: &ExtractorConfig, shape: ImageShape, seed: u64, tag: &str) -> Result<FeatureMap> {
    let mut rng = RngStream::new(seed, stage_stream_id(tag));
    let basis = basis_rows(cfg, shape, &mut rng);
    ensure!(!basis.is_empty(), "extractor `{tag}` has an empty basis");
    let n = basis.len();
    let scale = cfg.mixing_gain / (n as f64).sqrt();
    let mut weights = Matrix::zeros(cfg.dim, shape.len());
    for r in 0..cfg.dim {
        let mix: Vec<f64> = (0..n).map(|_| scale * rng.standard_normal()).collect();
        let row = weights.row_mut(r);
        for (m, b) in mix.iter().zip(&basis) {
            for (w, v) in row.iter_mut().zip(b) {
                *w += m * v;
            }
        }
    }
    FeatureMap::new(shape, weights, vec![0.0; cfg.dim], cfg.activation)
}

/// Labelled training images at native resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
}

impl TrainingSet {
    pub fn features(&self, map: &FeatureMap) -> Result<FeatureMatrix> {
        let rows = self
            .images
            .iter()
            .map(|x| map.features(x.data()))
            .collect::<Result<Vec<_>>>()?;
        FeatureMatrix::new(rows, FeatureSource::Real, Some(self.labels.clone()))
    }
}

/// Renders one class template with per-sample jitter.
pub fn render_class_sample(cfg: &ToyConfig, class: usize, rng: &mut RngStream) -> Result<ImageTensor> {
    let t = cfg
        .classes
        .get(class)
        .ok_or_else(|| Error::contract(format!("class {class} has no template")))?;
    let j = cfg.center_jitter;
    let blob = Blob {
        center: [
            t.center[0] + rng.uniform(-j, j),
            t.center[1] + rng.uniform(-j, j),
        ],
        sigma: t.sigma * rng.uniform(1.0 - cfg.sigma_jitter, 1.0 + cfg.sigma_jitter),
        amplitude: t.amplitude * rng.uniform(cfg.amplitude_range[0], cfg.amplitude_range[1]),
        color: t
            .color
            .iter()
            .map(|c| c + cfg.color_jitter * rng.standard_normal())
            .collect(),
    };
    render_blobs_native(&BlobParams {
        blobs: vec![blob],
        background: cfg.background.to_vec(),
    })
}

fn render_blobs_native(params: &BlobParams) -> Result<ImageTensor> {
    crate::models::render_blobs(params, native_shape(), FrameWindow::UNIT)
}

pub fn training_set(cfg: &ToyConfig) -> Result<TrainingSet> {
    let mut rng = RngStream::new(cfg.model_seed, stage_stream_id("toy-training-set"));
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for class in 0..cfg.classes.len() {
        for _ in 0..cfg.train_per_class {
            images.push(render_class_sample(cfg, class, &mut rng)?);
            labels.push(class);
        }
    }
    Ok(TrainingSet { images, labels })
}

fn class_means(features: &FeatureMatrix, classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(classes, features.dim());
    for c in 0..classes {
        let rows = features.class_rows(c);
        ensure!(!rows.is_empty(), "class {c} has no training samples");
        let row = m.row_mut(c);
        for r in &rows {
            for (a, v) in row.iter_mut().zip(*r) {
                *a += v / rows.len() as f64;
            }
        }
    }
    Ok(m)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest-class-mean classifier on `map` with sharpness scaled by the
/// median squared distance between prototypes.
pub fn fit_prototype_classifier(
    map: FeatureMap,
    training: &TrainingSet,
    classes: usize,
    relative_sharpness: f64,
) -> Result<PrototypeClassifier> {
    let feats = training.features(&map)?;
    let protos = class_means(&feats, classes)?;
    let mut dists = Vec::new();
    for a in 0..classes {
        for b in a + 1..classes {
            dists.push(squared_distance(protos.row(a), protos.row(b)));
        }
    }
    let scale = median(dists);
    ensure!(scale > 0.0, "class prototypes coincide");
    PrototypeClassifier::new(map, protos, relative_sharpness / scale)
}

/// Every model of the benchmark, serializable as one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModels {
    pub generator: BlobGenerator,
    pub target: PrototypeClassifier,
    pub evaluation: PrototypeClassifier,
    pub face: FeatureMap,
    pub discriminator: RealismDiscriminator,
}

#[derive(Debug, Clone)]
pub struct ToyBenchmark {
    pub config: ToyConfig,
    pub models: ReferenceModels,
    pub training: TrainingSet,
}

impl ToyBenchmark {
    pub fn build(config: &ToyConfig) -> Result<Self> {
        let violations = config.violations("models.");
        if !violations.is_empty() {
            return Err(Error::Config(violations));
        }
        let seed = config.model_seed;
        let shape = native_shape();
        let classes = config.classes.len();
        let training = training_set(config)?;
        let generator = BlobGenerator::random(&config.generator, seed)?;
        let target = fit_prototype_classifier(
            build_feature_map(&config.target, shape, seed, "toy-target")?,
            &training,
            classes,
            config.target.sharpness,
        )?;
        let evaluation = fit_prototype_classifier(
            build_feature_map(&config.evaluation, shape, seed, "toy-evaluation")?,
            &training,
            classes,
            config.evaluation.sharpness,
        )?;
        let face = build_feature_map(&config.face, shape, seed, "toy-face")?;
        let disc_map = build_feature_map(&config.discriminator, shape, seed, "toy-discriminator")?;
        let disc_feats = training.features(&disc_map)?;
        let n = disc_feats.len() as f64;
        let mut center = vec![0.0; disc_feats.dim()];
        for r in disc_feats.rows() {
            for (c, v) in center.iter_mut().zip(r) {
                *c += v / n;
            }
        }
        let spread = disc_feats
            .rows()
            .map(|r| squared_distance(r, &center))
            .sum::<f64>()
            / n;
        ensure!(spread > 0.0, "discriminator training features are constant");
        let discriminator = RealismDiscriminator {
            feature_map: disc_map,
            center,
            bias: 1.0,
            sharpness: config.discriminator.sharpness / spread,
        };
        Ok(Self {
            config: config.clone(),
            models: ReferenceModels {
                generator,
                target,
                evaluation,
                face,
                discriminator,
            },
            training,
        })
    }

    pub fn attack_models(&self) -> AttackModels<'_> {
        AttackModels {
            prior: &self.models.generator,
            target: &self.models.target,
            discriminator: Some(&self.models.discriminator),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.models.target.num_classes()
    }

    /// Renders the undisturbed template of `class` at native resolution.
    pub fn class_template_image(&self, class: usize) -> Result<ImageTensor> {
        let t = self
            .config
            .classes
            .get(class)
            .ok_or_else(|| Error::contract(format!("class {class} has no template")))?;
        render_blobs_native(&BlobParams {
            blobs: vec![Blob {
                center: t.center,
                sigma: t.sigma,
                amplitude: t.amplitude,
                color: t.color.to_vec(),
            }],
            background: self.config.background.to_vec(),
        })
    }
}

const FOOLING_ITERATIONS: usize = 2000;
const FOOLING_BLOCK: usize = 2;
const FOOLING_STEP: f64 = 0.02;
/// Plain score a planted fooling image must reach.
pub const FOOLING_SCORE: f64 = 0.995;

/// Perturbs `base` within the valid pixel range until the target gives
/// `class` a plain score of at least [`FOOLING_SCORE`].
///
/// The perturbation is a pixelwise checkerboard sign times an envelope that
/// is constant on small blocks, so it has no local mean for a smoothing
/// extractor (or a resampling crop) to pick up. The result looks like `base`
/// to any smooth extractor.
pub fn plant_fooling_image(target: &PrototypeClassifier, base: &ImageTensor, class: usize) -> Result<ImageTensor> {
    let shape = base.shape();
    ensure!(shape == target.input_shape(), "base image shape {shape} does not match the target");
    ensure!(class < target.num_classes(), "class {class} out of range");
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let bw = w.div_ceil(FOOLING_BLOCK);
    let blocks = h.div_ceil(FOOLING_BLOCK) * bw;
    let block_of = |p: usize| ((p / w) / FOOLING_BLOCK) * bw + (p % w) / FOOLING_BLOCK;
    let sign = |p: usize| if (p / w + p % w) % 2 == 0 { 1.0 } else { -1.0 };

    let mut x = base.data().to_vec();
    for _ in 0..FOOLING_ITERATIONS {
        let scores = losses::softmax(&LogitVector::new(target.forward(&x)?)?)?;
        if scores.values()[class] >= FOOLING_SCORE {
            return ImageTensor::new(shape, x);
        }
        let cot: Vec<f64> = scores
            .values()
            .iter()
            .enumerate()
            .map(|(k, p)| f64::from(u8::from(k == class)) - p)
            .collect();
        let g = target.input_gradient(&x, &cot)?;
        // Project the ascent direction onto the modulated block envelopes.
        let mut env = vec![0.0; blocks * c];
        for (k, gk) in g.iter().enumerate() {
            let p = k / c;
            env[block_of(p) * c + k % c] += sign(p) * gk;
        }
        let scale = env.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        ensure!(scale > 0.0, "the target ignores checkerboard patterns");
        for (k, v) in x.iter_mut().enumerate() {
            let p = k / c;
            *v = (*v + FOOLING_STEP * sign(p) * env[block_of(p) * c + k % c] / scale).clamp(-1.0, 1.0);
        }
    }
    Err(Error::contract(format!(
        "no checkerboard perturbation of the base reaches score {FOOLING_SCORE} for class {class}"
    )))
}
