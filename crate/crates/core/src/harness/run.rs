use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::ImageEncoder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::attack::{run_attack, AttackResult};
use crate::error::{ensure, Error, Result};
use crate::metrics::{evaluate, EvaluationInputs, FeatureMatrix, FeatureSource, MetricsConfig, MetricsReport};
use crate::rng::{stage_stream_id, RngStream};
use crate::tensor::{ImageShape, ImageTensor};
use crate::toy::ToyBenchmark;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURE_FILES: [&str; 5] = [
    "features/eval_logits.feat",
    "features/generated_eval.feat",
    "features/training_eval.feat",
    "features/generated_face.feat",
    "features/training_face.feat",
];

/// Maps `[-1, 1]` to `0..=255` by `round((x + 1) * 127.5)`.
pub fn to_u8(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn from_u8(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

fn png_bytes(width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let color = match channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::contract(format!("cannot encode a {c}-channel image as PNG"))),
    };
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(pixels, width as u32, height as u32, color)
        .map_err(|e| Error::contract(format!("png encoding failed: {e}")))?;
    Ok(buf)
}

/// 8-bit PNG encoding of an image tensor.
pub fn encode_png(x: &ImageTensor) -> Result<Vec<u8>> {
    let pixels: Vec<u8> = x.data().iter().map(|&v| to_u8(v)).collect();
    png_bytes(x.width(), x.height(), x.channels(), &pixels)
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageTensor> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| Error::contract(format!("png decoding failed: {e}")))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    ImageTensor::new(
        ImageShape::new(h as usize, w as usize, 3),
        img.into_raw().into_iter().map(from_u8).collect(),
    )
}

/// Tiles equally shaped images row by row with a one pixel white gap.
pub fn image_grid(images: &[&ImageTensor], columns: usize) -> Result<Vec<u8>> {
    ensure!(!images.is_empty(), "grid needs at least one image");
    ensure!(columns > 0, "grid needs at least one column");
    let shape = images[0].shape();
    ensure!(images.iter().all(|x| x.shape() == shape), "grid images differ in shape");
    let cols = columns.min(images.len());
    let rows = images.len().div_ceil(cols);
    let (cw, ch) = (shape.width + 1, shape.height + 1);
    let (gw, gh) = (cols * cw - 1, rows * ch - 1);
    let c = shape.channels;
    let mut pixels = vec![255u8; gw * gh * c];
    for (n, x) in images.iter().enumerate() {
        let (oy, ox) = ((n / cols) * ch, (n % cols) * cw);
        for i in 0..shape.height {
            for j in 0..shape.width {
                for k in 0..c {
                    pixels[((oy + i) * gw + ox + j) * c + k] = to_u8(x.get(i, j, k));
                }
            }
        }
    }
    png_bytes(gw, gh, c, &pixels)
}

/// Features and evaluation logits of the selected images, in class order and
/// robust-score order within a class, plus the training features.
pub fn evaluation_inputs(bench: &ToyBenchmark, result: &AttackResult) -> Result<EvaluationInputs> {
    let eval = &bench.models.evaluation;
    if *eval == bench.models.target {
        log::warn!("the evaluation model is identical to the target model; accuracies are not independent");
    }
    let mut logits = Vec::new();
    let mut gen_eval = Vec::new();
    let mut gen_face = Vec::new();
    let mut labels = Vec::new();
    let mut rng = RngStream::new(result.seed, stage_stream_id("eval-preprocess"));
    for cr in &result.classes {
        for cand in cr.selected() {
            let (x, _) = bench.config.eval_preprocess.apply(&cand.image, &mut rng)?;
            let f = eval.feature_map.features(x.data())?;
            logits.push(eval.logits_from_features(&f));
            gen_eval.push(f);
            gen_face.push(bench.models.face.features(x.data())?);
            labels.push(cr.class);
        }
    }
    ensure!(!labels.is_empty(), "the attack selected no images");
    Ok(EvaluationInputs {
        eval_logits: FeatureMatrix::new(logits, FeatureSource::Generated, Some(labels.clone()))?,
        generated_eval: FeatureMatrix::new(gen_eval, FeatureSource::Generated, Some(labels.clone()))?,
        training_eval: bench.training.features(&eval.feature_map)?,
        generated_face: FeatureMatrix::new(gen_face, FeatureSource::Generated, Some(labels))?,
        training_face: bench.training.features(&bench.models.face)?,
    })
}

impl EvaluationInputs {
    fn matrices(&self) -> [&FeatureMatrix; 5] {
        [
            &self.eval_logits,
            &self.generated_eval,
            &self.training_eval,
            &self.generated_face,
            &self.training_face,
        ]
    }
}

/// Result of an in-memory run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub bench: ToyBenchmark,
    pub attack: AttackResult,
    pub inputs: EvaluationInputs,
    pub report: MetricsReport,
}

impl RunOutcome {
    /// `(class, selected candidate indices in robust order)` per class.
    pub fn selected_indices(&self) -> Vec<(usize, Vec<usize>)> {
        self.attack
            .classes
            .iter()
            .map(|cr| (cr.class, cr.selected().iter().map(|c| c.index).collect()))
            .collect()
    }
}

/// Builds the models, attacks and evaluates without touching the disk.
pub fn execute(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let bench = ToyBenchmark::build(&config.models).map_err(|e| e.in_stage("build_models"))?;
    let attack = run_attack(&config.attack, config.seed, bench.attack_models())?;
    let (inputs, report) = evaluate_attack(&bench, &attack, &config.metrics).map_err(|e| e.in_stage("evaluate"))?;
    Ok(RunOutcome {
        bench,
        attack,
        inputs,
        report,
    })
}

fn evaluate_attack(
    bench: &ToyBenchmark,
    attack: &AttackResult,
    metrics: &MetricsConfig,
) -> Result<(EvaluationInputs, MetricsReport)> {
    let inputs = evaluation_inputs(bench, attack)?;
    let report = evaluate(&inputs, metrics)?;
    Ok((inputs, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCaption {
    pub index: usize,
    pub robust_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub class: usize,
    pub path: String,
    /// Cell captions in row-major grid order.
    pub cells: Vec<GridCaption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub complete: bool,
    pub stages: Vec<StageRecord>,
    pub selected: Vec<(usize, Vec<usize>)>,
    pub grids: Vec<GridRecord>,
    pub files: Vec<FileRecord>,
}

/// Single writer for a run directory; remembers a hash of everything written.
struct RunWriter {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

impl RunWriter {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(FileRecord {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn finish(self, mut manifest: Manifest) -> Result<()> {
        manifest.files = self.files;
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn candidates_csv(result: &AttackResult) -> String {
    let mut s = String::from("class,index,initial_score,plain_score,robust_score,selected,failed\n");
    for cr in &result.classes {
        for c in &cr.candidates {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                cr.class, c.index, c.initial_score, c.plain_score, c.robust_score, c.selected, c.failed
            );
        }
    }
    s
}

fn persist(outcome: &RunOutcome, config: &RunConfig, w: &mut RunWriter) -> Result<Vec<GridRecord>> {
    w.write("config.toml", config.to_toml().as_bytes())?;
    let models = serde_json::to_string_pretty(&outcome.bench.models).expect("models serialize");
    w.write("models.json", models.as_bytes())?;
    w.write("metrics.csv", outcome.report.to_csv().as_bytes())?;
    w.write("report.json", outcome.report.to_json().as_bytes())?;
    let mut traces = Vec::new();
    outcome
        .attack
        .write_traces_csv(&mut traces)
        .map_err(|e| Error::io(w.dir.join("traces.csv"), e))?;
    w.write("traces.csv", &traces)?;
    w.write("candidates.csv", candidates_csv(&outcome.attack).as_bytes())?;
    for (name, m) in FEATURE_FILES.iter().zip(outcome.inputs.matrices()) {
        w.write(name, m.to_text().as_bytes())?;
    }
    let mut grids = Vec::new();
    for cr in &outcome.attack.classes {
        let selected = cr.selected();
        if config.output.images {
            for (rank, c) in selected.iter().enumerate() {
                let rel = format!("images/class_{:03}/{rank:03}_candidate_{:04}.png", cr.class, c.index);
                w.write(&rel, &encode_png(&c.image)?)?;
            }
        }
        if config.output.grids && !selected.is_empty() {
            let images: Vec<&ImageTensor> = selected.iter().map(|c| &c.image).collect();
            let rel = format!("grids/class_{:03}.png", cr.class);
            w.write(&rel, &image_grid(&images, config.output.grid_columns)?)?;
            grids.push(GridRecord {
                class: cr.class,
                path: rel,
                cells: selected
                    .iter()
                    .map(|c| GridCaption {
                        index: c.index,
                        robust_score: c.robust_score,
                    })
                    .collect(),
            });
        }
    }
    Ok(grids)
}

fn stage(name: &str, result: &Result<impl Sized>) -> StageRecord {
    StageRecord {
        name: name.into(),
        ok: result.is_ok(),
        error: result.as_ref().err().map(|e| e.to_string()),
    }
}

/// Runs the attack and evaluation and writes every artifact plus a manifest
/// to `config.output.directory`. A failed stage is recorded in the manifest,
/// which is then marked incomplete, before the error is returned.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mut writer = RunWriter::new(&config.output.directory)?;
    let mut manifest = Manifest {
        schema_version: config.schema_version,
        seed: config.seed,
        config_hash: config.hash(),
        complete: false,
        stages: Vec::new(),
        selected: Vec::new(),
        grids: Vec::new(),
        files: Vec::new(),
    };
    macro_rules! try_stage {
        ($name:expr, $e:expr) => {{
            let r = $e;
            manifest.stages.push(stage($name, &r));
            match r {
                Ok(v) => v,
                Err(e) => {
                    writer.finish(manifest)?;
                    return Err(e.in_stage($name));
                }
            }
        }};
    }
    let bench = try_stage!("build_models", ToyBenchmark::build(&config.models));
    let attack = try_stage!("attack", run_attack(&config.attack, config.seed, bench.attack_models()));
    let (inputs, report) = try_stage!("evaluate", evaluate_attack(&bench, &attack, &config.metrics));
    let outcome = RunOutcome {
        bench,
        attack,
        inputs,
        report,
    };
    manifest.selected = outcome.selected_indices();
    manifest.grids = try_stage!("persist", persist(&outcome, config, &mut writer));
    manifest.complete = true;
    writer.finish(manifest)?;
    Ok(outcome)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checked: usize,
    pub complete: bool,
    /// One line per missing or altered file.
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.complete && self.problems.is_empty()
    }
}

/// Recomputes the hash of every file listed in a run's manifest.
pub fn verify(dir: &Path) -> Result<VerifyReport> {
    let manifest = read_manifest(dir)?;
    let mut problems = Vec::new();
    for f in &manifest.files {
        let path = dir.join(&f.path);
        match std::fs::read(&path) {
            Ok(bytes) => {
                let h = hex::encode(Sha256::digest(&bytes));
                if h != f.sha256 {
                    problems.push(format!("{}: hash mismatch", f.path));
                }
            }
            Err(e) => problems.push(format!("{}: {e}", f.path)),
        }
    }
    Ok(VerifyReport {
        checked: manifest.files.len(),
        complete: manifest.complete,
        problems,
    })
}

/// Recomputes the metric report from the feature files of a run directory.
pub fn metrics_from_dir(dir: &Path, metrics: &MetricsConfig) -> Result<MetricsReport> {
    let [logits, gen_eval, train_eval, gen_face, train_face] = FEATURE_FILES.map(|f| FeatureMatrix::read(&dir.join(f)));
    let inputs = EvaluationInputs {
        eval_logits: logits?,
        generated_eval: gen_eval?,
        training_eval: train_eval?,
        generated_face: gen_face?,
        training_face: train_face?,
    };
    evaluate(&inputs, metrics)
}
