use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigViolation;
use crate::losses::LossKind;
use crate::transforms::{TransformPipeline, TransformSpec};

/// Every knob of one attack run. Defaults follow the published attack
/// hyperparameters; transform sizes match the toy benchmark geometry
/// (21 px generator frame, 16 px classifier input).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub sample_count: usize,
    pub candidates_per_class: usize,
    pub final_count: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub adam_betas: [f64; 2],
    pub adam_epsilon: f64,
    pub truncation_psi: f64,
    pub truncation_cutoff: usize,
    pub loss: LossKind,
    pub discriminator_weight: f64,
    pub optimization_transforms: TransformPipeline,
    pub selection_transforms: TransformPipeline,
    pub mc_samples: usize,
    /// Work-unit size for parallel optimization; has no effect on results.
    pub batch_size: usize,
    pub initial_selection: bool,
    pub final_selection: bool,
    /// Empty means every class of the target model.
    pub target_classes: Vec<usize>,
}

pub const TOY_FRAME_CROP: usize = 17;
pub const TOY_INPUT: usize = 16;

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            sample_count: 2000,
            candidates_per_class: 200,
            final_count: 50,
            steps: 50,
            learning_rate: 0.005,
            adam_betas: [0.1, 0.1],
            adam_epsilon: 1e-8,
            truncation_psi: 0.5,
            truncation_cutoff: 8,
            loss: LossKind::Poincare,
            discriminator_weight: 0.0,
            optimization_transforms: TransformPipeline::new(vec![
                TransformSpec::CenterCrop {
                    size: [TOY_FRAME_CROP; 2],
                },
                TransformSpec::Resize { size: [TOY_INPUT; 2] },
                TransformSpec::RandomResizedCrop {
                    area: [0.9, 1.0],
                    ratio: [1.0, 1.0],
                    size: [TOY_INPUT; 2],
                },
            ]),
            selection_transforms: TransformPipeline::new(vec![
                TransformSpec::CenterCrop {
                    size: [TOY_FRAME_CROP; 2],
                },
                TransformSpec::Resize { size: [TOY_INPUT; 2] },
                TransformSpec::RandomResizedCrop {
                    area: [0.5, 0.9],
                    ratio: [0.8, 1.2],
                    size: [TOY_INPUT; 2],
                },
            ]),
            mc_samples: 100,
            batch_size: 20,
            initial_selection: true,
            final_selection: true,
            target_classes: Vec::new(),
        }
    }
}

fn min_crop_area(p: &TransformPipeline) -> Option<f64> {
    p.specs
        .iter()
        .filter_map(|s| match s {
            TransformSpec::RandomResizedCrop { area, .. } => Some(area[0]),
            _ => None,
        })
        .reduce(f64::min)
}

impl AttackConfig {
    /// Checks every invariant and reports all violations at once; keys are
    /// prefixed with `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        let mut bad = |key: &str, message: String| {
            out.push(ConfigViolation {
                key: format!("{prefix}{key}"),
                message,
            })
        };
        if self.sample_count == 0 {
            bad("sample_count", "must be positive".into());
        }
        if self.candidates_per_class > self.sample_count {
            bad(
                "candidates_per_class",
                format!(
                    "{} exceeds sample_count {}",
                    self.candidates_per_class, self.sample_count
                ),
            );
        }
        if self.final_count > self.candidates_per_class {
            bad(
                "final_count",
                format!(
                    "{} exceeds candidates_per_class {}",
                    self.final_count, self.candidates_per_class
                ),
            );
        }
        if self.final_count == 0 {
            bad("final_count", "must be positive".into());
        }
        if self.mc_samples == 0 {
            bad("mc_samples", "must be at least 1".into());
        }
        if self.batch_size == 0 {
            bad("batch_size", "must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bad("learning_rate", "must be positive".into());
        }
        if self.adam_betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            bad("adam_betas", "each beta must lie in [0, 1)".into());
        }
        if self.adam_epsilon <= 0.0 {
            bad("adam_epsilon", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.truncation_psi) {
            bad("truncation_psi", "must lie in [0, 1]".into());
        }
        if self.discriminator_weight < 0.0 {
            bad("discriminator_weight", "must be non-negative".into());
        }
        if let Err(e) = self.optimization_transforms.validate() {
            bad("optimization_transforms", e.to_string());
        }
        if let Err(e) = self.selection_transforms.validate() {
            bad("selection_transforms", e.to_string());
        }
        if let (Some(opt), Some(sel)) = (
            min_crop_area(&self.optimization_transforms),
            min_crop_area(&self.selection_transforms),
        ) {
            if sel >= opt {
                bad(
                    "selection_transforms",
                    format!("selection crops (min area {sel}) must be stronger than optimization crops (min area {opt})"),
                );
            }
        }
        out
    }

    /// SHA-256 over the canonical JSON form of the config and seed.
    pub fn fingerprint(&self, seed: u64) -> String {
        let canonical = serde_json::json!({ "attack": self, "seed": seed });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}
