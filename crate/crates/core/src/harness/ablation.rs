use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::execute;
use crate::attack::{TOY_FRAME_CROP, TOY_INPUT};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::ClassMetrics;
use crate::transforms::{TransformPipeline, TransformSpec};

/// Input size for the "resize below native" variant.
pub const SMALL_RESIZE: usize = 12;
/// Input size for the "resize above native" variant.
pub const LARGE_RESIZE: usize = 20;

/// One-component variations of the standard attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationPreset {
    Standard,
    CeLoss,
    NoCenterCropping,
    ResizeSmall,
    ResizeLarge,
    NoRandomCropping,
    NoInitialSelection,
    NoFinalSelection,
    DiscriminatorLoss,
}

impl AblationPreset {
    pub const ALL: [AblationPreset; 9] = [
        AblationPreset::Standard,
        AblationPreset::CeLoss,
        AblationPreset::NoCenterCropping,
        AblationPreset::ResizeSmall,
        AblationPreset::ResizeLarge,
        AblationPreset::NoRandomCropping,
        AblationPreset::NoInitialSelection,
        AblationPreset::NoFinalSelection,
        AblationPreset::DiscriminatorLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationPreset::Standard => "standard",
            AblationPreset::CeLoss => "ce_loss",
            AblationPreset::NoCenterCropping => "no_center_cropping",
            AblationPreset::ResizeSmall => "resize_small",
            AblationPreset::ResizeLarge => "resize_large",
            AblationPreset::NoRandomCropping => "no_random_cropping",
            AblationPreset::NoInitialSelection => "no_initial_selection",
            AblationPreset::NoFinalSelection => "no_final_selection",
            AblationPreset::DiscriminatorLoss => "discriminator_loss",
        }
    }

    /// Returns `base` with this preset's single change applied.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        let a = &mut c.attack;
        match self {
            AblationPreset::Standard => {}
            AblationPreset::CeLoss => {
                a.loss = LossKind::CrossEntropy;
                a.learning_rate = 0.01;
            }
            AblationPreset::NoCenterCropping => {
                a.optimization_transforms = drop_center_crop(&a.optimization_transforms);
                a.selection_transforms = drop_center_crop(&a.selection_transforms);
            }
            AblationPreset::ResizeSmall => {
                a.optimization_transforms = resize_through(&a.optimization_transforms, SMALL_RESIZE);
                a.selection_transforms = resize_through(&a.selection_transforms, SMALL_RESIZE);
            }
            AblationPreset::ResizeLarge => {
                a.optimization_transforms = resize_through(&a.optimization_transforms, LARGE_RESIZE);
                a.selection_transforms = resize_through(&a.selection_transforms, LARGE_RESIZE);
            }
            AblationPreset::NoRandomCropping => {
                a.optimization_transforms = a.optimization_transforms.without_random();
            }
            AblationPreset::NoInitialSelection => a.initial_selection = false,
            AblationPreset::NoFinalSelection => a.final_selection = false,
            AblationPreset::DiscriminatorLoss => a.discriminator_weight = 0.1,
        }
        c
    }
}

impl std::fmt::Display for AblationPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = AblationPreset::ALL.iter().map(|p| p.name()).collect();
                Error::contract(format!("unknown preset `{s}`; valid presets: {}", names.join(", ")))
            })
    }
}

fn drop_center_crop(p: &TransformPipeline) -> TransformPipeline {
    TransformPipeline::new(
        p.specs
            .iter()
            .filter(|s| !matches!(s, TransformSpec::CenterCrop { .. }))
            .cloned()
            .collect(),
    )
}

/// Replaces the resize to the native input with a resize to `size` followed
/// by a return to the native size: bilinear upsampling when `size` is
/// smaller, a center crop when it is larger.
fn resize_through(p: &TransformPipeline, size: usize) -> TransformPipeline {
    let mut specs = Vec::new();
    for s in &p.specs {
        match s {
            TransformSpec::Resize { size: [h, w] } if *h == TOY_INPUT && *w == TOY_INPUT => {
                specs.push(TransformSpec::Resize { size: [size; 2] });
                if size < TOY_INPUT {
                    specs.push(TransformSpec::Resize { size: [TOY_INPUT; 2] });
                } else if size > TOY_INPUT {
                    specs.push(TransformSpec::CenterCrop { size: [TOY_INPUT; 2] });
                }
            }
            other => specs.push(other.clone()),
        }
    }
    debug_assert!(TOY_FRAME_CROP > TOY_INPUT);
    TransformPipeline::new(specs)
}

/// Comparative table: one aggregate metric row per preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub rows: Vec<(AblationPreset, ClassMetrics)>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.8}"))
}

impl AblationTable {
    pub const CSV_HEADER: &'static str =
        "preset,acc_at_1,acc_at_5,delta_eval,delta_face,fid,precision,recall,density,coverage,n_selected";

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", Self::CSV_HEADER);
        for (p, m) in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                p.name(),
                cell(m.acc_at_1),
                cell(m.acc_at_5),
                cell(m.delta_eval),
                cell(m.delta_face),
                cell(m.fid),
                cell(m.precision),
                cell(m.recall),
                cell(m.density),
                cell(m.coverage),
                m.n_selected
            );
        }
        s
    }

    pub fn get(&self, preset: AblationPreset) -> Option<&ClassMetrics> {
        self.rows.iter().find(|(p, _)| *p == preset).map(|(_, m)| m)
    }
}

/// Runs `base` once per preset with the same seed and collects the aggregate
/// metrics.
pub fn run_ablation(base: &RunConfig, presets: &[AblationPreset]) -> Result<AblationTable> {
    base.validate()?;
    let rows = presets
        .iter()
        .map(|&p| Ok((p, execute(&p.apply(base))?.report.aggregate)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { seed: base.seed, rows })
}
