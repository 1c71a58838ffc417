//! Experiment orchestration: configuration files, full runs with persisted
//! artifacts, ablation presets and the gradient diagnostic.

mod ablation;
mod config;
mod diagnose;
mod run;

pub use ablation::{run_ablation, AblationPreset, AblationTable, LARGE_RESIZE, SMALL_RESIZE};
pub use config::{canonical_json, load_config, parse_config, OutputConfig, RunConfig, SCHEMA_VERSION};
pub use diagnose::{gradient_diagnostic, GradientCurves, LossCurve, DIAGNOSTIC_SAMPLES, DIAGNOSTIC_STARTS, HIGH_SCORE};
pub use run::{
    decode_png, encode_png, evaluation_inputs, execute, from_u8, image_grid, metrics_from_dir, read_manifest,
    run_experiment, to_u8, verify, FileRecord, GridCaption, GridRecord, Manifest, RunOutcome, StageRecord,
    VerifyReport, FEATURE_FILES, MANIFEST_FILE,
};
