//! Evaluation suite: attack accuracy, feature distances, FID and kNN manifold
//! metrics.

mod distance;
mod features;
mod fid;
mod knn;
mod report;

pub use distance::{
    accuracy_from_logits, feature_distance, inner_class_baseline, min_squared_distances, Accuracy,
    ClassDistances, InnerClassBaseline,
};
pub use features::{FeatureMatrix, FeatureSource};
pub use fid::{fid, fid_from_moments, matrix_sqrt_psd, moments};
pub use knn::{density_coverage, knn_radii, precision_recall};
pub use report::{evaluate, ClassMetrics, EvaluationInputs, MetricsConfig, MetricsReport, METRICS_CSV_HEADER};
