use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::distance::{accuracy_from_logits, inner_class_baseline, min_squared_distances, InnerClassBaseline};
use super::features::{FeatureMatrix, FeatureSource};
use super::fid::fid;
use super::knn::{density_coverage, precision_recall};
use crate::error::{ensure, Result};
use crate::models::argmax;

pub const METRICS_CSV_HEADER: &str =
    "class,acc_at_1,acc_at_5,delta_eval,delta_face,fid,precision,recall,density,coverage,n_selected";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Neighbourhood size for precision/recall and density/coverage.
    pub k: usize,
    /// Restrict FID to generated samples the evaluation model classifies correctly.
    pub fid_correct_only: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            k: 3,
            fid_correct_only: false,
        }
    }
}

/// Everything the metric suite consumes. Generated matrices and
/// `eval_logits` share row order and carry the attacked class as label.
#[derive(Debug, Clone)]
pub struct EvaluationInputs {
    pub eval_logits: FeatureMatrix,
    pub generated_eval: FeatureMatrix,
    pub training_eval: FeatureMatrix,
    pub generated_face: FeatureMatrix,
    pub training_face: FeatureMatrix,
}

/// Metric values for one class or the aggregate. `None` marks a value that is
/// undefined for the available sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: Option<usize>,
    pub acc_at_1: Option<f64>,
    pub acc_at_5: Option<f64>,
    pub delta_eval: Option<f64>,
    pub delta_face: Option<f64>,
    pub fid: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub density: Option<f64>,
    pub coverage: Option<f64>,
    pub n_selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub top_k: usize,
    pub fid_correct_only: bool,
    pub n_generated: usize,
    pub n_training: usize,
    pub per_class: Vec<ClassMetrics>,
    pub aggregate: ClassMetrics,
    pub baseline_eval: Option<InnerClassBaseline>,
    pub baseline_face: Option<InnerClassBaseline>,
    pub notes: Vec<String>,
}

fn subset(rows: &[&[f64]], source: FeatureSource) -> Result<FeatureMatrix> {
    FeatureMatrix::new(rows.iter().map(|r| r.to_vec()).collect(), source, None)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    mean(&v)
}

fn labels(m: &FeatureMatrix) -> Result<&[usize]> {
    m.labels
        .as_deref()
        .ok_or_else(|| crate::Error::contract("metric inputs must be labelled by class"))
}

/// Computes the full metric suite per attacked class and in aggregate.
pub fn evaluate(inputs: &EvaluationInputs, config: &MetricsConfig) -> Result<MetricsReport> {
    let targets = labels(&inputs.generated_eval)?.to_vec();
    ensure!(config.k >= 1, "k must be at least 1");
    ensure!(
        labels(&inputs.eval_logits)? == targets.as_slice()
            && labels(&inputs.generated_face)? == targets.as_slice(),
        "generated feature sets disagree on row labels"
    );
    let logits: Vec<Vec<f64>> = inputs.eval_logits.rows().map(<[f64]>::to_vec).collect();
    let mut notes = Vec::new();
    let classes_total = inputs.eval_logits.dim();
    if classes_total < 5 {
        notes.push(format!(
            "acc_at_5 uses top-{} because only {classes_total} classes exist",
            classes_total
        ));
    }
    let correct: Vec<bool> = targets
        .iter()
        .zip(&logits)
        .map(|(&t, l)| argmax(l) == t)
        .collect();

    let k = config.k;
    let mut per_class = Vec::new();
    for c in inputs.generated_eval.classes() {
        let idx: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] == c).collect();
        let class_targets = vec![c; idx.len()];
        let class_logits: Vec<Vec<f64>> = idx.iter().map(|&i| logits[i].clone()).collect();
        let acc = accuracy_from_logits(&class_targets, &class_logits)?;

        let gen_eval: Vec<&[f64]> = idx.iter().map(|&i| inputs.generated_eval.row(i)).collect();
        let gen_face: Vec<&[f64]> = idx.iter().map(|&i| inputs.generated_face.row(i)).collect();
        let train_eval = inputs.training_eval.class_rows(c);
        let train_face = inputs.training_face.class_rows(c);
        ensure!(
            !train_eval.is_empty() && !train_face.is_empty(),
            "class {c} has no training features"
        );
        let delta_eval = mean(&min_squared_distances(&gen_eval, &train_eval)?);
        let delta_face = mean(&min_squared_distances(&gen_face, &train_face)?);

        let real = subset(&train_eval, FeatureSource::Real)?;
        let fake = subset(&gen_eval, FeatureSource::Generated)?;
        let fid_rows: Vec<&[f64]> = idx
            .iter()
            .filter(|&&i| !config.fid_correct_only || correct[i])
            .map(|&i| inputs.generated_eval.row(i))
            .collect();
        let class_fid = if fid_rows.len() >= 2 && real.len() >= 2 {
            Some(fid(&real, &subset(&fid_rows, FeatureSource::Generated)?)?)
        } else {
            notes.push(format!("class {c}: FID undefined for fewer than 2 samples"));
            None
        };
        let (precision, recall) = if real.len() > k && fake.len() > k {
            let (p, r) = precision_recall(&real, &fake, k)?;
            (Some(p), Some(r))
        } else {
            notes.push(format!("class {c}: precision/recall need more than {k} samples per set"));
            (None, None)
        };
        let (density, coverage) = if real.len() > k {
            let (d, cv) = density_coverage(&real, &fake, k)?;
            (Some(d), Some(cv))
        } else {
            notes.push(format!("class {c}: density/coverage need more than {k} real samples"));
            (None, None)
        };
        per_class.push(ClassMetrics {
            class: Some(c),
            acc_at_1: Some(acc.acc_at_1),
            acc_at_5: Some(acc.acc_at_5),
            delta_eval,
            delta_face,
            fid: class_fid,
            precision,
            recall,
            density,
            coverage,
            n_selected: idx.len(),
        });
    }

    let acc = accuracy_from_logits(&targets, &logits)?;
    let pooled_fake: Vec<&[f64]> = (0..targets.len())
        .filter(|&i| !config.fid_correct_only || correct[i])
        .map(|i| inputs.generated_eval.row(i))
        .collect();
    let attacked = inputs.generated_eval.classes();
    let pooled_real: Vec<&[f64]> = attacked
        .iter()
        .flat_map(|&c| inputs.training_eval.class_rows(c))
        .collect();
    let aggregate_fid = if pooled_fake.len() >= 2 && pooled_real.len() >= 2 {
        Some(fid(
            &subset(&pooled_real, FeatureSource::Real)?,
            &subset(&pooled_fake, FeatureSource::Generated)?,
        )?)
    } else {
        None
    };
    let aggregate = ClassMetrics {
        class: None,
        acc_at_1: Some(acc.acc_at_1),
        acc_at_5: Some(acc.acc_at_5),
        delta_eval: mean_defined(per_class.iter().map(|m| m.delta_eval)),
        delta_face: mean_defined(per_class.iter().map(|m| m.delta_face)),
        fid: aggregate_fid,
        precision: mean_defined(per_class.iter().map(|m| m.precision)),
        recall: mean_defined(per_class.iter().map(|m| m.recall)),
        density: mean_defined(per_class.iter().map(|m| m.density)),
        coverage: mean_defined(per_class.iter().map(|m| m.coverage)),
        n_selected: targets.len(),
    };
    Ok(MetricsReport {
        k,
        top_k: acc.top_k,
        fid_correct_only: config.fid_correct_only,
        n_generated: targets.len(),
        n_training: inputs.training_eval.len(),
        per_class,
        aggregate,
        baseline_eval: inner_class_baseline(&inputs.training_eval).ok(),
        baseline_face: inner_class_baseline(&inputs.training_face).ok(),
        notes,
    })
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.8}"),
        None => "nan".into(),
    }
}

impl ClassMetrics {
    fn csv_row(&self) -> String {
        let class = self.class.map_or_else(|| "all".to_string(), |c| c.to_string());
        [
            class,
            cell(self.acc_at_1),
            cell(self.acc_at_5),
            cell(self.delta_eval),
            cell(self.delta_face),
            cell(self.fid),
            cell(self.precision),
            cell(self.recall),
            cell(self.density),
            cell(self.coverage),
            self.n_selected.to_string(),
        ]
        .join(",")
    }
}

impl MetricsReport {
    /// One row per class followed by the `all` aggregate row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{METRICS_CSV_HEADER}");
        for m in self.per_class.iter().chain(std::iter::once(&self.aggregate)) {
            let _ = writeln!(s, "{}", m.csv_row());
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics report serializes")
    }

    pub fn class(&self, class: usize) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|m| m.class == Some(class))
    }
}
