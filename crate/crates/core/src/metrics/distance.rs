use serde::{Deserialize, Serialize};

use super::features::FeatureMatrix;
use crate::error::{ensure, Result};
use crate::tensor::squared_distance;

/// Top-1 / top-k hit rates for a set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub acc_at_1: f64,
    pub acc_at_5: f64,
    /// Size of the top-k set actually used (`min(5, classes)`).
    pub top_k: usize,
}

/// `targets[i]` is the class image `i` was generated for, `logits[i]` the
/// evaluation model output on it.
pub fn accuracy_from_logits(targets: &[usize], logits: &[Vec<f64>]) -> Result<Accuracy> {
    ensure!(!targets.is_empty(), "no predictions to score");
    ensure!(targets.len() == logits.len(), "one logit vector per target required");
    let classes = logits[0].len();
    ensure!(
        logits.iter().all(|l| l.len() == classes),
        "logit vectors differ in length"
    );
    ensure!(targets.iter().all(|&t| t < classes), "target class out of range");
    let top_k = classes.min(5);
    let (mut hit1, mut hit5) = (0usize, 0usize);
    for (&t, l) in targets.iter().zip(logits) {
        let rank = l
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > l[t] || (v == l[t] && j < t))
            .count();
        if rank == 0 {
            hit1 += 1;
        }
        if rank < top_k {
            hit5 += 1;
        }
    }
    let n = targets.len() as f64;
    Ok(Accuracy {
        acc_at_1: hit1 as f64 / n,
        acc_at_5: hit5 as f64 / n,
        top_k,
    })
}

/// Smallest squared distance from each row of `generated` to any row of `training`.
pub fn min_squared_distances(generated: &[&[f64]], training: &[&[f64]]) -> Result<Vec<f64>> {
    ensure!(!training.is_empty(), "class has no training features");
    Ok(generated
        .iter()
        .map(|g| {
            training
                .iter()
                .map(|t| squared_distance(g, t))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistances {
    /// `(class, mean minimum squared distance)` per class present in `generated`.
    pub per_class: Vec<(usize, f64)>,
    /// Mean over classes.
    pub mean: f64,
}

/// Per class, the mean over generated rows of their minimum squared distance
/// to the class's training rows. Both matrices must be labelled.
pub fn feature_distance(generated: &FeatureMatrix, training: &FeatureMatrix) -> Result<ClassDistances> {
    ensure!(
        generated.labels.is_some() && training.labels.is_some(),
        "feature distance needs labelled features"
    );
    ensure!(generated.dim() == training.dim(), "feature dimensions differ");
    let mut per_class = Vec::new();
    for c in generated.classes() {
        let train = training.class_rows(c);
        ensure!(!train.is_empty(), "class {c} has no training features");
        let mins = min_squared_distances(&generated.class_rows(c), &train)?;
        per_class.push((c, mins.iter().sum::<f64>() / mins.len() as f64));
    }
    let mean = per_class.iter().map(|(_, d)| d).sum::<f64>() / per_class.len() as f64;
    Ok(ClassDistances { per_class, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerClassBaseline {
    pub per_class: Vec<(usize, f64)>,
    pub mean: f64,
    /// Sample standard deviation across classes (0 for a single class).
    pub std: f64,
}

/// Mean squared distance of each training sample to the other samples of its
/// class, averaged per class, then summarized across classes.
pub fn inner_class_baseline(training: &FeatureMatrix) -> Result<InnerClassBaseline> {
    ensure!(training.labels.is_some(), "baseline needs labelled features");
    let mut per_class = Vec::new();
    for c in training.classes() {
        let rows = training.class_rows(c);
        ensure!(rows.len() >= 2, "class {c} has a single sample");
        let n = rows.len();
        let per_sample: f64 = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| squared_distance(rows[i], rows[j]))
                    .sum::<f64>()
                    / (n - 1) as f64
            })
            .sum();
        per_class.push((c, per_sample / n as f64));
    }
    let m = per_class.len() as f64;
    let mean = per_class.iter().map(|(_, d)| d).sum::<f64>() / m;
    let std = if per_class.len() > 1 {
        (per_class.iter().map(|(_, d)| (d - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(InnerClassBaseline {
        per_class,
        mean,
        std,
    })
}
