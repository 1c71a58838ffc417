//! k-nearest-neighbour manifold metrics: improved precision/recall and
//! density/coverage.

use super::features::FeatureMatrix;
use crate::error::{ensure, Result};

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from every row to its k-th nearest other row of the same set.
pub fn knn_radii(set: &FeatureMatrix, k: usize) -> Result<Vec<f64>> {
    ensure!(k >= 1, "k must be at least 1");
    ensure!(
        set.len() > k,
        "set of {} points is too small for k = {k}",
        set.len()
    );
    let n = set.len();
    Ok((0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| distance(set.row(i), set.row(j)))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect())
}

fn coverage_fraction(queries: &FeatureMatrix, support: &FeatureMatrix, radii: &[f64]) -> f64 {
    let hits = queries
        .rows()
        .filter(|q| {
            support
                .rows()
                .zip(radii)
                .any(|(s, &r)| distance(q, s) <= r)
        })
        .count();
    hits as f64 / queries.len() as f64
}

/// `(precision, recall)`: the share of fake points inside the real manifold and
/// of real points inside the fake manifold.
pub fn precision_recall(real: &FeatureMatrix, fake: &FeatureMatrix, k: usize) -> Result<(f64, f64)> {
    ensure!(real.dim() == fake.dim(), "feature dimensions differ");
    let real_radii = knn_radii(real, k)?;
    let fake_radii = knn_radii(fake, k)?;
    Ok((
        coverage_fraction(fake, real, &real_radii),
        coverage_fraction(real, fake, &fake_radii),
    ))
}

/// `(density, coverage)` measured against the real-sample kNN balls.
pub fn density_coverage(real: &FeatureMatrix, fake: &FeatureMatrix, k: usize) -> Result<(f64, f64)> {
    ensure!(real.dim() == fake.dim(), "feature dimensions differ");
    let radii = knn_radii(real, k)?;
    let mut inside = 0usize;
    for f in fake.rows() {
        inside += real
            .rows()
            .zip(&radii)
            .filter(|(r, &rad)| distance(f, r) <= rad)
            .count();
    }
    let density = inside as f64 / (k as f64 * fake.len() as f64);
    let covered = real
        .rows()
        .zip(&radii)
        .filter(|(r, &rad)| fake.rows().any(|f| distance(f, r) <= rad))
        .count();
    Ok((density, covered as f64 / real.len() as f64))
}
