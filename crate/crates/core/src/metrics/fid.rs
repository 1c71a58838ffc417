use nalgebra::{DMatrix, DVector};

use super::features::FeatureMatrix;
use crate::error::{ensure, Result};

/// Square root of a symmetric positive semi-definite matrix via its
/// eigendecomposition; negative eigenvalues from roundoff are clamped to 0.
pub fn matrix_sqrt_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure!(s.is_square(), "matrix must be square");
    let scale = s.amax().max(1.0);
    let asym = (s - s.transpose()).amax();
    ensure!(
        asym <= 1e-8 * scale,
        "matrix is not symmetric (max asymmetry {asym:e})"
    );
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Sample mean and unbiased (n - 1) covariance.
pub fn moments(x: &FeatureMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.len();
    ensure!(n >= 2, "covariance needs at least 2 rows, got {n}");
    let d = x.dim();
    let mut mean = DVector::zeros(d);
    for r in x.rows() {
        mean += DVector::from_column_slice(r);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in x.rows() {
        let c = DVector::from_column_slice(r) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

/// Fréchet distance between two Gaussians given their moments.
pub fn fid_from_moments(
    mu1: &DVector<f64>,
    sigma1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    sigma2: &DMatrix<f64>,
) -> Result<f64> {
    ensure!(
        mu1.len() == mu2.len() && sigma1.shape() == sigma2.shape() && sigma1.nrows() == mu1.len(),
        "moment dimensions disagree"
    );
    let root1 = matrix_sqrt_psd(sigma1)?;
    let inner = &root1 * sigma2 * &root1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?.trace();
    let mean_term = (mu1 - mu2).norm_squared();
    let value = mean_term + sigma1.trace() + sigma2.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

/// FID between two feature sets.
pub fn fid(real: &FeatureMatrix, fake: &FeatureMatrix) -> Result<f64> {
    ensure!(
        real.dim() == fake.dim(),
        "feature dimensions differ: {} vs {}",
        real.dim(),
        fake.dim()
    );
    let (m1, s1) = moments(real)?;
    let (m2, s2) = moments(fake)?;
    fid_from_moments(&m1, &s1, &m2, &s2)
}
