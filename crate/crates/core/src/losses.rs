//! Cross-entropy and Poincaré losses with closed-form logit gradients.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::models::{LogitVector, ScoreVector};

/// Target entry used in place of 1 so the target stays inside the unit ball.
pub const POINCARE_TARGET: f64 = 0.9999;
/// `||u||^2` is clamped to at most `1 - EPS_BALL`.
pub const EPS_BALL: f64 = 1e-6;
/// The arcosh argument used for the derivative is clamped to at least `1 + EPS_ARG`.
pub const EPS_ARG: f64 = 1e-12;
/// Logit vectors with `||o||_1 <= EPS_NORM` cannot be normalized.
pub const EPS_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Poincare,
    CrossEntropy,
}

impl LossKind {
    pub fn evaluate(self, logits: &LogitVector, class: usize) -> Result<LossOutput> {
        match self {
            LossKind::Poincare => poincare_loss(logits, class),
            LossKind::CrossEntropy => cross_entropy(logits, class),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to the logits.
    pub grad: Vec<f64>,
    /// Set when `u` was within `EPS_BALL` of the ball boundary and got clamped.
    pub clamped: bool,
}

fn check_class(len: usize, class: usize) -> Result<()> {
    ensure!(class < len, "class index {class} out of range for {len} classes");
    Ok(())
}

/// Max-shifted softmax.
pub fn softmax(o: &LogitVector) -> Result<ScoreVector> {
    let v = o.values();
    ensure!(v.iter().all(|x| x.is_finite()), "softmax input must be finite");
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    ScoreVector::new(exps.into_iter().map(|e| e / total).collect())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `-log y_c` with gradient `y - t`.
pub fn cross_entropy(o: &LogitVector, class: usize) -> Result<LossOutput> {
    check_class(o.len(), class)?;
    let y = softmax(o)?;
    let loss = log_sum_exp(o.values()) - o.values()[class];
    let mut grad = y.values().to_vec();
    grad[class] -= 1.0;
    Ok(LossOutput {
        loss,
        grad,
        clamped: false,
    })
}

/// Hyperbolic distance between two points of the open unit ball.
pub fn poincare_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    ensure!(u.len() == v.len(), "poincare distance needs equal dimensions");
    let nu: f64 = u.iter().map(|x| x * x).sum();
    let nv: f64 = v.iter().map(|x| x * x).sum();
    ensure!(nu < 1.0 && nv < 1.0, "points must lie inside the unit ball");
    let diff: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    let gamma = 1.0 + 2.0 * diff / ((1.0 - nu) * (1.0 - nv));
    Ok(gamma.max(1.0).acosh())
}

/// Poincaré distance between `u = o / ||o||_1` and `0.9999 * e_class`.
///
/// The gradient is the closed form chained through `du/do`; at `o_k = 0` the
/// subgradient of `|o_k|` is taken as 0.
pub fn poincare_loss(o: &LogitVector, class: usize) -> Result<LossOutput> {
    check_class(o.len(), class)?;
    let o = o.values();
    let l1: f64 = o.iter().map(|x| x.abs()).sum();
    if l1 <= EPS_NORM {
        return Err(Error::Degenerate(format!(
            "logit l1 norm {l1:e} too small to normalize"
        )));
    }
    let u: Vec<f64> = o.iter().map(|x| x / l1).collect();
    let mut v = vec![0.0; o.len()];
    v[class] = POINCARE_TARGET;

    let u_sq: f64 = u.iter().map(|x| x * x).sum();
    let clamped = u_sq > 1.0 - EPS_BALL;
    let alpha = 1.0 - u_sq.min(1.0 - EPS_BALL);
    let beta = 1.0 - POINCARE_TARGET * POINCARE_TARGET;
    let diff: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
    let gamma = 1.0 + 2.0 * diff / (alpha * beta);
    let loss = gamma.max(1.0).acosh();

    if diff == 0.0 {
        return Ok(LossOutput {
            loss,
            grad: vec![0.0; o.len()],
            clamped,
        });
    }
    let gamma_g = gamma.max(1.0 + EPS_ARG);
    let scale = 4.0 / (beta * (gamma_g * gamma_g - 1.0).sqrt() * alpha * alpha);
    let grad_u: Vec<f64> = u
        .iter()
        .zip(&v)
        .map(|(uj, vj)| scale * (alpha * (uj - vj) + uj * diff))
        .collect();
    let proj: f64 = grad_u.iter().zip(&u).map(|(g, uj)| g * uj).sum();
    let grad = grad_u
        .iter()
        .zip(o)
        .map(|(gk, ok)| {
            let sign = if *ok > 0.0 {
                1.0
            } else if *ok < 0.0 {
                -1.0
            } else {
                0.0
            };
            (gk - sign * proj) / l1
        })
        .collect();
    Ok(LossOutput {
        loss,
        grad,
        clamped,
    })
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Realism penalty `weight * softplus(-d_logit)`.
pub fn discriminator_penalty(d_logit: f64, weight: f64) -> Result<f64> {
    ensure!(weight >= 0.0, "discriminator weight must be non-negative, got {weight}");
    ensure!(d_logit.is_finite(), "discriminator logit must be finite");
    if weight == 0.0 {
        return Ok(0.0);
    }
    Ok(weight * softplus(-d_logit))
}

/// Derivative of [`discriminator_penalty`] with respect to `d_logit`.
pub fn discriminator_penalty_grad(d_logit: f64, weight: f64) -> Result<f64> {
    ensure!(weight >= 0.0, "discriminator weight must be non-negative, got {weight}");
    let sig_neg = 1.0 / (1.0 + d_logit.exp());
    Ok(-weight * sig_neg)
}

/// Target-logit cross-entropy gradient magnitude `|y_c - 1|` along a score path.
pub fn ce_gradient_magnitude_curve(score_path: &[f64]) -> Result<Vec<f64>> {
    ensure!(
        score_path.iter().all(|y| *y > 0.0 && *y < 1.0),
        "scores must lie in (0, 1)"
    );
    Ok(score_path.iter().map(|y| (y - 1.0).abs()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_closed_forms() {
        let y = softmax(&logits(&[0.0; 4])).unwrap();
        assert!(y.values().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let y = softmax(&logits(&[0.0, 3f64.ln()])).unwrap();
        assert!((y.values()[0] - 0.25).abs() < 1e-15);
        assert!((y.values()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = [0.3, -1.2, 2.0];
        let b: Vec<f64> = a.iter().map(|x| x + 1000.0).collect();
        let ya = softmax(&logits(&a)).unwrap();
        let yb = softmax(&logits(&b)).unwrap();
        for (p, q) in ya.values().iter().zip(yb.values()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_uniform_binary() {
        let out = cross_entropy(&logits(&[0.0, 0.0]), 0).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-12);
        assert!((out.grad[0] + 0.5).abs() < 1e-15);
        assert!((out.grad[1] - 0.5).abs() < 1e-15);
        assert!(cross_entropy(&logits(&[0.0, 0.0]), 2).is_err());
    }

    #[test]
    fn cross_entropy_vanishes_at_saturation() {
        let out = cross_entropy(&logits(&[800.0, 0.0, -5.0]), 0).unwrap();
        assert_eq!(out.grad[0], 0.0);
        assert!(out.loss.abs() < 1e-300);
    }

    #[test]
    fn poincare_two_class_value() {
        // gamma = 1 + 2 * 0.49990001 / (0.5 * (1 - 0.9999^2))
        let gamma: f64 = 1.0 + 2.0 * 0.499_900_01 / (0.5 * (1.0 - 0.9999f64 * 0.9999));
        let expected = (gamma + (gamma * gamma - 1.0).sqrt()).ln();
        let out = poincare_loss(&logits(&[1.0, 1.0]), 0).unwrap();
        assert!((out.loss - expected).abs() < 1e-9, "{} vs {expected}", out.loss);
        assert!((out.loss - 9.90).abs() < 0.01);
    }

    #[test]
    fn poincare_distance_zero_at_coincidence() {
        let u = [0.3, -0.2, 0.1];
        assert_eq!(poincare_distance(&u, &u).unwrap(), 0.0);
    }

    #[test]
    fn poincare_degenerate_logits() {
        assert!(matches!(
            poincare_loss(&logits(&[0.0, 0.0, 0.0]), 1),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn poincare_one_hot_is_clamped_and_finite() {
        let out = poincare_loss(&logits(&[0.0, -3.0, 0.0]), 0).unwrap();
        assert!(out.clamped);
        assert!(out.loss.is_finite());
        assert!(out.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn discriminator_penalty_cases() {
        assert_eq!(discriminator_penalty(3.7, 0.0).unwrap(), 0.0);
        assert!((discriminator_penalty(0.0, 0.1).unwrap() - 0.1 * 2f64.ln()).abs() < 1e-12);
        assert!(discriminator_penalty(0.0, -0.1).is_err());
        let grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.5).collect();
        for w in grid.windows(2) {
            assert!(
                discriminator_penalty(w[1], 0.1).unwrap() < discriminator_penalty(w[0], 0.1).unwrap()
            );
        }
    }

    #[test]
    fn penalty_gradient_matches_difference() {
        for d in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            let h = 1e-6;
            let fd = (discriminator_penalty(d + h, 0.1).unwrap()
                - discriminator_penalty(d - h, 0.1).unwrap())
                / (2.0 * h);
            assert!((fd - discriminator_penalty_grad(d, 0.1).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn ce_curve() {
        let c = ce_gradient_magnitude_curve(&[0.5, 0.99]).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-15);
        assert!((c[1] - 0.01).abs() < 1e-12);
        assert!(ce_gradient_magnitude_curve(&[1.0]).is_err());
        assert!(ce_gradient_magnitude_curve(&[0.0]).is_err());
    }
}
