use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::attack::{build_candidate_pool, optimize_candidates, AttackConfig, OptimizedCandidate};
use crate::error::{ensure, Result};
use crate::losses::LossKind;
use crate::toy::ToyBenchmark;

/// Per-step averages over every optimized candidate for one loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub loss: LossKind,
    pub mean_loss: Vec<f64>,
    pub mean_target_score: Vec<f64>,
    /// Mean of each candidate's gradient norm divided by its step-0 norm.
    pub normalized_grad_norm: Vec<f64>,
    /// Mean normalized gradient norm over all (candidate, step) pairs whose
    /// target score exceeds 0.9; `None` if there are none.
    pub high_score_grad_norm: Option<f64>,
    /// Trajectories left out because their first gradient was exactly zero.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCurves {
    pub curves: Vec<LossCurve>,
}

pub const HIGH_SCORE: f64 = 0.9;
/// Latents sampled for the diagnostic.
pub const DIAGNOSTIC_SAMPLES: usize = 100;
/// Randomly chosen starting latents optimized per class. Best-of-pool starts
/// are already saturated on the toy target, so random starts are used to get
/// trajectories that rise through the high-score region.
pub const DIAGNOSTIC_STARTS: usize = 10;

impl LossCurve {
    fn from_candidates(loss: LossKind, runs: &[OptimizedCandidate], steps: usize) -> Result<Self> {
        ensure!(
            runs.iter().all(|r| !r.failed && r.trace.len() == steps),
            "a {loss:?} trajectory failed before completing {steps} steps"
        );
        let kept: Vec<&OptimizedCandidate> = runs.iter().filter(|r| r.trace[0].grad_norm > 0.0).collect();
        ensure!(!kept.is_empty(), "every {loss:?} trajectory starts with a zero gradient");
        let n = kept.len() as f64;
        let mut mean_loss = vec![0.0; steps];
        let mut mean_score = vec![0.0; steps];
        let mut norm = vec![0.0; steps];
        let (mut high_sum, mut high_n) = (0.0, 0usize);
        for r in &kept {
            let g0 = r.trace[0].grad_norm;
            for (t, s) in r.trace.iter().enumerate() {
                let g = s.grad_norm / g0;
                mean_loss[t] += s.loss / n;
                mean_score[t] += s.target_score / n;
                norm[t] += g / n;
                if s.target_score > HIGH_SCORE {
                    high_sum += g;
                    high_n += 1;
                }
            }
        }
        Ok(Self {
            loss,
            mean_loss,
            mean_target_score: mean_score,
            normalized_grad_norm: norm,
            high_score_grad_norm: (high_n > 0).then(|| high_sum / high_n as f64),
            excluded: runs.len() - kept.len(),
        })
    }

    /// Normalized gradient norm at the first step whose mean score exceeds
    /// `threshold`.
    pub fn grad_norm_at_score(&self, threshold: f64) -> Option<f64> {
        self.mean_target_score
            .iter()
            .position(|&s| s > threshold)
            .map(|t| self.normalized_grad_norm[t])
    }
}

impl GradientCurves {
    pub fn curve(&self, loss: LossKind) -> Option<&LossCurve> {
        self.curves.iter().find(|c| c.loss == loss)
    }

    /// Columns `loss,step,mean_loss,mean_target_score,normalized_grad_norm`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("loss,step,mean_loss,mean_target_score,normalized_grad_norm\n");
        for c in &self.curves {
            let name = match c.loss {
                LossKind::Poincare => "poincare",
                LossKind::CrossEntropy => "cross_entropy",
            };
            for t in 0..c.mean_loss.len() {
                let _ = writeln!(
                    s,
                    "{name},{t},{},{},{}",
                    c.mean_loss[t], c.mean_target_score[t], c.normalized_grad_norm[t]
                );
            }
        }
        s
    }
}

/// Optimizes [`DIAGNOSTIC_STARTS`] random latents per class with both losses,
/// without random cropping, recording score and gradient-norm curves.
pub fn gradient_diagnostic(config: &RunConfig) -> Result<GradientCurves> {
    config.validate()?;
    let bench = ToyBenchmark::build(&config.models)?;
    let attack = AttackConfig {
        optimization_transforms: config.attack.optimization_transforms.without_random(),
        discriminator_weight: 0.0,
        sample_count: DIAGNOSTIC_SAMPLES,
        candidates_per_class: DIAGNOSTIC_STARTS,
        final_count: DIAGNOSTIC_STARTS,
        initial_selection: false,
        ..config.attack.clone()
    };
    let models = bench.attack_models();
    let targets: Vec<usize> = if attack.target_classes.is_empty() {
        (0..bench.num_classes()).collect()
    } else {
        attack.target_classes.clone()
    };
    let (_, pool) = build_candidate_pool(&attack, config.seed, models, &targets)?;
    let curves = [LossKind::Poincare, LossKind::CrossEntropy]
        .into_iter()
        .map(|loss| {
            let cfg = AttackConfig {
                loss,
                ..attack.clone()
            };
            let runs: Vec<OptimizedCandidate> = pool
                .classes
                .par_iter()
                .map(|p| optimize_candidates(p, models, &cfg, config.seed))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            LossCurve::from_candidates(loss, &runs, cfg.steps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradientCurves { curves })
}
