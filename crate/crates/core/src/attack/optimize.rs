use rayon::prelude::*;

use super::adam::{adam_step, AdamState};
use super::config::AttackConfig;
use super::selection::ClassPool;
use crate::error::{ensure, Result};
use crate::losses::{discriminator_penalty, discriminator_penalty_grad, softmax, LossKind};
use crate::models::{DifferentiableModel, ImageClassifier, ImagePrior, LogitVector};
use crate::rng::{derive_stream_id, RngStream};
use crate::tensor::{l2_norm, LatentVector};
use crate::transforms::TransformPipeline;

pub const OPTIMIZE_STAGE: &str = "optimize";

/// What one optimization step observed.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub loss: f64,
    pub target_score: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedCandidate {
    pub index: usize,
    pub latent: LatentVector,
    pub trace: Vec<TraceStep>,
    /// A non-finite loss or gradient was hit; the latent is the last finite one.
    pub failed: bool,
}

/// Objective evaluated at one latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub target_score: f64,
    pub grad: Vec<f64>,
}

/// Models taking part in the optimization objective.
#[derive(Clone, Copy)]
pub struct AttackModels<'a> {
    pub prior: &'a dyn ImagePrior,
    pub target: &'a dyn ImageClassifier,
    pub discriminator: Option<&'a dyn DifferentiableModel>,
}

/// Loss of the target model on `T(G(w))` (plus the optional realism penalty)
/// and its gradient with respect to `w`.
pub fn objective(
    models: AttackModels<'_>,
    w: &LatentVector,
    class: usize,
    loss_kind: LossKind,
    discriminator_weight: f64,
    pipeline: &TransformPipeline,
    rng: &mut RngStream,
) -> Result<Objective> {
    let x = models.prior.synthesize(w)?;
    let (t, trace) = pipeline.apply(&x, rng)?;
    let logits = LogitVector::new(models.target.forward(t.data())?)?;
    let target_score = softmax(&logits)?.values()[class];
    let out = loss_kind.evaluate(&logits, class)?;
    let mut loss = out.loss;
    let mut g_img = models.target.input_gradient(t.data(), &out.grad)?;
    if discriminator_weight > 0.0 {
        let disc = models
            .discriminator
            .ok_or_else(|| crate::Error::Contract("discriminator weight set without a discriminator".into()))?;
        let d = disc.forward(t.data())?[0];
        loss += discriminator_penalty(d, discriminator_weight)?;
        let dg = discriminator_penalty_grad(d, discriminator_weight)?;
        let g_d = disc.input_gradient(t.data(), &[dg])?;
        for (a, b) in g_img.iter_mut().zip(g_d) {
            *a += b;
        }
    }
    let g_x = trace.backward(&g_img);
    let grad = models.prior.synthesis_gradient(w, &g_x)?;
    Ok(Objective {
        loss,
        target_score,
        grad,
    })
}

fn optimize_one(
    models: AttackModels<'_>,
    class: usize,
    index: usize,
    start: &LatentVector,
    config: &AttackConfig,
    seed: u64,
) -> OptimizedCandidate {
    let mut rng = RngStream::new(seed, derive_stream_id(class, index, OPTIMIZE_STAGE));
    let mut w = start.clone();
    let mut state = AdamState::new(w.dim());
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let obj = objective(
            models,
            &w,
            class,
            config.loss,
            config.discriminator_weight,
            &config.optimization_transforms,
            &mut rng,
        );
        let obj = match obj {
            Ok(o) if o.loss.is_finite() && o.grad.iter().all(|g| g.is_finite()) => o,
            _ => {
                return OptimizedCandidate {
                    index,
                    latent: w,
                    trace,
                    failed: true,
                }
            }
        };
        trace.push(TraceStep {
            step,
            loss: obj.loss,
            target_score: obj.target_score,
            grad_norm: l2_norm(&obj.grad),
        });
        let mut next = w.values.clone();
        if adam_step(
            &mut next,
            &obj.grad,
            &mut state,
            config.learning_rate,
            config.adam_betas,
            config.adam_epsilon,
        )
        .is_err()
            || next.iter().any(|v| !v.is_finite())
        {
            return OptimizedCandidate {
                index,
                latent: w,
                trace,
                failed: true,
            };
        }
        w.values = next;
    }
    OptimizedCandidate {
        index,
        latent: w,
        trace,
        failed: false,
    }
}

/// Runs `config.steps` Adam steps on every candidate of one class pool.
///
/// Each candidate draws its transform randomness from its own stream, so the
/// result does not depend on scheduling.
pub fn optimize_candidates(
    pool: &ClassPool,
    models: AttackModels<'_>,
    config: &AttackConfig,
    seed: u64,
) -> Result<Vec<OptimizedCandidate>> {
    ensure!(!pool.entries.is_empty(), "class {} has no candidates", pool.class);
    let out = pool
        .entries
        .par_chunks(config.batch_size.max(1))
        .flat_map_iter(|chunk| {
            chunk
                .iter()
                .map(|e| optimize_one(models, pool.class, e.index, &e.latent, config, seed))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(out)
}
