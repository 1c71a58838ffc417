//! The attack pipeline: sample latents, pick initial candidates, optimize them
//! against the target model and keep the most transformation-robust results.

mod adam;
mod config;
mod optimize;
mod selection;

pub use adam::{adam_step, AdamState};
pub use config::AttackConfig;
pub use config::{TOY_FRAME_CROP, TOY_INPUT};
pub use optimize::{objective, optimize_candidates, AttackModels, Objective, OptimizedCandidate, TraceStep};
pub use selection::{
    class_scores, final_selection, flip_averaged_scores, initial_selection, random_selection,
    robust_score, select_from_scores, top_k, CandidatePool, ClassPool, PoolEntry,
};

use std::io::Write;

use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::rng::{derive_stream_id, stage_stream_id, RngStream};
use crate::tensor::{ImageTensor, LatentBatch, LatentVector};

pub const SAMPLE_STAGE: &str = "sample";
pub const RANDOM_INIT_STAGE: &str = "initial-random";
pub const SELECT_STAGE: &str = "select";

/// `count` i.i.d. standard-normal input latents.
pub fn sample_latents(count: usize, dim: usize, rng: &mut RngStream) -> Result<LatentBatch> {
    ensure!(count > 0 && dim > 0, "count and dim must be positive");
    Ok((0..count)
        .map(|_| LatentVector::input((0..dim).map(|_| rng.standard_normal()).collect()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    /// Position of the starting latent in the sampled batch.
    pub index: usize,
    pub latent: LatentVector,
    pub image: ImageTensor,
    pub initial_score: f64,
    /// Target score after the deterministic part of the optimization pipeline.
    pub plain_score: f64,
    /// Monte-Carlo mean score under the selection transforms; NaN if failed.
    pub robust_score: f64,
    pub selected: bool,
    pub failed: bool,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassResult {
    pub class: usize,
    pub candidates: Vec<CandidateResult>,
}

impl ClassResult {
    /// Selected candidates in descending robust-score order.
    pub fn selected(&self) -> Vec<&CandidateResult> {
        let mut sel: Vec<&CandidateResult> = self.candidates.iter().filter(|c| c.selected).collect();
        sel.sort_by(|a, b| b.robust_score.total_cmp(&a.robust_score).then(a.index.cmp(&b.index)));
        sel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub classes: Vec<ClassResult>,
    pub seed: u64,
    /// [`AttackConfig::fingerprint`] of the config that produced this result.
    pub config_hash: String,
}

impl AttackResult {
    pub fn class(&self, class: usize) -> Option<&ClassResult> {
        self.classes.iter().find(|c| c.class == class)
    }

    /// CSV with columns `class,candidate,step,loss,target_score,grad_norm`.
    pub fn write_traces_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "class,candidate,step,loss,target_score,grad_norm")?;
        for cr in &self.classes {
            for cand in &cr.candidates {
                for t in &cand.trace {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        cr.class, cand.index, t.step, t.loss, t.target_score, t.grad_norm
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn resolve_targets(config: &AttackConfig, num_classes: usize) -> Result<Vec<usize>> {
    if config.target_classes.is_empty() {
        return Ok((0..num_classes).collect());
    }
    ensure!(
        config.target_classes.iter().all(|&c| c < num_classes),
        "target classes {:?} out of range for {num_classes} classes",
        config.target_classes
    );
    Ok(config.target_classes.clone())
}

/// Samples, maps and scores the shared latent pool, then picks candidates.
pub fn build_candidate_pool(
    config: &AttackConfig,
    seed: u64,
    models: AttackModels<'_>,
    targets: &[usize],
) -> Result<(LatentBatch, CandidatePool)> {
    let mut rng = RngStream::new(seed, stage_stream_id(SAMPLE_STAGE));
    let z = sample_latents(config.sample_count, models.prior.z_dim(), &mut rng)
        .map_err(|e| e.in_stage("sample"))?;
    let w: LatentBatch = z
        .par_iter()
        .map(|z| {
            models
                .prior
                .map_latent(z, config.truncation_psi, config.truncation_cutoff)
        })
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("map"))?;
    let deterministic = config.optimization_transforms.without_random();
    let pool = (|| {
        let scores = flip_averaged_scores(models.prior, models.target, &deterministic, &w)?;
        if config.initial_selection {
            select_from_scores(&w, &scores, targets, config.candidates_per_class)
        } else {
            random_selection(&w, &scores, targets, config.candidates_per_class, |c| {
                RngStream::new(seed, derive_stream_id(c, 0, RANDOM_INIT_STAGE))
            })
        }
    })()
    .map_err(|e| e.in_stage("initial_selection"))?;
    Ok((w, pool))
}

fn finish_class(
    pool: &ClassPool,
    models: AttackModels<'_>,
    config: &AttackConfig,
    seed: u64,
) -> Result<ClassResult> {
    let class = pool.class;
    let optimized =
        optimize_candidates(pool, models, config, seed).map_err(|e| e.in_stage("optimize"))?;
    let deterministic = config.optimization_transforms.without_random();
    let mut candidates: Vec<CandidateResult> = optimized
        .into_par_iter()
        .zip(pool.entries.par_iter())
        .map(|(opt, entry)| -> Result<CandidateResult> {
            let image = models.prior.synthesize(&opt.latent)?;
            let (plain_score, robust) = if opt.failed {
                (f64::NAN, f64::NAN)
            } else {
                let plain = class_scores(models.target, &deterministic, &image)?[class];
                let mut rng = RngStream::new(seed, derive_stream_id(class, opt.index, SELECT_STAGE));
                let robust = robust_score(
                    &image,
                    class,
                    models.target,
                    &config.selection_transforms,
                    config.mc_samples,
                    &mut rng,
                )?;
                (plain, robust)
            };
            Ok(CandidateResult {
                index: opt.index,
                latent: opt.latent,
                image,
                initial_score: entry.initial_score,
                plain_score,
                robust_score: robust,
                selected: false,
                failed: opt.failed,
                trace: opt.trace,
            })
        })
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("robust_score"))?;

    let scores: Vec<Option<f64>> = candidates
        .iter()
        .map(|c| (!c.failed && c.robust_score.is_finite()).then_some(c.robust_score))
        .collect();
    let n_final = if config.final_selection {
        config.final_count
    } else {
        scores.iter().flatten().count()
    };
    let chosen = final_selection(&scores, n_final).map_err(|e| e.in_stage("final_selection"))?;
    for i in chosen {
        candidates[i].selected = true;
    }
    Ok(ClassResult { class, candidates })
}

/// Runs the full attack for every target class.
pub fn run_attack(config: &AttackConfig, seed: u64, models: AttackModels<'_>) -> Result<AttackResult> {
    let violations = config.violations("attack.");
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let targets = resolve_targets(config, models.target.num_classes())?;
    let (_, pool) = build_candidate_pool(config, seed, models, &targets)?;
    let classes = pool
        .classes
        .par_iter()
        .map(|p| finish_class(p, models, config, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttackResult {
        classes,
        seed,
        config_hash: config.fingerprint(seed),
    })
}
