//! Initial candidate selection, Monte-Carlo robust scores and final selection.

use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::losses::softmax;
use crate::models::{ImageClassifier, ImagePrior, LogitVector};
use crate::rng::RngStream;
use crate::tensor::{ImageTensor, LatentVector};
use crate::transforms::{hflip, TransformPipeline};

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    /// Position of the latent in the sampled batch.
    pub index: usize,
    pub latent: LatentVector,
    pub initial_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPool {
    pub class: usize,
    pub entries: Vec<PoolEntry>,
}

/// Candidates chosen for optimization, per target class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidatePool {
    pub classes: Vec<ClassPool>,
}

impl CandidatePool {
    pub fn class(&self, class: usize) -> Option<&ClassPool> {
        self.classes.iter().find(|p| p.class == class)
    }
}

/// All-class prediction scores of an image after a deterministic pipeline.
pub fn class_scores(
    target: &dyn ImageClassifier,
    pipeline: &TransformPipeline,
    x: &ImageTensor,
) -> Result<Vec<f64>> {
    let mut rng = RngStream::new(0, 0);
    let (t, _) = pipeline.apply(x, &mut rng)?;
    let logits = LogitVector::new(target.forward(t.data())?)?;
    Ok(softmax(&logits)?.values().to_vec())
}

/// Mean score vector of `T(x)` and `hflip(T(x))` for each latent.
pub fn flip_averaged_scores(
    prior: &dyn ImagePrior,
    target: &dyn ImageClassifier,
    pipeline: &TransformPipeline,
    w_batch: &[LatentVector],
) -> Result<Vec<Vec<f64>>> {
    ensure!(
        pipeline.is_deterministic(),
        "initial selection requires a deterministic pipeline"
    );
    w_batch
        .par_iter()
        .map(|w| {
            let x = prior.synthesize(w)?;
            let (t, _) = pipeline.apply(&x, &mut RngStream::new(0, 0))?;
            let plain = softmax(&LogitVector::new(target.forward(t.data())?)?)?;
            let flipped = softmax(&LogitVector::new(target.forward(hflip(&t).data())?)?)?;
            Ok(plain
                .values()
                .iter()
                .zip(flipped.values())
                .map(|(a, b)| 0.5 * (a + b))
                .collect())
        })
        .collect()
}

/// Indices of the `k` largest values, descending, ties by lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Per class, keeps the `k_init` latents with the highest score in `scores`
/// (`scores[latent][class]`).
pub fn select_from_scores(
    w_batch: &[LatentVector],
    scores: &[Vec<f64>],
    targets: &[usize],
    k_init: usize,
) -> Result<CandidatePool> {
    ensure!(
        k_init <= w_batch.len(),
        "k_init {k_init} exceeds batch size {}",
        w_batch.len()
    );
    ensure!(scores.len() == w_batch.len(), "one score vector per latent required");
    let classes = targets
        .iter()
        .map(|&c| {
            let column: Vec<f64> = scores.iter().map(|s| s[c]).collect();
            let entries = top_k(&column, k_init)
                .into_iter()
                .map(|i| PoolEntry {
                    index: i,
                    latent: w_batch[i].clone(),
                    initial_score: column[i],
                })
                .collect();
            ClassPool { class: c, entries }
        })
        .collect();
    Ok(CandidatePool { classes })
}

pub fn initial_selection(
    prior: &dyn ImagePrior,
    w_batch: &[LatentVector],
    targets: &[usize],
    k_init: usize,
    pipeline: &TransformPipeline,
    target: &dyn ImageClassifier,
) -> Result<CandidatePool> {
    ensure!(
        k_init <= w_batch.len(),
        "k_init {k_init} exceeds batch size {}",
        w_batch.len()
    );
    ensure!(
        targets.iter().all(|&c| c < target.num_classes()),
        "target class out of range for {} classes",
        target.num_classes()
    );
    let scores = flip_averaged_scores(prior, target, pipeline, w_batch)?;
    select_from_scores(w_batch, &scores, targets, k_init)
}

/// `k_init` distinct latents drawn uniformly per class, ignoring scores.
pub fn random_selection(
    w_batch: &[LatentVector],
    scores: &[Vec<f64>],
    targets: &[usize],
    k_init: usize,
    rng_for_class: impl Fn(usize) -> RngStream,
) -> Result<CandidatePool> {
    ensure!(
        k_init <= w_batch.len(),
        "k_init {k_init} exceeds batch size {}",
        w_batch.len()
    );
    let classes = targets
        .iter()
        .map(|&c| {
            let mut rng = rng_for_class(c);
            let mut idx: Vec<usize> = (0..w_batch.len()).collect();
            for i in 0..k_init {
                let j = i + rng.index_inclusive(idx.len() - 1 - i);
                idx.swap(i, j);
            }
            let entries = idx[..k_init]
                .iter()
                .map(|&i| PoolEntry {
                    index: i,
                    latent: w_batch[i].clone(),
                    initial_score: scores[i][c],
                })
                .collect();
            ClassPool { class: c, entries }
        })
        .collect();
    Ok(CandidatePool { classes })
}

/// Mean class score over `n` independently transformed copies of `x`.
pub fn robust_score(
    x: &ImageTensor,
    class: usize,
    target: &dyn ImageClassifier,
    pipeline: &TransformPipeline,
    n: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    ensure!(n >= 1, "robust score needs at least one sample");
    ensure!(class < target.num_classes(), "class {class} out of range");
    let mut total = 0.0;
    for _ in 0..n {
        let (t, _) = pipeline.apply(x, rng)?;
        let logits = LogitVector::new(target.forward(t.data())?)?;
        total += softmax(&logits)?.values()[class];
    }
    Ok(total / n as f64)
}

/// Positions of the `n_final` best robust scores; `None` marks failed
/// candidates, which are never selected.
pub fn final_selection(robust_scores: &[Option<f64>], n_final: usize) -> Result<Vec<usize>> {
    let valid: Vec<usize> = (0..robust_scores.len())
        .filter(|&i| robust_scores[i].is_some())
        .collect();
    if valid.len() < n_final {
        return Err(Error::contract(format!(
            "final selection needs {n_final} candidates but only {} are usable (short by {})",
            valid.len(),
            n_final - valid.len()
        )));
    }
    let mut order = valid;
    order.sort_by(|&a, &b| {
        let (sa, sb) = (robust_scores[a].unwrap(), robust_scores[b].unwrap());
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    order.truncate(n_final);
    Ok(order)
}
