use crate::error::{ensure, Result};

/// Adam moment accumulators for one latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `w` in place.
pub fn adam_step(
    w: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: [f64; 2],
    eps: f64,
) -> Result<()> {
    ensure!(
        w.len() == grad.len() && w.len() == state.first_moment.len(),
        "adam shapes disagree: w={}, grad={}, state={}",
        w.len(),
        grad.len(),
        state.first_moment.len()
    );
    state.step += 1;
    let [b1, b2] = betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((wi, &g), m), v) in w
        .iter_mut()
        .zip(grad)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *wi -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
