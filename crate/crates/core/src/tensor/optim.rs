use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

/// Adaptive-moment (Adam) optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(TensorError::InvalidSpec(format!(
                "adam betas must lie in [0, 1), got {beta1} and {beta2}"
            )));
        }
        Ok(Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self::new(learning_rate, 0.9, 0.999, 1e-8).expect("default betas are valid")
    }

    fn ensure_moments(&mut self, sizes: &[usize]) -> Result<()> {
        if self.first_moment.is_empty() {
            self.first_moment = sizes.iter().map(|&n| vec![0.0; n]).collect();
            self.second_moment = self.first_moment.clone();
            return Ok(());
        }
        let known: Vec<usize> = self.first_moment.iter().map(Vec::len).collect();
        if known != sizes {
            return Err(TensorError::Dimension(format!(
                "optimizer tracks tensors of sizes {known:?}, got {sizes:?}"
            )));
        }
        Ok(())
    }

    /// Applies one update to `params` using the gradient buffers they carry.
    /// Tensors without a gradient are treated as having a zero gradient.
    pub fn update(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        let grads: Vec<Vec<f64>> = params
            .iter()
            .map(|p| p.grad().map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
            .collect();
        let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        adam_step(params, &refs, self)
    }
}

/// Bias-corrected Adam update of `params` with explicit gradients.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&[f64]],
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(TensorError::Dimension(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(TensorError::Dimension(format!(
                "parameter of {} values paired with gradient of {}",
                p.len(),
                g.len()
            )));
        }
    }
    let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
    state.ensure_moments(&sizes)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);
    for (i, p) in params.iter_mut().enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for ((w, &gi), (mi, vi)) in p
            .data_mut()
            .iter_mut()
            .zip(grads[i])
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
