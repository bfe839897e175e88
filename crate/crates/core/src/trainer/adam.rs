use crate::tensor::{Tensor, TensorError};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }
}

fn drift(index: usize, expected: usize, found: usize) -> TensorError {
    TensorError::Dimension {
        op: "adam_step",
        left: vec![index, expected],
        right: vec![index, found],
    }
}

/// One bias-corrected Adam update of every parameter in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(drift(usize::MAX, state.m.len(), params.len().max(grads.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(TensorError::Dimension {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if state.m[i].len() != p.len() {
            return Err(drift(i, state.m[i].len(), p.len()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((theta, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
