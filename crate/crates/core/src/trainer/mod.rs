//! Sliding windows, the mini-batch training loop and checkpoints.

pub mod adam;
pub mod checkpoint;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, TrainMeta, CHECKPOINT_VERSION};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::network::{forward_batch, joint_loss, ModelConfig, ModelParams, Noise};
use crate::tensor::{Tape, Tensor, TensorError};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub stride: usize,
    /// Fraction of windows, taken from the end of the series, held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 64,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            stride: 1,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("train.epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("train.learning_rate must be > 0"));
        }
        if self.batch_size < 1 || self.stride < 1 {
            return Err(Error::config("train.batch_size and train.stride must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("train.adam_beta1 and train.adam_beta2 must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("train.adam_eps must be > 0"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("train.validation_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// One training example: `n` consecutive rows and the row that follows them.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: Tensor,
    pub target: Vec<f64>,
}

/// Slides a length-`n` window over `series` (`T x k`); the window starting at
/// `s` is paired with row `s + n`.
pub fn make_windows(series: &Tensor, n: usize, stride: usize) -> Result<Vec<Sample>> {
    let [t, k] = *series.shape() else {
        return Err(Error::data(format!("expected a T x k matrix, got {:?}", series.shape())));
    };
    if n == 0 || stride == 0 {
        return Err(Error::config("window length and stride must be >= 1"));
    }
    if t <= n {
        return Err(Error::data(format!(
            "series has {t} rows; at least {} are needed for one window of {n} plus a target",
            n + 1
        )));
    }
    let count = (t - n - 1) / stride + 1;
    let data = series.data();
    Ok((0..count)
        .map(|i| {
            let s = i * stride;
            Sample {
                window: Tensor::from_parts(vec![n, k], data[s * k..(s + n) * k].to_vec()),
                target: series.row(s + n).to_vec(),
            }
        })
        .collect())
}

/// Stacks samples into `[B, n, k]` windows and `[B, k]` targets.
pub fn stack(samples: &[&Sample]) -> (Tensor, Tensor) {
    let b = samples.len();
    let shape = samples[0].window.shape();
    let (n, k) = (shape[0], shape[1]);
    let mut x = Vec::with_capacity(b * n * k);
    let mut y = Vec::with_capacity(b * k);
    for s in samples {
        x.extend_from_slice(s.window.data());
        y.extend_from_slice(&s.target);
    }
    (Tensor::from_parts(vec![b, n, k], x), Tensor::from_parts(vec![b, k], y))
}

/// Mean train and validation loss of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when no validation windows were held out.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochLoss>,
    pub meta: TrainMeta,
}

fn numeric(epoch: usize, batch: usize, e: impl std::fmt::Display) -> Error {
    Error::Numeric(format!("training diverged at epoch {epoch}, batch {batch}: {e}"))
}

fn batch_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[&Sample],
    noise: &mut Noise<'_>,
    with_grad: bool,
) -> Result<(f64, Vec<Tensor>)> {
    let (x, y) = stack(batch);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, with_grad);
    let eps = noise.draw(&[batch.len(), cfg.latent]);
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let out = forward_batch(&mut tape, &vars, xv, cfg, &eps)?;
    let per_window = joint_loss(&mut tape, &out, xv, yv)?;
    let loss = tape.mean(per_window)?;
    let value = tape.value(loss).item();
    if !with_grad {
        return Ok((value, Vec::new()));
    }
    tape.backward(loss)?;
    let grads = vars
        .all
        .iter()
        .map(|&v| tape.take_grad(v).ok_or(TensorError::UnknownVar(v.index())))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((value, grads))
}

/// Mean per-window joint loss over `samples` with the latent noise at zero.
pub fn evaluate_loss(params: &ModelParams, cfg: &ModelConfig, samples: &[Sample], batch_size: usize) -> Result<f64> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(batch_size.max(1)) {
        let (l, _) = batch_loss(params, cfg, chunk, &mut Noise::Zero, false)?;
        total += l * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains a freshly initialised model on a cleaned, normalised `T x k` series.
///
/// `on_epoch` is called after every epoch. Initialisation, shuffling and the
/// latent noise all draw from one generator seeded by `train.seed`, so the
/// result is a pure function of the inputs.
pub fn train(
    series: &Tensor,
    model: &ModelConfig,
    train: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    model.validate()?;
    train.validate()?;
    if series.shape().get(1) != Some(&model.features) {
        return Err(Error::config(format!(
            "model expects {} features, training data has shape {:?}",
            model.features,
            series.shape()
        )));
    }
    let samples = make_windows(series, model.window, train.stride)?;
    let n_val = (samples.len() as f64 * train.validation_fraction).floor() as usize;
    let (fit, val) = samples.split_at(samples.len() - n_val);
    if fit.is_empty() {
        return Err(Error::data("no training windows left after the validation split"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut params = ModelParams::init(model, &mut rng);
    let mut adam = AdamState::new(params.tensors());
    let adam_cfg = train.adam();
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut history = Vec::with_capacity(train.epochs);

    for epoch in 1..=train.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(train.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &fit[i]).collect();
            let (loss, grads) = batch_loss(&params, model, &batch, &mut Noise::Sample(&mut rng), true)
                .map_err(|e| numeric(epoch, b + 1, e))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(numeric(epoch, b + 1, "non-finite loss or gradient"));
            }
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            adam_step(&mut params.tensors_mut(), &grad_refs, &mut adam, &adam_cfg)?;
            total += loss * batch.len() as f64;
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(&params, model, val, train.batch_size).map_err(|e| numeric(epoch, 0, e))?)
        };
        let record = EpochLoss {
            epoch,
            train_loss: total / fit.len() as f64,
            val_loss,
        };
        on_epoch(&record);
        history.push(record);
    }

    let last = history.last().expect("at least one epoch");
    let meta = TrainMeta {
        epoch: last.epoch,
        final_loss: last.train_loss,
        seed: train.seed,
    };
    Ok(TrainOutcome { params, history, meta })
}
