//! Per-timestamp inference scores and alarm thresholds.
//!
//! Timestamp `u >= n` is scored from the window of rows `[u - n, u)`: the
//! forecast is compared with row `u`, and the reconstruction probability is
//! taken at the window's last row. Per feature
//!
//! ```text
//! s_i = ((x̂_i - x_i)^2 + γ (1 - p_i)) / (1 + γ)
//! ```
//!
//! and the timestamp's score is `Σ_i s_i`. With the forecasting head ablated
//! `s_i = 1 - p_i`; with the reconstruction head ablated `s_i = (x̂_i - x_i)^2`.

pub mod pot;

pub use pot::{fit_gpd, pot_fit, quantile, GpdFit, PotConfig, PotModel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::network::{decode, forward_batch, gaussian_kernel, ModelConfig, ModelParams, Noise};
use crate::tensor::{Tape, Tensor};
use crate::trainer::Checkpoint;
use crate::{Error, Result};

/// Per-feature blend of forecast error and reconstruction improbability.
pub fn feature_score(sq_error: f64, prob: f64, gamma: f64, cfg: &ModelConfig) -> f64 {
    match (cfg.use_forecast, cfg.use_reconstruction) {
        (true, true) => (sq_error + gamma * (1.0 - prob)) / (1.0 + gamma),
        (true, false) => sq_error,
        _ => 1.0 - prob,
    }
}

/// Scores of one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub timestamp: usize,
    pub total: f64,
    /// `s_i` per feature.
    pub scores: Vec<f64>,
    /// `(x̂_i - x_i)^2`, zero when the forecasting head is disabled.
    pub sq_error: Vec<f64>,
    /// `p_i`, one when the reconstruction head is disabled.
    pub prob: Vec<f64>,
}

/// Attention matrices of the window ending just before `timestamp`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSnapshot {
    pub timestamp: usize,
    pub feature: Option<Tensor>,
    pub time: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    /// Number of unscored leading timestamps (the window length `n`).
    pub offset: usize,
    /// Length of the scored stream, including the unscored head.
    pub len: usize,
    pub rows: Vec<ScoreRow>,
    pub attention: Vec<AttentionSnapshot>,
}

impl ScoreSeries {
    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.total).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOptions {
    pub gamma: f64,
    /// Seeds the decoder sampling noise.
    pub seed: u64,
    pub batch_size: usize,
    /// Timestamps whose attention matrices are kept.
    pub attention_at: Vec<usize>,
}

impl ScoreOptions {
    pub fn new(gamma: f64, seed: u64) -> Self {
        Self {
            gamma,
            seed,
            batch_size: 64,
            attention_at: Vec::new(),
        }
    }
}

/// Scores every timestamp `u >= n` of a normalised `T x k` stream.
pub fn score_stream(test: &Tensor, ckpt: &Checkpoint, opts: &ScoreOptions) -> Result<ScoreSeries> {
    score_with(test, &ckpt.params, &ckpt.model, opts)
}

/// [`score_stream`] on bare parameters.
pub fn score_with(test: &Tensor, params: &ModelParams, cfg: &ModelConfig, opts: &ScoreOptions) -> Result<ScoreSeries> {
    if !(opts.gamma >= 0.0) || !opts.gamma.is_finite() {
        return Err(Error::config(format!("gamma must be a finite value >= 0, got {}", opts.gamma)));
    }
    if opts.batch_size == 0 {
        return Err(Error::config("scoring batch size must be >= 1"));
    }
    let [t, k] = *test.shape() else {
        return Err(Error::data(format!("expected a T x k matrix, got {:?}", test.shape())));
    };
    if k != cfg.features {
        return Err(Error::config(format!(
            "model was trained on {} features, the stream has {k}",
            cfg.features
        )));
    }
    let n = cfg.window;
    if t <= n {
        return Err(Error::data(format!("stream has {t} rows; more than the window length {n} are needed")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let samples = cfg.vae_samples_infer.max(1);
    let data = test.data();
    let timestamps: Vec<usize> = (n..t).collect();
    let mut rows = Vec::with_capacity(timestamps.len());
    let mut attention = Vec::new();

    for chunk in timestamps.chunks(opts.batch_size) {
        let b = chunk.len();
        let mut x = Vec::with_capacity(b * n * k);
        for &u in chunk {
            x.extend_from_slice(&data[(u - n) * k..u * k]);
        }
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, false);
        let xv = tape.constant(Tensor::from_parts(vec![b, n, k], x));
        let mut noise = Noise::Sample(&mut rng);
        let eps = noise.draw(&[b, cfg.latent]);
        let out = forward_batch(&mut tape, &vars, xv, cfg, &eps)?;

        let mut prob = vec![vec![0.0; k]; b];
        if let Some(vae) = out.vae {
            let mut accumulate = |tape: &Tape, mu: crate::tensor::Var, sigma: crate::tensor::Var| {
                let (mu, sigma) = (tape.value(mu).data(), tape.value(sigma).data());
                for (j, &u) in chunk.iter().enumerate() {
                    let last = (j * n + n - 1) * k;
                    for i in 0..k {
                        prob[j][i] += gaussian_kernel(data[(u - 1) * k + i], mu[last + i], sigma[last + i]);
                    }
                }
            };
            accumulate(&tape, vae.mu_x, vae.sigma_x);
            for _ in 1..samples {
                let e = tape.constant(noise.draw(&[b, cfg.latent]));
                let spread = tape.mul(vae.sigma_z, e)?;
                let z = tape.add(vae.mu_z, spread)?;
                let (mu, sigma) = decode(&mut tape, &vars, z, cfg)?;
                accumulate(&tape, mu, sigma);
            }
            for p in prob.iter_mut().flatten() {
                *p /= samples as f64;
            }
        } else {
            prob.iter_mut().flatten().for_each(|p| *p = 1.0);
        }

        let forecast = out.forecast.map(|f| tape.value(f).data().to_vec());
        for (j, &u) in chunk.iter().enumerate() {
            let actual = &data[u * k..(u + 1) * k];
            let sq_error: Vec<f64> = match &forecast {
                Some(f) => (0..k).map(|i| (f[j * k + i] - actual[i]).powi(2)).collect(),
                None => vec![0.0; k],
            };
            let scores: Vec<f64> = (0..k)
                .map(|i| feature_score(sq_error[i], prob[j][i], opts.gamma, cfg))
                .collect();
            rows.push(ScoreRow {
                timestamp: u,
                total: scores.iter().sum(),
                scores,
                sq_error,
                prob: std::mem::take(&mut prob[j]),
            });
            if opts.attention_at.contains(&u) {
                let take = |v: Option<crate::tensor::Var>, side: usize| {
                    v.map(|a| {
                        let sz = side * side;
                        Tensor::from_parts(vec![side, side], tape.value(a).data()[j * sz..(j + 1) * sz].to_vec())
                    })
                };
                attention.push(AttentionSnapshot {
                    timestamp: u,
                    feature: take(out.feature_attention, k),
                    time: take(out.time_attention, n),
                });
            }
        }
        if rows.last().is_some_and(|r| !r.total.is_finite()) {
            return Err(Error::Numeric(format!("non-finite score near timestamp {}", chunk[0])));
        }
    }
    Ok(ScoreSeries {
        offset: n,
        len: t,
        rows,
        attention,
    })
}

/// Alarm flags for every timestamp of the stream: `total > threshold`, with the
/// unscored head left false.
pub fn detect(series: &ScoreSeries, threshold: f64) -> Vec<bool> {
    let mut flags = vec![false; series.len];
    for r in &series.rows {
        flags[r.timestamp] = r.total > threshold;
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full() -> ModelConfig {
        ModelConfig::default()
    }

    #[test]
    fn blend_cases() {
        let cfg = full();
        assert_eq!(feature_score(0.0, 1.0, 0.8, &cfg), 0.0);
        assert!((feature_score(1.0, 1.0, 0.8, &cfg) - 1.0 / 1.8).abs() < 1e-15);
        assert!((feature_score(0.0, 0.0, 0.8, &cfg) - 0.8 / 1.8).abs() < 1e-15);
        assert_eq!(feature_score(0.37, 0.2, 0.0, &cfg), 0.37);
        assert!((feature_score(0.01, 0.3, 1e6, &cfg) - 0.7).abs() < 1e-5);
    }

    #[test]
    fn ablated_heads_score_with_the_remaining_term() {
        let no_rec = ModelConfig {
            use_reconstruction: false,
            ..full()
        };
        let no_for = ModelConfig {
            use_forecast: false,
            ..full()
        };
        assert_eq!(feature_score(0.4, 0.1, 0.8, &no_rec), 0.4);
        assert_eq!(feature_score(0.4, 0.25, 0.8, &no_for), 0.75);
    }

    fn series(totals: &[f64], offset: usize) -> ScoreSeries {
        ScoreSeries {
            offset,
            len: offset + totals.len(),
            rows: totals
                .iter()
                .enumerate()
                .map(|(i, &t)| ScoreRow {
                    timestamp: offset + i,
                    total: t,
                    scores: vec![t],
                    sq_error: vec![t],
                    prob: vec![1.0],
                })
                .collect(),
            attention: Vec::new(),
        }
    }

    #[test]
    fn detect_is_strict_and_skips_the_head() {
        let s = series(&[0.5, 1.0, 1.5], 2);
        assert_eq!(detect(&s, 1.0), vec![false, false, false, false, true]);
        assert_eq!(detect(&s, f64::INFINITY), vec![false; 5]);
        assert_eq!(detect(&s, f64::NEG_INFINITY), vec![false, false, true, true, true]);
    }
}
