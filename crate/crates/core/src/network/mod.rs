//! Forward pass and losses.
//!
//! ```text
//! x [n,k] -> conv1d(7) -> c [n,k]
//!   c -> feature GAT (k nodes of dim n) -> f [n,k]
//!   c -> time GAT    (n nodes of dim k) -> t [n,k]
//! [c | f | t] [n,3k] -> GRU(d1), last hidden state h
//!   h -> FC(d2) -> FC(d2) -> FC(k)                 forecast of the next row
//!   h -> (mu_z, log sigma_z) -> z -> decoder(d2)   Gaussian over the window
//! ```
//!
//! The batched variants take `[B, n, k]` inputs and are what training and
//! scoring run; the single-window helpers wrap them with `B = 1`.

pub mod gru;
mod params;

pub use params::{
    GruParams, GruVars, Linear, LinearVars, ModelConfig, ModelParams, ParamVars, CONV_WIDTH, PARAM_NAMES,
};

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::gat::gat_layer;
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::{Error, Result};

type TResult<T> = std::result::Result<T, TensorError>;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Source of the VAE reparameterisation noise.
pub enum Noise<'a> {
    /// `ε = 0`: the latent code is the posterior mean.
    Zero,
    Sample(&'a mut dyn RngCore),
}

impl Noise<'_> {
    pub fn draw(&mut self, shape: &[usize]) -> Tensor {
        match self {
            Noise::Zero => Tensor::zeros(shape),
            Noise::Sample(rng) => {
                let numel = shape.iter().product();
                let data = (0..numel).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                Tensor::from_parts(shape.to_vec(), data)
            }
        }
    }
}

/// Tape handles of the VAE branch.
#[derive(Debug, Clone, Copy)]
pub struct VaeVars {
    pub mu_z: Var,
    pub log_sigma_z: Var,
    pub sigma_z: Var,
    pub z: Var,
    /// Decoder mean `[B, n, k]`.
    pub mu_x: Var,
    /// Decoder standard deviation `[B, n, k]`, floored.
    pub sigma_x: Var,
}

/// Tape handles produced by [`forward_batch`].
#[derive(Debug, Clone, Copy)]
pub struct BatchForward {
    pub conv: Var,
    pub fused: Var,
    pub feature_attention: Option<Var>,
    pub time_attention: Option<Var>,
    pub hidden: Var,
    /// `[B, k]`, absent when the forecasting head is disabled.
    pub forecast: Option<Var>,
    /// Absent when the reconstruction head is disabled.
    pub vae: Option<VaeVars>,
}

fn linear(tape: &mut Tape, x: Var, l: &LinearVars) -> TResult<Var> {
    let y = tape.matmul(x, l.weight)?;
    tape.add_bias(y, l.bias)
}

/// Checks that `x` is `[B, n, k]` for this config.
pub fn check_input(shape: &[usize], cfg: &ModelConfig) -> Result<()> {
    match *shape {
        [_, n, k] if n == cfg.window && k == cfg.features => Ok(()),
        _ => Err(Error::config(format!(
            "model expects windows of {} x {}, got input shape {shape:?}",
            cfg.window, cfg.features
        ))),
    }
}

/// Records the full forward pass for a batch `x` of shape `[B, n, k]`.
///
/// `eps` (`[B, d3]`) is the reparameterisation noise for the single latent
/// sample. Disabled GAT layers are replaced by the convolution output so the
/// fused width stays `3k`.
pub fn forward_batch(tape: &mut Tape, p: &ParamVars, x: Var, cfg: &ModelConfig, eps: &Tensor) -> Result<BatchForward> {
    check_input(tape.shape(x), cfg)?;
    let batch = tape.shape(x)[0];
    let conv = tape.conv1d(x, p.conv_kernel, p.conv_bias)?;

    let (feature, feature_attention) = if cfg.use_feature_gat {
        let nodes = tape.transpose(conv)?;
        let (h, alpha) = gat_layer(tape, nodes, p.feature_gat)?;
        (tape.transpose(h)?, Some(alpha))
    } else {
        (conv, None)
    };
    let (temporal, time_attention) = if cfg.use_time_gat {
        let (h, alpha) = gat_layer(tape, conv, p.time_gat)?;
        (h, Some(alpha))
    } else {
        (conv, None)
    };
    let fused = tape.concat(&[conv, feature, temporal])?;
    let hidden = gru::gru_scan(tape, fused, &p.gru)?;

    let forecast = if cfg.use_forecast {
        let a = linear(tape, hidden, &p.forecast[0])?;
        let a = tape.relu(a)?;
        let a = linear(tape, a, &p.forecast[1])?;
        let a = tape.relu(a)?;
        Some(linear(tape, a, &p.forecast[2])?)
    } else {
        None
    };

    let vae = if cfg.use_reconstruction {
        if eps.shape() != [batch, cfg.latent] {
            return Err(Error::config(format!(
                "noise must be [{batch}, {}], got {:?}",
                cfg.latent,
                eps.shape()
            )));
        }
        let mu_z = linear(tape, hidden, &p.enc_mu)?;
        let log_sigma_z = linear(tape, hidden, &p.enc_log_sigma)?;
        let sigma_z = tape.exp(log_sigma_z)?;
        let e = tape.constant(eps.clone());
        let spread = tape.mul(sigma_z, e)?;
        let z = tape.add(mu_z, spread)?;
        let (mu_x, sigma_x) = decode(tape, p, z, cfg)?;
        Some(VaeVars {
            mu_z,
            log_sigma_z,
            sigma_z,
            z,
            mu_x,
            sigma_x,
        })
    } else {
        None
    };

    Ok(BatchForward {
        conv,
        fused,
        feature_attention,
        time_attention,
        hidden,
        forecast,
        vae,
    })
}

/// Decoder `z [B, d3] -> (mu_x, sigma_x)`, both `[B, n, k]`.
pub fn decode(tape: &mut Tape, p: &ParamVars, z: Var, cfg: &ModelConfig) -> TResult<(Var, Var)> {
    let batch = tape.shape(z)[0];
    let shape = [batch, cfg.window, cfg.features];
    let hid = linear(tape, z, &p.dec_hidden)?;
    let hid = tape.relu(hid)?;
    let mu = linear(tape, hid, &p.dec_mu)?;
    let mu = tape.reshape(mu, &shape)?;
    let log_sigma = linear(tape, hid, &p.dec_log_sigma)?;
    let sigma = tape.exp(log_sigma)?;
    let sigma = tape.clamp_min(sigma, cfg.recon_sigma_floor)?;
    let sigma = tape.reshape(sigma, &shape)?;
    Ok((mu, sigma))
}

/// Per-window `sqrt(Σ_i (x_i - x̂_i)^2)`, shape `[B]`.
pub fn forecast_loss(tape: &mut Tape, forecast: Var, target: Var) -> TResult<Var> {
    let diff = tape.sub(target, forecast)?;
    let sq = tape.square(diff)?;
    let total = tape.sum_per_batch(sq)?;
    tape.sqrt(total)
}

/// Per-window Gaussian negative log-likelihood of `x` under the decoder.
pub fn gaussian_nll(tape: &mut Tape, mu_x: Var, sigma_x: Var, x: Var) -> TResult<Var> {
    let diff = tape.sub(x, mu_x)?;
    let std = tape.div(diff, sigma_x)?;
    let quad = tape.square(std)?;
    let quad = tape.scale(quad, 0.5)?;
    let log_sigma = tape.log(sigma_x)?;
    let terms = tape.add(quad, log_sigma)?;
    let terms = tape.add_scalar(terms, HALF_LN_2PI)?;
    tape.sum_per_batch(terms)
}

/// Per-window `KL(N(mu, sigma^2) || N(0, I))` in closed form.
pub fn kl_standard_normal(tape: &mut Tape, mu_z: Var, log_sigma_z: Var, sigma_z: Var) -> TResult<Var> {
    let mu2 = tape.square(mu_z)?;
    let s2 = tape.square(sigma_z)?;
    let t = tape.add(mu2, s2)?;
    let t = tape.add_scalar(t, -1.0)?;
    let two_log = tape.scale(log_sigma_z, 2.0)?;
    let t = tape.sub(t, two_log)?;
    let t = tape.sum_per_batch(t)?;
    tape.scale(t, 0.5)
}

/// Per-window VAE loss: negative log-likelihood plus KL regulariser.
pub fn reconstruction_loss(tape: &mut Tape, vae: &VaeVars, x: Var) -> TResult<Var> {
    let nll = gaussian_nll(tape, vae.mu_x, vae.sigma_x, x)?;
    let kl = kl_standard_normal(tape, vae.mu_z, vae.log_sigma_z, vae.sigma_z)?;
    tape.add(nll, kl)
}

/// Per-window joint loss `Loss_for + Loss_rec`, dropping disabled heads.
pub fn joint_loss(tape: &mut Tape, out: &BatchForward, x: Var, target: Var) -> Result<Var> {
    let forecast = out.forecast.map(|f| forecast_loss(tape, f, target)).transpose()?;
    let recon = out.vae.map(|v| reconstruction_loss(tape, &v, x)).transpose()?;
    Ok(match (forecast, recon) {
        (Some(f), Some(r)) => tape.add(f, r)?,
        (Some(f), None) => f,
        (None, Some(r)) => r,
        (None, None) => return Err(Error::config("both heads are disabled")),
    })
}

/// One decoder sample over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderSample {
    pub mu_x: Tensor,
    pub sigma_x: Tensor,
}

/// Reconstruction branch of a single-window forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub mu_z: Tensor,
    pub log_sigma_z: Tensor,
    pub sigma_z: Tensor,
    pub samples: Vec<DecoderSample>,
}

/// Plain-tensor result of [`forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Next-row forecast `[k]`.
    pub forecast: Option<Tensor>,
    pub reconstruction: Option<Reconstruction>,
    /// `[k, k]`
    pub feature_attention: Option<Tensor>,
    /// `[n, n]`
    pub time_attention: Option<Tensor>,
    /// `[n, 3k]`
    pub fused: Tensor,
}

fn squeeze(t: &Tensor) -> Tensor {
    Tensor::from_parts(t.shape()[1..].to_vec(), t.data().to_vec())
}

/// Single-window forward pass on an `n x k` window with `samples` decoder
/// draws (each with fresh noise).
pub fn forward(x: &Tensor, params: &ModelParams, cfg: &ModelConfig, mut noise: Noise<'_>, samples: usize) -> Result<ForwardOutput> {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let xv = tape.constant(x.reshaped(&shape)?);
    let eps = noise.draw(&[1, cfg.latent]);
    let out = forward_batch(&mut tape, &vars, xv, cfg, &eps)?;
    let reconstruction = match out.vae {
        None => None,
        Some(v) => {
            let mut draws = vec![DecoderSample {
                mu_x: squeeze(tape.value(v.mu_x)),
                sigma_x: squeeze(tape.value(v.sigma_x)),
            }];
            for _ in 1..samples.max(1) {
                let e = tape.constant(noise.draw(&[1, cfg.latent]));
                let spread = tape.mul(v.sigma_z, e)?;
                let z = tape.add(v.mu_z, spread)?;
                let (mu, sigma) = decode(&mut tape, &vars, z, cfg)?;
                draws.push(DecoderSample {
                    mu_x: squeeze(tape.value(mu)),
                    sigma_x: squeeze(tape.value(sigma)),
                });
            }
            Some(Reconstruction {
                mu_z: squeeze(tape.value(v.mu_z)),
                log_sigma_z: squeeze(tape.value(v.log_sigma_z)),
                sigma_z: squeeze(tape.value(v.sigma_z)),
                samples: draws,
            })
        }
    };
    Ok(ForwardOutput {
        forecast: out.forecast.map(|f| squeeze(tape.value(f))),
        reconstruction,
        feature_attention: out.feature_attention.map(|a| squeeze(tape.value(a))),
        time_attention: out.time_attention.map(|a| squeeze(tape.value(a))),
        fused: squeeze(tape.value(out.fused)),
    })
}

fn batch1(tape: &mut Tape, t: &Tensor) -> Result<Var> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    Ok(tape.constant(t.reshaped(&shape)?))
}

/// `sqrt(Σ_i (x_i - x̂_i)^2)` for one forecast.
pub fn loss_forecast(forecast: &[f64], actual: &[f64]) -> Result<f64> {
    if forecast.len() != actual.len() || forecast.is_empty() {
        return Err(TensorError::Dimension {
            op: "loss_forecast",
            left: vec![forecast.len()],
            right: vec![actual.len()],
        }
        .into());
    }
    let mut tape = Tape::new();
    let f = batch1(&mut tape, &Tensor::from_vec(forecast.to_vec()))?;
    let a = batch1(&mut tape, &Tensor::from_vec(actual.to_vec()))?;
    let l = forecast_loss(&mut tape, f, a)?;
    Ok(tape.value(l).item())
}

fn recon_on_tape(tape: &mut Tape, r: &Reconstruction, x: &Tensor) -> Result<Var> {
    let s = &r.samples[0];
    let vae = VaeVars {
        mu_z: batch1(tape, &r.mu_z)?,
        log_sigma_z: batch1(tape, &r.log_sigma_z)?,
        sigma_z: batch1(tape, &r.sigma_z)?,
        z: batch1(tape, &r.mu_z)?,
        mu_x: batch1(tape, &s.mu_x)?,
        sigma_x: batch1(tape, &s.sigma_x)?,
    };
    let xv = batch1(tape, x)?;
    Ok(reconstruction_loss(tape, &vae, xv)?)
}

/// Closed-form `KL(N(mu, sigma^2) || N(0, I))`.
pub fn kl_divergence(mu_z: &[f64], sigma_z: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let mu = batch1(&mut tape, &Tensor::from_vec(mu_z.to_vec()))?;
    let sigma = Tensor::from_vec(sigma_z.to_vec());
    let log_sigma = Tensor::from_vec(sigma_z.iter().map(|s| s.ln()).collect());
    let ls = batch1(&mut tape, &log_sigma)?;
    let s = batch1(&mut tape, &sigma)?;
    let kl = kl_standard_normal(&mut tape, mu, ls, s)?;
    Ok(tape.value(kl).item())
}

/// Single-sample VAE loss of a forward output against the window `x`.
pub fn loss_reconstruction(out: &ForwardOutput, x: &Tensor) -> Result<f64> {
    let r = out
        .reconstruction
        .as_ref()
        .ok_or_else(|| Error::config("reconstruction head is disabled"))?;
    let mut tape = Tape::new();
    let l = recon_on_tape(&mut tape, r, x)?;
    Ok(tape.value(l).item())
}

/// `Loss_for + Loss_rec` for one window, honouring the ablation flags.
pub fn loss_joint(out: &ForwardOutput, x: &Tensor, target: &[f64], cfg: &ModelConfig) -> Result<f64> {
    let forecast = if cfg.use_forecast {
        let f = out.forecast.as_ref().ok_or_else(|| Error::config("forecast head missing"))?;
        Some(loss_forecast(f.data(), target)?)
    } else {
        None
    };
    let recon = if cfg.use_reconstruction {
        Some(loss_reconstruction(out, x)?)
    } else {
        None
    };
    match (forecast, recon) {
        (Some(f), Some(r)) => Ok(f + r),
        (Some(f), None) => Ok(f),
        (None, Some(r)) => Ok(r),
        (None, None) => Err(Error::config("both heads are disabled")),
    }
}

/// `exp(-(x - mu)^2 / (2 sigma^2))`: 1 at the decoder mean, decaying with distance.
pub fn gaussian_kernel(observed: f64, mu: f64, sigma: f64) -> f64 {
    let d = (observed - mu) / sigma;
    (-0.5 * d * d).exp()
}

/// Reconstruction probability per feature of the window's last row,
/// averaged over the decoder samples.
pub fn reconstruction_probability(recon: &Reconstruction, observed_last: &[f64]) -> Vec<f64> {
    let k = observed_last.len();
    let mut p = vec![0.0; k];
    for s in &recon.samples {
        let n = s.mu_x.shape()[0];
        let (mu, sigma) = (s.mu_x.row(n - 1), s.sigma_x.row(n - 1));
        for i in 0..k {
            p[i] += gaussian_kernel(observed_last[i], mu[i], sigma[i]);
        }
    }
    let count = recon.samples.len() as f64;
    p.iter_mut().for_each(|v| *v /= count);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            window: 8,
            features: 3,
            gru_hidden: 6,
            forecast_hidden: 5,
            latent: 4,
            vae_samples_infer: 3,
            ..ModelConfig::default()
        }
    }

    fn window(cfg: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..cfg.window * cfg.features).map(|_| rng.random_range(0.0..1.0)).collect();
        Tensor::new(vec![cfg.window, cfg.features], data).unwrap()
    }

    #[test]
    fn full_size_shapes() {
        let cfg = ModelConfig {
            features: 3,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let out = forward(&window(&cfg, 1), &p, &cfg, Noise::Zero, 1).unwrap();
        assert_eq!(out.fused.shape(), &[100, 9]);
        assert_eq!(out.forecast.unwrap().shape(), &[3]);
        let r = out.reconstruction.unwrap();
        assert_eq!(r.samples[0].mu_x.shape(), &[100, 3]);
        assert_eq!(r.mu_z.shape(), &[300]);
        assert_eq!(out.feature_attention.unwrap().shape(), &[3, 3]);
        assert_eq!(out.time_attention.unwrap().shape(), &[100, 100]);
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let cfg = small_cfg();
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let x = window(&cfg, 4);
        let a = forward(&x, &p, &cfg, Noise::Zero, 1).unwrap();
        let b = forward(&x, &p, &cfg, Noise::Zero, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fused_width_is_constant_under_ablation() {
        let base = small_cfg();
        let p = ModelParams::init(&base, &mut ChaCha8Rng::seed_from_u64(5));
        let x = window(&base, 6);
        for (f, t) in [(true, true), (false, true), (true, false), (false, false)] {
            let cfg = ModelConfig {
                use_feature_gat: f,
                use_time_gat: t,
                ..base.clone()
            };
            let out = forward(&x, &p, &cfg, Noise::Zero, 1).unwrap();
            assert_eq!(out.fused.shape(), &[8, 9]);
            assert_eq!(out.feature_attention.is_some(), f);
        }
    }

    #[test]
    fn sigma_respects_floor() {
        let cfg = small_cfg();
        let mut p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(7));
        p.dec_log_sigma.bias.data_mut().iter_mut().for_each(|b| *b = -20.0);
        let out = forward(&window(&cfg, 8), &p, &cfg, Noise::Zero, 1).unwrap();
        let s = &out.reconstruction.unwrap().samples[0].sigma_x;
        assert!(s.data().iter().all(|&v| v >= cfg.recon_sigma_floor));
    }

    #[test]
    fn forecast_loss_cases() {
        assert_eq!(loss_forecast(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_forecast(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(loss_forecast(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(kl_divergence(&[0.0; 5], &[1.0; 5]).unwrap(), 0.0);
        assert_eq!(kl_divergence(&[1.0], &[1.0]).unwrap(), 0.5);
    }

    #[test]
    fn forecast_ablation_leaves_reconstruction_loss() {
        let cfg = ModelConfig {
            use_forecast: false,
            ..small_cfg()
        };
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let x = window(&cfg, 10);
        let out = forward(&x, &p, &cfg, Noise::Zero, 1).unwrap();
        assert!(out.forecast.is_none());
        let joint = loss_joint(&out, &x, &[0.1, 0.2, 0.3], &cfg).unwrap();
        assert_eq!(joint, loss_reconstruction(&out, &x).unwrap());
    }

    #[test]
    fn joint_loss_recomposes_bit_for_bit() {
        let cfg = small_cfg();
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(11));
        let x = window(&cfg, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let out = forward(&x, &p, &cfg, Noise::Sample(&mut rng), 1).unwrap();
        let target = [0.4, 0.9, 0.1];
        let joint = loss_joint(&out, &x, &target, &cfg).unwrap();
        let parts = loss_forecast(out.forecast.as_ref().unwrap().data(), &target).unwrap()
            + loss_reconstruction(&out, &x).unwrap();
        assert_eq!(joint.to_bits(), parts.to_bits());
    }

    #[test]
    fn batched_loss_matches_tape_loss() {
        // the per-window value on the batched tape equals the plain helper
        let cfg = small_cfg();
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(14));
        let x = window(&cfg, 15);
        let target = [0.2, 0.5, 0.8];
        let out = forward(&x, &p, &cfg, Noise::Zero, 1).unwrap();
        let plain = loss_joint(&out, &x, &target, &cfg).unwrap();

        let mut tape = Tape::new();
        let vars = p.register(&mut tape, true);
        let xv = tape.constant(x.reshaped(&[1, 8, 3]).unwrap());
        let tv = tape.constant(Tensor::new(vec![1, 3], target.to_vec()).unwrap());
        let fwd = forward_batch(&mut tape, &vars, xv, &cfg, &Tensor::zeros(&[1, 4])).unwrap();
        let l = joint_loss(&mut tape, &fwd, xv, tv).unwrap();
        assert!((tape.value(l).item() - plain).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_probability_kernel_cases() {
        let sample = |mu: f64, sigma: f64| DecoderSample {
            mu_x: Tensor::new(vec![2, 1], vec![0.0, mu]).unwrap(),
            sigma_x: Tensor::new(vec![2, 1], vec![1.0, sigma]).unwrap(),
        };
        let recon = |samples| Reconstruction {
            mu_z: Tensor::zeros(&[1]),
            log_sigma_z: Tensor::zeros(&[1]),
            sigma_z: Tensor::full(&[1], 1.0),
            samples,
        };
        assert_eq!(reconstruction_probability(&recon(vec![sample(0.3, 0.2)]), &[0.3]), vec![1.0]);
        let p = reconstruction_probability(&recon(vec![sample(0.5, 0.2)]), &[0.7]);
        assert!((p[0] - (-0.5f64).exp()).abs() < 1e-12);
        let multi = recon(vec![sample(0.5, 0.2), sample(0.1, 0.4), sample(0.9, 0.1)]);
        let got = reconstruction_probability(&multi, &[0.6])[0];
        let mut expect = 0.0;
        for (mu, s) in [(0.5, 0.2), (0.1, 0.4), (0.9, 0.1)] {
            let d: f64 = (0.6 - mu) / s;
            expect += (-d * d / 2.0).exp();
        }
        assert!((got - expect / 3.0).abs() < 1e-15);
    }

    #[test]
    fn wrong_window_shape_is_config_error() {
        let cfg = small_cfg();
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let bad = Tensor::zeros(&[8, 4]);
        assert!(matches!(forward(&bad, &p, &cfg, Noise::Zero, 1), Err(Error::Config(_))));
    }
}
