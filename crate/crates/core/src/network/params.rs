use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gat::GatParams;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Temporal width of the input convolution.
pub const CONV_WIDTH: usize = 7;

/// Hyper-parameters that fully determine the parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Sliding-window length `n`.
    pub window: usize,
    /// Feature count `k`; 0 means "take it from the training data".
    pub features: usize,
    /// GRU hidden size `d1`.
    pub gru_hidden: usize,
    /// Hidden width `d2` of the forecasting stack and the VAE decoder.
    pub forecast_hidden: usize,
    /// VAE latent size `d3`.
    pub latent: usize,
    /// Weight of the reconstruction term in the inference score.
    pub gamma: f64,
    pub conv_kernel: usize,
    pub use_feature_gat: bool,
    pub use_time_gat: bool,
    pub use_forecast: bool,
    pub use_reconstruction: bool,
    pub vae_samples_train: usize,
    pub vae_samples_infer: usize,
    pub recon_sigma_floor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 100,
            features: 0,
            gru_hidden: 300,
            forecast_hidden: 300,
            latent: 300,
            gamma: 0.8,
            conv_kernel: CONV_WIDTH,
            use_feature_gat: true,
            use_time_gat: true,
            use_forecast: true,
            use_reconstruction: true,
            vae_samples_train: 1,
            vae_samples_infer: 16,
            recon_sigma_floor: 1e-3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(m));
        if self.window < 2 {
            return fail("model.window (n) must be >= 2");
        }
        if self.features < 1 {
            return fail("model.features (k) must be >= 1");
        }
        if self.gru_hidden < 1 || self.forecast_hidden < 1 || self.latent < 1 {
            return fail("model.gru_hidden, model.forecast_hidden and model.latent must be >= 1");
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return fail("model.gamma must be a finite value >= 0");
        }
        if self.conv_kernel != CONV_WIDTH {
            return Err(Error::config(format!(
                "model.conv_kernel must be {CONV_WIDTH}, got {}",
                self.conv_kernel
            )));
        }
        if !self.use_forecast && !self.use_reconstruction {
            return fail("at least one of model.use_forecast / model.use_reconstruction must be enabled");
        }
        if self.vae_samples_train != 1 {
            return fail("model.vae_samples_train must be 1 (single-sample ELBO estimate)");
        }
        if self.vae_samples_infer < 1 {
            return fail("model.vae_samples_infer must be >= 1");
        }
        if !(self.recon_sigma_floor > 0.0) {
            return fail("model.recon_sigma_floor must be > 0");
        }
        Ok(())
    }
}

/// Dense layer `y = x W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }
}

/// GRU weights: input projections `[3k, d1]`, recurrent `[d1, d1]`, biases `[d1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_update: Tensor,
    pub w_reset: Tensor,
    pub w_candidate: Tensor,
    pub u_update: Tensor,
    pub u_reset: Tensor,
    pub u_candidate: Tensor,
    pub b_update: Tensor,
    pub b_reset: Tensor,
    pub b_candidate: Tensor,
}

impl GruParams {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[inputs, hidden]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_update: w(),
            w_reset: w(),
            w_candidate: w(),
            u_update: u(),
            u_reset: u(),
            u_candidate: u(),
            b_update: b(),
            b_reset: b(),
            b_candidate: b(),
        }
    }
}

/// Every learnable tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv_kernel: Tensor,
    pub conv_bias: Tensor,
    pub feature_gat: GatParams,
    pub time_gat: GatParams,
    pub gru: GruParams,
    pub forecast: [Linear; 3],
    pub enc_mu: Linear,
    pub enc_log_sigma: Linear,
    pub dec_hidden: Linear,
    pub dec_mu: Linear,
    pub dec_log_sigma: Linear,
}

/// Parameter names in storage order; matches [`ModelParams::tensors`].
pub const PARAM_NAMES: [&str; 29] = [
    "conv.kernel",
    "conv.bias",
    "feature_gat.w",
    "time_gat.w",
    "gru.w_update",
    "gru.w_reset",
    "gru.w_candidate",
    "gru.u_update",
    "gru.u_reset",
    "gru.u_candidate",
    "gru.b_update",
    "gru.b_reset",
    "gru.b_candidate",
    "forecast.0.weight",
    "forecast.0.bias",
    "forecast.1.weight",
    "forecast.1.bias",
    "forecast.2.weight",
    "forecast.2.bias",
    "vae.enc_mu.weight",
    "vae.enc_mu.bias",
    "vae.enc_log_sigma.weight",
    "vae.enc_log_sigma.bias",
    "vae.dec_hidden.weight",
    "vae.dec_hidden.bias",
    "vae.dec_mu.weight",
    "vae.dec_mu.bias",
    "vae.dec_log_sigma.weight",
    "vae.dec_log_sigma.bias",
];

impl ModelParams {
    /// All-zero parameters with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (n, k) = (cfg.window, cfg.features);
        let (d1, d2, d3) = (cfg.gru_hidden, cfg.forecast_hidden, cfg.latent);
        Self {
            conv_kernel: Tensor::zeros(&[CONV_WIDTH, k, k]),
            conv_bias: Tensor::zeros(&[k]),
            feature_gat: GatParams::zeros(n),
            time_gat: GatParams::zeros(k),
            gru: GruParams::zeros(3 * k, d1),
            forecast: [Linear::zeros(d1, d2), Linear::zeros(d2, d2), Linear::zeros(d2, k)],
            enc_mu: Linear::zeros(d1, d3),
            enc_log_sigma: Linear::zeros(d1, d3),
            dec_hidden: Linear::zeros(d3, d2),
            dec_mu: Linear::zeros(d2, n * k),
            dec_log_sigma: Linear::zeros(d2, n * k),
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialisation.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut params = Self::zeros(cfg);
        let fan_ins = params.fan_ins(cfg);
        for (t, fan_in) in params.tensors_mut().into_iter().zip(fan_ins) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        params
    }

    fn fan_ins(&self, cfg: &ModelConfig) -> Vec<usize> {
        let (n, k) = (cfg.window, cfg.features);
        let (d1, d2, d3) = (cfg.gru_hidden, cfg.forecast_hidden, cfg.latent);
        let mut f = vec![CONV_WIDTH * k, CONV_WIDTH * k, 2 * n, 2 * k];
        f.extend([3 * k, 3 * k, 3 * k, d1, d1, d1, d1, d1, d1]);
        f.extend([d1, d1, d2, d2, d2, d2]);
        f.extend([d1, d1, d1, d1, d3, d3, d2, d2, d2, d2]);
        f
    }

    /// Shapes in storage order, derived from the config alone.
    pub fn layout(cfg: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
        let zeros = Self::zeros(cfg);
        PARAM_NAMES
            .iter()
            .zip(zeros.tensors())
            .map(|(&name, t)| (name, t.shape().to_vec()))
            .collect()
    }

    /// Rebuilds parameters from tensors in storage order, checking shapes.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let mut params = Self::zeros(cfg);
        if tensors.len() != PARAM_NAMES.len() {
            return Err(Error::config(format!(
                "expected {} parameter tensors, got {}",
                PARAM_NAMES.len(),
                tensors.len()
            )));
        }
        for ((slot, t), name) in params.tensors_mut().into_iter().zip(tensors).zip(PARAM_NAMES) {
            if slot.shape() != t.shape() {
                return Err(Error::config(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(params)
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let g = &self.gru;
        let mut v = vec![&self.conv_kernel, &self.conv_bias, &self.feature_gat.w, &self.time_gat.w];
        v.extend([
            &g.w_update,
            &g.w_reset,
            &g.w_candidate,
            &g.u_update,
            &g.u_reset,
            &g.u_candidate,
            &g.b_update,
            &g.b_reset,
            &g.b_candidate,
        ]);
        for l in self.linears() {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let g = &mut self.gru;
        let mut v = vec![
            &mut self.conv_kernel,
            &mut self.conv_bias,
            &mut self.feature_gat.w,
            &mut self.time_gat.w,
        ];
        v.extend([
            &mut g.w_update,
            &mut g.w_reset,
            &mut g.w_candidate,
            &mut g.u_update,
            &mut g.u_reset,
            &mut g.u_candidate,
            &mut g.b_update,
            &mut g.b_reset,
            &mut g.b_candidate,
        ]);
        let [f0, f1, f2] = &mut self.forecast;
        for l in [
            f0,
            f1,
            f2,
            &mut self.enc_mu,
            &mut self.enc_log_sigma,
            &mut self.dec_hidden,
            &mut self.dec_mu,
            &mut self.dec_log_sigma,
        ] {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v
    }

    fn linears(&self) -> [&Linear; 8] {
        [
            &self.forecast[0],
            &self.forecast[1],
            &self.forecast[2],
            &self.enc_mu,
            &self.enc_log_sigma,
            &self.dec_hidden,
            &self.dec_mu,
            &self.dec_log_sigma,
        ]
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> ParamVars {
        let all: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        let lin = |i: usize| LinearVars {
            weight: all[13 + 2 * i],
            bias: all[14 + 2 * i],
        };
        ParamVars {
            conv_kernel: all[0],
            conv_bias: all[1],
            feature_gat: all[2],
            time_gat: all[3],
            gru: GruVars {
                w_update: all[4],
                w_reset: all[5],
                w_candidate: all[6],
                u_update: all[7],
                u_reset: all[8],
                u_candidate: all[9],
                b_update: all[10],
                b_reset: all[11],
                b_candidate: all[12],
            },
            forecast: [lin(0), lin(1), lin(2)],
            enc_mu: lin(3),
            enc_log_sigma: lin(4),
            dec_hidden: lin(5),
            dec_mu: lin(6),
            dec_log_sigma: lin(7),
            all,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_update: Var,
    pub w_reset: Var,
    pub w_candidate: Var,
    pub u_update: Var,
    pub u_reset: Var,
    pub u_candidate: Var,
    pub b_update: Var,
    pub b_reset: Var,
    pub b_candidate: Var,
}

/// Tape handles for a registered [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub conv_kernel: Var,
    pub conv_bias: Var,
    pub feature_gat: Var,
    pub time_gat: Var,
    pub gru: GruVars,
    pub forecast: [LinearVars; 3],
    pub enc_mu: LinearVars,
    pub enc_log_sigma: LinearVars,
    pub dec_hidden: LinearVars,
    pub dec_mu: LinearVars,
    pub dec_log_sigma: LinearVars,
    /// Same handles in storage order.
    pub all: Vec<Var>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            window: 6,
            features: 2,
            gru_hidden: 5,
            forecast_hidden: 4,
            latent: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn layout_matches_documented_shapes() {
        let cfg = ModelConfig {
            features: 3,
            ..ModelConfig::default()
        };
        let layout = ModelParams::layout(&cfg);
        let get = |name: &str| layout.iter().find(|(n, _)| *n == name).unwrap().1.clone();
        assert_eq!(get("conv.kernel"), vec![7, 3, 3]);
        assert_eq!(get("feature_gat.w"), vec![200]);
        assert_eq!(get("time_gat.w"), vec![6]);
        assert_eq!(get("gru.w_update"), vec![9, 300]);
        assert_eq!(get("gru.u_candidate"), vec![300, 300]);
        assert_eq!(get("forecast.2.weight"), vec![300, 3]);
        assert_eq!(get("vae.dec_mu.weight"), vec![300, 300]);
        assert_eq!(get("vae.enc_log_sigma.weight"), vec![300, 300]);
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let cfg = small();
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let bound = 1.0 / ((3 * cfg.features) as f64).sqrt();
        assert!(p.gru.w_update.data().iter().all(|v| v.abs() <= bound));
        assert!(p.tensors().iter().all(|t| t.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn from_tensors_rejects_wrong_shapes() {
        let cfg = small();
        let p = ModelParams::zeros(&cfg);
        let mut tensors: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        tensors[0] = Tensor::zeros(&[7, 3, 3]);
        assert!(matches!(ModelParams::from_tensors(&cfg, tensors), Err(Error::Config(_))));
    }

    #[test]
    fn validation_catches_bad_configs() {
        let ok = small();
        ok.validate().unwrap();
        for bad in [
            ModelConfig { window: 1, ..small() },
            ModelConfig { features: 0, ..small() },
            ModelConfig { gamma: -0.1, ..small() },
            ModelConfig { conv_kernel: 5, ..small() },
            ModelConfig {
                use_forecast: false,
                use_reconstruction: false,
                ..small()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }
}
