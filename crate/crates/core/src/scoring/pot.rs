//! Peaks-over-threshold calibration with a generalised Pareto tail.
//!
//! Excesses `Y` over an empirical quantile `t` are fitted by maximum
//! likelihood. Following Grimshaw, the two-parameter likelihood reduces to a
//! one-dimensional root search for `x = ξ/σ` on
//!
//! ```text
//! w(x) = u(x) v(x) - 1,   u(x) = mean 1/(1 + xY),   v(x) = 1 + mean ln(1 + xY)
//! ```
//!
//! Sign changes are bracketed on a linear grid over `(-1/max Y, 0)` and a log
//! grid over `(0, 2(Ȳ - min Y)/(min Y)^2]`, then bisected. Each root gives
//! `ξ = v(x) - 1`, `σ = ξ/x`; the exponential limit `ξ = 0`, `σ = mean(Y)` is
//! always a candidate. The candidate with the highest log-likelihood wins, and
//! the alarm threshold is
//! `z_q = t + σ/ξ ((qN/N_t)^(-ξ) - 1)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `|ξ|` below this is treated as the exponential limit.
pub const XI_ZERO: f64 = 1e-8;

const GRID_POINTS: usize = 1000;
const BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotConfig {
    /// Target false-alarm probability `q`.
    pub risk: f64,
    /// Quantile of the scores used as the initial threshold `t`.
    pub init_quantile: f64,
    pub min_excesses: usize,
}

impl Default for PotConfig {
    fn default() -> Self {
        Self {
            risk: 1e-3,
            init_quantile: 0.98,
            min_excesses: 20,
        }
    }
}

impl PotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.risk > 0.0 && self.risk < 1.0) {
            return Err(Error::config("pot.risk must lie in (0, 1)"));
        }
        if !(self.init_quantile > 0.0 && self.init_quantile < 1.0) {
            return Err(Error::config("pot.init_quantile must lie in (0, 1)"));
        }
        if self.min_excesses < 1 {
            return Err(Error::config("pot.min_excesses must be >= 1"));
        }
        Ok(())
    }
}

/// Maximum-likelihood generalised Pareto parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub sigma: f64,
    pub xi: f64,
    pub log_likelihood: f64,
}

/// Fitted tail and the resulting threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotModel {
    pub init_quantile: f64,
    /// Initial threshold `t`.
    pub t: f64,
    /// Number of excesses `N_t`.
    pub n_t: usize,
    /// Number of scores `N`.
    pub n: usize,
    pub xi: f64,
    pub sigma: f64,
    pub risk: f64,
    /// Final alarm threshold `z_q`.
    pub z_q: f64,
}

fn log_likelihood(y: &[f64], sigma: f64, xi: f64) -> f64 {
    let n = y.len() as f64;
    if xi.abs() < XI_ZERO {
        return -n * sigma.ln() - y.iter().sum::<f64>() / sigma;
    }
    let mut acc = 0.0;
    for &v in y {
        let a = 1.0 + xi * v / sigma;
        if a <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += a.ln();
    }
    -n * sigma.ln() - (1.0 + 1.0 / xi) * acc
}

fn uv(y: &[f64], x: f64) -> (f64, f64) {
    let n = y.len() as f64;
    let (mut u, mut v) = (0.0, 0.0);
    for &val in y {
        let s = 1.0 + x * val;
        u += 1.0 / s;
        v += s.ln();
    }
    (u / n, 1.0 + v / n)
}

fn w(y: &[f64], x: f64) -> f64 {
    let (u, v) = uv(y, x);
    u * v - 1.0
}

fn bisect(y: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = w(y, lo);
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = w(y, mid);
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn roots_on(y: &[f64], grid: &[f64], out: &mut Vec<f64>) {
    let values: Vec<f64> = grid.iter().map(|&x| w(y, x)).collect();
    for i in 1..grid.len() {
        let (a, b) = (values[i - 1], values[i]);
        if !a.is_finite() || !b.is_finite() {
            continue;
        }
        if a == 0.0 {
            out.push(grid[i - 1]);
        } else if (a < 0.0) != (b < 0.0) {
            out.push(bisect(y, grid[i - 1], grid[i]));
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Maximum-likelihood GPD fit to strictly positive excesses.
pub fn fit_gpd(excesses: &[f64]) -> Result<GpdFit> {
    if excesses.is_empty() {
        return Err(Error::data("cannot fit a tail to zero excesses"));
    }
    if excesses.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::data("excesses must be finite and strictly positive"));
    }
    let y = excesses;
    let y_max = y.iter().cloned().fold(f64::MIN, f64::max);
    let y_min = y.iter().cloned().fold(f64::MAX, f64::min);
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;

    let mut roots = Vec::new();
    let lower = -1.0 / y_max;
    let eps = (1e-8 / y_mean).min(lower.abs() / (2.0 * GRID_POINTS as f64));
    roots_on(y, &linspace(lower + eps, -eps, GRID_POINTS), &mut roots);
    if y_mean > y_min {
        let upper = 2.0 * (y_mean - y_min) / (y_min * y_min);
        if upper.is_finite() && upper > eps {
            roots_on(y, &geomspace(eps, upper, GRID_POINTS), &mut roots);
        }
    }

    let mut best = GpdFit {
        sigma: y_mean,
        xi: 0.0,
        log_likelihood: log_likelihood(y, y_mean, 0.0),
    };
    for x in roots {
        let (_, v) = uv(y, x);
        let xi = v - 1.0;
        let sigma = xi / x;
        if !(sigma > 0.0) || !sigma.is_finite() {
            continue;
        }
        let ll = log_likelihood(y, sigma, xi);
        if ll > best.log_likelihood + 1e-9 * best.log_likelihood.abs().max(1.0) {
            best = GpdFit {
                sigma,
                xi,
                log_likelihood: ll,
            };
        }
    }
    Ok(best)
}

/// Linear-interpolation quantile of unsorted data (the "type 7" rule).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `t + σ/ξ ((qN/N_t)^(-ξ) - 1)`, with the `ξ -> 0` limit `t + σ ln(N_t/(qN))`.
pub fn tail_quantile(t: f64, sigma: f64, xi: f64, risk: f64, n: usize, n_t: usize) -> f64 {
    let r = risk * n as f64 / n_t as f64;
    if xi.abs() < XI_ZERO {
        t - sigma * r.ln()
    } else {
        t + sigma / xi * (r.powf(-xi) - 1.0)
    }
}

/// Fits the tail of `scores` and derives the alarm threshold `z_q`.
pub fn pot_fit(scores: &[f64], cfg: &PotConfig) -> Result<PotModel> {
    cfg.validate()?;
    if scores.is_empty() {
        return Err(Error::data("no scores to calibrate the threshold on"));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("scores contain non-finite values"));
    }
    let t = quantile(scores, cfg.init_quantile);
    let excesses: Vec<f64> = scores.iter().filter(|&&s| s > t).map(|&s| s - t).collect();
    let n_t = excesses.len();
    if n_t < cfg.min_excesses {
        return Err(Error::data(format!(
            "only {n_t} scores exceed the initial threshold {t} (quantile {}); at least {} are needed, \
             try a lower init_quantile",
            cfg.init_quantile, cfg.min_excesses
        )));
    }
    let n = scores.len();
    if cfg.risk * n as f64 > n_t as f64 {
        return Err(Error::config(format!(
            "risk {} implies {} expected alarms, more than the {n_t} excesses over t; \
             lower the risk or the init_quantile",
            cfg.risk,
            cfg.risk * n as f64
        )));
    }
    let fit = fit_gpd(&excesses)?;
    let z_q = tail_quantile(t, fit.sigma, fit.xi, cfg.risk, n, n_t);
    Ok(PotModel {
        init_quantile: cfg.init_quantile,
        t,
        n_t,
        n,
        xi: fit.xi,
        sigma: fit.sigma,
        risk: cfg.risk,
        z_q,
    })
}
