//! Training-set min-max normalisation and spectral-residual (SR) cleaning.
//!
//! Order of use: [`fit_norm`] on the training split, [`normalize`] both
//! splits with the same stats, then [`clean`] the normalised training split.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Per-feature extrema of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn k(&self) -> usize {
        self.min.len()
    }
}

/// Spectral-residual detector settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrConfig {
    /// A timestamp is flagged when its locally normalised saliency exceeds this.
    pub score_threshold: f64,
    /// Width `q` of the moving average over the log amplitude spectrum.
    pub avg_window: usize,
    /// Number `κ` of preceding saliency values forming the local mean.
    pub estimation_points: usize,
    /// How many nearby unflagged values feed a replacement median.
    pub replacement_window: usize,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            score_threshold: 3.0,
            avg_window: 3,
            estimation_points: 21,
            replacement_window: 5,
        }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.score_threshold > 0.0) {
            return Err(Error::config("sr.score_threshold must be > 0"));
        }
        if self.avg_window == 0 || self.estimation_points == 0 || self.replacement_window == 0 {
            return Err(Error::config(
                "sr.avg_window, sr.estimation_points and sr.replacement_window must be >= 1",
            ));
        }
        Ok(())
    }
}

fn columns(x: &Tensor) -> Result<(usize, usize)> {
    match *x.shape() {
        [t, k] => Ok((t, k)),
        ref s => Err(Error::data(format!("expected a T x k matrix, got shape {s:?}"))),
    }
}

/// Per-feature minimum and maximum over every training timestamp.
pub fn fit_norm(train: &Tensor) -> Result<NormStats> {
    let (_, k) = columns(train)?;
    let mut min = vec![f64::INFINITY; k];
    let mut max = vec![f64::NEG_INFINITY; k];
    for row in train.data().chunks(k) {
        for (j, &v) in row.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    Ok(NormStats { min, max })
}

/// `(x - min) / (max - min)` per feature, unclipped. Features that were
/// constant in training map to 0.
pub fn normalize(x: &Tensor, stats: &NormStats) -> Result<Tensor> {
    let (t, k) = columns(x)?;
    if k != stats.k() {
        return Err(Error::data(format!(
            "data has {k} features but normalisation stats cover {}",
            stats.k()
        )));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(k) {
        for (j, v) in row.iter_mut().enumerate() {
            let span = stats.max[j] - stats.min[j];
            *v = if span > 0.0 { (*v - stats.min[j]) / span } else { 0.0 };
        }
    }
    Ok(Tensor::new(vec![t, k], out)?)
}

/// Spectral-residual saliency map of one series.
///
/// The series is transformed at its own length; the log
/// amplitude spectrum minus its centred circular moving average is recombined
/// with the original phase and transformed back. The magnitude of the result
/// is the saliency.
pub fn sr_saliency(series: &[f64], cfg: &SrConfig) -> Result<Vec<f64>> {
    let len = series.len();
    if len < cfg.avg_window || len == 0 {
        return Err(Error::data(format!(
            "series of length {len} is shorter than the SR averaging window {}",
            cfg.avg_window
        )));
    }
    let mean = series.iter().sum::<f64>() / len as f64;
    let spread = series.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * mean.abs().max(1.0) {
        return Ok(vec![0.0; len]);
    }

    let size = len;
    let mut buf: Vec<Complex64> = series.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);

    const AMP_FLOOR: f64 = 1e-8;
    let log_amp: Vec<f64> = buf.iter().map(|c| c.norm().max(AMP_FLOOR).ln()).collect();
    let half = (cfg.avg_window / 2) as isize;
    let width = (2 * half + 1) as f64;
    for (f, c) in buf.iter_mut().enumerate() {
        let avg = (-half..=half)
            .map(|d| log_amp[(f as isize + d).rem_euclid(size as isize) as usize])
            .sum::<f64>()
            / width;
        let residual = log_amp[f] - avg;
        let norm = c.norm();
        let phase = if norm > 0.0 { *c / norm } else { Complex64::new(1.0, 0.0) };
        *c = phase * residual.exp();
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    Ok(buf.iter().map(|c| c.norm() / size as f64).collect())
}

/// Flags timestamps whose saliency exceeds the mean of the preceding
/// `estimation_points` saliency values by more than `score_threshold` times
/// that mean.
pub fn sr_detect(series: &[f64], cfg: &SrConfig) -> Result<Vec<bool>> {
    let sal = sr_saliency(series, cfg)?;
    Ok(sr_scores(&sal, cfg.estimation_points)
        .into_iter()
        .map(|s| s > cfg.score_threshold)
        .collect())
}

fn sr_scores(sal: &[f64], window: usize) -> Vec<f64> {
    (0..sal.len())
        .map(|t| {
            let prev = &sal[t.saturating_sub(window)..t];
            if prev.is_empty() {
                return 0.0;
            }
            let local = prev.iter().sum::<f64>() / prev.len() as f64;
            if local <= 1e-12 {
                0.0
            } else {
                (sal[t] - local) / local
            }
        })
        .collect()
}

/// Runs [`sr_detect`] on every feature and replaces flagged values.
pub fn clean(train: &Tensor, cfg: &SrConfig) -> Result<Tensor> {
    let (_, k) = columns(train)?;
    let masks = (0..k)
        .map(|j| sr_detect(&column(train, j), cfg))
        .collect::<Result<Vec<_>>>()?;
    clean_with_masks(train, &masks, cfg.replacement_window)
}

/// Replaces every flagged value by the median of the `window` nearest
/// unflagged values of the same feature, searching outward (left first on
/// ties). `masks[j][t]` flags feature `j` at time `t`.
pub fn clean_with_masks(train: &Tensor, masks: &[Vec<bool>], window: usize) -> Result<Tensor> {
    let (t_len, k) = columns(train)?;
    if masks.len() != k || masks.iter().any(|m| m.len() != t_len) {
        return Err(Error::data("mask dimensions do not match the training matrix"));
    }
    let mut out = train.data().to_vec();
    for (j, mask) in masks.iter().enumerate() {
        if mask.iter().all(|&f| f) {
            return Err(Error::data(format!(
                "feature {j} is flagged at every timestamp; nothing to replace it with"
            )));
        }
        for t in (0..t_len).filter(|&t| mask[t]) {
            let mut near = Vec::with_capacity(window);
            let mut d = 1;
            while near.len() < window && (d <= t || t + d < t_len) {
                if d <= t && !mask[t - d] {
                    near.push(train.data()[(t - d) * k + j]);
                }
                if near.len() < window && t + d < t_len && !mask[t + d] {
                    near.push(train.data()[(t + d) * k + j]);
                }
                d += 1;
            }
            out[t * k + j] = median(&mut near);
        }
    }
    Ok(Tensor::new(train.shape().to_vec(), out)?)
}

pub(crate) fn column(x: &Tensor, j: usize) -> Vec<f64> {
    let k = x.shape()[1];
    x.data().iter().skip(j).step_by(k).copied().collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn sine_with_spike(len: usize, spike_at: usize) -> Vec<f64> {
        (0..len)
            .map(|t| {
                let base = (2.0 * std::f64::consts::PI * t as f64 / 50.0).sin();
                if t == spike_at {
                    base + 10.0
                } else {
                    base
                }
            })
            .collect()
    }

    #[test]
    fn fit_norm_takes_column_extrema() {
        let x = mat(&[vec![0.0, 4.0], vec![5.0, 4.0], vec![10.0, 4.0]]);
        let s = fit_norm(&x).unwrap();
        assert_eq!(s.min, vec![0.0, 4.0]);
        assert_eq!(s.max, vec![10.0, 4.0]);
    }

    #[test]
    fn normalize_is_unclipped_and_handles_constant_features() {
        let stats = NormStats {
            min: vec![0.0, 4.0],
            max: vec![10.0, 4.0],
        };
        let x = mat(&[vec![5.0, 7.0], vec![12.0, -3.0]]);
        let y = normalize(&x, &stats).unwrap();
        assert_eq!(y.data(), &[0.5, 0.0, 1.2, 0.0]);
    }

    #[test]
    fn normalize_rejects_wrong_width() {
        let stats = NormStats {
            min: vec![0.0],
            max: vec![1.0],
        };
        let x = mat(&[vec![1.0, 2.0]]);
        assert!(matches!(normalize(&x, &stats), Err(Error::Data(_))));
    }

    #[test]
    fn saliency_rejects_short_series() {
        let cfg = SrConfig {
            avg_window: 8,
            ..SrConfig::default()
        };
        assert!(matches!(sr_saliency(&[1.0, 2.0, 3.0, 4.0], &cfg), Err(Error::Data(_))));
    }

    #[test]
    fn constant_series_is_never_flagged() {
        let cfg = SrConfig::default();
        let flat = vec![3.5; 300];
        assert!(sr_saliency(&flat, &cfg).unwrap().iter().all(|&s| s == 0.0));
        assert!(sr_detect(&flat, &cfg).unwrap().iter().all(|&f| !f));
    }

    #[test]
    fn saliency_peaks_at_injected_spike() {
        let series = sine_with_spike(400, 237);
        let sal = sr_saliency(&series, &SrConfig::default()).unwrap();
        let argmax = (0..sal.len()).max_by(|&a, &b| sal[a].total_cmp(&sal[b])).unwrap();
        assert_eq!(argmax, 237);
    }

    #[test]
    fn detect_flags_spike_neighbourhood_only() {
        let series = sine_with_spike(1000, 600);
        let flags = sr_detect(&series, &SrConfig::default()).unwrap();
        assert!(flags[600]);
        let elsewhere = flags
            .iter()
            .enumerate()
            .filter(|&(t, &f)| f && t.abs_diff(600) > 3)
            .count();
        assert!((elsewhere as f64) < 0.01 * 1000.0, "{elsewhere} false flags");
    }

    #[test]
    fn infinite_threshold_flags_nothing() {
        let cfg = SrConfig {
            score_threshold: f64::INFINITY,
            ..SrConfig::default()
        };
        assert!(sr_detect(&sine_with_spike(256, 100), &cfg).unwrap().iter().all(|&f| !f));
    }

    #[test]
    fn clean_replaces_flagged_point_with_local_median() {
        let x = mat(&(0..20).map(|_| vec![2.0]).collect::<Vec<_>>());
        let mut x = x;
        x.data_mut()[10] = 50.0;
        let mut mask = vec![false; 20];
        mask[10] = true;
        let y = clean_with_masks(&x, &[mask], 5).unwrap();
        assert_eq!(y.data()[10], 2.0);
    }

    #[test]
    fn clean_without_flags_is_identity() {
        let x = mat(&(0..64).map(|t| vec![(t as f64 * 0.2).sin()]).collect::<Vec<_>>());
        let y = clean_with_masks(&x, &[vec![false; 64]], 5).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn clean_rejects_fully_flagged_feature() {
        let x = mat(&[vec![1.0, 1.0], vec![2.0, 2.0]]);
        let err = clean_with_masks(&x, &[vec![false, false], vec![true, true]], 5).unwrap_err();
        assert!(err.to_string().contains("feature 1"));
    }

    #[test]
    fn clean_suppresses_spike() {
        let len = 1000;
        let spiky = sine_with_spike(len, 600);
        let x = Tensor::new(vec![len, 1], spiky).unwrap();
        let y = clean(&x, &SrConfig::default()).unwrap();
        let clean_max = sine_with_spike(len, usize::MAX).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let after = y.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(after <= 1.5 * clean_max, "max after cleaning {after}");
        assert_eq!(y.shape(), x.shape());
    }
}
