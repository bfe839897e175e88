//! Synthetic multivariate series with labelled anomalies.
//!
//! Every feature mixes two shared sinusoidal drivers with its own amplitude,
//! offset and noise. Anomalies are spikes, level shifts, and correlation
//! breaks in which one feature stops following the drivers.

use std::f64::consts::TAU;

use mtad_gat::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::SynthConfig;
use crate::error::{CliError, CliResult};
use crate::io::RootCause;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    Spike,
    LevelShift,
    CorrelationBreak,
}

/// An explicitly placed anomaly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub start: usize,
    pub length: usize,
    pub feature: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub names: Vec<String>,
    pub values: Tensor,
    pub labels: Vec<bool>,
    pub events: Vec<AnomalySpec>,
}

impl Synthetic {
    pub fn root_causes(&self, offset: usize) -> Vec<RootCause> {
        self.events
            .iter()
            .filter(|e| e.start >= offset)
            .map(|e| RootCause {
                start: e.start - offset,
                end: e.start + e.length - 1 - offset,
                features: vec![self.names[e.feature].clone()],
            })
            .collect()
    }
}

const SPIKE_LEN: (usize, usize) = (1, 4);
const SHIFT_LEN: (usize, usize) = (30, 60);
const BREAK_LEN: (usize, usize) = (120, 160);
const SPIKE_SIZE: f64 = 4.0;
const SHIFT_SIZE: f64 = 1.5;

fn auto_kinds(count: usize) -> Vec<AnomalyKind> {
    (0..count)
        .map(|i| {
            if i == count / 2 {
                AnomalyKind::CorrelationBreak
            } else if i % 2 == 0 {
                AnomalyKind::Spike
            } else {
                AnomalyKind::LevelShift
            }
        })
        .collect()
}

fn length_range(kind: AnomalyKind) -> (usize, usize) {
    match kind {
        AnomalyKind::Spike => SPIKE_LEN,
        AnomalyKind::LevelShift => SHIFT_LEN,
        AnomalyKind::CorrelationBreak => BREAK_LEN,
    }
}

/// Places `count` events in equal slots over `[first, len)`.
fn place(count: usize, first: usize, len: usize, k: usize, rng: &mut ChaCha8Rng) -> CliResult<Vec<AnomalySpec>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let slot = (len - first) / count;
    let margin = 10;
    let longest = BREAK_LEN.1 + 2 * margin;
    if slot < longest {
        return Err(CliError::config(
            "synth",
            format!("{count} events need at least {} rows after the warm-up, only {} are available", count * longest, len - first),
        ));
    }
    Ok(auto_kinds(count)
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let (lo, hi) = length_range(kind);
            let length = rng.random_range(lo..=hi);
            let room = slot - length - 2 * margin;
            AnomalySpec {
                kind,
                start: first + i * slot + margin + rng.random_range(0..=room),
                length,
                feature: rng.random_range(0..k),
            }
        })
        .collect())
}

/// Generates the series. Events are kept out of the first `warmup` rows after
/// `cfg.train_rows`; explicit `cfg.anomalies` that start earlier are moved forward,
/// with a message in the returned warnings.
pub fn generate(cfg: &SynthConfig, warmup: usize) -> CliResult<(Synthetic, Vec<String>)> {
    let (len, k) = (cfg.length, cfg.features);
    if len <= 2 * warmup {
        return Err(CliError::config("synth", format!("length {len} must exceed twice the window ({warmup})")));
    }
    if cfg.train_rows > 0 && cfg.train_rows + warmup + 1 >= len {
        return Err(CliError::config("synth", format!("train_rows {} leaves no test stream", cfg.train_rows)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let first = cfg.train_rows + warmup;

    let p1 = rng.random_range(30.0..50.0);
    let p2 = rng.random_range(70.0..110.0);
    let p3 = p1 * 0.61;
    let (f1, f2, f3) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    let amp: Vec<f64> = (0..k).map(|_| rng.random_range(0.8..1.6)).collect();
    let mix: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..0.8)).collect();
    let offset: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();

    let mut warnings = Vec::new();
    let explicit = &cfg.anomalies;
    let events = if explicit.is_empty() {
        place(cfg.events, first, len, k, &mut rng)?
    } else {
        let mut out = Vec::with_capacity(explicit.len());
        for e in explicit {
            if e.feature >= k || e.length == 0 {
                return Err(CliError::config("synth", format!("anomaly {e:?} has an invalid feature or length")));
            }
            let mut e = e.clone();
            if e.start < first {
                warnings.push(format!("anomaly at {} overlaps the warm-up; moved to {first}", e.start));
                e.start = first;
            }
            if e.start + e.length > len {
                return Err(CliError::config("synth", format!("anomaly at {} runs past the end", e.start)));
            }
            out.push(e);
        }
        out
    };

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = vec![0.0; len * k];
    for t in 0..len {
        let tf = t as f64;
        let (d1, d2) = ((TAU * tf / p1 + f1).sin(), (TAU * tf / p2 + f2).sin());
        for j in 0..k {
            let clean = amp[j] * ((1.0 - mix[j]) * d1 + mix[j] * d2) + offset[j];
            data[t * k + j] = clean + cfg.noise * amp[j] * noise.sample(&mut rng);
        }
    }
    let mut labels = vec![false; len];
    for e in &events {
        let j = e.feature;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for t in e.start..e.start + e.length {
            labels[t] = true;
            let v = &mut data[t * k + j];
            match e.kind {
                AnomalyKind::Spike => *v += sign * SPIKE_SIZE * amp[j],
                AnomalyKind::LevelShift => *v += sign * SHIFT_SIZE * amp[j],
                AnomalyKind::CorrelationBreak => {
                    let own = (TAU * t as f64 / p3 + f3).sin();
                    *v = amp[j] * own + offset[j] + cfg.noise * amp[j] * noise.sample(&mut rng);
                }
            }
        }
    }
    let names = (0..k).map(|j| format!("x{j}")).collect();
    let values = Tensor::new(vec![len, k], data).expect("consistent shape");
    Ok((
        Synthetic {
            names,
            values,
            labels,
            events,
        },
        warnings,
    ))
}

/// Rows `[from, to)` of a `T x k` matrix.
pub fn rows(x: &Tensor, from: usize, to: usize) -> Tensor {
    let k = x.shape()[1];
    Tensor::new(vec![to - from, k], x.data()[from * k..to * k].to_vec()).expect("row slice")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(events: usize) -> SynthConfig {
        SynthConfig {
            length: 2000,
            features: 3,
            events,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_under_a_seed() {
        let (a, _) = generate(&cfg(4), 100).unwrap();
        let (b, _) = generate(&cfg(4), 100).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate(&SynthConfig { seed: 1, ..cfg(4) }, 100).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn no_events_means_no_labels() {
        let (s, _) = generate(&cfg(0), 100).unwrap();
        assert!(s.labels.iter().all(|&l| !l));
        assert!(s.root_causes(0).is_empty());
    }

    #[test]
    fn events_are_labelled_and_clear_of_the_warm_up() {
        let (s, _) = generate(&cfg(3), 100).unwrap();
        assert_eq!(s.events.len(), 3);
        assert_eq!(s.root_causes(0).len(), 3);
        assert_eq!(s.events.iter().filter(|e| e.kind == AnomalyKind::CorrelationBreak).count(), 1);
        for e in &s.events {
            assert!(e.start >= 100);
            assert!(s.labels[e.start..e.start + e.length].iter().all(|&l| l));
        }
        let labelled: usize = s.events.iter().map(|e| e.length).sum();
        assert_eq!(s.labels.iter().filter(|&&l| l).count(), labelled);
    }

    #[test]
    fn early_explicit_events_move_forward() {
        let spec = AnomalySpec {
            kind: AnomalyKind::Spike,
            start: 10,
            length: 2,
            feature: 0,
        };
        let (s, warnings) = generate(&SynthConfig { anomalies: vec![spec], ..cfg(0) }, 100).unwrap();
        assert_eq!(s.events[0].start, 100);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn too_short_is_config_error() {
        let short = SynthConfig { length: 150, ..cfg(1) };
        assert_eq!(generate(&short, 100).unwrap_err().exit_code(), 2);
        assert_eq!(generate(&cfg(40), 100).unwrap_err().exit_code(), 2);
    }
}
