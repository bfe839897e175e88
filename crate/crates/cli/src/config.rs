//! The JSON run configuration shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use mtad_gat::evaluation::Protocol;
use mtad_gat::network::ModelConfig;
use mtad_gat::preprocess::SrConfig;
use mtad_gat::scoring::PotConfig;
use mtad_gat::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, Context};
use crate::synth::AnomalySpec;

/// Which score stream the POT threshold is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Calibration {
    /// The scores being thresholded.
    #[default]
    Test,
    /// A separate scores file, `paths.calibration_scores`.
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Overrides the checkpoint's `model.gamma` when set.
    pub gamma: Option<f64>,
    /// Seeds the decoder sampling noise.
    pub seed: u64,
    pub batch_size: usize,
    /// Timestamps whose attention matrices are exported.
    pub attention_at: Vec<usize>,
    pub calibration: Calibration,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            gamma: None,
            seed: 0,
            batch_size: 64,
            attention_at: Vec::new(),
            calibration: Calibration::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolName {
    RawPoint,
    #[default]
    PointAdjust,
    Delay,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub protocol: ProtocolName,
    /// Required by the delay protocol.
    pub delay: Option<usize>,
}

impl EvaluationConfig {
    pub fn protocol(&self) -> CliResult<Protocol> {
        Ok(match self.protocol {
            ProtocolName::RawPoint => Protocol::RawPoint,
            ProtocolName::PointAdjust => Protocol::PointAdjust,
            ProtocolName::Delay => Protocol::Delay(
                self.delay
                    .ok_or_else(|| CliError::config("evaluation", "the delay protocol needs evaluation.delay"))?,
            ),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosisConfig {
    /// Cut-off `m`; defaults to `min(8, k)`.
    pub top_m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub length: usize,
    pub features: usize,
    pub events: usize,
    /// Leading anomaly-free rows written as a separate training split; 0 writes
    /// one unsplit series.
    pub train_rows: usize,
    /// Noise standard deviation relative to each feature's amplitude.
    pub noise: f64,
    /// Explicit anomalies; when non-empty they replace the `events` automatic ones.
    pub anomalies: Vec<AnomalySpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            length: 5000,
            features: 4,
            events: 8,
            train_rows: 0,
            noise: 0.05,
            anomalies: Vec::new(),
        }
    }
}

/// File locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub root_causes: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub losses: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub calibration_scores: Option<PathBuf>,
    pub threshold: Option<PathBuf>,
    pub alarms: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub diagnosis: Option<PathBuf>,
    pub attention_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sr: SrConfig,
    pub scoring: ScoringConfig,
    pub pot: PotConfig,
    pub evaluation: EvaluationConfig,
    pub diagnosis: DiagnosisConfig,
    pub synth: SynthConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let ctx = || format!("reading config {}", path.display());
        let text = fs::read_to_string(path).with_context(ctx)?;
        serde_json::from_str(&text).map_err(|e| CliError::config(ctx(), e.to_string()))
    }

    /// Applies the global `--seed` to every seeded stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.synth.seed = seed;
        self.scoring.seed = seed;
    }

    /// Checks every section. `model.features = 0` is allowed here and filled
    /// in from the training data.
    pub fn validate(&self) -> CliResult<()> {
        let ctx = "validating config";
        let model = ModelConfig {
            features: self.model.features.max(1),
            ..self.model.clone()
        };
        model.validate().context(ctx)?;
        self.train.validate().context(ctx)?;
        self.sr.validate().context(ctx)?;
        self.pot.validate().context(ctx)?;
        self.evaluation.protocol()?;
        if let Some(g) = self.scoring.gamma {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(CliError::config(ctx, format!("scoring.gamma must be a finite value >= 0, got {g}")));
            }
        }
        if self.scoring.batch_size == 0 {
            return Err(CliError::config(ctx, "scoring.batch_size must be >= 1"));
        }
        if self.diagnosis.top_m == Some(0) {
            return Err(CliError::config(ctx, "diagnosis.top_m must be >= 1"));
        }
        if self.model.features > 0 && self.diagnosis.top_m.is_some_and(|m| m > self.model.features) {
            return Err(CliError::config(ctx, "diagnosis.top_m exceeds model.features"));
        }
        let s = &self.synth;
        if s.features == 0 || s.length == 0 {
            return Err(CliError::config(ctx, "synth.features and synth.length must be >= 1"));
        }
        if !(s.noise >= 0.0) || !s.noise.is_finite() {
            return Err(CliError::config(ctx, "synth.noise must be a finite value >= 0"));
        }
        Ok(())
    }
}

/// `flag` if given, else the configured path, else a config error naming both.
pub fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    flag.or_else(|| configured.clone()).ok_or_else(|| {
        CliError::config(
            "resolving paths",
            format!("no {what} given; pass --{} or set paths.{}", what.replace('_', "-"), what),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        assert_eq!(c.model.window, 100);
        assert_eq!(c.pot.init_quantile, 0.98);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"modle": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"model": {"windw": 5}}"#).is_err());
    }

    #[test]
    fn invalid_sections_fail_validation() {
        let mut c = RunConfig::default();
        c.model.window = 1;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = RunConfig::default();
        c.evaluation.protocol = ProtocolName::Delay;
        assert!(c.validate().is_err());
        c.evaluation.delay = Some(3);
        c.validate().unwrap();
    }

    #[test]
    fn seed_reaches_every_stage() {
        let mut c = RunConfig::default();
        c.set_seed(9);
        assert_eq!((c.train.seed, c.synth.seed, c.scoring.seed), (9, 9, 9));
    }
}
