//! One function per subcommand. Each resolves its paths and validates its
//! inputs before writing anything.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::Args;
use mtad_gat::evaluation::{diagnose as rank_features, evaluate as evaluate_flags, hitrate_at, ndcg_at, EvalReport};
use mtad_gat::network::ModelConfig;
use mtad_gat::preprocess::{clean, fit_norm, normalize};
use mtad_gat::scoring::{detect, pot_fit, score_stream, PotModel, ScoreOptions};
use mtad_gat::trainer::{load_checkpoint, save_checkpoint, train as fit, Checkpoint, EpochLoss};
use serde::Serialize;

use crate::config::{pick, Calibration, ProtocolName, RunConfig};
use crate::error::{CliError, CliResult, Context};
use crate::io;
use crate::synth;

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub events: Option<usize>,
    /// Write the first N rows as an anomaly-free training split.
    #[arg(long)]
    pub train_rows: Option<usize>,
}

/// Files written by [`synth`].
#[derive(Debug, Clone, Serialize)]
pub struct SynthOutput {
    pub values: PathBuf,
    pub labels: PathBuf,
    pub root_causes: PathBuf,
    /// `(train, test, test labels, test root causes)` when split.
    pub split: Option<(PathBuf, PathBuf, PathBuf, PathBuf)>,
    pub warnings: Vec<String>,
}

pub fn synth(cfg: &RunConfig, args: &SynthArgs) -> CliResult<SynthOutput> {
    let dir = pick(args.out_dir.clone(), &cfg.paths.out_dir, "out_dir")?;
    let mut s = cfg.synth.clone();
    s.length = args.length.unwrap_or(s.length);
    s.features = args.features.unwrap_or(s.features);
    s.events = args.events.unwrap_or(s.events);
    s.train_rows = args.train_rows.unwrap_or(s.train_rows);
    if s.features == 0 {
        return Err(CliError::config("synth", "features must be >= 1"));
    }
    let (data, warnings) = synth::generate(&s, cfg.model.window)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let out = SynthOutput {
        values: dir.join("values.csv"),
        labels: dir.join("labels.csv"),
        root_causes: dir.join("root_causes.csv"),
        split: (s.train_rows > 0).then(|| {
            (
                dir.join("train.csv"),
                dir.join("test.csv"),
                dir.join("test_labels.csv"),
                dir.join("test_root_causes.csv"),
            )
        }),
        warnings,
    };
    io::write_matrix(&out.values, &data.names, &data.values)?;
    io::write_labels(&out.labels, &data.labels)?;
    io::write_root_causes(&out.root_causes, &data.root_causes(0))?;
    if let Some((train, test, labels, causes)) = &out.split {
        let r = s.train_rows;
        io::write_matrix(train, &data.names, &synth::rows(&data.values, 0, r))?;
        io::write_matrix(test, &data.names, &synth::rows(&data.values, r, s.length))?;
        io::write_labels(labels, &data.labels[r..])?;
        io::write_root_causes(causes, &data.root_causes(r))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Training values CSV.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub losses: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

pub fn train(cfg: &RunConfig, args: &TrainArgs) -> CliResult<Vec<EpochLoss>> {
    let input = pick(args.train.clone(), &cfg.paths.train, "train")?;
    let ckpt_path = pick(args.checkpoint.clone(), &cfg.paths.checkpoint, "checkpoint")?;
    let losses_path = args.losses.clone().or_else(|| cfg.paths.losses.clone());
    let mut train_cfg = cfg.train.clone();
    if let Some(e) = args.epochs {
        train_cfg.epochs = e;
    }
    train_cfg.validate().context("validating config")?;

    let ctx = format!("training on {}", input.display());
    let (names, raw) = io::read_matrix(&input)?;
    let k = names.len();
    if cfg.model.features != 0 && cfg.model.features != k {
        return Err(CliError::config(
            ctx,
            format!("model.features is {} but the data has {k} columns", cfg.model.features),
        ));
    }
    let model = ModelConfig {
        features: k,
        ..cfg.model.clone()
    };
    model.validate().context(&ctx)?;
    let norm = fit_norm(&raw).context(&ctx)?;
    let x = normalize(&raw, &norm).context(&ctx)?;
    let x = clean(&x, &cfg.sr).with_context(|| format!("{ctx} (spectral-residual cleaning)"))?;
    let outcome = fit(&x, &model, &train_cfg, |e: &EpochLoss| {
        let val = e.val_loss.map_or("-".to_owned(), |v| format!("{v:.6}"));
        eprintln!("epoch {:>4}  train {:.6}  val {val}", e.epoch, e.train_loss);
    })
    .context(&ctx)?;

    let ckpt = Checkpoint {
        model,
        norm,
        feature_names: names,
        params: outcome.params,
        meta: outcome.meta,
    };
    save_checkpoint(&ckpt, &ckpt_path).with_context(|| format!("writing {}", ckpt_path.display()))?;
    if let Some(p) = losses_path {
        let rows = outcome.history.iter().map(|e| {
            format!(
                "{},{},{}",
                e.epoch,
                io::fmt_f64(e.train_loss),
                e.val_loss.map(io::fmt_f64).unwrap_or_default()
            )
        });
        let mut lines = vec!["epoch,train_loss,val_loss".to_owned()];
        lines.extend(rows);
        write_text(&p, &lines.join("\n"))?;
    }
    Ok(outcome.history)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    use std::io::Write;
    let mut w = io::create(path)?;
    writeln!(w, "{text}").and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Values CSV to score.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Scores CSV to write.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Directory for attention-matrix CSVs.
    #[arg(long)]
    pub attention_dir: Option<PathBuf>,
    /// Timestamps whose attention matrices are exported (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub attention_at: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreSummary {
    pub rows: usize,
    pub offset: usize,
    pub gamma: f64,
}

pub fn score(cfg: &RunConfig, args: &ScoreArgs) -> CliResult<ScoreSummary> {
    let ckpt_path = pick(args.checkpoint.clone(), &cfg.paths.checkpoint, "checkpoint")?;
    let input = pick(args.test.clone(), &cfg.paths.test, "test")?;
    let out = pick(args.scores.clone(), &cfg.paths.scores, "scores")?;
    let attention_dir = args.attention_dir.clone().or_else(|| cfg.paths.attention_dir.clone());
    let attention_at = args.attention_at.clone().unwrap_or_else(|| cfg.scoring.attention_at.clone());
    if !attention_at.is_empty() && attention_dir.is_none() {
        return Err(CliError::config("score", "attention timestamps given without an attention directory"));
    }

    let ckpt = load_checkpoint(&ckpt_path).with_context(|| format!("loading {}", ckpt_path.display()))?;
    let gamma = args.gamma.or(cfg.scoring.gamma).unwrap_or(ckpt.model.gamma);
    let ctx = format!("scoring {}", input.display());
    let (names, raw) = io::read_matrix(&input)?;
    if names.len() != ckpt.model.features {
        return Err(CliError::config(
            ctx,
            format!("checkpoint expects {} features, the file has {}", ckpt.model.features, names.len()),
        ));
    }
    if names != ckpt.feature_names {
        eprintln!("warning: column names differ from the checkpoint's; matching by position");
    }
    let x = normalize(&raw, &ckpt.norm).context(&ctx)?;
    let opts = ScoreOptions {
        gamma,
        seed: cfg.scoring.seed,
        batch_size: cfg.scoring.batch_size,
        attention_at,
    };
    let series = score_stream(&x, &ckpt, &opts).context(&ctx)?;
    io::write_scores(&out, &ckpt.feature_names, &series)?;
    if let Some(dir) = attention_dir {
        for snap in &series.attention {
            if let Some(a) = &snap.feature {
                io::write_square(&dir.join(format!("feature_attention_{}.csv", snap.timestamp)), a)?;
            }
            if let Some(a) = &snap.time {
                io::write_square(&dir.join(format!("time_attention_{}.csv", snap.timestamp)), a)?;
            }
        }
    }
    Ok(ScoreSummary {
        rows: series.rows.len(),
        offset: series.offset,
        gamma,
    })
}

#[derive(Debug, Clone, Default, Args)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Fit the tail on this scores CSV instead of the thresholded one.
    #[arg(long)]
    pub calibration_scores: Option<PathBuf>,
    /// Threshold audit (JSON) to write.
    #[arg(long)]
    pub threshold: Option<PathBuf>,
    #[arg(long)]
    pub alarms: Option<PathBuf>,
    #[arg(long)]
    pub risk: Option<f64>,
    #[arg(long)]
    pub init_quantile: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdAudit {
    pub pot: PotModel,
    pub calibration: Calibration,
    pub calibration_source: PathBuf,
    pub alarms: usize,
}

pub fn threshold(cfg: &RunConfig, args: &ThresholdArgs) -> CliResult<ThresholdAudit> {
    let scores_path = pick(args.scores.clone(), &cfg.paths.scores, "scores")?;
    let audit_path = pick(args.threshold.clone(), &cfg.paths.threshold, "threshold")?;
    let alarms_path = pick(args.alarms.clone(), &cfg.paths.alarms, "alarms")?;
    let (calibration, source) = match (&args.calibration_scores, cfg.scoring.calibration) {
        (Some(p), _) => (Calibration::Validation, p.clone()),
        (None, Calibration::Validation) => (
            Calibration::Validation,
            pick(None, &cfg.paths.calibration_scores, "calibration_scores")?,
        ),
        (None, Calibration::Test) => (Calibration::Test, scores_path.clone()),
    };
    let mut pot_cfg = cfg.pot.clone();
    pot_cfg.risk = args.risk.unwrap_or(pot_cfg.risk);
    pot_cfg.init_quantile = args.init_quantile.unwrap_or(pot_cfg.init_quantile);
    pot_cfg.validate().context("validating threshold options")?;

    let table = io::read_scores(&scores_path)?;
    let fit_on = if source == scores_path { table.totals.clone() } else { io::read_scores(&source)?.totals };
    let pot = pot_fit(&fit_on, &pot_cfg).with_context(|| format!("fitting the threshold on {}", source.display()))?;
    let flags = flag(&table, pot.z_q);
    let audit = ThresholdAudit {
        alarms: flags.iter().filter(|&&f| f).count(),
        pot,
        calibration,
        calibration_source: source,
    };
    io::write_json(&audit_path, &audit)?;
    io::write_alarms(&alarms_path, &flags)?;
    Ok(audit)
}

fn flag(table: &io::ScoreTable, z: f64) -> Vec<bool> {
    let series = mtad_gat::scoring::ScoreSeries {
        offset: table.timestamps[0],
        len: table.stream_len(),
        rows: table
            .timestamps
            .iter()
            .zip(&table.totals)
            .map(|(&timestamp, &total)| mtad_gat::scoring::ScoreRow {
                timestamp,
                total,
                scores: Vec::new(),
                sq_error: Vec::new(),
                prob: Vec::new(),
            })
            .collect(),
        attention: Vec::new(),
    };
    detect(&series, z)
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub alarms: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long)]
    pub delay: Option<usize>,
    /// Report (JSON) to write.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProtocolArg {
    RawPoint,
    PointAdjust,
    Delay,
}

pub fn evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> CliResult<EvalReport> {
    let alarms_path = pick(args.alarms.clone(), &cfg.paths.alarms, "alarms")?;
    let labels_path = pick(args.labels.clone(), &cfg.paths.labels, "labels")?;
    let report_path = args.report.clone().or_else(|| cfg.paths.report.clone());
    let mut eval = cfg.evaluation.clone();
    if let Some(p) = args.protocol {
        eval.protocol = match p {
            ProtocolArg::RawPoint => ProtocolName::RawPoint,
            ProtocolArg::PointAdjust => ProtocolName::PointAdjust,
            ProtocolArg::Delay => ProtocolName::Delay,
        };
    }
    eval.delay = args.delay.or(eval.delay);
    let protocol = eval.protocol()?;

    let pred = io::read_alarms(&alarms_path)?;
    let labels = io::read_labels(&labels_path)?;
    if pred.len() != labels.len() {
        return Err(CliError::data(
            "evaluate",
            format!(
                "{} has {} rows but {} has {}",
                alarms_path.display(),
                pred.len(),
                labels_path.display(),
                labels.len()
            ),
        ));
    }
    let report = evaluate_flags(&pred, &labels, protocol).context("evaluate")?;
    if let Some(p) = report_path {
        io::write_json(&p, &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Optional labels; when given every event must lie inside a labelled segment.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub root_causes: Option<PathBuf>,
    #[arg(long)]
    pub top_m: Option<usize>,
    /// Per-event ranking CSV to write.
    #[arg(long)]
    pub diagnosis: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EventDiagnosis {
    pub event: usize,
    pub start: usize,
    pub end: usize,
    /// Scored timestamp with the highest total inside the event.
    pub peak: usize,
    /// `(feature, s_i)` by descending score.
    pub ranking: Vec<(String, f64)>,
    pub hitrate_100: f64,
    pub hitrate_150: f64,
    pub ndcg_5: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosisReport {
    pub top_m: usize,
    pub events: Vec<EventDiagnosis>,
    pub hitrate_100: f64,
    pub hitrate_150: f64,
    pub ndcg_5: f64,
}

pub fn diagnose(cfg: &RunConfig, args: &DiagnoseArgs) -> CliResult<DiagnosisReport> {
    let scores_path = pick(args.scores.clone(), &cfg.paths.scores, "scores")?;
    let causes_path = pick(args.root_causes.clone(), &cfg.paths.root_causes, "root_causes")?;
    let labels_path = args.labels.clone().or_else(|| cfg.paths.labels.clone());
    let out_path = args.diagnosis.clone().or_else(|| cfg.paths.diagnosis.clone());

    let table = io::read_scores(&scores_path)?;
    let k = table.names.len();
    let m = args.top_m.or(cfg.diagnosis.top_m).unwrap_or(k.min(8));
    if m == 0 || m > k {
        return Err(CliError::config("diagnose", format!("top_m must lie in 1..={k}, got {m}")));
    }
    let events = io::read_root_causes(&causes_path)?;
    if events.is_empty() {
        return Err(CliError::data("diagnose", format!("{} lists no events", causes_path.display())));
    }
    let index: HashMap<&str, usize> = table.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let labels = labels_path.as_deref().map(io::read_labels).transpose()?;

    let mut out = Vec::with_capacity(events.len());
    for (e, ev) in events.iter().enumerate() {
        let ctx = format!("event {e} [{}, {}]", ev.start, ev.end);
        let gt = ev
            .features
            .iter()
            .map(|f| {
                index.get(f.as_str()).copied().ok_or_else(|| {
                    CliError::data(&ctx, format!("root-cause feature {f:?} is not a scored column"))
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        if let Some(l) = &labels {
            if ev.end >= l.len() || !l[ev.start..=ev.end].iter().all(|&x| x) {
                return Err(CliError::data(&ctx, "event does not lie inside a labelled segment"));
            }
        }
        let peak = (0..table.timestamps.len())
            .filter(|&r| (ev.start..=ev.end).contains(&table.timestamps[r]))
            .max_by(|&a, &b| table.totals[a].total_cmp(&table.totals[b]).then(b.cmp(&a)))
            .ok_or_else(|| CliError::data(&ctx, "no scored timestamp falls inside the event"))?;
        let s = &table.features[peak];
        let ranked = rank_features(s, m).context(&ctx)?;
        out.push(EventDiagnosis {
            event: e,
            start: ev.start,
            end: ev.end,
            peak: table.timestamps[peak],
            ranking: ranked.iter().map(|&i| (table.names[i].clone(), s[i])).collect(),
            hitrate_100: hitrate_at(&ranked, &gt, 100.0).context(&ctx)?,
            hitrate_150: hitrate_at(&ranked, &gt, 150.0).context(&ctx)?,
            ndcg_5: ndcg_at(&ranked, &gt, 5).context(&ctx)?,
        });
    }
    let mean = |f: fn(&EventDiagnosis) -> f64| out.iter().map(f).sum::<f64>() / out.len() as f64;
    let report = DiagnosisReport {
        top_m: m,
        hitrate_100: mean(|d| d.hitrate_100),
        hitrate_150: mean(|d| d.hitrate_150),
        ndcg_5: mean(|d| d.ndcg_5),
        events: out,
    };
    if let Some(p) = out_path {
        let mut lines = vec!["event,rank,feature,score".to_owned()];
        for d in &report.events {
            for (r, (name, s)) in d.ranking.iter().enumerate() {
                lines.push(format!("{},{},{name},{}", d.event, r + 1, io::fmt_f64(*s)));
            }
        }
        write_text(&p, &lines.join("\n"))?;
    }
    Ok(report)
}
