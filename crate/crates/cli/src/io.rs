//! CSV artifacts. Floats are written with 17 significant digits so every
//! `f64` survives a write/read cycle unchanged.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use mtad_gat::scoring::ScoreSeries;
use mtad_gat::tensor::Tensor;

use crate::error::{CliError, CliResult, Context};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn reader(path: &Path) -> CliResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::data(format!("opening {}", path.display()), e.to_string()))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::data(format!("reading {}", path.display()), e.to_string())
}

fn parse(path: &Path, line: usize, col: &str, field: &str) -> CliResult<f64> {
    let v: f64 = field.trim().parse().map_err(|_| {
        CliError::data(
            format!("reading {}", path.display()),
            format!("line {line}, column {col}: {field:?} is not a number"),
        )
    })?;
    if !v.is_finite() {
        return Err(CliError::data(
            format!("reading {}", path.display()),
            format!("line {line}, column {col}: non-finite value"),
        ));
    }
    Ok(v)
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> CliResult<()> {
    let ctx = || format!("writing {}", path.display());
    let mut w = create(path)?;
    for line in lines {
        writeln!(w, "{line}").with_context(ctx)?;
    }
    w.flush().with_context(ctx)
}

/// A values file: header of feature names, one numeric row per timestamp.
pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, Tensor)> {
    let mut r = reader(path)?;
    let names: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_owned).collect();
    if names.is_empty() {
        return Err(CliError::data(format!("reading {}", path.display()), "no columns"));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for (field, name) in rec.iter().zip(&names) {
            data.push(parse(path, i + 2, name, field)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::data(format!("reading {}", path.display()), "no data rows"));
    }
    let t = Tensor::new(vec![rows, names.len()], data).with_context(|| format!("reading {}", path.display()))?;
    Ok((names, t))
}

pub fn write_matrix(path: &Path, names: &[String], x: &Tensor) -> CliResult<()> {
    let k = names.len();
    let header = std::iter::once(names.join(","));
    let rows = x.data().chunks(k).map(|r| r.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(","));
    write_lines(path, header.chain(rows))
}

/// A single 0/1 column with a header.
pub fn read_labels(path: &Path) -> CliResult<Vec<bool>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        out.push(match rec.get(rec.len().saturating_sub(1)).map(str::trim) {
            Some("0") => false,
            Some("1") => true,
            other => {
                return Err(CliError::data(
                    format!("reading {}", path.display()),
                    format!("line {}: expected 0 or 1, got {other:?}", i + 2),
                ))
            }
        });
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[bool]) -> CliResult<()> {
    let rows = labels.iter().map(|&l| if l { "1".to_owned() } else { "0".to_owned() });
    write_lines(path, std::iter::once("label".to_owned()).chain(rows))
}

/// `timestamp,flag` for every timestamp of the stream.
pub fn write_alarms(path: &Path, flags: &[bool]) -> CliResult<()> {
    let rows = flags.iter().enumerate().map(|(t, &f)| format!("{t},{}", u8::from(f)));
    write_lines(path, std::iter::once("timestamp,flag".to_owned()).chain(rows))
}

pub fn read_alarms(path: &Path) -> CliResult<Vec<bool>> {
    read_labels(path)
}

/// One labelled anomaly and the features responsible for it. `end` is inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct RootCause {
    pub start: usize,
    pub end: usize,
    pub features: Vec<String>,
}

pub fn read_root_causes(path: &Path) -> CliResult<Vec<RootCause>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |msg: String| CliError::data(format!("reading {}", path.display()), format!("line {}: {msg}", i + 2));
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", rec.len())));
        }
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(format!("{s:?} is not a row index")));
        let (start, end) = (num(&rec[0])?, num(&rec[1])?);
        if end < start {
            return Err(bad(format!("event ends ({end}) before it starts ({start})")));
        }
        let features: Vec<String> = rec[2].split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect();
        if features.is_empty() {
            return Err(bad("no root-cause features".into()));
        }
        out.push(RootCause { start, end, features });
    }
    Ok(out)
}

pub fn write_root_causes(path: &Path, events: &[RootCause]) -> CliResult<()> {
    let rows = events
        .iter()
        .map(|e| format!("{},{},\"{}\"", e.start, e.end, e.features.join(",")));
    write_lines(path, std::iter::once("event_start,event_end,features".to_owned()).chain(rows))
}

/// Scores read back from a scores CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub names: Vec<String>,
    pub timestamps: Vec<usize>,
    pub totals: Vec<f64>,
    /// Per-timestamp `s_i`.
    pub features: Vec<Vec<f64>>,
}

impl ScoreTable {
    /// Length of the scored stream, including the unscored head.
    pub fn stream_len(&self) -> usize {
        self.timestamps.last().map_or(0, |t| t + 1)
    }
}

const SCORE_PREFIX: &str = "s_";

/// `timestamp,total,s_<feature>...`
pub fn write_scores(path: &Path, names: &[String], scores: &ScoreSeries) -> CliResult<()> {
    let header = std::iter::once(
        ["timestamp".to_owned(), "total".to_owned()]
            .into_iter()
            .chain(names.iter().map(|n| format!("{SCORE_PREFIX}{n}")))
            .collect::<Vec<_>>()
            .join(","),
    );
    let rows = scores.rows.iter().map(|r| {
        let mut f = vec![r.timestamp.to_string(), fmt_f64(r.total)];
        f.extend(r.scores.iter().map(|&v| fmt_f64(v)));
        f.join(",")
    });
    write_lines(path, header.chain(rows))
}

pub fn read_scores(path: &Path) -> CliResult<ScoreTable> {
    let mut r = reader(path)?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_owned).collect();
    let bad = |msg: String| CliError::data(format!("reading {}", path.display()), msg);
    if header.len() < 3 || header[0] != "timestamp" || header[1] != "total" {
        return Err(bad("expected a header timestamp,total,s_<feature>...".into()));
    }
    let names = header[2..]
        .iter()
        .map(|h| h.strip_prefix(SCORE_PREFIX).map(str::to_owned).ok_or_else(|| bad(format!("column {h:?} lacks the s_ prefix"))))
        .collect::<CliResult<Vec<_>>>()?;
    let mut table = ScoreTable {
        names,
        timestamps: Vec::new(),
        totals: Vec::new(),
        features: Vec::new(),
    };
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let ts: usize = rec[0].trim().parse().map_err(|_| bad(format!("line {line}: bad timestamp {:?}", &rec[0])))?;
        if table.timestamps.last().is_some_and(|&p| ts <= p) {
            return Err(bad(format!("line {line}: timestamps must increase")));
        }
        table.timestamps.push(ts);
        table.totals.push(parse(path, line, "total", &rec[1])?);
        let row = (2..rec.len())
            .map(|c| parse(path, line, &header[c], &rec[c]))
            .collect::<CliResult<Vec<_>>>()?;
        table.features.push(row);
    }
    if table.timestamps.is_empty() {
        return Err(bad("no score rows".into()));
    }
    Ok(table)
}

/// An `N x N` attention matrix without a header.
pub fn write_square(path: &Path, m: &Tensor) -> CliResult<()> {
    let side = m.shape()[0];
    let rows = m.data().chunks(side).map(|r| r.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(","));
    write_lines(path, rows)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(format!("writing {}", path.display()), e.to_string()))?;
    write_lines(path, std::iter::once(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_roundtrip_exactly() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0, 0.30000000000000004] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn matrix_and_labels_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let names = vec!["a".to_owned(), "b".to_owned()];
        let x = Tensor::new(vec![2, 2], vec![0.1, 0.2, 1.0 / 7.0, -3.0]).unwrap();
        write_matrix(&p, &names, &x).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), (names, x));
        let l = dir.path().join("l.csv");
        write_labels(&l, &[true, false, true]).unwrap();
        assert_eq!(read_labels(&l).unwrap(), vec![true, false, true]);
    }

    #[test]
    fn root_causes_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rc.csv");
        let ev = vec![
            RootCause { start: 3, end: 9, features: vec!["x0".into(), "x2".into()] },
            RootCause { start: 20, end: 20, features: vec!["x1".into()] },
        ];
        write_root_causes(&p, &ev).unwrap();
        assert_eq!(read_root_causes(&p).unwrap(), ev);
    }

    #[test]
    fn bad_cells_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "a,b\n1,2\n3,oops\n").unwrap();
        let err = read_matrix(&p).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("line 3"), "{err}");
        let missing = read_matrix(&dir.path().join("absent.csv")).unwrap_err();
        assert!(missing.to_string().contains("absent.csv"));
        assert_eq!(missing.exit_code(), 3);
    }
}
