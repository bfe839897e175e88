//! Segment-adjusted detection metrics and root-cause ranking metrics.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "protocol", content = "delay", rename_all = "kebab-case")]
pub enum Protocol {
    RawPoint,
    PointAdjust,
    Delay(usize),
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::RawPoint => write!(f, "raw-point"),
            Protocol::PointAdjust => write!(f, "point-adjust"),
            Protocol::Delay(d) => write!(f, "delay({d})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub protocol: Protocol,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn same_len(pred: &[bool], labels: &[bool]) -> Result<()> {
    if pred.len() != labels.len() {
        return Err(Error::data(format!(
            "predictions have {} entries, labels have {}",
            pred.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Maximal runs of true labels as half-open `[start, end)` ranges.
pub fn segments(labels: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] {
            let start = i;
            while i < labels.len() && labels[i] {
                i += 1;
            }
            out.push((start, i));
        } else {
            i += 1;
        }
    }
    out
}

/// Marks a whole label segment as detected when any point in it is.
pub fn point_adjust(pred: &[bool], labels: &[bool]) -> Result<Vec<bool>> {
    delay_adjust(pred, labels, usize::MAX)
}

/// Like [`point_adjust`], but a segment starting at `f` only counts when a
/// detection falls in `[f, f + delay]` (and inside the segment).
pub fn delay_adjust(pred: &[bool], labels: &[bool], delay: usize) -> Result<Vec<bool>> {
    same_len(pred, labels)?;
    let mut out = pred.to_vec();
    for (start, end) in segments(labels) {
        let last = end.min(start.saturating_add(delay).saturating_add(1));
        if pred[start..last].iter().any(|&p| p) {
            out[start..end].iter_mut().for_each(|p| *p = true);
        }
    }
    Ok(out)
}

/// Pointwise precision, recall and F1.
pub fn prf1(pred: &[bool], labels: &[bool], protocol: Protocol) -> Result<EvalReport> {
    same_len(pred, labels)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &l) in pred.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let precision = ratio(tp, fp);
    let recall = ratio(tp, fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalReport {
        protocol,
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
    })
}

/// Applies the protocol's adjustment and scores the result.
pub fn evaluate(pred: &[bool], labels: &[bool], protocol: Protocol) -> Result<EvalReport> {
    let adjusted = match protocol {
        Protocol::RawPoint => {
            same_len(pred, labels)?;
            pred.to_vec()
        }
        Protocol::PointAdjust => point_adjust(pred, labels)?,
        Protocol::Delay(d) => delay_adjust(pred, labels, d)?,
    };
    prf1(&adjusted, labels, protocol)
}

/// Top-`m` features by descending score, ties broken by lower index.
pub fn diagnose(scores: &[f64], m: usize) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::data("no feature scores to rank"));
    }
    if m == 0 || m > scores.len() {
        return Err(Error::config(format!(
            "diagnosis cut-off must lie in 1..={}, got {m}",
            scores.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(m);
    Ok(idx)
}

fn check_gt(gt: &[usize]) -> Result<HashSet<usize>> {
    if gt.is_empty() {
        return Err(Error::data("root-cause set is empty"));
    }
    Ok(gt.iter().copied().collect())
}

/// Share of the root causes found in the top `floor(percent/100 * |GT|)` candidates.
pub fn hitrate_at(candidates: &[usize], gt: &[usize], percent: f64) -> Result<f64> {
    let set = check_gt(gt)?;
    let depth = (percent / 100.0 * set.len() as f64 + 1e-9).floor() as usize;
    let hits = candidates.iter().take(depth).filter(|c| set.contains(c)).count();
    Ok(hits as f64 / set.len() as f64)
}

/// Binary-relevance NDCG over the first `cutoff` candidates.
pub fn ndcg_at(candidates: &[usize], gt: &[usize], cutoff: usize) -> Result<f64> {
    let set = check_gt(gt)?;
    let gain = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = candidates
        .iter()
        .take(cutoff)
        .enumerate()
        .filter(|(_, c)| set.contains(c))
        .map(|(r, _)| gain(r))
        .sum();
    let ideal: f64 = (0..set.len().min(cutoff)).map(gain).sum();
    Ok(if ideal > 0.0 { dcg / ideal } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn point_adjust_fills_detected_segment() {
        assert_eq!(point_adjust(&b(&[0, 1, 0]), &b(&[1, 1, 0])).unwrap(), b(&[1, 1, 0]));
        assert_eq!(point_adjust(&b(&[0, 0, 0]), &b(&[1, 1, 0])).unwrap(), b(&[0, 0, 0]));
        assert!(matches!(point_adjust(&b(&[0]), &b(&[1, 1])), Err(Error::Data(_))));
    }

    #[test]
    fn delay_window() {
        let mut labels = vec![false; 40];
        labels[10..=20].iter_mut().for_each(|l| *l = true);
        let mut late = vec![false; 40];
        late[25] = true;
        assert_eq!(delay_adjust(&late, &labels, 10).unwrap(), late);
        let mut on_time = vec![false; 40];
        on_time[15] = true;
        let adj = delay_adjust(&on_time, &labels, 10).unwrap();
        assert!(adj[10..=20].iter().all(|&p| p));
        let mut edge = vec![false; 40];
        edge[20] = true;
        assert_eq!(delay_adjust(&edge, &labels, 9).unwrap(), edge);
        assert!(delay_adjust(&edge, &labels, 10).unwrap()[10]);
    }

    #[test]
    fn prf1_cases() {
        let l = b(&[1, 0, 1, 0]);
        let perfect = prf1(&l, &l, Protocol::RawPoint).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
        let none = prf1(&b(&[0, 0, 0, 0]), &l, Protocol::RawPoint).unwrap();
        assert_eq!((none.recall, none.f1), (0.0, 0.0));
    }

    #[test]
    fn diagnose_ranks_with_index_ties() {
        assert_eq!(diagnose(&[0.1, 0.9, 0.5], 2).unwrap(), vec![1, 2]);
        assert_eq!(diagnose(&[0.3; 3], 3).unwrap(), vec![0, 1, 2]);
        assert!(matches!(diagnose(&[0.1, 0.2], 3), Err(Error::Config(_))));
    }

    #[test]
    fn hitrate_cases() {
        let (a, bb, x) = (0, 1, 7);
        assert_eq!(hitrate_at(&[a, x], &[a, bb], 100.0).unwrap(), 0.5);
        assert_eq!(hitrate_at(&[x, a, bb], &[a, bb], 100.0).unwrap(), 0.5);
        assert_eq!(hitrate_at(&[x, a, bb], &[a, bb], 150.0).unwrap(), 1.0);
        assert_eq!(hitrate_at(&[bb, a, x], &[a, bb], 100.0).unwrap(), 1.0);
        assert!(matches!(hitrate_at(&[a], &[], 100.0), Err(Error::Data(_))));
    }

    #[test]
    fn ndcg_cases() {
        assert_eq!(ndcg_at(&[3, 1, 2], &[3], 5).unwrap(), 1.0);
        assert!((ndcg_at(&[1, 3, 2], &[3], 5).unwrap() - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert_eq!(ndcg_at(&[2, 5, 0], &[5, 2], 5).unwrap(), 1.0);
    }
}
