use mtad_gat::evaluation::{delay_adjust, diagnose, hitrate_at, ndcg_at, point_adjust, segments};
use mtad_gat::gat::{gat_forward, GatParams};
use mtad_gat::network::{gaussian_kernel, kl_divergence};
use mtad_gat::preprocess::{fit_norm, normalize};
use mtad_gat::scoring::{detect, ScoreRow, ScoreSeries};
use mtad_gat::tensor::{Tape, Tensor};
use mtad_gat::trainer::make_windows;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn gat_case() -> impl Strategy<Value = (Tensor, Tensor, Vec<usize>)> {
    (2usize..9, 1usize..6).prop_flat_map(|(count, m)| {
        (
            matrix(count, m, -3.0, 3.0),
            prop::collection::vec(-2.0f64..2.0, 2 * m).prop_map(Tensor::from_vec),
            Just((0..count).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

/// Brute force: walk each segment explicitly and credit it when any point in
/// `[start, min(start + delay, end - 1)]` is predicted.
fn adjust_oracle(pred: &[bool], labels: &[bool], delay: Option<usize>) -> Vec<bool> {
    let mut out = pred.to_vec();
    let mut start = None;
    for i in 0..=labels.len() {
        let inside = i < labels.len() && labels[i];
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                let last = match delay {
                    Some(d) => (s + d).min(i - 1),
                    None => i - 1,
                };
                if (s..=last).any(|j| pred[j]) {
                    (s..i).for_each(|j| out[j] = true);
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn flags(max: usize) -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (1usize..=max).prop_flat_map(|len| (prop::collection::vec(any::<bool>(), len), prop::collection::vec(any::<bool>(), len)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn attention_rows_are_stochastic_and_equivariant((nodes, w, perm) in gat_case()) {
        let params = GatParams::new(w).unwrap();
        let out = gat_forward(&nodes, &params).unwrap();
        let count = nodes.shape()[0];
        let m = nodes.shape()[1];
        for i in 0..count {
            let s: f64 = out.alpha.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(out.alpha.row(i).iter().all(|&a| a >= 0.0));
        }
        let rows: Vec<Vec<f64>> = perm.iter().map(|&p| nodes.row(p).to_vec()).collect();
        let permuted = gat_forward(&Tensor::from_rows(&rows).unwrap(), &params).unwrap();
        for i in 0..count {
            for c in 0..m {
                prop_assert!((permuted.h.at(i, c) - out.h.at(perm[i], c)).abs() < 1e-12);
            }
            for j in 0..count {
                prop_assert!((permuted.alpha.at(i, j) - out.alpha.at(perm[i], perm[j])).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn point_adjust_matches_oracle((pred, labels) in flags(30)) {
        prop_assert_eq!(point_adjust(&pred, &labels).unwrap(), adjust_oracle(&pred, &labels, None));
    }

    #[test]
    fn delay_adjust_matches_oracle((pred, labels) in flags(30), delay in 0usize..12) {
        prop_assert_eq!(delay_adjust(&pred, &labels, delay).unwrap(), adjust_oracle(&pred, &labels, Some(delay)));
    }

    #[test]
    fn full_delay_is_point_adjust((pred, labels) in flags(30)) {
        let len = labels.len();
        prop_assert_eq!(delay_adjust(&pred, &labels, len).unwrap(), point_adjust(&pred, &labels).unwrap());
    }

    #[test]
    fn adjustment_only_adds_true_positives((pred, labels) in flags(30), delay in 0usize..12) {
        let adj = delay_adjust(&pred, &labels, delay).unwrap();
        for i in 0..pred.len() {
            prop_assert!(adj[i] >= pred[i]);
            if adj[i] && !pred[i] {
                prop_assert!(labels[i]);
            }
        }
        let covered: usize = segments(&labels).iter().map(|(s, e)| e - s).sum();
        prop_assert_eq!(covered, labels.iter().filter(|&&l| l).count());
    }

    #[test]
    fn softmax_rows_sum_to_one(x in matrix(4, 7, -30.0, 30.0)) {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let s = tape.softmax(v).unwrap();
        let out = tape.value(s);
        for i in 0..4 {
            prop_assert!((out.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reused_operand_accumulates(x in prop::collection::vec(-5.0f64..5.0, 1..10)) {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(x.clone()), true);
        let y = tape.add(a, a).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        prop_assert!(tape.grad(a).unwrap().data().iter().all(|&g| g == 2.0));
    }

    #[test]
    fn kl_is_non_negative(
        mu in prop::collection::vec(-3.0f64..3.0, 1..8),
        log_sigma in prop::collection::vec(-2.0f64..2.0, 8),
    ) {
        let sigma: Vec<f64> = log_sigma[..mu.len()].iter().map(|v| v.exp()).collect();
        prop_assert!(kl_divergence(&mu, &sigma).unwrap() >= 0.0);
    }

    #[test]
    fn kernel_falls_with_distance(mu in -2.0f64..2.0, sigma in 0.01f64..3.0, a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        let p_near = gaussian_kernel(mu + near, mu, sigma);
        let p_far = gaussian_kernel(mu - far, mu, sigma);
        prop_assert!(p_near >= p_far);
        prop_assert!(p_near <= 1.0 && p_far >= 0.0);
    }

    #[test]
    fn windows_cover_the_series(t in 2usize..60, n in 1usize..20, stride in 1usize..5) {
        prop_assume!(t > n);
        let series = Tensor::new(vec![t, 2], (0..2 * t).map(|i| i as f64).collect()).unwrap();
        let w = make_windows(&series, n, stride).unwrap();
        prop_assert_eq!(w.len(), (t - n - 1) / stride + 1);
        for (i, s) in w.iter().enumerate() {
            let start = i * stride;
            prop_assert_eq!(s.window.row(0), series.row(start));
            prop_assert_eq!(&s.target[..], series.row(start + n));
        }
    }

    #[test]
    fn normalised_training_data_lies_in_unit_box(x in matrix(12, 3, -50.0, 50.0)) {
        let stats = fit_norm(&x).unwrap();
        let out = normalize(&x, &stats).unwrap();
        prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn diagnosis_sorts_descending(scores in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let ranked = diagnose(&scores, scores.len()).unwrap();
        let mut seen = ranked.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..scores.len()).collect::<Vec<_>>());
        for pair in ranked.windows(2) {
            prop_assert!(scores[pair[0]] >= scores[pair[1]]);
        }
    }

    #[test]
    fn ranking_metrics_are_bounded_and_monotone(
        order in Just((0..10usize).collect::<Vec<_>>()).prop_shuffle(),
        gt in prop::collection::btree_set(0usize..10, 1..5),
    ) {
        let gt: Vec<usize> = gt.into_iter().collect();
        let h100 = hitrate_at(&order, &gt, 100.0).unwrap();
        let h150 = hitrate_at(&order, &gt, 150.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&h100) && h100 <= h150 && h150 <= 1.0);
        let ndcg = ndcg_at(&order, &gt, 5).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ndcg));
    }

    #[test]
    fn raising_the_threshold_never_adds_alarms(totals in prop::collection::vec(0.0f64..10.0, 1..40), a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let series = ScoreSeries {
            offset: 3,
            len: totals.len() + 3,
            rows: totals.iter().enumerate().map(|(i, &t)| ScoreRow {
                timestamp: i + 3,
                total: t,
                scores: vec![t],
                sq_error: vec![t],
                prob: vec![1.0],
            }).collect(),
            attention: Vec::new(),
        };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (low, high) = (detect(&series, lo), detect(&series, hi));
        prop_assert!(low.iter().zip(&high).all(|(l, h)| l >= h));
        prop_assert!(low[..3].iter().all(|&f| !f));
    }
}
