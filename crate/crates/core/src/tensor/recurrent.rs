//! Fused GRU recurrence kernels.
//!
//! The scan keeps only the gate activations it needs for the reverse pass,
//! stored step-major (`[n, B, d]`), instead of a dozen tape nodes per step.

use super::kernels::{gemm, sigmoid};

/// Saved activations of one forward scan.
#[derive(Debug, Clone)]
pub(crate) struct GruTrace {
    pub batch: usize,
    pub steps: usize,
    pub hidden: usize,
    /// `h_0 .. h_n`, `[n + 1, B, d]`.
    pub states: Vec<f64>,
    pub update: Vec<f64>,
    pub reset: Vec<f64>,
    pub candidate: Vec<f64>,
    /// `r ⊙ h_{t}` per step.
    pub gated: Vec<f64>,
}

/// `[B, n, d] -> [n, B, d]`
fn to_step_major(x: &[f64], batch: usize, steps: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for t in 0..steps {
            out[(t * batch + b) * d..(t * batch + b + 1) * d].copy_from_slice(&x[(b * steps + t) * d..(b * steps + t + 1) * d]);
        }
    }
    out
}

/// Runs the recurrence from `h_0 = 0` given precomputed input projections
/// (each `[B, n, d]`, biases included) and recurrent weights (`[d, d]`).
pub(crate) fn gru_scan_forward(proj: [&[f64]; 3], recurrent: [&[f64]; 3], batch: usize, steps: usize, d: usize) -> GruTrace {
    let size = batch * d;
    let [pz, pr, pc] = proj.map(|p| to_step_major(p, batch, steps, d));
    let [uz, ur, uc] = recurrent;
    let mut states = vec![0.0; (steps + 1) * size];
    let mut update = pz;
    let mut reset = pr;
    let mut candidate = pc;
    let mut gated = vec![0.0; steps * size];
    for t in 0..steps {
        let (prev, next) = states.split_at_mut((t + 1) * size);
        let h = &prev[t * size..];
        let z = &mut update[t * size..(t + 1) * size];
        gemm(batch, d, d, h, false, uz, false, z, 1.0);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        let r = &mut reset[t * size..(t + 1) * size];
        gemm(batch, d, d, h, false, ur, false, r, 1.0);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let rh = &mut gated[t * size..(t + 1) * size];
        for ((o, &rv), &hv) in rh.iter_mut().zip(r.iter()).zip(h) {
            *o = rv * hv;
        }
        let c = &mut candidate[t * size..(t + 1) * size];
        gemm(batch, d, d, rh, false, uc, false, c, 1.0);
        c.iter_mut().for_each(|v| *v = v.tanh());
        let h_next = &mut next[..size];
        for j in 0..size {
            h_next[j] = h[j] + z[j] * (c[j] - h[j]);
        }
    }
    GruTrace {
        batch,
        steps,
        hidden: d,
        states,
        update,
        reset,
        candidate,
        gated,
    }
}

/// Gradients of a scan with respect to its inputs.
pub(crate) struct GruGrads {
    /// Per projection, `[B, n, d]`.
    pub proj: [Vec<f64>; 3],
    /// Per recurrent matrix, `[d, d]`.
    pub recurrent: [Vec<f64>; 3],
}

/// Back-propagates `grad_last = dL/dh_n` through the scan.
pub(crate) fn gru_scan_backward(trace: &GruTrace, recurrent: [&[f64]; 3], grad_last: &[f64]) -> GruGrads {
    let (batch, steps, d) = (trace.batch, trace.steps, trace.hidden);
    let size = batch * d;
    let [uz, ur, uc] = recurrent;
    let mut daz = vec![0.0; steps * size];
    let mut dar = vec![0.0; steps * size];
    let mut dac = vec![0.0; steps * size];
    let mut g = grad_last.to_vec();
    let mut drh = vec![0.0; size];
    for t in (0..steps).rev() {
        let span = t * size..(t + 1) * size;
        let h = &trace.states[span.clone()];
        let z = &trace.update[span.clone()];
        let r = &trace.reset[span.clone()];
        let c = &trace.candidate[span.clone()];
        let (az, ar, ac) = (&mut daz[span.clone()], &mut dar[span.clone()], &mut dac[span]);
        for j in 0..size {
            az[j] = g[j] * (c[j] - h[j]) * z[j] * (1.0 - z[j]);
            ac[j] = g[j] * z[j] * (1.0 - c[j] * c[j]);
        }
        gemm(batch, d, d, ac, false, uc, true, &mut drh, 0.0);
        for j in 0..size {
            ar[j] = drh[j] * h[j] * r[j] * (1.0 - r[j]);
            g[j] = g[j] * (1.0 - z[j]) + drh[j] * r[j];
        }
        gemm(batch, d, d, az, false, uz, true, &mut g, 1.0);
        gemm(batch, d, d, ar, false, ur, true, &mut g, 1.0);
    }
    let rows = steps * batch;
    let states = &trace.states[..rows * d];
    let mut du = [vec![0.0; d * d], vec![0.0; d * d], vec![0.0; d * d]];
    gemm(d, rows, d, states, true, &daz, false, &mut du[0], 0.0);
    gemm(d, rows, d, states, true, &dar, false, &mut du[1], 0.0);
    gemm(d, rows, d, &trace.gated, true, &dac, false, &mut du[2], 0.0);
    let back = |src: &[f64]| {
        let mut out = vec![0.0; src.len()];
        for t in 0..steps {
            for b in 0..batch {
                out[(b * steps + t) * d..(b * steps + t + 1) * d].copy_from_slice(&src[(t * batch + b) * d..(t * batch + b + 1) * d]);
            }
        }
        out
    };
    GruGrads {
        proj: [back(&daz), back(&dar), back(&dac)],
        recurrent: du,
    }
}
