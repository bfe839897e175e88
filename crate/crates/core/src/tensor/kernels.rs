//! Raw numeric kernels behind the tape primitives.

/// `c = op(a) * op(b) + beta * c` for row-major buffers, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`. A transposed operand is stored in its
/// untransposed layout (`k x m` for `a`, `n x k` for `b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices are exactly m*k, k*n and m*n long and the strides
    // above address only those elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Temporal cross-channel convolution over `batch` sequences of shape
/// `len x ch_in`, zero padded by `width / 2` on both sides.
///
/// `kernel` is laid out `[width, ch_in, ch_out]`; output is `len x ch_out`.
pub(crate) fn conv1d_forward(
    x: &[f64],
    kernel: &[f64],
    bias: &[f64],
    batch: usize,
    len: usize,
    ch_in: usize,
    ch_out: usize,
    width: usize,
) -> Vec<f64> {
    let pad = width / 2;
    let mut out = vec![0.0; batch * len * ch_out];
    for b in 0..batch {
        let xb = &x[b * len * ch_in..(b + 1) * len * ch_in];
        let ob = &mut out[b * len * ch_out..(b + 1) * len * ch_out];
        for t in 0..len {
            let orow = &mut ob[t * ch_out..(t + 1) * ch_out];
            orow.copy_from_slice(bias);
            for tap in 0..width {
                let src = t + tap;
                if src < pad || src - pad >= len {
                    continue;
                }
                let xrow = &xb[(src - pad) * ch_in..(src - pad + 1) * ch_in];
                let ktap = &kernel[tap * ch_in * ch_out..(tap + 1) * ch_in * ch_out];
                for (c, &xv) in xrow.iter().enumerate() {
                    let krow = &ktap[c * ch_out..(c + 1) * ch_out];
                    for (o, &kv) in krow.iter().enumerate() {
                        orow[o] += xv * kv;
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input, kernel and bias gradients of [`conv1d_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    x: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    batch: usize,
    len: usize,
    ch_in: usize,
    ch_out: usize,
    width: usize,
    mut dx: Option<&mut [f64]>,
    mut dk: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let pad = width / 2;
    for b in 0..batch {
        let xb = &x[b * len * ch_in..(b + 1) * len * ch_in];
        let gb = &grad_out[b * len * ch_out..(b + 1) * len * ch_out];
        for t in 0..len {
            let grow = &gb[t * ch_out..(t + 1) * ch_out];
            if let Some(db) = db.as_deref_mut() {
                for (d, g) in db.iter_mut().zip(grow) {
                    *d += g;
                }
            }
            for tap in 0..width {
                let src = t + tap;
                if src < pad || src - pad >= len {
                    continue;
                }
                let row = src - pad;
                let base = tap * ch_in * ch_out;
                for c in 0..ch_in {
                    let xv = xb[row * ch_in + c];
                    let koff = base + c * ch_out;
                    if let Some(dk) = dk.as_deref_mut() {
                        for o in 0..ch_out {
                            dk[koff + o] += xv * grow[o];
                        }
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let mut acc = 0.0;
                        for o in 0..ch_out {
                            acc += kernel[koff + o] * grow[o];
                        }
                        dx[b * len * ch_in + row * ch_in + c] += acc;
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
