use super::{Tape, Tensor, TensorError, Var};

/// Compares tape gradients of `f` at `x` against central differences.
///
/// Tensor-valued outputs are reduced to a scalar with a fixed, non-uniform
/// projection so every output component contributes. Returns
/// `max_j |analytic_j - numeric_j| / max(1, |analytic_j|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    assert!(h > 0.0, "step must be positive");
    let project = |tape: &mut Tape, input: Tensor, requires_grad: bool| -> Result<(Var, Var), TensorError> {
        let xv = tape.leaf(input, requires_grad);
        let y = f(tape, xv)?;
        let n = tape.value(y).len();
        let loss = if n == 1 {
            y
        } else {
            let weights = (0..n).map(|j| 1.0 + 0.5 * (1.3 * j as f64 + 0.7).sin()).collect();
            let w = tape.constant(Tensor::from_parts(tape.shape(y).to_vec(), weights));
            let wy = tape.mul(y, w)?;
            tape.sum(wy)?
        };
        Ok((xv, loss))
    };

    let mut tape = Tape::new();
    let (xv, loss) = project(&mut tape, x.clone(), true)?;
    tape.backward(loss)?;
    let analytic = tape.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |input: Tensor| -> Result<f64, TensorError> {
        let mut t = Tape::new();
        let (_, l) = project(&mut t, input, false)?;
        Ok(t.value(l).item())
    };
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[j] += h;
        let mut minus = x.clone();
        minus.data_mut()[j] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[j];
        let err = (a - numeric).abs() / a.abs().max(1.0);
        if err.is_nan() {
            return Err(TensorError::Domain {
                op: "grad_check",
                detail: format!("NaN gradient at component {j}"),
            });
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
