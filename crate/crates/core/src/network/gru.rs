//! Gated recurrent unit, unidirectional, scanned left to right from a zero state.
//!
//! ```text
//! z  = σ(x W_z + h U_z + b_z)
//! r  = σ(x W_r + h U_r + b_r)
//! h~ = tanh(x W_h + (r ⊙ h) U_h + b_h)
//! h' = (1 - z) ⊙ h + z ⊙ h~
//! ```

use super::params::{GruParams, GruVars};
use crate::tensor::{Tape, Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

/// Gate pre-activations contributed by the input at one step.
struct InputProjection {
    update: Var,
    reset: Var,
    candidate: Var,
}

fn step(tape: &mut Tape, x: InputProjection, h: Var, gru: &GruVars) -> Result<Var> {
    let hu = tape.matmul(h, gru.u_update)?;
    let z = tape.add(x.update, hu)?;
    let z = tape.sigmoid(z)?;
    let hr = tape.matmul(h, gru.u_reset)?;
    let r = tape.add(x.reset, hr)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.mul(r, h)?;
    let rhu = tape.matmul(rh, gru.u_candidate)?;
    let cand = tape.add(x.candidate, rhu)?;
    let cand = tape.tanh(cand)?;
    let delta = tape.sub(cand, h)?;
    let delta = tape.mul(z, delta)?;
    tape.add(h, delta)
}

fn project(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let p = tape.matmul(x, w)?;
    tape.add_bias(p, b)
}

/// One GRU step on the tape: `x_t` is `[B, input]`, `h_prev` is `[B, d1]`.
pub fn gru_cell(tape: &mut Tape, x_t: Var, h_prev: Var, gru: &GruVars) -> Result<Var> {
    let x = InputProjection {
        update: project(tape, x_t, gru.w_update, gru.b_update)?,
        reset: project(tape, x_t, gru.w_reset, gru.b_reset)?,
        candidate: project(tape, x_t, gru.w_candidate, gru.b_candidate)?,
    };
    step(tape, x, h_prev, gru)
}

/// Runs the GRU over every row of `seq` (`[B, n, input]`) and returns the
/// final hidden state `[B, d1]`.
///
/// Input projections for all steps are computed with one matrix product per
/// gate; the recurrence itself is a single fused tape node.
pub fn gru_scan(tape: &mut Tape, seq: Var, gru: &GruVars) -> Result<Var> {
    let shape = tape.shape(seq).to_vec();
    let [batch, steps, width] = shape[..] else {
        return Err(TensorError::Dimension {
            op: "gru_scan",
            left: shape,
            right: vec![],
        });
    };
    let hidden = tape.shape(gru.u_update)[0];
    let flat = tape.reshape(seq, &[batch * steps, width])?;
    let mut gate = |w: Var, b: Var| -> Result<Var> {
        let p = project(tape, flat, w, b)?;
        tape.reshape(p, &[batch, steps, hidden])
    };
    let proj = [
        gate(gru.w_update, gru.b_update)?,
        gate(gru.w_reset, gru.b_reset)?,
        gate(gru.w_candidate, gru.b_candidate)?,
    ];
    tape.gru_scan(proj, [gru.u_update, gru.u_reset, gru.u_candidate])
}

/// Plain single-step evaluation of one input vector.
pub fn gru_cell_eval(x_t: &[f64], h_prev: &[f64], params: &GruParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = register(&mut tape, params);
    let x = tape.constant(Tensor::new(vec![1, x_t.len()], x_t.to_vec())?);
    let h = tape.constant(Tensor::new(vec![1, h_prev.len()], h_prev.to_vec())?);
    let out = gru_cell(&mut tape, x, h, &vars)?;
    Ok(tape.value(out).data().to_vec())
}

pub(crate) fn register(tape: &mut Tape, p: &GruParams) -> GruVars {
    let mut leaf = |t: &Tensor| tape.leaf(t.clone(), true);
    GruVars {
        w_update: leaf(&p.w_update),
        w_reset: leaf(&p.w_reset),
        w_candidate: leaf(&p.w_candidate),
        u_update: leaf(&p.u_update),
        u_reset: leaf(&p.u_reset),
        u_candidate: leaf(&p.u_candidate),
        b_update: leaf(&p.b_update),
        b_reset: leaf(&p.b_reset),
        b_candidate: leaf(&p.b_candidate),
    }
}
