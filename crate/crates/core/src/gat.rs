//! Single-head graph attention over a complete graph with self-loops.
//!
//! For nodes `v_1..v_N` of dimension `m` and a learnable `w ∈ R^{2m}`:
//!
//! ```text
//! e_ij  = LeakyReLU(w · (v_i ⊕ v_j))
//! α_ij  = softmax_j(e_ij)
//! h_i   = sigmoid(Σ_j α_ij v_j)
//! ```
//!
//! `w · (v_i ⊕ v_j)` splits into `w_src · v_i + w_dst · v_j`, so the score
//! matrix is a pairwise sum of two projections and never materialises the
//! concatenations. The feature-oriented layer treats each feature's window as
//! one node; the time-oriented layer treats each timestamp as one node.

use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::{Error, Result};

/// Negative slope of the LeakyReLU applied to attention logits.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub w: Tensor,
}

impl GatParams {
    /// Wraps a weight vector; its length must be even (`2m`).
    pub fn new(w: Tensor) -> Result<Self> {
        if w.shape().len() != 1 || !w.len().is_multiple_of(2) {
            return Err(Error::config(format!(
                "GAT weight must be a vector of length 2m, got shape {:?}",
                w.shape()
            )));
        }
        Ok(Self { w })
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            w: Tensor::zeros(&[2 * m]),
        }
    }

    /// Node dimension `m`.
    pub fn node_dim(&self) -> usize {
        self.w.len() / 2
    }
}

/// Output of one attention layer: new node representations and the
/// row-stochastic attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GatOutput {
    pub h: Tensor,
    pub alpha: Tensor,
}

/// Records one attention layer on `tape`.
///
/// `nodes` is `[N, m]` or batched `[B, N, m]`; `w` is `[2m]`. Returns
/// `(h, alpha)` with `h` shaped like `nodes` and `alpha` `[.., N, N]`.
pub fn gat_layer(tape: &mut Tape, nodes: Var, w: Var) -> std::result::Result<(Var, Var), TensorError> {
    let shape = tape.shape(nodes).to_vec();
    let (batch, count, dim) = match *shape.as_slice() {
        [n, m] => (1, n, m),
        [b, n, m] => (b, n, m),
        _ => {
            return Err(TensorError::Dimension {
                op: "gat",
                left: shape,
                right: tape.shape(w).to_vec(),
            })
        }
    };
    if tape.shape(w) != [2 * dim] {
        return Err(TensorError::Dimension {
            op: "gat",
            left: shape,
            right: tape.shape(w).to_vec(),
        });
    }
    let flat = tape.reshape(nodes, &[batch * count, dim])?;
    let w_src = tape.narrow(w, 0, dim)?;
    let w_src = tape.reshape(w_src, &[dim, 1])?;
    let w_dst = tape.narrow(w, dim, dim)?;
    let w_dst = tape.reshape(w_dst, &[dim, 1])?;
    let src = tape.matmul(flat, w_src)?;
    let src = tape.reshape(src, &[batch, count])?;
    let dst = tape.matmul(flat, w_dst)?;
    let dst = tape.reshape(dst, &[batch, count])?;
    let logits = tape.pairwise_add(src, dst)?;
    let logits = tape.leaky_relu(logits, LEAKY_SLOPE)?;
    let alpha = tape.softmax(logits)?;
    let nodes3 = tape.reshape(nodes, &[batch, count, dim])?;
    let mixed = tape.bmm(alpha, nodes3)?;
    let h = tape.sigmoid(mixed)?;
    if shape.len() == 2 {
        let h = tape.reshape(h, &[count, dim])?;
        let alpha = tape.reshape(alpha, &[count, count])?;
        return Ok((h, alpha));
    }
    Ok((h, alpha))
}

fn check_nodes(nodes: &Tensor, params: &GatParams) -> Result<()> {
    match *nodes.shape() {
        [_, m] if m == params.node_dim() => Ok(()),
        _ => Err(TensorError::Dimension {
            op: "gat",
            left: nodes.shape().to_vec(),
            right: params.w.shape().to_vec(),
        }
        .into()),
    }
}

/// Attention matrix `α` for `N x m` nodes.
pub fn attention_scores(nodes: &Tensor, params: &GatParams) -> Result<Tensor> {
    Ok(gat_forward(nodes, params)?.alpha)
}

/// Evaluates one attention layer on `N x m` nodes.
pub fn gat_forward(nodes: &Tensor, params: &GatParams) -> Result<GatOutput> {
    check_nodes(nodes, params)?;
    let mut tape = Tape::new();
    let v = tape.constant(nodes.clone());
    let w = tape.constant(params.w.clone());
    let (h, alpha) = gat_layer(&mut tape, v, w)?;
    Ok(GatOutput {
        h: tape.value(h).clone(),
        alpha: tape.value(alpha).clone(),
    })
}

fn expect_dim(params: &GatParams, m: usize, layer: &str) -> Result<()> {
    if params.node_dim() != m {
        return Err(Error::config(format!(
            "{layer} GAT expects node dimension {m}, parameters are sized for {}",
            params.node_dim()
        )));
    }
    Ok(())
}

/// Feature-oriented layer: `k` nodes, each one feature's `n`-step series.
/// Input `n x k`, output `k x n`.
pub fn feature_gat(x: &Tensor, params: &GatParams) -> Result<Tensor> {
    let n = x.shape()[0];
    expect_dim(params, n, "feature-oriented")?;
    Ok(gat_forward(&x.transposed(), params)?.h)
}

/// Time-oriented layer: `n` nodes, each one timestamp's `k` features.
/// Input and output `n x k`.
pub fn time_gat(x: &Tensor, params: &GatParams) -> Result<Tensor> {
    let k = x.shape()[1];
    expect_dim(params, k, "time-oriented")?;
    Ok(gat_forward(x, params)?.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kernels::sigmoid;

    #[test]
    fn zero_weights_give_uniform_attention() {
        let nodes = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![4.0, 0.0]]).unwrap();
        let alpha = attention_scores(&nodes, &GatParams::zeros(2)).unwrap();
        assert!(alpha.data().iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn single_node_attends_to_itself() {
        let nodes = Tensor::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let w = Tensor::from_vec(vec![0.4, -1.0, 2.0, 0.1]);
        let out = gat_forward(&nodes, &GatParams::new(w).unwrap()).unwrap();
        assert_eq!(out.alpha.data(), &[1.0]);
        assert_eq!(out.h.data(), &[sigmoid(0.3), sigmoid(0.7)]);
    }

    #[test]
    fn two_scalar_nodes_closed_form() {
        let nodes = Tensor::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let out = gat_forward(&nodes, &GatParams::zeros(1)).unwrap();
        for &h in out.h.data() {
            assert!((h - 0.731_058_578_630_004_9).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_nodes_pass_through_sigmoid() {
        let v = vec![0.2, -1.5, 0.9];
        let nodes = Tensor::from_rows(&[v.clone(), v.clone(), v.clone(), v.clone()]).unwrap();
        let w = Tensor::from_vec(vec![0.3, -0.2, 0.5, 1.0, 0.7, -0.4]);
        let out = gat_forward(&nodes, &GatParams::new(w).unwrap()).unwrap();
        for row in out.h.data().chunks(3) {
            for (h, x) in row.iter().zip(&v) {
                assert!((h - sigmoid(*x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn feature_and_time_layers_have_expected_shapes() {
        let x = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        let f = feature_gat(&x, &GatParams::zeros(4)).unwrap();
        let t = time_gat(&x, &GatParams::zeros(3)).unwrap();
        assert_eq!(f.shape(), &[3, 4]);
        assert_eq!(t.shape(), &[4, 3]);
    }

    #[test]
    fn single_feature_window_is_sigmoid_of_its_series() {
        let x = Tensor::new(vec![5, 1], vec![0.1, 0.2, -0.3, 0.4, 1.0]).unwrap();
        let w = Tensor::from_vec((0..10).map(|i| 0.1 * i as f64).collect());
        let f = feature_gat(&x, &GatParams::new(w).unwrap()).unwrap();
        let expect: Vec<f64> = x.data().iter().map(|&v| sigmoid(v)).collect();
        assert_eq!(f.data(), expect.as_slice());
    }

    #[test]
    fn misconfigured_layers_are_config_errors() {
        let x = Tensor::zeros(&[4, 3]);
        assert!(matches!(feature_gat(&x, &GatParams::zeros(3)), Err(Error::Config(_))));
        assert!(matches!(time_gat(&x, &GatParams::zeros(4)), Err(Error::Config(_))));
        assert!(matches!(
            gat_forward(&x, &GatParams::zeros(2)),
            Err(Error::Tensor(TensorError::Dimension { .. }))
        ));
    }
}
