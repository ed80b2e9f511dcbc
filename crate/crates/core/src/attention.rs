//! Frame embedding and attention pooling over encoder states.
//!
//! ```text
//! x_t   = W_e w_t
//! u_t   = tanh(W_w h_t + b_w)
//! a_t   = softmax_t(u_t . u_w)
//! s     = sum_t a_t h_t
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{add_into, dot, sample_params, softmax, InitScheme, Matrix, Rng};
use crate::params::flat_param_set;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// Frame embedding, `embed_dim x raw_dim`.
    pub w_e: Matrix,
    /// `attn_dim x state_dim`
    pub w_w: Matrix,
    pub b_w: Matrix,
    /// Context vector.
    pub u_w: Matrix,
}

flat_param_set!(AttentionParams { w_e, w_w, b_w, u_w });

impl AttentionParams {
    /// All four tensors are drawn glorot-normal.
    pub fn init(raw_dim: usize, embed_dim: usize, state_dim: usize, attn_dim: usize, rng: &mut Rng) -> Result<Self> {
        let g = InitScheme::GlorotNormal;
        let w_e = sample_params(embed_dim, raw_dim, g, rng)?;
        let w_w = sample_params(attn_dim, state_dim, g, rng)?;
        let b_w = sample_params(attn_dim, 1, g, rng)?;
        let mut u_w = sample_params(attn_dim, 1, g, rng)?;
        while u_w.as_slice().iter().all(|v| *v == 0.0) {
            u_w = sample_params(attn_dim, 1, g, rng)?;
        }
        Ok(AttentionParams { w_e, w_w, b_w, u_w })
    }

    pub fn state_dim(&self) -> usize {
        self.w_w.cols()
    }

    fn check(&self, state_dim: usize) -> Result<()> {
        let a = self.w_w.rows();
        if self.w_w.cols() != state_dim {
            return Err(Error::shape(
                format!("W_w {}x{}", a, self.w_w.cols()),
                format!("hidden states of width {state_dim}"),
            ));
        }
        if self.b_w.shape() != (a, 1) || self.u_w.shape() != (a, 1) {
            return Err(Error::shape(
                format!("b_w, u_w of length {a}"),
                format!("{} and {}", self.b_w.len(), self.u_w.len()),
            ));
        }
        Ok(())
    }
}

/// Row `t` of the output is `W_e · raw_t`.
pub fn embed_frames(raw: &Matrix, w_e: &Matrix) -> Result<Matrix> {
    if raw.cols() != w_e.cols() {
        return Err(Error::shape(
            format!("W_e {}x{}", w_e.rows(), w_e.cols()),
            format!("frames {}x{}", raw.rows(), raw.cols()),
        ));
    }
    let mut out = Matrix::zeros(raw.rows(), w_e.rows());
    for t in 0..raw.rows() {
        w_e.matvec_acc(raw.row(t), out.row_mut(t));
    }
    Ok(out)
}

/// Adds `dL/dW_e` into `grad_w_e` and returns `dL/d(raw)`.
pub fn embed_frames_backward(raw: &Matrix, w_e: &Matrix, grad_out: &Matrix, grad_w_e: &mut Matrix) -> Result<Matrix> {
    if grad_out.shape() != (raw.rows(), w_e.rows()) {
        return Err(Error::shape(
            format!("embedding output {}x{}", raw.rows(), w_e.rows()),
            format!("gradient {}x{}", grad_out.rows(), grad_out.cols()),
        ));
    }
    let mut grad_raw = Matrix::zeros(raw.rows(), raw.cols());
    for t in 0..raw.rows() {
        grad_w_e.add_outer(grad_out.row(t), raw.row(t));
        w_e.matvec_t_acc(grad_out.row(t), grad_raw.row_mut(t));
    }
    Ok(grad_raw)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub pooled: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `u_t` per row, kept for the backward pass.
    pub projected: Matrix,
}

pub fn attention_pool(states: &Matrix, p: &AttentionParams) -> Result<AttentionOutput> {
    if states.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    p.check(states.cols())?;
    let a = p.w_w.rows();
    let mut projected = Matrix::zeros(states.rows(), a);
    let mut scores = Vec::with_capacity(states.rows());
    for t in 0..states.rows() {
        let u = projected.row_mut(t);
        u.copy_from_slice(p.b_w.as_slice());
        p.w_w.matvec_acc(states.row(t), u);
        u.iter_mut().for_each(|v| *v = v.tanh());
        scores.push(dot(u, p.u_w.as_slice()));
    }
    let alphas = softmax(&scores)?;
    let mut pooled = vec![0.0; states.cols()];
    for (alpha, row) in alphas.iter().zip(states.row_iter()) {
        for (s, h) in pooled.iter_mut().zip(row) {
            *s += alpha * h;
        }
    }
    Ok(AttentionOutput {
        pooled,
        alphas,
        projected,
    })
}

/// Returns `dL/d(states)` and adds `W_w`, `b_w`, `u_w` gradients to `grads`.
pub fn attention_pool_backward(
    states: &Matrix,
    p: &AttentionParams,
    out: &AttentionOutput,
    grad_pooled: &[f64],
    grads: &mut AttentionParams,
) -> Result<Matrix> {
    if grad_pooled.len() != states.cols() || out.alphas.len() != states.rows() {
        return Err(Error::shape(
            format!("pooled width {} over {} rows", states.cols(), states.rows()),
            format!("gradient of length {}", grad_pooled.len()),
        ));
    }
    let mut grad_states = Matrix::zeros(states.rows(), states.cols());
    let grad_alpha: Vec<f64> = states.row_iter().map(|h| dot(h, grad_pooled)).collect();
    let mean = dot(&out.alphas, &grad_alpha);
    let u_w = p.u_w.as_slice();
    for t in 0..states.rows() {
        let alpha = out.alphas[t];
        let grad_score = alpha * (grad_alpha[t] - mean);
        let u = out.projected.row(t);
        add_into(
            grads.u_w.as_mut_slice(),
            &u.iter().map(|v| grad_score * v).collect::<Vec<_>>(),
        );
        let grad_pre: Vec<f64> = u.iter().zip(u_w).map(|(u, w)| grad_score * w * (1.0 - u * u)).collect();
        grads.w_w.add_outer(&grad_pre, states.row(t));
        grads.b_w.add_assign(&grad_pre);
        let g = grad_states.row_mut(t);
        for (gv, pv) in g.iter_mut().zip(grad_pooled) {
            *gv += alpha * pv;
        }
        p.w_w.matvec_t_acc(&grad_pre, g);
    }
    Ok(grad_states)
}

/// `[forward final state, backward final state]`.
pub fn laststate_pool(forward_last: &[f64], backward_first: &[f64]) -> Result<Vec<f64>> {
    if forward_last.len() != backward_first.len() {
        return Err(Error::shape(
            format!("forward state of length {}", forward_last.len()),
            format!("backward state of length {}", backward_first.len()),
        ));
    }
    Ok(forward_last.iter().chain(backward_first).copied().collect())
}

/// Final states read off an encoder output (T x H or T x 2H): the forward
/// half of the last row and, when bidirectional, the backward half of row 0.
pub fn last_states(states: &Matrix, hidden_dim: usize, bidirectional: bool) -> Result<Vec<f64>> {
    if states.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    let last = states.row(states.rows() - 1);
    if bidirectional {
        laststate_pool(&last[..hidden_dim], &states.row(0)[hidden_dim..])
    } else {
        Ok(last.to_vec())
    }
}

/// Scatter of [`last_states`]' gradient back onto the encoder output.
pub fn last_states_backward(rows: usize, hidden_dim: usize, bidirectional: bool, grad: &[f64]) -> Matrix {
    let width = if bidirectional { 2 * hidden_dim } else { hidden_dim };
    let mut out = Matrix::zeros(rows, width);
    out.row_mut(rows - 1)[..hidden_dim].copy_from_slice(&grad[..hidden_dim]);
    if bidirectional {
        out.row_mut(0)[hidden_dim..].copy_from_slice(&grad[hidden_dim..]);
    }
    out
}
