//! Peephole LSTM and GRU cells: single-timestep forward and backward.
//!
//! Gate activation is the logistic sigmoid; the cell candidate and output
//! squashing are `tanh`. Peephole weights (`w_ci`, `w_cf`, `w_co`) are full
//! square matrices and the forget gate has its own recurrent matrix `w_hf`.
//! The GRU reads the concatenation `[h_prev, x]` in that order and carries
//! no biases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{add_into, sample_params, sigmoid, sigmoid_in_place, tanh_in_place, InitScheme, Matrix, Rng};
use crate::params::{flat_param_set, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_xi: Matrix,
    pub w_hi: Matrix,
    pub w_ci: Matrix,
    pub w_xf: Matrix,
    pub w_hf: Matrix,
    pub w_cf: Matrix,
    pub w_xc: Matrix,
    pub w_hc: Matrix,
    pub w_xo: Matrix,
    pub w_ho: Matrix,
    pub w_co: Matrix,
    pub b_i: Matrix,
    pub b_f: Matrix,
    pub b_c: Matrix,
    pub b_o: Matrix,
}

flat_param_set!(LstmParams {
    w_xi,
    w_hi,
    w_ci,
    w_xf,
    w_hf,
    w_cf,
    w_xc,
    w_hc,
    w_xo,
    w_ho,
    w_co,
    b_i,
    b_f,
    b_c,
    b_o
});

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let x = || Matrix::zeros(hidden_dim, input_dim);
        let h = || Matrix::zeros(hidden_dim, hidden_dim);
        let b = || Matrix::zeros(hidden_dim, 1);
        LstmParams {
            w_xi: x(),
            w_hi: h(),
            w_ci: h(),
            w_xf: x(),
            w_hf: h(),
            w_cf: h(),
            w_xc: x(),
            w_hc: h(),
            w_xo: x(),
            w_ho: h(),
            w_co: h(),
            b_i: b(),
            b_f: b(),
            b_c: b(),
            b_o: b(),
        }
    }

    /// Glorot-normal weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Result<Self> {
        let mut p = LstmParams::zeros(input_dim, hidden_dim);
        for (name, m) in p.named_params_mut("") {
            if !name.starts_with("b_") {
                *m = sample_params(m.rows(), m.cols(), InitScheme::GlorotNormal, rng)?;
            }
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.w_xi.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_xi.rows()
    }

    fn check(&self) -> Result<()> {
        let (h, d) = (self.hidden_dim(), self.input_dim());
        for (name, m) in self.named_params("") {
            let want = if name.starts_with("b_") {
                (h, 1)
            } else if name.starts_with("w_x") {
                (h, d)
            } else {
                (h, h)
            };
            if m.shape() != want {
                return Err(Error::shape(
                    format!("{name} {}x{}", want.0, want.1),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
        }
        Ok(())
    }
}

/// Values cached by [`lstm_step`] for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmTape {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn check_len(what: &str, v: &[f64], want: usize) -> Result<()> {
    if v.len() != want {
        return Err(Error::shape(
            format!("{what} of length {want}"),
            format!("length {}", v.len()),
        ));
    }
    Ok(())
}

/// One LSTM timestep. Returns `(h_t, c_t, tape)`.
pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> Result<(Vec<f64>, Vec<f64>, LstmTape)> {
    p.check()?;
    let (hd, d) = (p.hidden_dim(), p.input_dim());
    check_len("x_t", x, d)?;
    check_len("h_prev", h_prev, hd)?;
    check_len("c_prev", c_prev, hd)?;

    let gate = |wx: &Matrix, wh: &Matrix, wc: Option<(&Matrix, &[f64])>, b: &Matrix| {
        let mut a = b.as_slice().to_vec();
        wx.matvec_acc(x, &mut a);
        wh.matvec_acc(h_prev, &mut a);
        if let Some((wc, c)) = wc {
            wc.matvec_acc(c, &mut a);
        }
        a
    };

    let mut i = gate(&p.w_xi, &p.w_hi, Some((&p.w_ci, c_prev)), &p.b_i);
    sigmoid_in_place(&mut i);
    let mut f = gate(&p.w_xf, &p.w_hf, Some((&p.w_cf, c_prev)), &p.b_f);
    sigmoid_in_place(&mut f);
    let mut g = gate(&p.w_xc, &p.w_hc, None, &p.b_c);
    tanh_in_place(&mut g);

    let c: Vec<f64> = (0..hd).map(|j| f[j] * c_prev[j] + i[j] * g[j]).collect();

    let mut o = gate(&p.w_xo, &p.w_ho, Some((&p.w_co, &c)), &p.b_o);
    sigmoid_in_place(&mut o);
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();

    let tape = LstmTape {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        input_gate: i,
        forget_gate: f,
        candidate: g,
        output_gate: o,
        c: c.clone(),
        tanh_c,
        h: h.clone(),
    };
    Ok((h, c, tape))
}

/// Gradients flowing out of one cell step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGrads {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    /// Empty for the GRU, which has no cell state.
    pub c_prev: Vec<f64>,
}

/// Backward through one LSTM step given upstream `dL/dh_t` and `dL/dc_t`.
/// Parameter gradients are added into `grads`.
pub fn lstm_backward(
    p: &LstmParams,
    tape: &LstmTape,
    grad_h: &[f64],
    grad_c: &[f64],
    grads: &mut LstmParams,
) -> Result<StepGrads> {
    let (hd, d) = (p.hidden_dim(), p.input_dim());
    if tape.x.len() != d || tape.c.len() != hd {
        return Err(Error::Consistency(format!(
            "LSTM tape (input {}, hidden {}) does not match parameters (input {d}, hidden {hd})",
            tape.x.len(),
            tape.c.len()
        )));
    }
    if grads.input_dim() != d || grads.hidden_dim() != hd {
        return Err(Error::Consistency("LSTM gradient buffer shape".into()));
    }
    check_len("grad_h", grad_h, hd)?;
    check_len("grad_c", grad_c, hd)?;

    let t = tape;
    let mut da_o = vec![0.0; hd];
    let mut dc = grad_c.to_vec();
    for j in 0..hd {
        let o = t.output_gate[j];
        da_o[j] = grad_h[j] * t.tanh_c[j] * o * (1.0 - o);
        dc[j] += grad_h[j] * o * (1.0 - t.tanh_c[j] * t.tanh_c[j]);
    }
    // o_t peeks at c_t
    p.w_co.matvec_t_acc(&da_o, &mut dc);

    let mut da_i = vec![0.0; hd];
    let mut da_f = vec![0.0; hd];
    let mut da_g = vec![0.0; hd];
    for j in 0..hd {
        let (i, f, g) = (t.input_gate[j], t.forget_gate[j], t.candidate[j]);
        da_i[j] = dc[j] * g * i * (1.0 - i);
        da_f[j] = dc[j] * t.c_prev[j] * f * (1.0 - f);
        da_g[j] = dc[j] * i * (1.0 - g * g);
    }

    let mut dc_prev: Vec<f64> = dc.iter().zip(&t.forget_gate).map(|(d, f)| d * f).collect();
    p.w_ci.matvec_t_acc(&da_i, &mut dc_prev);
    p.w_cf.matvec_t_acc(&da_f, &mut dc_prev);

    let mut dx = vec![0.0; d];
    let mut dh_prev = vec![0.0; hd];
    for (wx, wh, da) in [
        (&p.w_xi, &p.w_hi, &da_i),
        (&p.w_xf, &p.w_hf, &da_f),
        (&p.w_xc, &p.w_hc, &da_g),
        (&p.w_xo, &p.w_ho, &da_o),
    ] {
        wx.matvec_t_acc(da, &mut dx);
        wh.matvec_t_acc(da, &mut dh_prev);
    }

    grads.w_xi.add_outer(&da_i, &t.x);
    grads.w_hi.add_outer(&da_i, &t.h_prev);
    grads.w_ci.add_outer(&da_i, &t.c_prev);
    grads.b_i.add_assign(&da_i);
    grads.w_xf.add_outer(&da_f, &t.x);
    grads.w_hf.add_outer(&da_f, &t.h_prev);
    grads.w_cf.add_outer(&da_f, &t.c_prev);
    grads.b_f.add_assign(&da_f);
    grads.w_xc.add_outer(&da_g, &t.x);
    grads.w_hc.add_outer(&da_g, &t.h_prev);
    grads.b_c.add_assign(&da_g);
    grads.w_xo.add_outer(&da_o, &t.x);
    grads.w_ho.add_outer(&da_o, &t.h_prev);
    grads.w_co.add_outer(&da_o, &t.c);
    grads.b_o.add_assign(&da_o);

    Ok(StepGrads {
        x: dx,
        h_prev: dh_prev,
        c_prev: dc_prev,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_r: Matrix,
    pub w_z: Matrix,
    pub w_h: Matrix,
}

flat_param_set!(GruParams { w_r, w_z, w_h });

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let m = || Matrix::zeros(hidden_dim, hidden_dim + input_dim);
        GruParams {
            w_r: m(),
            w_z: m(),
            w_h: m(),
        }
    }

    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Result<Self> {
        let cols = hidden_dim + input_dim;
        Ok(GruParams {
            w_r: sample_params(hidden_dim, cols, InitScheme::GlorotNormal, rng)?,
            w_z: sample_params(hidden_dim, cols, InitScheme::GlorotNormal, rng)?,
            w_h: sample_params(hidden_dim, cols, InitScheme::GlorotNormal, rng)?,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_r.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.cols().saturating_sub(self.w_r.rows())
    }

    fn check(&self) -> Result<()> {
        let want = self.w_r.shape();
        if want.1 < want.0 {
            return Err(Error::shape(
                format!("w_r with at least {} columns", want.0),
                format!("{}x{}", want.0, want.1),
            ));
        }
        for (name, m) in self.named_params("") {
            if m.shape() != want {
                return Err(Error::shape(
                    format!("{name} {}x{}", want.0, want.1),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruTape {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub reset_gate: Vec<f64>,
    pub update_gate: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

/// One GRU timestep. Returns `(h_t, tape)`.
pub fn gru_step(x: &[f64], h_prev: &[f64], p: &GruParams) -> Result<(Vec<f64>, GruTape)> {
    p.check()?;
    let (hd, d) = (p.hidden_dim(), p.input_dim());
    check_len("x_t", x, d)?;
    check_len("h_prev", h_prev, hd)?;

    let mut cat = Vec::with_capacity(hd + d);
    cat.extend_from_slice(h_prev);
    cat.extend_from_slice(x);

    let mut r = vec![0.0; hd];
    p.w_r.matvec_acc(&cat, &mut r);
    sigmoid_in_place(&mut r);
    let mut z = vec![0.0; hd];
    p.w_z.matvec_acc(&cat, &mut z);
    sigmoid_in_place(&mut z);

    for j in 0..hd {
        cat[j] = r[j] * h_prev[j];
    }
    let mut cand = vec![0.0; hd];
    p.w_h.matvec_acc(&cat, &mut cand);
    tanh_in_place(&mut cand);

    let h: Vec<f64> = (0..hd).map(|j| (1.0 - z[j]) * h_prev[j] + z[j] * cand[j]).collect();

    let tape = GruTape {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        reset_gate: r,
        update_gate: z,
        candidate: cand,
        h: h.clone(),
    };
    Ok((h, tape))
}

/// Backward through one GRU step given upstream `dL/dh_t`.
pub fn gru_backward(p: &GruParams, tape: &GruTape, grad_h: &[f64], grads: &mut GruParams) -> Result<StepGrads> {
    let (hd, d) = (p.hidden_dim(), p.input_dim());
    if tape.x.len() != d || tape.h_prev.len() != hd {
        return Err(Error::Consistency(format!(
            "GRU tape (input {}, hidden {}) does not match parameters (input {d}, hidden {hd})",
            tape.x.len(),
            tape.h_prev.len()
        )));
    }
    if grads.w_r.shape() != p.w_r.shape() {
        return Err(Error::Consistency("GRU gradient buffer shape".into()));
    }
    check_len("grad_h", grad_h, hd)?;

    let t = tape;
    let mut dh_prev = vec![0.0; hd];
    let mut da_cand = vec![0.0; hd];
    let mut da_z = vec![0.0; hd];
    for j in 0..hd {
        let (z, c) = (t.update_gate[j], t.candidate[j]);
        dh_prev[j] = grad_h[j] * (1.0 - z);
        da_cand[j] = grad_h[j] * z * (1.0 - c * c);
        da_z[j] = grad_h[j] * (c - t.h_prev[j]) * z * (1.0 - z);
    }

    let mut gated = Vec::with_capacity(hd + d);
    gated.extend(t.reset_gate.iter().zip(&t.h_prev).map(|(r, h)| r * h));
    gated.extend_from_slice(&t.x);
    grads.w_h.add_outer(&da_cand, &gated);

    let mut dgated = vec![0.0; hd + d];
    p.w_h.matvec_t_acc(&da_cand, &mut dgated);
    let mut dx = dgated[hd..].to_vec();
    let mut da_r = vec![0.0; hd];
    for j in 0..hd {
        let r = t.reset_gate[j];
        dh_prev[j] += dgated[j] * r;
        da_r[j] = dgated[j] * t.h_prev[j] * r * (1.0 - r);
    }

    let mut cat = Vec::with_capacity(hd + d);
    cat.extend_from_slice(&t.h_prev);
    cat.extend_from_slice(&t.x);
    grads.w_z.add_outer(&da_z, &cat);
    grads.w_r.add_outer(&da_r, &cat);

    let mut dcat = vec![0.0; hd + d];
    p.w_z.matvec_t_acc(&da_z, &mut dcat);
    p.w_r.matvec_t_acc(&da_r, &mut dcat);
    add_into(&mut dh_prev, &dcat[..hd]);
    add_into(&mut dx, &dcat[hd..]);

    Ok(StepGrads {
        x: dx,
        h_prev: dh_prev,
        c_prev: Vec::new(),
    })
}

/// Per-timestep output `y_t = sigmoid(W_o h_t)`. Not on the classification
/// path; the pooled representation feeds the classifier head instead.
pub fn gru_readout(h: &[f64], w_o: &Matrix) -> Result<Vec<f64>> {
    let mut y = w_o.matvec(h)?;
    y.iter_mut().for_each(|v| *v = sigmoid(*v));
    Ok(y)
}

/// A cell of either kind, as held by an encoder direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CellParams {
    Lstm(LstmParams),
    Gru(GruParams),
}

impl CellParams {
    pub fn init(kind: CellKind, input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(match kind {
            CellKind::Lstm => CellParams::Lstm(LstmParams::init(input_dim, hidden_dim, rng)?),
            CellKind::Gru => CellParams::Gru(GruParams::init(input_dim, hidden_dim, rng)?),
        })
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Gru(_) => CellKind::Gru,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.input_dim(),
            CellParams::Gru(p) => p.input_dim(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.hidden_dim(),
            CellParams::Gru(p) => p.hidden_dim(),
        }
    }
}

impl ParamSet for CellParams {
    fn named_params(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        match self {
            CellParams::Lstm(p) => p.named_params(prefix),
            CellParams::Gru(p) => p.named_params(prefix),
        }
    }

    fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Matrix)> {
        match self {
            CellParams::Lstm(p) => p.named_params_mut(prefix),
            CellParams::Gru(p) => p.named_params_mut(prefix),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellTape {
    Lstm(LstmTape),
    Gru(GruTape),
}

impl CellTape {
    pub fn h(&self) -> &[f64] {
        match self {
            CellTape::Lstm(t) => &t.h,
            CellTape::Gru(t) => &t.h,
        }
    }
}
