//! Dense `f64` matrices, activations, softmax and seeded initialization.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`. Matrices are row-major.
//! Every stochastic routine draws from [`Rng`] (ChaCha8) built from an
//! explicit seed; nothing reads ambient randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The one generator used for all seeded draws.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(m: RawMatrix) -> Result<Self> {
        let expected = m.rows.checked_mul(m.cols);
        if expected != Some(m.data.len()) {
            return Err(Error::shape(
                format!("{}x{} matrix", m.rows, m.cols),
                format!("{} values", m.data.len()),
            ));
        }
        Ok(Matrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        })
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::shape(
                format!("{rows}x{cols} matrix"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    format!("row 0 of length {cols}"),
                    format!("row {i} of length {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// A column vector stored as an `n x 1` matrix (used for biases).
    pub fn column(values: Vec<f64>) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero-width rows
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
    }

    /// Rows in reverse order.
    pub fn reversed_rows(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(self.row(self.rows - 1 - r));
        }
        out
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Columns `start..end` as a new matrix.
    pub fn column_slice(&self, start: usize, end: usize) -> Matrix {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        if self.rows > 0 {
            let n = self.rows as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
        out
    }

    fn check_input(&self, x: &[f64], what: &str) -> Result<()> {
        if x.len() != self.cols {
            return Err(Error::shape(
                format!("{what} {}x{}", self.rows, self.cols),
                format!("vector of length {}", x.len()),
            ));
        }
        Ok(())
    }

    /// `W x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x, "matrix")?;
        let mut out = vec![0.0; self.rows];
        self.matvec_acc(x, &mut out);
        Ok(out)
    }

    /// `out += W x`; dimensions are the caller's responsibility.
    pub(crate) fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.row_iter()) {
            *o += dot(row, x);
        }
    }

    /// `out += Wᵀ g`
    pub(crate) fn matvec_t_acc(&self, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (gr, row) in g.iter().zip(self.row_iter()) {
            if *gr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += gr * w;
            }
        }
    }

    /// `Wᵀ g`
    pub fn matvec_t(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.rows {
            return Err(Error::shape(
                format!("transposed matrix {}x{}", self.cols, self.rows),
                format!("vector of length {}", g.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        self.matvec_t_acc(g, &mut out);
        Ok(out)
    }

    /// `W += a bᵀ`
    pub(crate) fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        for (r, ar) in a.iter().enumerate() {
            if *ar == 0.0 {
                continue;
            }
            let row = &mut self.data[r * cols..(r + 1) * cols];
            for (w, bv) in row.iter_mut().zip(b) {
                *w += ar * bv;
            }
        }
    }

    /// Elementwise `self += other`.
    pub(crate) fn add_assign(&mut self, other: &[f64]) {
        debug_assert_eq!(self.data.len(), other.len());
        for (a, b) in self.data.iter_mut().zip(other) {
            *a += b;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// `W x + b`
pub fn affine(x: &[f64], w: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() {
        return Err(Error::shape(
            format!("W {}x{}", w.rows(), w.cols()),
            format!("x of length {}", x.len()),
        ));
    }
    if b.len() != w.rows() {
        return Err(Error::shape(
            format!("W {}x{}", w.rows(), w.cols()),
            format!("b of length {}", b.len()),
        ));
    }
    let mut out = b.to_vec();
    w.matvec_acc(x, &mut out);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activate(v: &[f64], kind: Activation) -> Vec<f64> {
    match kind {
        Activation::Sigmoid => v.iter().map(|&x| sigmoid(x)).collect(),
        Activation::Tanh => v.iter().map(|x| x.tanh()).collect(),
    }
}

pub(crate) fn sigmoid_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = sigmoid(*x));
}

pub(crate) fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

/// Softmax with the maximum subtracted before exponentiation.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::shape("softmax input", "empty vector"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    Normal {
        mean: f64,
        stddev: f64,
    },
    /// Zero-mean normal with stddev `sqrt(2 / (rows + cols))`.
    GlorotNormal,
}

impl InitScheme {
    /// Fusion mapping matrices: N(0, 0.01).
    pub const FUSION: InitScheme = InitScheme::Normal {
        mean: 0.0,
        stddev: 0.01,
    };

    fn stddev(&self, rows: usize, cols: usize) -> f64 {
        match *self {
            InitScheme::Normal { stddev, .. } => stddev,
            InitScheme::GlorotNormal => (2.0 / (rows + cols) as f64).sqrt(),
        }
    }

    fn mean(&self) -> f64 {
        match *self {
            InitScheme::Normal { mean, .. } => mean,
            InitScheme::GlorotNormal => 0.0,
        }
    }
}

/// Seeded parameter matrix; the same seed always yields the same bits.
pub fn init_params(rows: usize, cols: usize, scheme: InitScheme, seed: u64) -> Result<Matrix> {
    let mut rng = rng_from_seed(seed);
    sample_params(rows, cols, scheme, &mut rng)
}

/// Like [`init_params`] but continues an existing generator stream.
pub fn sample_params(rows: usize, cols: usize, scheme: InitScheme, rng: &mut Rng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::shape(
            "parameter matrix with positive dimensions",
            format!("{rows}x{cols}"),
        ));
    }
    let stddev = scheme.stddev(rows, cols);
    if !(stddev > 0.0 && stddev.is_finite()) {
        return Err(Error::Parameter(format!("init stddev must be > 0, got {stddev}")));
    }
    let normal = Normal::new(scheme.mean(), stddev).map_err(|e| Error::Parameter(format!("init distribution: {e}")))?;
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Ok(Matrix { rows, cols, data })
}
