//! Dense row-major tensors and the handful of kernels the GRU needs.
//!
//! The checked entry points (`affine`, `sigmoid`, ...) validate shapes and
//! return `Result`. The model's inner loops use the unchecked slice kernels
//! at the bottom of the file, whose shapes are guaranteed by the parameter
//! signature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense vector of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor1 {
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Validation(format!(
                "tensor shape must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::dim("Tensor2::from_vec", (rows, cols), data.len()));
        }
        check_finite("Tensor2::from_vec", &data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Validation("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `W·x`
    pub fn matvec(&self, x: &Tensor1) -> Result<Tensor1> {
        if x.len() != self.cols {
            return Err(Error::dim("matvec", self.shape(), x.len()));
        }
        let mut out = vec![0.0; self.rows];
        matvec_into(self, x.as_slice(), &mut out);
        Ok(Tensor1 { data: out })
    }
}

impl Tensor1 {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        check_finite("Tensor1::from_vec", &data)?;
        Ok(Self { data })
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
}

impl From<Tensor1> for Vec<f64> {
    fn from(t: Tensor1) -> Self {
        t.data
    }
}

/// `W·x + b`.
pub fn affine(w: &Tensor2, x: &Tensor1, b: &Tensor1) -> Result<Tensor1> {
    if w.cols() != x.len() {
        return Err(Error::dim("affine (W cols vs x)", w.shape(), x.len()));
    }
    if w.rows() != b.len() {
        return Err(Error::dim("affine (W rows vs b)", w.shape(), b.len()));
    }
    let mut out = b.as_slice().to_vec();
    matvec_acc(w, x.as_slice(), &mut out);
    let out = Tensor1 { data: out };
    check_finite("affine", out.as_slice())?;
    Ok(out)
}

/// Elementwise logistic function.
pub fn sigmoid(x: &Tensor1) -> Result<Tensor1> {
    check_finite("sigmoid", x.as_slice())?;
    Ok(Tensor1 {
        data: x.as_slice().iter().map(|&v| sigmoid_scalar(v)).collect(),
    })
}

const SIGMOID_LO: f64 = f64::MIN_POSITIVE;
const SIGMOID_HI: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function evaluated on the branch that never exponentiates a
/// positive argument. Output is kept inside the open interval (0, 1).
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_LO, SIGMOID_HI)
}

pub(crate) fn check_finite(op: &str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Numeric(format!(
            "{op}: non-finite value {} at index {i}",
            data[i]
        ))),
    }
}

// --- unchecked kernels -------------------------------------------------------

/// `out = W·x`
#[inline]
pub(crate) fn matvec_into(w: &Tensor2, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(w.cols)) {
        *o = dot(row, x);
    }
}

/// `out += W·x`
#[inline]
pub(crate) fn matvec_acc(w: &Tensor2, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(w.cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ·x`
#[inline]
pub(crate) fn matvec_t_acc(w: &Tensor2, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.rows, x.len());
    debug_assert_eq!(w.cols, out.len());
    for (&xi, row) in x.iter().zip(w.data.chunks_exact(w.cols)) {
        if xi == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += wij * xi;
        }
    }
}

/// `G += a ⊗ b`
#[inline]
pub(crate) fn outer_acc(g: &mut Tensor2, a: &[f64], b: &[f64]) {
    debug_assert_eq!(g.rows, a.len());
    debug_assert_eq!(g.cols, b.len());
    for (&ai, row) in a.iter().zip(g.data.chunks_exact_mut(g.cols)) {
        if ai == 0.0 {
            continue;
        }
        for (gij, &bj) in row.iter_mut().zip(b) {
            *gij += ai * bj;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
