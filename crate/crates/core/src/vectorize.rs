//! Vectorization operators for general and symmetric matrices.
//!
//! `vec` stacks columns. `vecs` lists the upper triangle row by row with the
//! strict off-diagonal entries scaled by √2, so that `|vecs(Y)| = ‖Y‖_F`.
//! `quad_vec(v)` is the companion vector with `vᵀ Y v = quad_vec(v) · vecs(Y)`.
//! All three share the same index order; every other module relies on it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative asymmetry above which `vecs` refuses its input.
pub const ASYMMETRY_TOL: f64 = 1e-8;

/// Number of free entries of a symmetric `n × n` matrix.
pub fn sym_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Half-vectorized symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymVec {
    entries: DVector<f64>,
    dim: usize,
}

impl SymVec {
    pub fn new(entries: DVector<f64>, dim: usize) -> Result<Self> {
        if entries.len() != sym_len(dim) {
            return Err(Error::DimensionMismatch(format!(
                "SymVec of dimension {dim} needs {} entries, got {}",
                sym_len(dim),
                entries.len()
            )));
        }
        Ok(SymVec { entries, dim })
    }

    pub fn entries(&self) -> &DVector<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DVector<f64> {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        unpack_sym(self.entries.as_slice(), self.dim)
    }
}

/// Column-stacking vectorization.
pub fn vec(x: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is column-major already
    DVector::from_column_slice(x.as_slice())
}

/// Inverse of [`vec`].
pub fn vec_inv(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "cannot reshape vector of length {} into {rows}×{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Half-vectorization of a symmetric matrix.
///
/// Mild asymmetry (relative size ≤ [`ASYMMETRY_TOL`]) is removed by
/// averaging with the transpose; anything larger is an error.
pub fn vecs(y: &DMatrix<f64>) -> Result<SymVec> {
    if !y.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "vecs needs a square matrix, got {}×{}",
            y.nrows(),
            y.ncols()
        )));
    }
    let norm = y.norm();
    let asymmetry = (y - y.transpose()).norm();
    if asymmetry > ASYMMETRY_TOL * norm {
        return Err(Error::AsymmetricInput { asymmetry, norm });
    }
    Ok(vecs_symmetrized(y))
}

/// `vecs((Y + Yᵀ)/2)` without the symmetry check. For matrices that are
/// symmetric by construction.
pub fn vecs_symmetrized(y: &DMatrix<f64>) -> SymVec {
    let n = y.nrows();
    let mut out = DVector::zeros(sym_len(n));
    pack_sym_into(y, out.as_mut_slice());
    SymVec {
        entries: out,
        dim: n,
    }
}

/// Writes `vecs((Y+Yᵀ)/2)` into `out`.
pub fn pack_sym_into(y: &DMatrix<f64>, out: &mut [f64]) {
    let n = y.nrows();
    debug_assert_eq!(out.len(), sym_len(n));
    let mut idx = 0;
    for i in 0..n {
        out[idx] = y[(i, i)];
        idx += 1;
        for j in (i + 1)..n {
            out[idx] = std::f64::consts::SQRT_2 * 0.5 * (y[(i, j)] + y[(j, i)]);
            idx += 1;
        }
    }
}

/// Inverse of [`vecs`].
pub fn vecs_inv(v: &SymVec) -> DMatrix<f64> {
    v.to_matrix()
}

/// Rebuilds a symmetric matrix from raw half-vectorized entries.
pub fn vecs_inv_slice(v: &[f64], n: usize) -> Result<DMatrix<f64>> {
    if v.len() != sym_len(n) {
        return Err(Error::DimensionMismatch(format!(
            "vecs⁻¹ of dimension {n} needs {} entries, got {}",
            sym_len(n),
            v.len()
        )));
    }
    Ok(unpack_sym(v, n))
}

fn unpack_sym(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        y[(i, i)] = v[idx];
        idx += 1;
        for j in (i + 1)..n {
            let e = v[idx] * std::f64::consts::FRAC_1_SQRT_2;
            y[(i, j)] = e;
            y[(j, i)] = e;
            idx += 1;
        }
    }
    y
}

/// The vector `ṽ` with `vᵀYv = ṽ · vecs(Y)`.
pub fn quad_vec(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    let mut out = DVector::zeros(sym_len(n));
    quad_vec_into(v.as_slice(), out.as_mut_slice());
    out
}

pub fn quad_vec_into(v: &[f64], out: &mut [f64]) {
    let n = v.len();
    debug_assert_eq!(out.len(), sym_len(n));
    let mut idx = 0;
    for i in 0..n {
        out[idx] = v[i] * v[i];
        idx += 1;
        for j in (i + 1)..n {
            out[idx] = std::f64::consts::SQRT_2 * v[i] * v[j];
            idx += 1;
        }
    }
}
