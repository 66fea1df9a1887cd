// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Dense complex linear algebra helpers shared across the crate.
//!
//! Conventions fixed here and relied on everywhere else:
//!
//! * Kronecker products put the **first** factor on the slow (most
//!   significant) index: `kron(a, b)[i·p + j, k·q + l] = a[i,k]·b[j,l]` for
//!   `b` of shape `p × q`.
//! * Matrices are vectorized by **column stacking**: `vec(m)[r + c·rows] =
//!   m[r, c]`, so `vec(A·X·B) = kron(Bᵀ, A)·vec(X)`.
//! * Spectral decompositions order eigenvalues **descending** and merge
//!   eigenvalues closer than [`EIGENVALUE_MERGE_TOL`] into one projector.

use ndarray::prelude::*;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex scalar used for every matrix in the crate.
pub type C64 = Complex64;

/// Tolerance for accepting a matrix as Hermitian.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Tolerance for accepting a matrix as unitary.
pub const UNITARITY_TOL: f64 = 1e-10;
/// Tolerance on the trace of a density matrix.
pub const TRACE_TOL: f64 = 1e-12;
/// Most negative eigenvalue tolerated in a density matrix.
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Eigenvalues closer than this are treated as one degenerate level.
pub const EIGENVALUE_MERGE_TOL: f64 = 1e-9;

/// Shorthand complex constructor.
#[inline]
pub fn cx(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `dim × dim` identity matrix.
pub fn identity(dim: usize) -> Array2<C64> {
    Array2::eye(dim)
}

/// Matrix unit `|i⟩⟨j|` in dimension `dim`.
pub fn matrix_unit(dim: usize, i: usize, j: usize) -> Array2<C64> {
    let mut m = Array2::zeros((dim, dim));
    m[[i, j]] = cx(1.0, 0.0);
    m
}

/// Standard basis vector `|i⟩` in dimension `dim`.
pub fn basis_vector(dim: usize, i: usize) -> Array1<C64> {
    let mut v = Array1::zeros(dim);
    v[i] = cx(1.0, 0.0);
    v
}

/// Pauli x matrix.
pub fn pauli_x() -> Array2<C64> {
    array![[cx(0.0, 0.0), cx(1.0, 0.0)], [cx(1.0, 0.0), cx(0.0, 0.0)]]
}

/// Pauli y matrix.
pub fn pauli_y() -> Array2<C64> {
    array![[cx(0.0, 0.0), cx(0.0, -1.0)], [cx(0.0, 1.0), cx(0.0, 0.0)]]
}

/// Pauli z matrix.
pub fn pauli_z() -> Array2<C64> {
    array![[cx(1.0, 0.0), cx(0.0, 0.0)], [cx(0.0, 0.0), cx(-1.0, 0.0)]]
}

/// Conjugate transpose.
pub fn dag(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

/// Matrix trace.
pub fn trace(m: &Array2<C64>) -> C64 {
    m.diag().sum()
}

/// Frobenius norm.
pub fn frobenius_norm(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entry magnitude.
pub fn max_abs(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entry magnitude of `m − m†`.
pub fn hermiticity_deviation(m: &Array2<C64>) -> f64 {
    max_abs(&(m - &dag(m)))
}

/// Frobenius norm of `m†·m − I`.
pub fn unitarity_deviation(m: &Array2<C64>) -> f64 {
    let d = dag(m).dot(m) - identity(m.nrows());
    frobenius_norm(&d)
}

/// Kronecker product with the first factor on the slow index.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    ndarray::linalg::kron(a, b)
}

/// Kronecker product that refuses to grow past `cap` rows.
pub fn kron_checked(a: &Array2<C64>, b: &Array2<C64>, cap: usize) -> Result<Array2<C64>> {
    let dim = a
        .nrows()
        .checked_mul(b.nrows())
        .ok_or(Error::CapExceeded { dim: usize::MAX, cap })?;
    if dim > cap {
        return Err(Error::CapExceeded { dim, cap });
    }
    Ok(kron(a, b))
}

/// Column-stacked vectorization: `vec(m)[r + c·rows] = m[r, c]`.
pub fn vectorize(m: &Array2<C64>) -> Array1<C64> {
    let (rows, cols) = m.dim();
    let mut v = Array1::zeros(rows * cols);
    for c in 0..cols {
        for r in 0..rows {
            v[r + c * rows] = m[[r, c]];
        }
    }
    v
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &Array1<C64>, rows: usize, cols: usize) -> Result<Array2<C64>> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            context: "unvectorize",
            expected: rows * cols,
            actual: v.len(),
        });
    }
    let mut m = Array2::zeros((rows, cols));
    for c in 0..cols {
        for r in 0..rows {
            m[[r, c]] = v[r + c * rows];
        }
    }
    Ok(m)
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Returns ascending eigenvalues and a matrix whose **columns** are the
/// corresponding orthonormal eigenvectors, so that `h = V·diag(λ)·V†`.
///
/// The backend returns, for row-major complex input, the eigenvectors of the
/// transposed matrix; the columns must be conjugated to diagonalize `h`
/// itself. That correction is applied here and pinned by a unit test, so no
/// other code path may call the backend directly.
pub fn hermitian_eigen(h: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    let dev = hermiticity_deviation(h);
    if dev > HERMITICITY_TOL * (1.0 + max_abs(h)) {
        return Err(Error::NotHermitian {
            context: "hermitian_eigen",
            deviation: dev,
        });
    }
    let (vals, vecs) = h.eigh(UPLO::Lower).map_err(|e| Error::LinearAlgebra {
        context: "hermitian_eigen",
        message: e.to_string(),
    })?;
    Ok((vals, vecs.mapv(|z| z.conj())))
}

/// Unitary `exp(i·t·h)` for Hermitian `h`, via eigendecomposition.
pub fn expm_i_hermitian(h: &Array2<C64>, t: f64) -> Result<Array2<C64>> {
    let (vals, vecs) = hermitian_eigen(h)?;
    let phases = Array1::from_iter(vals.iter().map(|&l| (cx(0.0, t * l)).exp()));
    let scaled = &vecs * &phases; // scales column j by phases[j]
    Ok(scaled.dot(&dag(&vecs)))
}

/// One level of a spectral decomposition: an eigenvalue and its projector.
#[derive(Debug, Clone)]
pub struct SpectralLevel {
    /// Representative eigenvalue (mean of the merged cluster).
    pub value: f64,
    /// Orthogonal projector onto the merged eigenspace.
    pub projector: Array2<C64>,
    /// Dimension of the eigenspace.
    pub multiplicity: usize,
}

/// Spectral decomposition of a Hermitian matrix with eigenvalues in
/// **descending** order, merging levels closer than `merge_tol`.
pub fn spectral_decomposition(h: &Array2<C64>, merge_tol: f64) -> Result<Vec<SpectralLevel>> {
    let (vals, vecs) = hermitian_eigen(h)?;
    let n = vals.len();
    let mut levels: Vec<SpectralLevel> = Vec::new();
    // Walk from the top eigenvalue down, clustering adjacent values.
    let mut idx = n;
    while idx > 0 {
        let hi = idx - 1;
        let mut lo = hi;
        while lo > 0 && (vals[hi] - vals[lo - 1]).abs() <= merge_tol {
            lo -= 1;
        }
        let mut projector: Array2<C64> = Array2::zeros((n, n));
        let mut sum = 0.0;
        for j in lo..=hi {
            let v = vecs.column(j);
            let vc = v.mapv(|z| z.conj());
            for (r, &vr) in v.iter().enumerate() {
                for (c, &vcc) in vc.iter().enumerate() {
                    projector[[r, c]] += vr * vcc;
                }
            }
            sum += vals[j];
        }
        let mult = hi - lo + 1;
        levels.push(SpectralLevel {
            value: sum / mult as f64,
            projector,
            multiplicity: mult,
        });
        idx = lo;
    }
    Ok(levels)
}

/// Trace distance `½‖a − b‖₁` for Hermitian `a`, `b`.
pub fn trace_distance(a: &Array2<C64>, b: &Array2<C64>) -> Result<f64> {
    let d = a - b;
    let h = (&d + &dag(&d)).mapv(|z| z * 0.5);
    let (vals, _) = hermitian_eigen(&h)?;
    Ok(0.5 * vals.iter().map(|l| l.abs()).sum::<f64>())
}
