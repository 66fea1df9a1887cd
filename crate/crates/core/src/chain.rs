// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! The truncated product space `H_sys ⊗ H_copy^⊗N` and states on it.
//!
//! Index convention: the system factor is the **slowest** index. A global
//! basis index decomposes as
//! `g = s·d_c^N + x₁·d_c^(N−1) + … + x_N`, with `s` the system index and
//! `x_k` the index of chain copy `k` (copy 1 right after the system, copy
//! `N` fastest). Chain sites are numbered `1..=N`.

use ndarray::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    cx, dag, frobenius_norm, hermitian_eigen, hermiticity_deviation, identity, kron, kron_checked,
    matrix_unit, trace, C64, HERMITICITY_TOL, POSITIVITY_TOL, TRACE_TOL,
};

/// Default cap on the global dimension.
pub const DEFAULT_DIMENSION_CAP: usize = 4096;

/// Shape of the truncated product space: system dimension, copy dimension,
/// and number of chain copies kept (the window).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainSpec {
    system_dim: usize,
    copy_dim: usize,
    window: usize,
    cap: usize,
}

impl ChainSpec {
    /// Spec with the default dimension cap.
    pub fn new(system_dim: usize, copy_dim: usize, window: usize) -> Result<Self> {
        Self::with_cap(system_dim, copy_dim, window, DEFAULT_DIMENSION_CAP)
    }

    /// Spec with an explicit cap on the global dimension.
    pub fn with_cap(system_dim: usize, copy_dim: usize, window: usize, cap: usize) -> Result<Self> {
        if system_dim < 2 {
            return Err(Error::DimensionMismatch {
                context: "system dimension (must be at least 2)",
                expected: 2,
                actual: system_dim,
            });
        }
        if copy_dim < 2 {
            return Err(Error::DimensionMismatch {
                context: "copy dimension (must be at least 2)",
                expected: 2,
                actual: copy_dim,
            });
        }
        if window == 0 {
            return Err(Error::InvalidParameter {
                name: "window",
                value: 0.0,
                requirement: "at least one chain copy",
            });
        }
        let mut dim = system_dim;
        for _ in 0..window {
            dim = dim
                .checked_mul(copy_dim)
                .ok_or(Error::CapExceeded { dim: usize::MAX, cap })?;
            if dim > cap {
                return Err(Error::CapExceeded { dim, cap });
            }
        }
        Ok(Self { system_dim, copy_dim, window, cap })
    }

    /// Dimension of the system factor.
    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    /// Dimension of one chain copy.
    pub fn copy_dim(&self) -> usize {
        self.copy_dim
    }

    /// Number of chain copies kept.
    pub fn window(&self) -> usize {
        self.window
    }

    /// Configured cap on the global dimension.
    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Dimension of the chain factor `d_c^N`.
    pub fn chain_dim(&self) -> usize {
        self.copy_dim.pow(self.window as u32)
    }

    /// Dimension of the full product space.
    pub fn global_dim(&self) -> usize {
        self.system_dim * self.chain_dim()
    }

    /// Same shape with a different window (checked against the cap).
    pub fn with_window(&self, window: usize) -> Result<Self> {
        Self::with_cap(self.system_dim, self.copy_dim, window, self.cap)
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site == 0 || site > self.window {
            return Err(Error::SiteOutOfRange { site, window: self.window });
        }
        Ok(())
    }
}

/// Embed a one-copy operator at chain site `site` (identity elsewhere,
/// including on the system factor).
pub fn embed_site_operator(spec: &ChainSpec, op: &Array2<C64>, site: usize) -> Result<Array2<C64>> {
    spec.check_site(site)?;
    if op.nrows() != spec.copy_dim() || op.ncols() != spec.copy_dim() {
        return Err(Error::DimensionMismatch {
            context: "embed_site_operator",
            expected: spec.copy_dim(),
            actual: op.nrows(),
        });
    }
    let chain = chain_only_embed(spec, op, site)?;
    kron_checked(&identity(spec.system_dim()), &chain, spec.cap())
}

/// Embed a system operator (identity on every chain copy).
pub fn embed_system_operator(spec: &ChainSpec, op: &Array2<C64>) -> Result<Array2<C64>> {
    if op.nrows() != spec.system_dim() || op.ncols() != spec.system_dim() {
        return Err(Error::DimensionMismatch {
            context: "embed_system_operator",
            expected: spec.system_dim(),
            actual: op.nrows(),
        });
    }
    kron_checked(op, &identity(spec.chain_dim()), spec.cap())
}

/// Embed a one-copy operator at `site` within the chain factor only
/// (dimension `d_c^N`, no system factor).
pub(crate) fn chain_only_embed(
    spec: &ChainSpec,
    op: &Array2<C64>,
    site: usize,
) -> Result<Array2<C64>> {
    spec.check_site(site)?;
    let dc = spec.copy_dim();
    let left = identity(dc.pow((site - 1) as u32));
    let right = identity(dc.pow((spec.window() - site) as u32));
    Ok(kron(&kron(&left, op), &right))
}

/// Projector `|0⟩⟨0|` onto the reference vector of one copy.
pub fn ground_projector(copy_dim: usize) -> Array2<C64> {
    matrix_unit(copy_dim, 0, 0)
}

/// Projector onto the reference product vector of the whole chain factor.
pub fn chain_ground_projector(spec: &ChainSpec) -> Array2<C64> {
    matrix_unit(spec.chain_dim(), 0, 0)
}

/// Partial trace over the entire chain, returning the reduced system matrix.
pub fn partial_trace_chain(spec: &ChainSpec, m: &Array2<C64>) -> Result<Array2<C64>> {
    let d = spec.global_dim();
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: "partial_trace_chain",
            expected: d,
            actual: m.nrows(),
        });
    }
    let d0 = spec.system_dim();
    let dch = spec.chain_dim();
    let mut out = Array2::zeros((d0, d0));
    for p in 0..d0 {
        for q in 0..d0 {
            let mut acc = cx(0.0, 0.0);
            for c in 0..dch {
                acc += m[[p * dch + c, q * dch + c]];
            }
            out[[p, q]] = acc;
        }
    }
    Ok(out)
}

/// Partial trace keeping the system and the listed chain sites (strictly
/// ascending, each in `1..=window`). Traced sites are summed out; the result
/// lives on `H_sys ⊗ (kept copies in ascending site order)`.
pub fn partial_trace_keep(
    spec: &ChainSpec,
    m: &Array2<C64>,
    keep: &[usize],
) -> Result<Array2<C64>> {
    let d = spec.global_dim();
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: "partial_trace_keep",
            expected: d,
            actual: m.nrows(),
        });
    }
    for w in keep.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidSiteList {
                detail: format!("keep sites must be strictly ascending, got {keep:?}"),
            });
        }
    }
    for &site in keep {
        spec.check_site(site)?;
    }
    let dc = spec.copy_dim();
    let n = spec.window();
    let kept_chain_dim = dc.pow(keep.len() as u32);
    let out_dim = spec.system_dim() * kept_chain_dim;

    // For every global index precompute its packed kept-index (system digit
    // followed by kept-site digits) and packed traced-index.
    let mut kept_idx = vec![0usize; d];
    let mut traced_idx = vec![0usize; d];
    let is_kept: Vec<bool> = (1..=n).map(|s| keep.contains(&s)).collect();
    for g in 0..d {
        let mut rem = g;
        let mut digits = vec![0usize; n];
        for site in (1..=n).rev() {
            digits[site - 1] = rem % dc;
            rem /= dc;
        }
        let sys = rem;
        let mut k = sys;
        let mut t = 0usize;
        for site in 1..=n {
            if is_kept[site - 1] {
                k = k * dc + digits[site - 1];
            } else {
                t = t * dc + digits[site - 1];
            }
        }
        kept_idx[g] = k;
        traced_idx[g] = t;
    }

    let mut out = Array2::zeros((out_dim, out_dim));
    for r in 0..d {
        for c in 0..d {
            if traced_idx[r] == traced_idx[c] {
                out[[kept_idx[r], kept_idx[c]]] += m[[r, c]];
            }
        }
    }
    Ok(out)
}

/// Density matrix of the system alone, validated on construction.
#[derive(Debug, Clone)]
pub struct ReducedState {
    matrix: Array2<C64>,
}

impl ReducedState {
    /// Validate and wrap a density matrix (Hermitian, unit trace, positive
    /// semidefinite within tolerance).
    pub fn new(matrix: Array2<C64>) -> Result<Self> {
        validate_density("reduced state", &matrix)?;
        Ok(Self { matrix })
    }

    /// Rank-one state `|ψ⟩⟨ψ|` from a normalized vector.
    pub fn pure(vector: &Array1<C64>) -> Result<Self> {
        let norm: f64 = vector.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::TraceNotOne {
                context: "pure state vector norm",
                trace: norm,
            });
        }
        let d = vector.len();
        let mut m = Array2::zeros((d, d));
        for r in 0..d {
            for c in 0..d {
                m[[r, c]] = vector[r] * vector[c].conj();
            }
        }
        Ok(Self { matrix: m })
    }

    /// The underlying density matrix.
    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    /// Dimension of the state.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `Tr ρ²`, equal to 1 exactly for pure states.
    pub fn purity(&self) -> f64 {
        trace(&self.matrix.dot(&self.matrix)).re
    }
}

/// Density matrix on the full product space, validated on construction.
#[derive(Debug, Clone)]
pub struct GlobalState {
    spec: ChainSpec,
    matrix: Array2<C64>,
}

impl GlobalState {
    /// Validate and wrap a global density matrix.
    pub fn new(spec: ChainSpec, matrix: Array2<C64>) -> Result<Self> {
        let d = spec.global_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "global state",
                expected: d,
                actual: matrix.nrows(),
            });
        }
        validate_density("global state", &matrix)?;
        Ok(Self { spec, matrix })
    }

    /// Initial product state: the system state tensored with every chain
    /// copy in its reference state.
    pub fn initial(spec: ChainSpec, system: &ReducedState) -> Result<Self> {
        if system.dim() != spec.system_dim() {
            return Err(Error::DimensionMismatch {
                context: "initial system state",
                expected: spec.system_dim(),
                actual: system.dim(),
            });
        }
        let matrix = kron_checked(system.matrix(), &chain_ground_projector(&spec), spec.cap())?;
        Ok(Self { spec, matrix })
    }

    /// The underlying density matrix.
    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    /// The shape of the space this state lives on.
    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    /// Reduced system state (partial trace over the chain).
    pub fn reduced(&self) -> Result<ReducedState> {
        ReducedState::new(partial_trace_chain(&self.spec, &self.matrix)?)
    }

    /// Partial trace keeping the system and the listed chain sites.
    pub fn reduced_keep(&self, keep: &[usize]) -> Result<Array2<C64>> {
        partial_trace_keep(&self.spec, &self.matrix, keep)
    }
}

fn validate_density(context: &'static str, m: &Array2<C64>) -> Result<()> {
    let herm = hermiticity_deviation(m);
    if herm > HERMITICITY_TOL {
        return Err(Error::NotHermitian {
            context,
            deviation: herm,
        });
    }
    let t = trace(m);
    if (t.re - 1.0).abs() > TRACE_TOL || t.im.abs() > TRACE_TOL {
        return Err(Error::TraceNotOne { context, trace: t.re });
    }
    let h = (m + &dag(m)).mapv(|z| z * 0.5);
    let (vals, _) = hermitian_eigen(&h)?;
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -POSITIVITY_TOL {
        return Err(Error::NotPositive {
            context,
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// Frobenius distance between two matrices (test and diagnostic helper).
pub fn matrix_distance(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    frobenius_norm(&(a - b))
}
