// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Purity diagnostics for measured trajectories.
//!
//! Conditioning on measurement outcomes keeps the global state pure, but the
//! reduced system state of a trajectory is generally mixed. This module
//! quantifies when the reduced trajectory stays pure ("unravelling"): always
//! for memoryless block models with non-degenerate observables; for
//! two-interaction memory models exactly when the branch operators labeled
//! by the residual levels of the once-measured copy are linearly dependent,
//! which a dedicated observable family and coupling construction achieve.
//! Block-norm scaling of the two-step unitary in the step duration is fitted
//! to expose which branch couplings are leading-order.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use ndarray_linalg::SVD;

use crate::chain::{ChainSpec, ReducedState};
use crate::error::{Error, Result};
use crate::linalg::{
    cx, frobenius_norm, vectorize, C64, HERMITICITY_TOL,
};
use crate::measurement::{run_ensemble, sample_trajectory_with_unitaries, Observable};
use crate::models::{
    BlockMap, Couplings, HamiltonianChainModel, InteractionModel, MarkovBlockModel,
};

/// Second-step branch operators keyed by the ordered pair of first-step
/// outcomes they follow.
pub type OutcomePairBlocks = BTreeMap<(usize, usize), Vec<Array2<C64>>>;

/// Residual below which two branch operators count as linearly dependent.
pub const DEPENDENCE_TOL: f64 = 1e-8;

/// Purity deficit below which a trajectory scan counts as purity-preserving.
pub const PURE_DEFICIT_TOL: f64 = 1e-8;

/// Purity deficit above which a scan counts as genuinely mixing.
pub const MIXING_DEFICIT_TOL: f64 = 1e-4;

/// `1 − Tr[ρ²]`: zero exactly on pure states, at most `1 − 1/d`.
pub fn purity_deficit(rho: &ReducedState) -> f64 {
    1.0 - rho.purity()
}

/// Samples trajectories of a memoryless block model and returns the largest
/// reduced-state purity deficit seen at any step of any trajectory.
///
/// Requires every observable eigenprojector to be rank one and a pure
/// initial state: under those hypotheses the deficit stays at numerical
/// zero, because each conditioned global state remains a product of a pure
/// system state with pure copy states.
pub fn markov_purity_check(
    model: &MarkovBlockModel,
    obs: &Observable,
    initial_system: &ReducedState,
    steps: usize,
    seeds: &[u64],
    spec: &ChainSpec,
) -> Result<f64> {
    obs.require_non_degenerate()?;
    let initial_deficit = purity_deficit(initial_system);
    if initial_deficit > PURE_DEFICIT_TOL {
        return Err(Error::NotPure { deficit: initial_deficit });
    }
    let model = InteractionModel::Blocks(model.clone());
    let unitaries = model.step_unitaries(spec, steps)?;
    let mut max_deficit = 0.0f64;
    for &seed in seeds {
        let record =
            sample_trajectory_with_unitaries(&unitaries, initial_system, obs, steps, seed, spec)?;
        for &deficit in record.purity_deficits() {
            max_deficit = max_deficit.max(deficit);
        }
    }
    Ok(max_deficit)
}

/// Unit eigenvector of a rank-one projector, with the phase fixed so the
/// first component of largest magnitude is real and positive. Only the ray
/// matters downstream; the fixed phase makes runs reproducible.
pub fn projector_ray(projector: &Array2<C64>) -> Result<Array1<C64>> {
    let n = projector.nrows();
    // A rank-one orthogonal projector is |v⟩⟨v|; every nonzero column is
    // proportional to v. Take the column with the largest diagonal entry.
    let mut best = 0;
    for j in 1..n {
        if projector[[j, j]].re > projector[[best, best]].re {
            best = j;
        }
    }
    let norm = projector[[best, best]].re.sqrt();
    if norm <= 1e-12 || norm.is_nan() {
        return Err(Error::DegenerateObservable {
            detail: "projector has no unit-trace rank-one column".into(),
        });
    }
    let mut v: Array1<C64> = projector.column(best).mapv(|z| z / cx(norm, 0.0));
    // Phase fix: rotate so the largest-magnitude component is real positive.
    let mut pivot = 0;
    for i in 1..n {
        if v[i].norm() > v[pivot].norm() {
            pivot = i;
        }
    }
    let phase = v[pivot] / cx(v[pivot].norm(), 0.0);
    v.mapv_inplace(|z| z / phase);
    Ok(v)
}

/// The two-interaction branch operators. After the first measurement leaves
/// the once-measured copy on the outcome-`m` ray and the fresh copy in the
/// reference state, the second interaction followed by outcome `n` on the
/// fresh copy maps the system by the family `{H_i(m,n)}`, where `i` labels
/// the residual level of the once-measured copy: the conditioned reduced
/// state is `Σ_i H_i ρ H_i† / tr[…]` and the trace is the conditional
/// branch probability.
///
/// With `w_m` the outcome-`m` ray and `e_u` the copy basis,
/// `H_i(m,n) = Σ_{u,v} ⟨w_n, e_u⟩·⟨e_v, w_m⟩ · B[(i,u),(v,0)]`,
/// where `B` are the system blocks of the second-step unitary over the two
/// active sites (the once-measured copy first, the fresh copy second).
pub fn compute_h_operators(
    u2_blocks: &BlockMap,
    obs: &Observable,
) -> Result<OutcomePairBlocks> {
    obs.require_non_degenerate()?;
    if u2_blocks.num_sites() != 2 {
        return Err(Error::InvalidSiteList {
            detail: format!(
                "two-interaction block map required, found {} sites",
                u2_blocks.num_sites()
            ),
        });
    }
    let dc = obs.dim();
    let rays: Vec<Array1<C64>> = obs
        .projectors()
        .iter()
        .map(projector_ray)
        .collect::<Result<_>>()?;
    let d0 = u2_blocks.system_dim();
    let mut map = BTreeMap::new();
    for (m, wm) in rays.iter().enumerate() {
        for (n, wn) in rays.iter().enumerate() {
            let mut ops = Vec::with_capacity(dc);
            for i in 0..dc {
                let mut h: Array2<C64> = Array2::zeros((d0, d0));
                for u in 0..dc {
                    for v in 0..dc {
                        let weight = wn[u].conj() * wm[v];
                        if weight.norm() == 0.0 {
                            continue;
                        }
                        let block = u2_blocks.get(&[i, u], &[v, 0])?;
                        h += &block.mapv(|z| z * weight);
                    }
                }
                ops.push(h);
            }
            map.insert((m, n), ops);
        }
    }
    Ok(map)
}

/// Outcome of a linear-dependence test between two branch operators.
#[derive(Debug, Clone, PartialEq)]
pub enum DependenceVerdict {
    /// The operators span one ray: the second measurement cannot mix the
    /// branches. The certificate `(nu, mu)` satisfies `nu·h0 + mu·h1 ≈ 0`.
    Dependent { nu: C64, mu: C64 },
    /// The operators are genuinely independent.
    Independent,
    /// Both operators vanish; no certificate exists.
    Degenerate,
}

/// Result of [`check_dependence`]: verdict plus the normalized residual
/// (smallest singular value of the stacked pair over the largest).
#[derive(Debug, Clone)]
pub struct Dependence {
    /// The classification at the supplied tolerance.
    pub verdict: DependenceVerdict,
    /// `σ_min/σ_max` of the two-column matrix `[vec h0 | vec h1]`.
    pub residual: f64,
}

/// Tests whether two operators are linearly dependent, reporting the
/// normalized smallest singular value of `[vec h0 | vec h1]` as residual
/// and, when dependent, a nonzero certificate pair.
///
/// Operator proportionality is equivalent to proportionality of the two
/// vectorizations, so the rank test on the stacked pair is a complete
/// certificate. The singular values are computed directly on the stacked
/// two-column matrix: going through its 2×2 Gram matrix would square the
/// conditioning and bottom the residual out near the square root of machine
/// precision, too coarse for the dependence tolerance.
pub fn check_dependence(h0: &Array2<C64>, h1: &Array2<C64>, tol: f64) -> Result<Dependence> {
    if h0.dim() != h1.dim() {
        return Err(Error::DimensionMismatch {
            context: "dependence test operands",
            expected: h0.nrows(),
            actual: h1.nrows(),
        });
    }
    let a = vectorize(h0);
    let b = vectorize(h1);
    let aa: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let bb: f64 = b.iter().map(|z| z.norm_sqr()).sum();
    if aa.max(bb) < 1e-28 {
        return Ok(Dependence { verdict: DependenceVerdict::Degenerate, residual: 0.0 });
    }
    let n = a.len();
    let mut stacked: Array2<C64> = Array2::zeros((n, 2));
    for i in 0..n {
        stacked[[i, 0]] = a[i];
        stacked[[i, 1]] = b[i];
    }
    let (_, sv, vt) = stacked.svd(false, true).map_err(|e| Error::LinearAlgebra {
        context: "dependence singular values",
        message: e.to_string(),
    })?;
    let vt = vt.expect("right singular vectors requested");
    let hi = sv[0];
    let lo = sv[sv.len() - 1];
    let residual = lo / hi;
    if residual <= tol {
        // The right singular vector for the smallest singular value is the
        // dependence certificate: (nu, mu) with ‖nu·a + mu·b‖ = σ_min.
        let mut nu = vt[[1, 0]].conj();
        let mut mu = vt[[1, 1]].conj();
        // Phase fix for reproducibility: larger component real positive.
        let pivot = if nu.norm() >= mu.norm() { nu } else { mu };
        let phase = pivot / cx(pivot.norm(), 0.0);
        nu /= phase;
        mu /= phase;
        Ok(Dependence { verdict: DependenceVerdict::Dependent { nu, mu }, residual })
    } else {
        Ok(Dependence { verdict: DependenceVerdict::Independent, residual })
    }
}

/// The qubit observable family `λ₀·P₊ + λ₁·P₋` with
/// `P± = ½[[1, ±1], [±1, 1]]`: the eigenprojectors are the two rank-one
/// projectors onto `(e₀ ± e₁)/√2` regardless of the eigenvalues.
pub fn special_observable(lambda0: f64, lambda1: f64) -> Result<Observable> {
    if lambda0 == lambda1 {
        return Err(Error::InvalidParameter {
            name: "lambda0 - lambda1",
            value: 0.0,
            requirement: "distinct eigenvalues",
        });
    }
    let half = 0.5;
    let matrix = Array2::from_shape_fn((2, 2), |(r, c)| {
        let plus = cx(half * lambda0, 0.0);
        let minus = cx(half * lambda1, 0.0);
        if r == c {
            plus + minus
        } else {
            plus - minus
        }
    });
    Observable::from_matrix(matrix)
}

/// Two-interaction memory model tailored to stay pure under the
/// [`special_observable`] family: no free system evolution beyond `h0 = 0`,
/// no chain energy, and the same Hermitian coupling to the fresh copy and
/// the previous one.
pub fn build_special_model(
    c: &Array2<C64>,
    lambda: f64,
    tau: f64,
) -> Result<HamiltonianChainModel> {
    let dev = crate::linalg::hermiticity_deviation(c);
    if dev > HERMITICITY_TOL * (1.0 + crate::linalg::max_abs(c)) {
        return Err(Error::NotHermitian { context: "special model coupling", deviation: dev });
    }
    let dim = c.nrows();
    let h0: Array2<C64> = Array2::zeros((dim, dim));
    HamiltonianChainModel::new(h0, 0.0, lambda, tau, Couplings::TwoCopyWindow(c.clone()))
}

/// Observed scaling of one labeled block of the two-step unitary.
#[derive(Debug, Clone)]
pub struct BlockOrder {
    /// Row digits (first-copy level, second-copy level) of the block.
    pub row: (usize, usize),
    /// Column digits of the block.
    pub col: (usize, usize),
    /// Fitted log-log slope of the block norm against the step duration,
    /// `None` when the block vanishes at every sampled duration.
    pub observed_order: Option<f64>,
    /// Leading power of the step duration predicted for this block: 1 for
    /// blocks adjacent to the reference level, 2 for double transitions.
    pub predicted_order: usize,
    /// Block norms at the sampled durations.
    pub norms: Vec<f64>,
}

/// Threshold below which a block norm counts as an exact zero in the scan.
pub const ZERO_BLOCK_TOL: f64 = 1e-14;

/// Fits the leading power of the step duration for the labeled blocks of
/// the two-interaction unitary: the diagonal defect `B[(0,0),(0,0)] − I`
/// and the single-transition blocks scale linearly, the double-transition
/// block quadratically. Requires at least three durations.
pub fn asymptotic_order_scan(model: &HamiltonianChainModel, taus: &[f64]) -> Result<Vec<BlockOrder>> {
    if taus.len() < 3 {
        return Err(Error::InsufficientTauGrid { needed: 3, actual: taus.len() });
    }
    for &tau in taus {
        if tau <= 0.0 || tau.is_nan() {
            return Err(Error::InvalidParameter {
                name: "tau",
                value: tau,
                requirement: "strictly positive step duration",
            });
        }
    }
    let labeled = [
        ((0usize, 0usize), (0usize, 0usize), 1usize),
        ((0, 1), (0, 0), 1),
        ((1, 0), (0, 0), 1),
        ((1, 1), (0, 0), 2),
    ];
    let d0 = model.h0().nrows();
    // The second-step unitary acts on the system and the two active copies
    // only, so the scan runs on that factor regardless of the caller's
    // truncation window.
    let spec = ChainSpec::new(d0, 2, 2)?;
    let mut norms: Vec<Vec<f64>> = vec![Vec::with_capacity(taus.len()); labeled.len()];
    for &tau in taus {
        let varied = InteractionModel::Chain(model.with_tau(tau)?);
        let u2 = varied.step_unitary(&spec, 2)?;
        let blocks = crate::models::extract_blocks(u2.matrix(), &spec, &[1, 2])?;
        for (slot, &(row, col, _)) in labeled.iter().enumerate() {
            let block = blocks.get(&[row.0, row.1], &[col.0, col.1])?;
            let defect = if row == col {
                block - &crate::linalg::identity(d0)
            } else {
                block.clone()
            };
            norms[slot].push(frobenius_norm(&defect));
        }
    }
    let log_taus: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let mut report = Vec::with_capacity(labeled.len());
    for (slot, &(row, col, predicted_order)) in labeled.iter().enumerate() {
        let ns = &norms[slot];
        let observed_order = if ns.iter().all(|&n| n <= ZERO_BLOCK_TOL) {
            None
        } else {
            // Least-squares slope of ln‖block‖ against ln τ.
            let logs: Vec<f64> = ns.iter().map(|n| n.max(f64::MIN_POSITIVE).ln()).collect();
            let mx = log_taus.iter().sum::<f64>() / log_taus.len() as f64;
            let my = logs.iter().sum::<f64>() / logs.len() as f64;
            let sxx: f64 = log_taus.iter().map(|x| (x - mx).powi(2)).sum();
            let sxy: f64 = log_taus
                .iter()
                .zip(&logs)
                .map(|(x, y)| (x - mx) * (y - my))
                .sum();
            Some(sxy / sxx)
        };
        report.push(BlockOrder {
            row,
            col,
            observed_order,
            predicted_order,
            norms: ns.clone(),
        });
    }
    Ok(report)
}

/// Purity classification of a trajectory scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PurityClass {
    /// Deficits at numerical zero for a memoryless block model.
    MarkovPure,
    /// Deficits at numerical zero for a memory model.
    SpecialPure,
    /// Some trajectory step genuinely mixes the reduced state.
    Mixing,
    /// Between the pure and mixing thresholds.
    Inconclusive,
}

/// Purity scan plus branch-operator analysis for a two-interaction model.
#[derive(Debug, Clone)]
pub struct UnravelReport {
    h_ops: OutcomePairBlocks,
    dependence: BTreeMap<(usize, usize), Dependence>,
    h_difference_norms: BTreeMap<(usize, usize), f64>,
    max_purity_deficit: f64,
    classification: PurityClass,
}

impl UnravelReport {
    /// Branch operators per (first outcome, second outcome).
    pub fn h_ops(&self) -> &OutcomePairBlocks {
        &self.h_ops
    }

    /// Dependence verdict for the two branch operators at each outcome pair.
    pub fn dependence(&self) -> &BTreeMap<(usize, usize), Dependence> {
        &self.dependence
    }

    /// `‖H₀(m,n) − H₁(m,n)‖_F` per outcome pair.
    pub fn h_difference_norms(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.h_difference_norms
    }

    /// Largest purity deficit over the scanned ensemble.
    pub fn max_purity_deficit(&self) -> f64 {
        self.max_purity_deficit
    }

    /// The scan's overall classification.
    pub fn classification(&self) -> PurityClass {
        self.classification
    }
}

/// Runs the full purity analysis of a model under an observable: a seeded
/// trajectory ensemble for the maximum purity deficit, plus the
/// two-interaction branch-operator dependence table.
pub fn run_unravel(
    model: &InteractionModel,
    obs: &Observable,
    initial_system: &ReducedState,
    steps: usize,
    base_seed: u64,
    ensemble: usize,
    spec: &ChainSpec,
) -> Result<UnravelReport> {
    obs.require_non_degenerate()?;
    let records = run_ensemble(model, initial_system, obs, steps, base_seed, ensemble, spec)?;
    let mut max_purity_deficit = 0.0f64;
    for record in &records {
        for &deficit in record.purity_deficits() {
            max_purity_deficit = max_purity_deficit.max(deficit);
        }
    }
    // The second-step unitary acts as identity beyond the two active sites,
    // so the branch analysis runs on the system ⊗ two-copy factor.
    let restricted = ChainSpec::new(spec.system_dim(), spec.copy_dim(), 2)?;
    let u2 = model.step_unitary(&restricted, 2)?;
    let blocks = crate::models::extract_blocks(u2.matrix(), &restricted, &[1, 2])?;
    let h_ops = compute_h_operators(&blocks, obs)?;
    let mut dependence = BTreeMap::new();
    let mut h_difference_norms = BTreeMap::new();
    for (&key, ops) in &h_ops {
        dependence.insert(key, check_dependence(&ops[0], &ops[1], DEPENDENCE_TOL)?);
        let diff = &ops[0] - &ops[1];
        h_difference_norms.insert(key, frobenius_norm(&diff));
    }
    let classification = if max_purity_deficit <= PURE_DEFICIT_TOL {
        if model.is_markov() {
            PurityClass::MarkovPure
        } else {
            PurityClass::SpecialPure
        }
    } else if max_purity_deficit > MIXING_DEFICIT_TOL {
        PurityClass::Mixing
    } else {
        PurityClass::Inconclusive
    };
    Ok(UnravelReport {
        h_ops,
        dependence,
        h_difference_norms,
        max_purity_deficit,
        classification,
    })
}
