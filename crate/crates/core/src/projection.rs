// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Projection techniques for the reduced dynamics.
//!
//! The projection `P(α) = Tr_chain(α) ⊗ β_chain` splits any global operator
//! into a product part and a correlation part `Q = 1 − P`. Three reduced
//! descriptions are built on that split:
//!
//! * a two-track recursion that carries the `P` and `Q` components exactly
//!   ([`nz_evolve`]) — memory shows up as the `Q`-mediated terms;
//! * a memoryless Kraus channel for models whose step touches only the
//!   fresh copy ([`markov_kraus`]);
//! * a time-local scheme whose memory correction at step `k+1` is a kernel
//!   `K_k` acting on the current product component alone
//!   ([`tcl_build_kernel`], [`tcl_evolve`]). The kernel composes rewound
//!   evolution with the projected forward maps, is materialized as a
//!   `D² × D²` matrix over column-stacked operators, and enters through the
//!   linear solve `(I − K_k)·y = K_k·vec(Pμ_k)`; the solve's estimated
//!   condition number is reported and capped.

use ndarray::prelude::*;
use ndarray_linalg::{FactorizeInto, ReciprocalConditionNum, Solve};

use crate::chain::{partial_trace_chain, ChainSpec, GlobalState, ReducedState};
use crate::error::{Error, Result};
use crate::evolution::conjugate;
use crate::linalg::{
    dag, frobenius_norm, identity, unvectorize, vectorize, C64, UNITARITY_TOL,
};
use crate::models::{InteractionModel, MarkovBlockModel, StepUnitary};

/// Largest global dimension for which a `D² × D²` kernel is materialized.
pub const MAX_KERNEL_GLOBAL_DIM: usize = 90;

/// Condition estimates above this abort the time-local scheme by default.
pub const DEFAULT_KERNEL_CONDITION_CAP: f64 = 1e8;

/// Product projection `P(α) = Tr_chain(α) ⊗ β_chain`.
pub fn project_p(spec: &ChainSpec, m: &Array2<C64>) -> Result<Array2<C64>> {
    let sys = partial_trace_chain(spec, m)?;
    let d = spec.global_dim();
    let dch = spec.chain_dim();
    let mut out = Array2::zeros((d, d));
    for p in 0..spec.system_dim() {
        for q in 0..spec.system_dim() {
            out[[p * dch, q * dch]] = sys[[p, q]];
        }
    }
    Ok(out)
}

/// Correlation projection `Q(α) = α − P(α)`.
pub fn project_q(spec: &ChainSpec, m: &Array2<C64>) -> Result<Array2<C64>> {
    Ok(m - &project_p(spec, m)?)
}

/// A completed two-track run: product components, correlation components,
/// and the reduced states they induce, for steps `0..=steps`.
#[derive(Debug, Clone)]
pub struct NzEvolution {
    p_components: Vec<Array2<C64>>,
    q_components: Vec<Array2<C64>>,
    reduced: Vec<ReducedState>,
}

impl NzEvolution {
    /// Product components `Pμ_0..Pμ_steps`.
    pub fn p_components(&self) -> &[Array2<C64>] {
        &self.p_components
    }

    /// Correlation components `Qμ_0..Qμ_steps`.
    pub fn q_components(&self) -> &[Array2<C64>] {
        &self.q_components
    }

    /// Reduced system states.
    pub fn reduced(&self) -> &[ReducedState] {
        &self.reduced
    }
}

/// Evolve by carrying the `P` and `Q` components of the global state
/// exactly:
/// `Pμ_{k+1} = PL_{k+1}(Pμ_k) + PL_{k+1}(Qμ_k)` and likewise for `Q`.
///
/// Equivalent to direct evolution followed by projection; the split makes
/// the memory contribution (the `Q`-mediated term) observable.
pub fn nz_evolve(
    model: &InteractionModel,
    spec: &ChainSpec,
    initial_system: &ReducedState,
    steps: usize,
) -> Result<NzEvolution> {
    let unitaries = model.step_unitaries(spec, steps)?;
    nz_evolve_with_unitaries(spec, initial_system, &unitaries)
}

/// [`nz_evolve`] with precomputed step unitaries.
pub fn nz_evolve_with_unitaries(
    spec: &ChainSpec,
    initial_system: &ReducedState,
    unitaries: &[StepUnitary],
) -> Result<NzEvolution> {
    if unitaries.len() > spec.window() {
        return Err(Error::StepsExceedWindow {
            steps: unitaries.len(),
            window: spec.window(),
        });
    }
    let initial = GlobalState::initial(spec.clone(), initial_system)?;
    let d = spec.global_dim();
    let mut p = initial.matrix().clone();
    let mut q: Array2<C64> = Array2::zeros((d, d));
    let mut p_components = vec![p.clone()];
    let mut q_components = vec![q.clone()];
    let mut reduced = vec![initial.reduced()?];
    for u in unitaries {
        let lp = conjugate(u, &p);
        let lq = conjugate(u, &q);
        let plp = project_p(spec, &lp)?;
        let plq = project_p(spec, &lq)?;
        p = &plp + &plq;
        q = &(&lp - &plp) + &(&lq - &plq);
        p_components.push(p.clone());
        q_components.push(q.clone());
        reduced.push(ReducedState::new(partial_trace_chain(spec, &p)?)?);
    }
    Ok(NzEvolution {
        p_components,
        q_components,
        reduced,
    })
}

/// Norm of `P∘L_{k+1}∘(QL_k)⋯(QL_{i+1})∘P` applied to a state: the memory
/// term routed through correlations built between steps `i` and `k`. For
/// models whose steps touch only the fresh copy this vanishes identically.
pub fn check_plqlp_zero(
    model: &InteractionModel,
    spec: &ChainSpec,
    k: usize,
    i: usize,
    state: &GlobalState,
) -> Result<f64> {
    if i >= k {
        return Err(Error::InvalidParameter {
            name: "i",
            value: i as f64,
            requirement: "the inner index must satisfy i < k",
        });
    }
    if k + 1 > spec.window() {
        return Err(Error::SiteOutOfRange {
            site: k + 1,
            window: spec.window(),
        });
    }
    let mut x = project_p(spec, state.matrix())?;
    for j in (i + 1)..=k {
        let u = model.step_unitary(spec, j)?;
        x = project_q(spec, &conjugate(&u, &x))?;
    }
    let u = model.step_unitary(spec, k + 1)?;
    x = project_p(spec, &conjugate(&u, &x))?;
    Ok(frobenius_norm(&x))
}

/// A channel in Kraus form `ρ ↦ Σ_i K_i ρ K_i†`.
#[derive(Debug, Clone)]
pub struct KrausChannel {
    operators: Vec<Array2<C64>>,
}

impl KrausChannel {
    /// Validate trace preservation `Σ_i K_i†K_i = I` and wrap.
    pub fn new(operators: Vec<Array2<C64>>) -> Result<Self> {
        let first = operators.first().ok_or(Error::EmptyEnsemble)?;
        let d = first.nrows();
        let mut sum: Array2<C64> = Array2::zeros((d, d));
        for op in &operators {
            if op.nrows() != d || op.ncols() != d {
                return Err(Error::DimensionMismatch {
                    context: "kraus operator",
                    expected: d,
                    actual: op.nrows(),
                });
            }
            sum = sum + dag(op).dot(op);
        }
        let dev = frobenius_norm(&(&sum - &identity(d)));
        if dev > UNITARITY_TOL {
            return Err(Error::NotUnitary {
                context: "kraus completeness sum",
                deviation: dev,
            });
        }
        Ok(Self { operators })
    }

    /// The operators.
    pub fn operators(&self) -> &[Array2<C64>] {
        &self.operators
    }

    /// Apply the channel.
    pub fn apply(&self, rho: &Array2<C64>) -> Array2<C64> {
        let d = rho.nrows();
        let mut out = Array2::zeros((d, d));
        for op in &self.operators {
            out = out + op.dot(rho).dot(&dag(op));
        }
        out
    }
}

/// The one-step reduced channel of a memoryless block model: the Kraus
/// operators are the blocks `U_i0` that move the fresh copy out of its
/// reference state.
pub fn markov_kraus(model: &MarkovBlockModel) -> Result<KrausChannel> {
    let ops = (0..model.copy_dim())
        .map(|i| model.block(i, 0).clone())
        .collect();
    KrausChannel::new(ops)
}

/// Materialized memory kernel `K_t` for the time-local scheme.
#[derive(Debug, Clone)]
pub struct MemoryKernel {
    step: usize,
    matrix: Array2<C64>,
}

impl MemoryKernel {
    /// Kernel index `t`: this kernel reconstructs `Qμ_t` from `Pμ_t`.
    pub fn step(&self) -> usize {
        self.step
    }

    /// The `D² × D²` matrix over column-stacked operators.
    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    /// Apply the kernel to an operator on the global space.
    pub fn apply(&self, m: &Array2<C64>) -> Result<Array2<C64>> {
        let d = (self.matrix.nrows() as f64).sqrt().round() as usize;
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "kernel operand",
                expected: d,
                actual: m.nrows(),
            });
        }
        unvectorize(&self.matrix.dot(&vectorize(m)), d, d)
    }
}

/// Build the kernel `K_{k+1}`: the sum over `i = 0..=k` of
/// (correlation-projected forward maps `QL_{k+1}⋯QL_{i+1}`) ∘ `P` ∘
/// (rewinds `L_{i+1}⁻¹⋯L_{k+1}⁻¹`), materialized column by column by
/// applying the composite to vectorized basis matrices.
///
/// `history` must hold the step unitaries `U_1..U_{k+1}` in order.
pub fn tcl_build_kernel(
    spec: &ChainSpec,
    k: usize,
    history: &[StepUnitary],
) -> Result<MemoryKernel> {
    let t = k + 1;
    if t > spec.window() {
        return Err(Error::SiteOutOfRange {
            site: t,
            window: spec.window(),
        });
    }
    let d = spec.global_dim();
    if d > MAX_KERNEL_GLOBAL_DIM {
        return Err(Error::KernelTooLarge {
            global_dim: d,
            max: MAX_KERNEL_GLOBAL_DIM,
        });
    }
    if history.len() < t {
        return Err(Error::DimensionMismatch {
            context: "kernel history length",
            expected: t,
            actual: history.len(),
        });
    }
    let history = &history[..t];
    for (pos, u) in history.iter().enumerate() {
        if u.step() != pos + 1 {
            return Err(Error::MisorderedHistory {
                position: pos,
                step: u.step(),
                expected: pos + 1,
            });
        }
        if u.matrix().nrows() != d {
            return Err(Error::DimensionMismatch {
                context: "kernel history unitary",
                expected: d,
                actual: u.matrix().nrows(),
            });
        }
    }
    let d0 = spec.system_dim();
    let dch = spec.chain_dim();

    // Rewinds W_i = U_{i+1}†⋯U_t†, so the rewound operator is W_i·α·W_i†.
    let mut rewinds: Vec<Array2<C64>> = Vec::with_capacity(t);
    let mut w = dag(history[t - 1].matrix());
    rewinds.push(w.clone());
    for pos in (0..t - 1).rev() {
        w = dag(history[pos].matrix()).dot(&w);
        rewinds.push(w.clone());
    }
    rewinds.reverse();

    // Forward images G[i, p, q] = (QL_t⋯QL_{i+1})(|p⟩⟨q| ⊗ β_chain): the
    // kernel maps everything through the d0²-dimensional product subspace,
    // so these columns span its range.
    let rank = t * d0 * d0;
    let mut gmat: Array2<C64> = Array2::zeros((d * d, rank));
    for i in 0..t {
        for p in 0..d0 {
            for q in 0..d0 {
                let mut x: Array2<C64> = Array2::zeros((d, d));
                x[[p * dch, q * dch]] = C64::new(1.0, 0.0);
                for j in (i + 1)..=t {
                    x = project_q(spec, &conjugate(&history[j - 1], &x))?;
                }
                let col = vectorize(&x);
                gmat.column_mut(i * d0 * d0 + p * d0 + q).assign(&col);
            }
        }
    }

    // Coefficients of P(W_i·E_rc·W_i†) in the product basis: with
    // u = W_i·e_r and v = W_i·e_c the partial trace of u·v† over the chain
    // has entries Σ_x u[p·dch+x]·conj(v[q·dch+x]).
    let mut cmat: Array2<C64> = Array2::zeros((rank, d * d));
    for c in 0..d {
        for r in 0..d {
            let b = r + c * d;
            for i in 0..t {
                let u = rewinds[i].column(r);
                let v = rewinds[i].column(c);
                for p in 0..d0 {
                    for q in 0..d0 {
                        let mut acc = C64::new(0.0, 0.0);
                        for x in 0..dch {
                            acc += u[p * dch + x] * v[q * dch + x].conj();
                        }
                        cmat[[i * d0 * d0 + p * d0 + q, b]] = acc;
                    }
                }
            }
        }
    }

    Ok(MemoryKernel {
        step: t,
        matrix: gmat.dot(&cmat),
    })
}

/// A completed time-local run: reduced states and, per memory correction,
/// the kernel index and estimated condition number of its linear solve.
#[derive(Debug, Clone)]
pub struct TclEvolution {
    reduced: Vec<ReducedState>,
    conditions: Vec<(usize, f64)>,
}

impl TclEvolution {
    /// Reduced system states `ρ_0..ρ_steps`.
    pub fn reduced(&self) -> &[ReducedState] {
        &self.reduced
    }

    /// `(kernel index, condition estimate)` for each performed solve.
    pub fn conditions(&self) -> &[(usize, f64)] {
        &self.conditions
    }
}

/// Time-local evolution with the default condition cap.
pub fn tcl_evolve(
    model: &InteractionModel,
    spec: &ChainSpec,
    initial_system: &ReducedState,
    steps: usize,
) -> Result<TclEvolution> {
    tcl_evolve_capped(model, spec, initial_system, steps, DEFAULT_KERNEL_CONDITION_CAP)
}

/// Time-local evolution: each step propagates only the product component,
/// with the correlation contribution reconstructed through the kernel:
/// `Pμ_{k+1} = PL_{k+1}(Pμ_k) + PL_{k+1}((I−K_k)⁻¹·K_k·Pμ_k)`.
///
/// Every solve's condition estimate (1-norm) is recorded; estimates above
/// `condition_cap` abort with [`Error::IllConditionedKernel`]. An exactly
/// singular system — which arises when a step's reduced map destroys the
/// correlations the solve is meant to recover (for example the fresh-copy
/// SWAP interaction, whose reduced channel replaces the system state) —
/// is reported through the same error with an infinite estimate.
pub fn tcl_evolve_capped(
    model: &InteractionModel,
    spec: &ChainSpec,
    initial_system: &ReducedState,
    steps: usize,
    condition_cap: f64,
) -> Result<TclEvolution> {
    let unitaries = model.step_unitaries(spec, steps)?;
    let d = spec.global_dim();
    if d > MAX_KERNEL_GLOBAL_DIM && steps > 1 {
        return Err(Error::KernelTooLarge {
            global_dim: d,
            max: MAX_KERNEL_GLOBAL_DIM,
        });
    }
    let initial = GlobalState::initial(spec.clone(), initial_system)?;
    let mut pmu = initial.matrix().clone();
    let mut reduced = vec![initial.reduced()?];
    let mut conditions = Vec::new();
    for (k, u) in unitaries.iter().enumerate() {
        let mut next = project_p(spec, &conjugate(u, &pmu))?;
        if k >= 1 {
            let kernel = tcl_build_kernel(spec, k - 1, &unitaries[..k])?;
            let rhs = kernel.matrix().dot(&vectorize(&pmu));
            let mut a = kernel.matrix().mapv(|z| -z);
            for j in 0..a.nrows() {
                a[[j, j]] += C64::new(1.0, 0.0);
            }
            // An exactly singular factorization (zero pivot) is the limiting
            // case of an ill-conditioned kernel, so it is reported through the
            // same typed error with an infinite condition estimate rather than
            // as a backend failure.
            let factors = a.factorize_into().map_err(|_| Error::IllConditionedKernel {
                step: kernel.step(),
                estimate: f64::INFINITY,
            })?;
            let rcond = factors.rcond().map_err(|e| Error::LinearAlgebra {
                context: "kernel condition estimate",
                message: e.to_string(),
            })?;
            let cond = 1.0 / rcond.max(f64::MIN_POSITIVE);
            conditions.push((kernel.step(), cond));
            if cond > condition_cap {
                return Err(Error::IllConditionedKernel {
                    step: kernel.step(),
                    estimate: cond,
                });
            }
            let y = factors.solve(&rhs).map_err(|e| Error::LinearAlgebra {
                context: "kernel solve",
                message: e.to_string(),
            })?;
            let qcomp = unvectorize(&y, d, d)?;
            next = next + project_p(spec, &conjugate(u, &qcomp))?;
        }
        pmu = next;
        reduced.push(ReducedState::new(partial_trace_chain(spec, &pmu)?)?);
    }
    Ok(TclEvolution { reduced, conditions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::matrix_distance;
    use crate::evolution::evolve_direct;
    use crate::linalg::test_support::*;
    use crate::linalg::{hermitian_eigen, max_abs, trace, trace_distance};
    use crate::models::{Couplings, HamiltonianChainModel};

    fn qubit_spec(window: usize) -> ChainSpec {
        ChainSpec::new(2, 2, window).unwrap()
    }

    fn chain_model(preset: &str, lambda: f64, tau: f64) -> InteractionModel {
        let c = random_matrix(2, 301);
        let couplings = match preset {
            "full" => Couplings::FullMemory(c),
            "two" => Couplings::TwoCopyWindow(c),
            "markov" => Couplings::Markov(c),
            other => panic!("unknown preset {other}"),
        };
        InteractionModel::Chain(
            HamiltonianChainModel::new(random_hermitian(2, 302), 0.6, lambda, tau, couplings)
                .unwrap(),
        )
    }

    fn swap_model() -> InteractionModel {
        InteractionModel::Blocks(MarkovBlockModel::swap(2).unwrap())
    }

    fn initial_state() -> ReducedState {
        ReducedState::new(random_density(2, 303)).unwrap()
    }

    #[test]
    fn projections_are_complementary_idempotents() {
        let spec = qubit_spec(2);
        for seed in 0..3 {
            let m = random_matrix(8, 310 + seed);
            let p = project_p(&spec, &m).unwrap();
            let pp = project_p(&spec, &p).unwrap();
            assert_close(&pp, &p, 1e-14, "P idempotent");
            let q = project_q(&spec, &m).unwrap();
            let pq = project_p(&spec, &q).unwrap();
            assert!(max_abs(&pq) < 1e-14, "P after Q must vanish");
            let qq = project_q(&spec, &q).unwrap();
            assert_close(&qq, &q, 1e-14, "Q idempotent");
            assert_close(&(&p + &q), &m, 1e-14, "P + Q resolves the identity");
            // P preserves the trace, Q kills it.
            assert!((trace(&p) - trace(&m)).norm() < 1e-13);
            assert!(trace(&q).norm() < 1e-13);
        }
    }

    #[test]
    fn projection_fixes_initial_product_states() {
        let spec = qubit_spec(2);
        let init = GlobalState::initial(spec.clone(), &initial_state()).unwrap();
        let p = project_p(&spec, init.matrix()).unwrap();
        assert_close(&p, init.matrix(), 1e-14, "initial state is P-invariant");
    }

    #[test]
    fn projections_are_linear() {
        let spec = qubit_spec(2);
        let a = random_matrix(8, 320);
        let b = random_matrix(8, 321);
        let (ca, cb) = (crate::linalg::cx(0.3, -0.7), crate::linalg::cx(-1.1, 0.2));
        let combo = &a.mapv(|z| z * ca) + &b.mapv(|z| z * cb);
        let lhs = project_p(&spec, &combo).unwrap();
        let rhs = &project_p(&spec, &a).unwrap().mapv(|z| z * ca)
            + &project_p(&spec, &b).unwrap().mapv(|z| z * cb);
        assert_close(&lhs, &rhs, 1e-13, "P linearity");
    }

    #[test]
    fn two_track_recursion_matches_direct_evolution() {
        let spec = qubit_spec(3);
        let init = initial_state();
        for model in [
            swap_model(),
            chain_model("full", 1.0, 0.5),
            chain_model("two", 0.8, 0.3),
        ] {
            let direct = evolve_direct(&model, &spec, &init, 3).unwrap();
            let nz = nz_evolve(&model, &spec, &init, 3).unwrap();
            for k in 0..=3 {
                let dist = trace_distance(
                    direct.reduced()[k].matrix(),
                    nz.reduced()[k].matrix(),
                )
                .unwrap();
                assert!(dist < 1e-12, "mismatch at step {k}: {dist:.3e}");
                // The carried components must also reassemble the full state.
                let total = &nz.p_components()[k] + &nz.q_components()[k];
                let dev = matrix_distance(&total, direct.states()[k].matrix());
                assert!(dev < 1e-11, "component sum at step {k}: {dev:.3e}");
            }
        }
    }

    /// History-sum form of the product component: reconstructs `Pμ_{k+1}`
    /// from the stored product components alone, expanding the correlation
    /// track into its memory terms. Test-only oracle for [`nz_evolve`].
    fn history_sum_p_components(
        spec: &ChainSpec,
        unitaries: &[StepUnitary],
        initial: &GlobalState,
    ) -> Vec<Array2<C64>> {
        let mut p = vec![initial.matrix().clone()];
        for k in 0..unitaries.len() {
            let mut next = project_p(spec, &conjugate(&unitaries[k], &p[k])).unwrap();
            for (i, earlier) in p.iter().enumerate().take(k) {
                let mut x = earlier.clone();
                for j in (i + 1)..=k {
                    x = project_q(spec, &conjugate(&unitaries[j - 1], &x)).unwrap();
                }
                next = next + project_p(spec, &conjugate(&unitaries[k], &x)).unwrap();
            }
            p.push(next);
        }
        p
    }

    #[test]
    fn history_sum_matches_carried_components() {
        let spec = qubit_spec(3);
        let init = initial_state();
        for model in [chain_model("full", 1.0, 0.5), chain_model("markov", 0.7, 0.4)] {
            let unitaries = model.step_unitaries(&spec, 3).unwrap();
            let global = GlobalState::initial(spec.clone(), &init).unwrap();
            let history = history_sum_p_components(&spec, &unitaries, &global);
            let nz = nz_evolve(&model, &spec, &init, 3).unwrap();
            for (k, (h, pc)) in history.iter().zip(nz.p_components()).enumerate() {
                let dev = matrix_distance(h, pc);
                assert!(dev < 1e-11, "history sum deviates at step {k}: {dev:.3e}");
            }
        }
    }

    #[test]
    fn memory_terms_vanish_for_memoryless_models() {
        // Every history term that routes through correlations must vanish
        // when each step touches only the fresh copy — including the chain
        // model with free chain energy, whose phases on used copies commute
        // out of the partial trace.
        let spec = qubit_spec(3);
        let init = initial_state();
        for model in [swap_model(), chain_model("markov", 1.0, 0.5)] {
            let unitaries = model.step_unitaries(&spec, 3).unwrap();
            let global = GlobalState::initial(spec.clone(), &init).unwrap();
            let p = history_sum_p_components(&spec, &unitaries, &global);
            for k in 1..3usize {
                for (i, earlier) in p.iter().enumerate().take(k) {
                    let mut x = earlier.clone();
                    for j in (i + 1)..=k {
                        x = project_q(&spec, &conjugate(&unitaries[j - 1], &x)).unwrap();
                    }
                    let term = project_p(&spec, &conjugate(&unitaries[k], &x)).unwrap();
                    let norm = frobenius_norm(&term);
                    assert!(norm < 1e-12, "memory term ({k},{i}) = {norm:.3e}");
                }
            }
        }
    }

    #[test]
    fn memory_terms_survive_for_memory_models() {
        let spec = qubit_spec(3);
        let init = initial_state();
        let model = chain_model("full", 1.0, 0.5);
        let global = GlobalState::initial(spec.clone(), &init).unwrap();
        let mut worst = 0.0f64;
        for k in 1..3usize {
            for i in 0..k {
                worst = worst.max(
                    check_plqlp_zero(&model, &spec, k, i, &global).unwrap(),
                );
            }
        }
        assert!(worst > 1e-8, "expected a visible memory term, got {worst:.3e}");
    }

    #[test]
    fn plqlp_vanishes_for_memoryless_models_on_any_state() {
        let spec = qubit_spec(3);
        // An arbitrary valid density on the global space, not of product form.
        let arbitrary = GlobalState::new(spec.clone(), random_density(16, 330)).unwrap();
        let evolved = {
            let run = evolve_direct(&swap_model(), &spec, &initial_state(), 2).unwrap();
            run.states()[2].clone()
        };
        for model in [swap_model(), chain_model("markov", 1.0, 0.5)] {
            for state in [&arbitrary, &evolved] {
                for k in 1..3usize {
                    for i in 0..k {
                        let norm = check_plqlp_zero(&model, &spec, k, i, state).unwrap();
                        assert!(norm < 1e-12, "({k},{i}) gave {norm:.3e}");
                    }
                }
            }
        }
        assert!(check_plqlp_zero(&swap_model(), &spec, 1, 1, &arbitrary).is_err());
        assert!(check_plqlp_zero(&swap_model(), &spec, 3, 0, &arbitrary).is_err());
    }

    #[test]
    fn markov_kraus_reproduces_the_reduced_dynamics() {
        let spec = qubit_spec(4);
        let init = initial_state();
        let pair = random_unitary(4, 331);
        let model = MarkovBlockModel::from_pair_unitary(&pair, 2, 2).unwrap();
        let channel = markov_kraus(&model).unwrap();
        let direct = evolve_direct(
            &InteractionModel::Blocks(model),
            &spec,
            &init,
            4,
        )
        .unwrap();
        let mut rho = init.matrix().clone();
        for k in 1..=4 {
            rho = channel.apply(&rho);
            let dist = trace_distance(&rho, direct.reduced()[k].matrix()).unwrap();
            assert!(dist < 1e-10, "kraus iterate deviates at step {k}: {dist:.3e}");
        }
    }

    #[test]
    fn swap_kraus_operators_are_the_reference_loaders() {
        let model = MarkovBlockModel::swap(2).unwrap();
        let channel = markov_kraus(&model).unwrap();
        // For the swap, U_i0 = |0⟩⟨i|: the channel replaces any state by the
        // copy's reference state.
        let rho = random_density(2, 332);
        let out = channel.apply(&rho);
        assert_close(&out, &crate::chain::ground_projector(2), 1e-14, "replacement");
    }

    #[test]
    fn kraus_completeness_is_enforced() {
        let bad = vec![identity(2).mapv(|z| z * 0.9)];
        assert!(matches!(
            KrausChannel::new(bad),
            Err(Error::NotUnitary { .. })
        ));
        assert!(matches!(KrausChannel::new(vec![]), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn first_kernel_is_the_projected_rewound_composition() {
        // K₁ = (QL₁) ∘ P ∘ L₁⁻¹ applied to arbitrary operators.
        let spec = qubit_spec(2);
        let model = chain_model("full", 0.9, 0.4);
        let unitaries = model.step_unitaries(&spec, 1).unwrap();
        let kernel = tcl_build_kernel(&spec, 0, &unitaries).unwrap();
        assert_eq!(kernel.step(), 1);
        let u = &unitaries[0];
        for seed in 0..5 {
            let alpha = random_matrix(8, 340 + seed);
            let rewound = dag(u.matrix()).dot(&alpha).dot(u.matrix());
            let expected =
                project_q(&spec, &conjugate(u, &project_p(&spec, &rewound).unwrap())).unwrap();
            let got = kernel.apply(&alpha).unwrap();
            assert_close(&got, &expected, 1e-12, "K1 composition");
        }
    }

    #[test]
    fn kernel_of_identity_model_vanishes() {
        let spec = qubit_spec(2);
        let model = InteractionModel::Blocks(MarkovBlockModel::identity(2, 2).unwrap());
        let unitaries = model.step_unitaries(&spec, 2).unwrap();
        for k in 0..2 {
            let kernel = tcl_build_kernel(&spec, k, &unitaries).unwrap();
            assert!(max_abs(kernel.matrix()) < 1e-14, "identity model kernel");
        }
    }

    #[test]
    fn kernel_reconstructs_correlations_from_the_product_component() {
        // Along the exact trajectory, (I − K_k)(Qμ_k) = K_k(Pμ_k).
        let spec = qubit_spec(3);
        let init = initial_state();
        for model in [chain_model("full", 1.0, 0.5), chain_model("two", 0.6, 0.2)] {
            let unitaries = model.step_unitaries(&spec, 3).unwrap();
            let nz = nz_evolve(&model, &spec, &init, 3).unwrap();
            for k in 1..=3usize {
                let kernel = tcl_build_kernel(&spec, k - 1, &unitaries[..k]).unwrap();
                let q = &nz.q_components()[k];
                let p = &nz.p_components()[k];
                let lhs = q - &kernel.apply(q).unwrap();
                let rhs = kernel.apply(p).unwrap();
                let dev = matrix_distance(&lhs, &rhs);
                assert!(dev < 1e-10, "kernel identity at k={k}: {dev:.3e}");
            }
        }
    }

    #[test]
    fn kernel_rank_is_bounded_by_the_product_subspace_dimension() {
        let spec = qubit_spec(3);
        let model = chain_model("full", 1.0, 0.5);
        let unitaries = model.step_unitaries(&spec, 3).unwrap();
        let kernel = tcl_build_kernel(&spec, 2, &unitaries).unwrap();
        let m = kernel.matrix();
        let gram = dag(m).dot(m);
        let (vals, _) = hermitian_eigen(&gram).unwrap();
        let scale = vals.iter().cloned().fold(0.0, f64::max).max(1e-30);
        let rank = vals.iter().filter(|&&v| v > scale * 1e-12).count();
        assert!(
            rank <= 3 * 4,
            "kernel rank {rank} exceeds t·d0² = 12"
        );
    }

    #[test]
    fn time_local_scheme_matches_direct_evolution() {
        let spec = qubit_spec(3);
        let init = initial_state();
        for (name, model) in [
            ("full", chain_model("full", 0.8, 0.4)),
            ("two", chain_model("two", 1.0, 0.5)),
            ("markov", chain_model("markov", 0.5, 0.1)),
        ] {
            let direct = evolve_direct(&model, &spec, &init, 3).unwrap();
            let tcl = tcl_evolve(&model, &spec, &init, 3).unwrap();
            for k in 0..=3 {
                let dist = trace_distance(
                    direct.reduced()[k].matrix(),
                    tcl.reduced()[k].matrix(),
                )
                .unwrap();
                assert!(dist < 1e-9, "{name} step {k}: {dist:.3e}");
            }
            assert_eq!(tcl.conditions().len(), 2);
            for &(step, cond) in tcl.conditions() {
                assert!(cond >= 1.0, "condition below 1 at kernel {step}");
                assert!(cond < 1e6, "{name}: unexpectedly ill-conditioned: {cond:.3e}");
            }
        }
    }

    /// The SWAP interaction discards the incoming system state entirely, so
    /// its reduced map is a replacement channel: `I − K` acquires an exact
    /// null space (e.g. any traceless operator on the consumed copy survives
    /// the kernel unchanged) and the solve must refuse with the typed error
    /// rather than fabricate a correction.
    #[test]
    fn singular_kernel_reports_ill_conditioned_not_a_backend_crash() {
        let spec = qubit_spec(3);
        let err = tcl_evolve(&swap_model(), &spec, &initial_state(), 3).unwrap_err();
        match err {
            Error::IllConditionedKernel { step, estimate } => {
                assert_eq!(step, 1);
                assert!(estimate.is_infinite() || estimate > DEFAULT_KERNEL_CONDITION_CAP);
            }
            other => panic!("expected the ill-conditioned error, got {other:?}"),
        }
    }

    #[test]
    fn condition_cap_aborts_with_the_typed_error() {
        let spec = qubit_spec(2);
        let model = chain_model("full", 1.0, 0.5);
        let err = tcl_evolve_capped(&model, &spec, &initial_state(), 2, 0.5).unwrap_err();
        assert!(matches!(err, Error::IllConditionedKernel { step: 1, .. }));
    }

    #[test]
    fn kernel_size_guard_refuses_large_spaces() {
        let spec = ChainSpec::new(2, 2, 6).unwrap(); // global dimension 128
        let model = InteractionModel::Blocks(MarkovBlockModel::identity(2, 2).unwrap());
        let u1 = model.step_unitary(&spec, 1).unwrap();
        assert!(matches!(
            tcl_build_kernel(&spec, 0, &[u1]),
            Err(Error::KernelTooLarge { global_dim: 128, .. })
        ));
    }

    #[test]
    fn kernel_history_must_be_ordered_and_long_enough() {
        let spec = qubit_spec(3);
        let model = swap_model();
        let u2 = model.step_unitary(&spec, 2).unwrap();
        assert!(matches!(
            tcl_build_kernel(&spec, 0, std::slice::from_ref(&u2)),
            Err(Error::MisorderedHistory { .. })
        ));
        assert!(matches!(
            tcl_build_kernel(&spec, 1, &[u2]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn exactness_grid_over_models_couplings_and_durations() {
        // All three reduced descriptions agree with direct evolution across
        // the model grid (memoryless block model plus the three coupling
        // presets, over coupling strengths and step durations).
        let spec = qubit_spec(3);
        let init = initial_state();
        let mut checked = 0;
        let mut models: Vec<(String, InteractionModel)> = vec![("swap".into(), swap_model())];
        for preset in ["full", "two", "markov"] {
            for lambda in [0.0, 0.5, 1.0] {
                for tau in [0.1, 0.5] {
                    models.push((
                        format!("{preset} λ={lambda} τ={tau}"),
                        chain_model(preset, lambda, tau),
                    ));
                }
            }
        }
        for (name, model) in &models {
            let direct = evolve_direct(model, &spec, &init, 3).unwrap();
            let nz = nz_evolve(model, &spec, &init, 3).unwrap();
            match tcl_evolve(model, &spec, &init, 3) {
                Ok(tcl) => {
                    for k in 0..=3 {
                        let d_nz = trace_distance(
                            direct.reduced()[k].matrix(),
                            nz.reduced()[k].matrix(),
                        )
                        .unwrap();
                        let d_tcl = trace_distance(
                            direct.reduced()[k].matrix(),
                            tcl.reduced()[k].matrix(),
                        )
                        .unwrap();
                        assert!(d_nz < 1e-8, "{name} two-track step {k}: {d_nz:.3e}");
                        assert!(d_tcl < 1e-8, "{name} time-local step {k}: {d_tcl:.3e}");
                    }
                    checked += 1;
                }
                Err(Error::IllConditionedKernel { .. }) => {
                    // A legitimate outcome: the scheme refuses rather than
                    // returning untrustworthy numbers.
                }
                Err(other) => panic!("{name}: unexpected error {other}"),
            }
        }
        assert!(checked >= 10, "almost all grid points should be well-conditioned");
    }
}
