// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Repeated indirect measurement on the freshest chain copy.
//!
//! After each interaction step a fixed one-copy observable is measured
//! projectively on the copy that step just consumed. Conditioning on the
//! outcome yields a random sequence of global states (a quantum trajectory);
//! tracing out the chain yields the reduced trajectory of system states,
//! whose conditional law generally depends on the whole outcome history.
//!
//! The module provides the single conditioned step, seeded trajectory
//! sampling with per-trajectory substreams, cylinder-set probabilities,
//! ensemble averaging, and a reconstruction of the reduced trajectory from
//! the product/remainder split that isolates the history-dependent terms.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::chain::{partial_trace_chain, ChainSpec, GlobalState, ReducedState};
use crate::error::{Error, Result};
use crate::evolution::conjugate;
use crate::linalg::{
    dag, frobenius_norm, identity, max_abs, spectral_decomposition, trace, C64,
    EIGENVALUE_MERGE_TOL, HERMITICITY_TOL,
};
use crate::models::{InteractionModel, StepUnitary};
use crate::projection::project_p;

/// Name of the trajectory RNG scheme, recorded in run metadata: per-trajectory
/// seeds are derived with the SplitMix64 finalizer and drive ChaCha12 streams.
pub const RNG_ALGORITHM: &str = "splitmix64-keyed chacha12";

/// Branches with probability below this threshold are removed before
/// sampling and the remaining mass renormalized.
pub const BRANCH_PROBABILITY_FLOOR: f64 = 1e-14;

/// Tolerance on Σᵢ pᵢ = 1 per measured step.
pub const PROBABILITY_SUM_TOL: f64 = 1e-10;

/// SplitMix64 finalizer: a fixed, documented 64-bit mixing permutation.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for ensemble member `index` under `base_seed`. Documented derivation
/// (part of the reproducibility contract): `splitmix64(base ⊕ splitmix64(index))`.
pub fn derive_trajectory_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(index))
}

/// The seeded stream used for outcome sampling: one `f64` draw per step.
pub fn trajectory_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// A Hermitian observable on a single chain copy, held together with its
/// spectral resolution. Outcomes are indexed by eigenvalue level in
/// descending eigenvalue order.
#[derive(Debug, Clone)]
pub struct Observable {
    matrix: Array2<C64>,
    eigenvalues: Vec<f64>,
    projectors: Vec<Array2<C64>>,
    multiplicities: Vec<usize>,
}

impl Observable {
    /// Builds the observable from its matrix, resolving eigenspaces with the
    /// default merge tolerance and checking the projector family is complete
    /// and orthogonal.
    pub fn from_matrix(matrix: Array2<C64>) -> Result<Self> {
        let scale = max_abs(&matrix).max(1.0);
        let dev = crate::linalg::hermiticity_deviation(&matrix);
        if dev > HERMITICITY_TOL * scale {
            return Err(Error::NotHermitian { context: "observable", deviation: dev });
        }
        let levels = spectral_decomposition(&matrix, EIGENVALUE_MERGE_TOL)?;
        let dim = matrix.nrows();
        let mut completeness: Array2<C64> = Array2::zeros((dim, dim));
        for level in &levels {
            completeness += &level.projector;
        }
        completeness -= &identity(dim);
        let gap = max_abs(&completeness);
        if gap > 1e-10 {
            return Err(Error::LinearAlgebra {
                context: "observable projector completeness",
                message: format!("projectors sum to identity only within {gap:.3e}"),
            });
        }
        for (a, la) in levels.iter().enumerate() {
            for lb in levels.iter().skip(a + 1) {
                let cross = la.projector.dot(&lb.projector);
                let overlap = max_abs(&cross);
                if overlap > 1e-10 {
                    return Err(Error::LinearAlgebra {
                        context: "observable projector orthogonality",
                        message: format!("projector overlap {overlap:.3e}"),
                    });
                }
            }
        }
        Ok(Self {
            matrix,
            eigenvalues: levels.iter().map(|l| l.value).collect(),
            projectors: levels.iter().map(|l| l.projector.clone()).collect(),
            multiplicities: levels.iter().map(|l| l.multiplicity).collect(),
        })
    }

    /// The observable's matrix.
    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    /// Dimension of the copy space the observable acts on.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of distinct outcomes (eigenvalue levels).
    pub fn num_outcomes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues in descending order, one per outcome.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenprojectors, aligned with [`Self::eigenvalues`].
    pub fn projectors(&self) -> &[Array2<C64>] {
        &self.projectors
    }

    /// Eigenspace dimensions, aligned with [`Self::eigenvalues`].
    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    /// True when every eigenprojector is rank one.
    pub fn is_non_degenerate(&self) -> bool {
        self.multiplicities.iter().all(|&m| m == 1)
    }

    /// Errors unless every eigenprojector is rank one.
    pub fn require_non_degenerate(&self) -> Result<()> {
        if self.is_non_degenerate() {
            Ok(())
        } else {
            Err(Error::DegenerateObservable {
                detail: format!(
                    "eigenspace dimensions {:?}; every outcome must be rank one",
                    self.multiplicities
                ),
            })
        }
    }
}

/// Result of one conditioned measurement step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Index of the realized outcome (into the observable's levels).
    pub outcome: usize,
    /// Probability of that outcome.
    pub probability: f64,
    /// Probabilities of every outcome at this step.
    pub probabilities: Vec<f64>,
    /// The renormalized conditioned global state.
    pub state: GlobalState,
}

/// Applies one interaction step followed by a projective measurement of
/// `obs` on chain copy `site`, sampling the outcome by inverse CDF on a
/// single `f64` draw from `rng`.
///
/// Branch probabilities must sum to one within [`PROBABILITY_SUM_TOL`];
/// branches below [`BRANCH_PROBABILITY_FLOOR`] are excluded from sampling
/// and the residual mass renormalized.
pub fn trajectory_step(
    state: &GlobalState,
    u_next: &StepUnitary,
    obs: &Observable,
    site: usize,
    rng: &mut impl Rng,
) -> Result<StepOutcome> {
    let spec = state.spec();
    if obs.dim() != spec.copy_dim() {
        return Err(Error::DimensionMismatch {
            context: "observable vs copy dimension",
            expected: spec.copy_dim(),
            actual: obs.dim(),
        });
    }
    let evolved = conjugate(u_next, state.matrix());
    let mut candidates = Vec::with_capacity(obs.num_outcomes());
    let mut probabilities = Vec::with_capacity(obs.num_outcomes());
    for projector in obs.projectors() {
        let embedded = crate::chain::embed_site_operator(spec, projector, site)?;
        let candidate = embedded.dot(&evolved).dot(&embedded);
        probabilities.push(trace(&candidate).re);
        candidates.push(candidate);
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
        return Err(Error::ProbabilityLeak { step: site, total });
    }
    let kept: Vec<usize> = (0..probabilities.len())
        .filter(|&m| probabilities[m] >= BRANCH_PROBABILITY_FLOOR)
        .collect();
    if kept.is_empty() {
        return Err(Error::ProbabilityLeak { step: site, total: 0.0 });
    }
    let kept_mass: f64 = kept.iter().map(|&m| probabilities[m]).sum();
    // Inverse CDF on the kept branches, with the draw rescaled by the kept
    // mass instead of renormalizing each probability.
    let target = rng.gen::<f64>() * kept_mass;
    let mut outcome = *kept.last().expect("kept is non-empty");
    let mut acc = 0.0;
    for &m in &kept {
        acc += probabilities[m];
        if target < acc {
            outcome = m;
            break;
        }
    }
    let probability = probabilities[outcome];
    // Conditioning divides by a possibly small probability, which would
    // amplify the antisymmetric rounding noise of the projected product;
    // the exact result is Hermitian, so the noise is removed first.
    let picked = &candidates[outcome];
    let normalized = (picked + &dag(picked)).mapv(|z| z * 0.5 / probability);
    let state = GlobalState::new(spec.clone(), normalized)?;
    Ok(StepOutcome { outcome, probability, probabilities, state })
}

/// One sampled trajectory: the outcome path, its branch probabilities, and
/// the conditioned global/reduced states at every step (index 0 is the
/// initial state; measurements fill indices 1..=steps).
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    seed: u64,
    outcomes: Vec<usize>,
    branch_probs: Vec<f64>,
    global_states: Vec<GlobalState>,
    reduced_states: Vec<ReducedState>,
    purity_deficits: Vec<f64>,
}

impl TrajectoryRecord {
    /// Seed of the RNG stream that produced this trajectory.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Realized outcome indices, one per step.
    pub fn outcomes(&self) -> &[usize] {
        &self.outcomes
    }

    /// Branch probability of each realized outcome.
    pub fn branch_probs(&self) -> &[f64] {
        &self.branch_probs
    }

    /// Conditioned global states `ρ_0..ρ_steps`.
    pub fn global_states(&self) -> &[GlobalState] {
        &self.global_states
    }

    /// Reduced system states, the chain trace of each global state.
    pub fn reduced_states(&self) -> &[ReducedState] {
        &self.reduced_states
    }

    /// `1 − Tr[ρ²]` of each reduced state.
    pub fn purity_deficits(&self) -> &[f64] {
        &self.purity_deficits
    }

    /// Number of measured steps.
    pub fn steps(&self) -> usize {
        self.outcomes.len()
    }

    /// Log-probability of the realized outcome path (sum of branch logs).
    pub fn log_probability(&self) -> f64 {
        self.branch_probs.iter().map(|p| p.ln()).sum()
    }
}

/// Samples one trajectory of `steps` conditioned measurement steps,
/// deterministically in `seed`.
pub fn sample_trajectory(
    model: &InteractionModel,
    initial_system: &ReducedState,
    obs: &Observable,
    steps: usize,
    seed: u64,
    spec: &ChainSpec,
) -> Result<TrajectoryRecord> {
    let unitaries = model.step_unitaries(spec, steps)?;
    sample_trajectory_with_unitaries(&unitaries, initial_system, obs, steps, seed, spec)
}

/// [`sample_trajectory`] against precomputed step unitaries (shared across an
/// ensemble so the matrix exponentials are built once).
pub fn sample_trajectory_with_unitaries(
    unitaries: &[StepUnitary],
    initial_system: &ReducedState,
    obs: &Observable,
    steps: usize,
    seed: u64,
    spec: &ChainSpec,
) -> Result<TrajectoryRecord> {
    if steps > spec.window() {
        return Err(Error::StepsExceedWindow { steps, window: spec.window() });
    }
    if unitaries.len() < steps {
        return Err(Error::InvalidSiteList {
            detail: format!("{} step unitaries supplied for {steps} steps", unitaries.len()),
        });
    }
    let mut rng = trajectory_rng(seed);
    let mut state = GlobalState::initial(spec.clone(), initial_system)?;
    let mut outcomes = Vec::with_capacity(steps);
    let mut branch_probs = Vec::with_capacity(steps);
    let mut global_states = Vec::with_capacity(steps + 1);
    let mut reduced_states = Vec::with_capacity(steps + 1);
    let mut purity_deficits = Vec::with_capacity(steps + 1);
    let reduced = state.reduced()?;
    purity_deficits.push(1.0 - reduced.purity());
    reduced_states.push(reduced);
    global_states.push(state.clone());
    for (k, u) in unitaries.iter().take(steps).enumerate() {
        let step = trajectory_step(&state, u, obs, k + 1, &mut rng)?;
        state = step.state;
        outcomes.push(step.outcome);
        branch_probs.push(step.probability);
        let reduced = state.reduced()?;
        purity_deficits.push(1.0 - reduced.purity());
        reduced_states.push(reduced);
        global_states.push(state.clone());
    }
    Ok(TrajectoryRecord {
        seed,
        outcomes,
        branch_probs,
        global_states,
        reduced_states,
        purity_deficits,
    })
}

/// Samples `count` independent trajectories with per-index seeds derived
/// from `base_seed` (see [`derive_trajectory_seed`]); members run in
/// parallel and the result order is by index, so the ensemble is
/// reproducible regardless of thread scheduling.
pub fn run_ensemble(
    model: &InteractionModel,
    initial_system: &ReducedState,
    obs: &Observable,
    steps: usize,
    base_seed: u64,
    count: usize,
    spec: &ChainSpec,
) -> Result<Vec<TrajectoryRecord>> {
    let unitaries = model.step_unitaries(spec, steps)?;
    (0..count)
        .into_par_iter()
        .map(|index| {
            let seed = derive_trajectory_seed(base_seed, index as u64);
            sample_trajectory_with_unitaries(&unitaries, initial_system, obs, steps, seed, spec)
        })
        .collect()
}

/// The exact outcome-averaged (non-selective) evolution: each step applies
/// the interaction unitary and then replaces the consumed copy's state by
/// its block-diagonal part in the observable's eigenbasis.
///
/// This is the infinite-ensemble limit of [`run_ensemble`]'s mean. For
/// models that never re-couple a measured copy the projective dephasing is
/// invisible to the system and the result coincides with the unmeasured
/// reduced sequence; for models with memory the two genuinely differ from
/// the second step on, because later interactions read the coherences the
/// measurement removed.
pub fn nonselective_evolution(
    model: &InteractionModel,
    initial_system: &ReducedState,
    obs: &Observable,
    steps: usize,
    spec: &ChainSpec,
) -> Result<Vec<ReducedState>> {
    if steps > spec.window() {
        return Err(Error::StepsExceedWindow { steps, window: spec.window() });
    }
    if obs.dim() != spec.copy_dim() {
        return Err(Error::DimensionMismatch {
            context: "observable vs copy dimension",
            expected: spec.copy_dim(),
            actual: obs.dim(),
        });
    }
    let unitaries = model.step_unitaries(spec, steps)?;
    let initial = GlobalState::initial(spec.clone(), initial_system)?;
    let mut mu = initial.matrix().clone();
    let mut reduced = vec![ReducedState::new(partial_trace_chain(spec, &mu)?)?];
    for (k, u) in unitaries.iter().enumerate() {
        let evolved = conjugate(u, &mu);
        let mut next: Array2<C64> = Array2::zeros(evolved.raw_dim());
        for projector in obs.projectors() {
            let embedded = crate::chain::embed_site_operator(spec, projector, k + 1)?;
            next += &embedded.dot(&evolved).dot(&embedded);
        }
        mu = next;
        reduced.push(ReducedState::new(partial_trace_chain(spec, &mu)?)?);
    }
    Ok(reduced)
}

/// Probability of observing the exact outcome prefix `outcomes`: the trace
/// of the unnormalized state obtained by applying each step's interaction
/// and outcome projection without renormalizing.
pub fn cylinder_probability(
    model: &InteractionModel,
    initial_system: &ReducedState,
    obs: &Observable,
    outcomes: &[usize],
    spec: &ChainSpec,
) -> Result<f64> {
    if outcomes.len() > spec.window() {
        return Err(Error::StepsExceedWindow { steps: outcomes.len(), window: spec.window() });
    }
    for &outcome in outcomes {
        if outcome >= obs.num_outcomes() {
            return Err(Error::OutcomeOutOfRange { outcome, num_outcomes: obs.num_outcomes() });
        }
    }
    let unitaries = model.step_unitaries(spec, outcomes.len())?;
    let initial = GlobalState::initial(spec.clone(), initial_system)?;
    let mut unnormalized = initial.matrix().clone();
    for (k, &outcome) in outcomes.iter().enumerate() {
        let evolved = conjugate(&unitaries[k], &unnormalized);
        let embedded =
            crate::chain::embed_site_operator(spec, &obs.projectors()[outcome], k + 1)?;
        unnormalized = embedded.dot(&evolved).dot(&embedded);
    }
    Ok(trace(&unnormalized).re)
}

/// Ensemble statistics of the reduced trajectory.
#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    count: usize,
    mean_reduced: Vec<ReducedState>,
    std_error: Vec<f64>,
}

impl EnsembleSummary {
    /// Number of trajectories averaged.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Per-step mean of the reduced states over the ensemble.
    pub fn mean_reduced(&self) -> &[ReducedState] {
        &self.mean_reduced
    }

    /// Per-step standard error of the mean, in Frobenius-distance units:
    /// `s_k/√M` with `s_k` the sample deviation of the states around the mean.
    pub fn std_error(&self) -> &[f64] {
        &self.std_error
    }
}

/// Averages the reduced trajectories of an ensemble. All records must share
/// the same number of steps and system dimension.
pub fn ensemble_average(records: &[TrajectoryRecord]) -> Result<EnsembleSummary> {
    let first = records.first().ok_or(Error::EmptyEnsemble)?;
    let steps = first.steps();
    let dim = first.reduced_states[0].dim();
    for record in records {
        if record.steps() != steps || record.reduced_states[0].dim() != dim {
            return Err(Error::MismatchedRecords {
                detail: format!(
                    "expected {steps} steps of dimension {dim}, found {} steps of dimension {}",
                    record.steps(),
                    record.reduced_states[0].dim()
                ),
            });
        }
    }
    let count = records.len();
    let mut mean_reduced = Vec::with_capacity(steps + 1);
    let mut std_error = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let mut mean: Array2<C64> = Array2::zeros((dim, dim));
        for record in records {
            mean += record.reduced_states[k].matrix();
        }
        mean.mapv_inplace(|z| z / count as f64);
        // Summation drift in the trace is removed before validation so the
        // mean is exactly unit trace.
        let tr = trace(&mean).re;
        mean.mapv_inplace(|z| z / tr);
        let spread: f64 = records
            .iter()
            .map(|record| {
                let diff = record.reduced_states[k].matrix() - &mean;
                frobenius_norm(&diff).powi(2)
            })
            .sum();
        let variance = if count > 1 { spread / (count - 1) as f64 } else { 0.0 };
        std_error.push((variance / count as f64).sqrt());
        mean_reduced.push(ReducedState::new(mean)?);
    }
    Ok(EnsembleSummary { count, mean_reduced, std_error })
}

/// Reconstruction of a recorded trajectory from the product/remainder
/// split, isolating how much each step's update drew on the non-product
/// history component.
#[derive(Debug, Clone)]
pub struct TrajectoryReconstruction {
    reduced: Vec<ReducedState>,
    history_term_norms: Vec<f64>,
    probability_gaps: Vec<f64>,
}

impl TrajectoryReconstruction {
    /// Reconstructed reduced states `ρ_0..ρ_steps`.
    pub fn reduced(&self) -> &[ReducedState] {
        &self.reduced
    }

    /// Per step, the Frobenius norm of the history contribution: the
    /// product-projected part of the conditioned update applied to the
    /// previous remainder component (divided by the branch probability).
    /// Zero exactly when the one-term product update alone explains the step.
    pub fn history_term_norms(&self) -> &[f64] {
        &self.history_term_norms
    }

    /// Per step, |recomputed − recorded| for the branch probability, the
    /// recomputation splitting the trace into product and remainder parts.
    pub fn probability_gaps(&self) -> &[f64] {
        &self.probability_gaps
    }
}

/// Replays a recorded outcome path through the split update
/// `ρ_{k+1} = (1/p)·[B_i(Pρ_k) + B_i(Qρ_k)]` (with `B_i` the conditioned
/// step for the realized outcome, `P` the product projection and `Q` its
/// complement), recomputing each branch probability from the two traces and
/// reporting how large the history term `P(B_i(Qρ_k))/p` was at every step.
///
/// For models whose memory terms vanish the history norms are ≈ 0 and the
/// one-term update reproduces the record on its own.
pub fn nonmark_reconstruct(
    record: &TrajectoryRecord,
    model: &InteractionModel,
    obs: &Observable,
    spec: &ChainSpec,
) -> Result<TrajectoryReconstruction> {
    let steps = record.steps();
    let unitaries = model.step_unitaries(spec, steps)?;
    let initial = GlobalState::initial(spec.clone(), &record.reduced_states[0])?;
    let mut pcomp = initial.matrix().clone();
    let mut qcomp: Array2<C64> = Array2::zeros(pcomp.raw_dim());
    let mut reduced = vec![ReducedState::new(partial_trace_chain(spec, &pcomp)?)?];
    let mut history_term_norms = Vec::with_capacity(steps);
    let mut probability_gaps = Vec::with_capacity(steps);
    for (k, u) in unitaries.iter().enumerate() {
        let outcome = record.outcomes[k];
        if outcome >= obs.num_outcomes() {
            return Err(Error::OutcomeOutOfRange { outcome, num_outcomes: obs.num_outcomes() });
        }
        let embedded =
            crate::chain::embed_site_operator(spec, &obs.projectors()[outcome], k + 1)?;
        let branch_p = embedded.dot(&conjugate(u, &pcomp)).dot(&embedded);
        let branch_q = embedded.dot(&conjugate(u, &qcomp)).dot(&embedded);
        let p = trace(&branch_p).re + trace(&branch_q).re;
        probability_gaps.push((p - record.branch_probs[k]).abs());
        let sum = &branch_p + &branch_q;
        let conditioned = (&sum + &dag(&sum)).mapv(|z| z * 0.5 / p);
        let new_p = project_p(spec, &conditioned)?;
        let history = project_p(spec, &branch_q.mapv(|z| z / p))?;
        history_term_norms.push(frobenius_norm(&history));
        qcomp = &conditioned - &new_p;
        pcomp = new_p;
        reduced.push(ReducedState::new(partial_trace_chain(spec, &pcomp)?)?);
    }
    Ok(TrajectoryReconstruction { reduced, history_term_norms, probability_gaps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_support::{assert_close, random_density, random_unitary};
    use crate::linalg::{basis_vector, cx, matrix_unit, trace_distance};
    use crate::models::MarkovBlockModel;
    use ndarray::array;

    fn qubit_spec(window: usize) -> ChainSpec {
        ChainSpec::new(2, 2, window).unwrap()
    }

    fn diagonal_observable() -> Observable {
        Observable::from_matrix(array![
            [cx(1.0, 0.0), cx(0.0, 0.0)],
            [cx(0.0, 0.0), cx(-1.0, 0.0)]
        ])
        .unwrap()
    }

    fn plus_state() -> ReducedState {
        let v = ndarray::Array1::from(vec![
            cx(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            cx(std::f64::consts::FRAC_1_SQRT_2, 0.0),
        ]);
        ReducedState::pure(&v).unwrap()
    }

    fn chain_model(kind: &str, lambda: f64, tau: f64) -> InteractionModel {
        use crate::models::{Couplings, HamiltonianChainModel};
        let h0 = array![[cx(0.6, 0.0), cx(0.2, 0.1)], [cx(0.2, -0.1), cx(-0.3, 0.0)]];
        let c = array![[cx(0.4, 0.0), cx(0.7, 0.2)], [cx(0.7, -0.2), cx(-0.1, 0.0)]];
        let couplings = match kind {
            "full" => Couplings::FullMemory(c),
            "two" => Couplings::TwoCopyWindow(c),
            "markov" => Couplings::Markov(c),
            other => panic!("unknown kind {other}"),
        };
        InteractionModel::Chain(HamiltonianChainModel::new(h0, 0.35, lambda, tau, couplings).unwrap())
    }

    #[test]
    fn observable_resolves_spectrum_in_descending_order() {
        let obs = diagonal_observable();
        assert_eq!(obs.num_outcomes(), 2);
        assert_eq!(obs.eigenvalues(), &[1.0, -1.0]);
        assert_close(&obs.projectors()[0], &matrix_unit(2, 0, 0), 1e-12, "plus projector");
        assert_close(&obs.projectors()[1], &matrix_unit(2, 1, 1), 1e-12, "minus projector");
        assert!(obs.is_non_degenerate());
    }

    #[test]
    fn degenerate_observable_is_detected() {
        let obs = Observable::from_matrix(identity(2)).unwrap();
        assert_eq!(obs.num_outcomes(), 1);
        assert!(!obs.is_non_degenerate());
        assert!(matches!(
            obs.require_non_degenerate(),
            Err(Error::DegenerateObservable { .. })
        ));
    }

    #[test]
    fn non_hermitian_observable_is_rejected() {
        let m = array![[cx(0.0, 0.0), cx(1.0, 0.0)], [cx(0.0, 0.0), cx(0.0, 0.0)]];
        assert!(matches!(
            Observable::from_matrix(m),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn eigenstate_measured_in_its_own_basis_is_certain() {
        // Identity interaction: the measured fresh copy stays in its reference
        // state, an eigenvector of the diagonal observable.
        let spec = qubit_spec(2);
        let model = InteractionModel::Blocks(MarkovBlockModel::identity(2, 2).unwrap());
        let obs = diagonal_observable();
        let state = GlobalState::initial(spec.clone(), &plus_state()).unwrap();
        let u1 = model.step_unitary(&spec, 1).unwrap();
        let mut rng = trajectory_rng(401);
        let step = trajectory_step(&state, &u1, &obs, 1, &mut rng).unwrap();
        assert_eq!(step.outcome, 0);
        assert!((step.probability - 1.0).abs() < 1e-12);
        assert_close(
            &step.state.reduced().unwrap().matrix().clone(),
            plus_state().matrix(),
            1e-12,
            "system untouched",
        );
    }

    #[test]
    fn swap_moves_the_excited_system_onto_the_measured_copy() {
        let spec = qubit_spec(2);
        let model = InteractionModel::Blocks(MarkovBlockModel::swap(2).unwrap());
        let obs = diagonal_observable();
        let excited = ReducedState::pure(&basis_vector(2, 1)).unwrap();
        let state = GlobalState::initial(spec.clone(), &excited).unwrap();
        let u1 = model.step_unitary(&spec, 1).unwrap();
        let mut rng = trajectory_rng(402);
        let step = trajectory_step(&state, &u1, &obs, 1, &mut rng).unwrap();
        // The excitation now sits on copy 1, whose eigenvalue −1 is outcome 1.
        assert_eq!(step.outcome, 1);
        assert!((step.probability - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_probabilities_are_complete_for_generic_models() {
        let spec = qubit_spec(3);
        let model = chain_model("full", 0.9, 0.4);
        let obs = diagonal_observable();
        let initial = ReducedState::new(random_density(2, 403)).unwrap();
        let mut state = GlobalState::initial(spec.clone(), &initial).unwrap();
        let mut rng = trajectory_rng(404);
        for (k, u) in model.step_unitaries(&spec, 3).unwrap().iter().enumerate() {
            let step = trajectory_step(&state, u, &obs, k + 1, &mut rng).unwrap();
            let total: f64 = step.probabilities.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "step {k}: Σp = {total}");
            state = step.state;
        }
    }

    #[test]
    fn sampled_records_are_internally_consistent() {
        let spec = qubit_spec(3);
        let model = chain_model("two", 1.0, 0.5);
        let obs = diagonal_observable();
        let record = sample_trajectory(&model, &plus_state(), &obs, 3, 405, &spec).unwrap();
        assert_eq!(record.steps(), 3);
        assert_eq!(record.global_states().len(), 4);
        assert_eq!(record.reduced_states().len(), 4);
        assert_eq!(record.purity_deficits().len(), 4);
        for p in record.branch_probs() {
            assert!(*p > 0.0 && *p <= 1.0 + 1e-12);
        }
        for (k, global) in record.global_states().iter().enumerate() {
            let tr = trace(global.matrix());
            assert!((tr.re - 1.0).abs() < 1e-10, "step {k} trace {tr}");
            let reduced = partial_trace_chain(&spec, global.matrix()).unwrap();
            assert_close(
                &reduced,
                record.reduced_states()[k].matrix(),
                1e-12,
                "reduced consistency",
            );
        }
    }

    #[test]
    fn identical_seeds_reproduce_the_record_exactly() {
        let spec = qubit_spec(3);
        let model = chain_model("full", 0.8, 0.3);
        let obs = diagonal_observable();
        let a = sample_trajectory(&model, &plus_state(), &obs, 3, 406, &spec).unwrap();
        let b = sample_trajectory(&model, &plus_state(), &obs, 3, 406, &spec).unwrap();
        assert_eq!(a.outcomes(), b.outcomes());
        assert_eq!(a.branch_probs(), b.branch_probs());
        for (x, y) in a.reduced_states().iter().zip(b.reduced_states()) {
            assert_close(x.matrix(), y.matrix(), 1e-15, "deterministic states");
        }
    }

    #[test]
    fn derived_substreams_differ_and_are_stable() {
        let s0 = derive_trajectory_seed(7, 0);
        let s1 = derive_trajectory_seed(7, 1);
        assert_ne!(s0, s1);
        assert_eq!(s0, derive_trajectory_seed(7, 0));
        // A handful of nearby bases and indices all map to distinct seeds.
        let mut seen = std::collections::HashSet::new();
        for base in 0..8u64 {
            for index in 0..8u64 {
                assert!(seen.insert(derive_trajectory_seed(base, index)));
            }
        }
    }

    #[test]
    fn ensemble_members_match_their_individually_seeded_trajectories() {
        let spec = qubit_spec(2);
        let model = chain_model("markov", 0.7, 0.4);
        let obs = diagonal_observable();
        let records = run_ensemble(&model, &plus_state(), &obs, 2, 11, 4, &spec).unwrap();
        assert_eq!(records.len(), 4);
        for (index, record) in records.iter().enumerate() {
            let seed = derive_trajectory_seed(11, index as u64);
            assert_eq!(record.seed(), seed);
            let solo = sample_trajectory(&model, &plus_state(), &obs, 2, seed, &spec).unwrap();
            assert_eq!(record.outcomes(), solo.outcomes());
        }
    }

    #[test]
    fn empty_cylinder_has_probability_one() {
        let spec = qubit_spec(2);
        let model = chain_model("full", 1.0, 0.5);
        let obs = diagonal_observable();
        let p = cylinder_probability(&model, &plus_state(), &obs, &[], &spec).unwrap();
        assert!((p - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cylinders_satisfy_kolmogorov_consistency() {
        let spec = qubit_spec(3);
        let obs = diagonal_observable();
        let initial = ReducedState::new(random_density(2, 407)).unwrap();
        for model in [
            chain_model("full", 0.9, 0.5),
            chain_model("markov", 0.6, 0.3),
            InteractionModel::Blocks(
                MarkovBlockModel::from_pair_unitary(&random_unitary(4, 408), 2, 2).unwrap(),
            ),
        ] {
            for depth in 0..3usize {
                for path in 0..(1 << depth) {
                    let prefix: Vec<usize> =
                        (0..depth).map(|b| (path >> b) & 1).collect();
                    let whole =
                        cylinder_probability(&model, &initial, &obs, &prefix, &spec).unwrap();
                    let mut split = 0.0;
                    for next in 0..2usize {
                        let mut longer = prefix.clone();
                        longer.push(next);
                        split +=
                            cylinder_probability(&model, &initial, &obs, &longer, &spec).unwrap();
                    }
                    assert!(
                        (whole - split).abs() < 1e-12,
                        "depth {depth}: {whole} vs {split}"
                    );
                }
            }
        }
    }

    #[test]
    fn sampled_path_log_probability_matches_the_cylinder() {
        let spec = qubit_spec(3);
        let model = chain_model("full", 1.0, 0.4);
        let obs = diagonal_observable();
        let record = sample_trajectory(&model, &plus_state(), &obs, 3, 409, &spec).unwrap();
        let cylinder =
            cylinder_probability(&model, &plus_state(), &obs, record.outcomes(), &spec).unwrap();
        assert!(
            (record.log_probability() - cylinder.ln()).abs() < 1e-10,
            "chain rule vs joint trace"
        );
    }

    #[test]
    fn single_step_cylinders_match_step_probabilities() {
        let spec = qubit_spec(2);
        let model = chain_model("two", 0.8, 0.45);
        let obs = diagonal_observable();
        let initial = ReducedState::new(random_density(2, 410)).unwrap();
        let state = GlobalState::initial(spec.clone(), &initial).unwrap();
        let u1 = model.step_unitary(&spec, 1).unwrap();
        let mut rng = trajectory_rng(411);
        let step = trajectory_step(&state, &u1, &obs, 1, &mut rng).unwrap();
        for (outcome, &p) in step.probabilities.iter().enumerate() {
            let q = cylinder_probability(&model, &initial, &obs, &[outcome], &spec).unwrap();
            assert!((p - q).abs() < 1e-12, "outcome {outcome}: {p} vs {q}");
        }
    }

    #[test]
    fn singleton_ensemble_average_is_the_record() {
        let spec = qubit_spec(2);
        let model = chain_model("full", 1.0, 0.5);
        let obs = diagonal_observable();
        let record = sample_trajectory(&model, &plus_state(), &obs, 2, 412, &spec).unwrap();
        let summary = ensemble_average(std::slice::from_ref(&record)).unwrap();
        assert_eq!(summary.count(), 1);
        for (mean, state) in summary.mean_reduced().iter().zip(record.reduced_states()) {
            assert_close(mean.matrix(), state.matrix(), 1e-12, "M=1 mean");
        }
        assert!(summary.std_error().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn ensemble_average_rejects_empty_and_mismatched_input() {
        assert!(matches!(ensemble_average(&[]), Err(Error::EmptyEnsemble)));
        let spec = qubit_spec(3);
        let model = chain_model("full", 1.0, 0.5);
        let obs = diagonal_observable();
        let two = sample_trajectory(&model, &plus_state(), &obs, 2, 413, &spec).unwrap();
        let three = sample_trajectory(&model, &plus_state(), &obs, 3, 413, &spec).unwrap();
        assert!(matches!(
            ensemble_average(&[two, three]),
            Err(Error::MismatchedRecords { .. })
        ));
    }

    #[test]
    fn ensemble_mean_converges_to_the_nonselective_evolution() {
        // Averaging over all branches removes the conditioning: the mean
        // reduced state converges, at the Monte Carlo rate, to the exact
        // outcome-averaged evolution.
        let spec = qubit_spec(3);
        let model = chain_model("full", 1.0, 0.5);
        let obs = diagonal_observable();
        let records = run_ensemble(&model, &plus_state(), &obs, 3, 414, 600, &spec).unwrap();
        let summary = ensemble_average(&records).unwrap();
        let oracle = nonselective_evolution(&model, &plus_state(), &obs, 3, &spec).unwrap();
        for (k, (mean, truth)) in summary.mean_reduced().iter().zip(&oracle).enumerate() {
            let dist = trace_distance(mean.matrix(), truth.matrix()).unwrap();
            let allowance = (0.01f64).max(5.0 * summary.std_error()[k]);
            assert!(dist < allowance, "step {k}: {dist:.3e} vs {allowance:.3e}");
        }
    }

    #[test]
    fn measurement_is_invisible_to_the_mean_until_a_copy_is_reused() {
        let spec = qubit_spec(3);
        let obs = diagonal_observable();
        // Memoryless model: no step ever touches a measured copy again, so
        // the outcome-averaged evolution equals the unmeasured one exactly.
        let markov = chain_model("markov", 1.0, 0.5);
        let averaged = nonselective_evolution(&markov, &plus_state(), &obs, 3, &spec).unwrap();
        let direct = crate::evolution::evolve_direct(&markov, &spec, &plus_state(), 3).unwrap();
        for (k, (a, d)) in averaged.iter().zip(direct.reduced()).enumerate() {
            let dist = trace_distance(a.matrix(), d.matrix()).unwrap();
            assert!(dist < 1e-12, "memoryless step {k}: {dist:.3e}");
        }
        // Memory model: the first measured copy is re-coupled at step 2, so
        // the averaged and unmeasured sequences agree through step 1 and
        // then split by a finite amount — measurement backaction is real.
        let full = chain_model("full", 1.0, 0.5);
        let averaged = nonselective_evolution(&full, &plus_state(), &obs, 3, &spec).unwrap();
        let direct = crate::evolution::evolve_direct(&full, &spec, &plus_state(), 3).unwrap();
        for (k, (avg, dir)) in averaged.iter().zip(direct.reduced()).take(2).enumerate() {
            let dist = trace_distance(avg.matrix(), dir.matrix()).unwrap();
            assert!(dist < 1e-12, "pre-reuse step {k}: {dist:.3e}");
        }
        let split = trace_distance(averaged[2].matrix(), direct.reduced()[2].matrix()).unwrap();
        assert!(split > 1e-2, "backaction should be visible, got {split:.3e}");
    }

    #[test]
    fn reconstruction_replays_memoryless_records_with_one_term() {
        let spec = qubit_spec(3);
        let obs = diagonal_observable();
        for model in [
            InteractionModel::Blocks(MarkovBlockModel::swap(2).unwrap()),
            InteractionModel::Blocks(
                MarkovBlockModel::from_pair_unitary(&random_unitary(4, 415), 2, 2).unwrap(),
            ),
            chain_model("markov", 0.8, 0.5),
        ] {
            let record = sample_trajectory(&model, &plus_state(), &obs, 3, 416, &spec).unwrap();
            let recon = nonmark_reconstruct(&record, &model, &obs, &spec).unwrap();
            for (k, (rebuilt, recorded)) in
                recon.reduced().iter().zip(record.reduced_states()).enumerate()
            {
                let dist = trace_distance(rebuilt.matrix(), recorded.matrix()).unwrap();
                assert!(dist < 1e-9, "step {k}: {dist:.3e}");
            }
            for (k, &gap) in recon.probability_gaps().iter().enumerate() {
                assert!(gap < 1e-10, "step {k} probability gap {gap:.3e}");
            }
            for (k, &norm) in recon.history_term_norms().iter().enumerate() {
                assert!(norm < 1e-10, "step {k} history term {norm:.3e}");
            }
        }
    }

    #[test]
    fn reconstruction_replays_memory_records_with_real_history_terms() {
        let spec = qubit_spec(3);
        let obs = diagonal_observable();
        let model = chain_model("full", 1.0, 0.5);
        let record = sample_trajectory(&model, &plus_state(), &obs, 3, 417, &spec).unwrap();
        let recon = nonmark_reconstruct(&record, &model, &obs, &spec).unwrap();
        for (k, (rebuilt, recorded)) in
            recon.reduced().iter().zip(record.reduced_states()).enumerate()
        {
            let dist = trace_distance(rebuilt.matrix(), recorded.matrix()).unwrap();
            assert!(dist < 1e-9, "step {k}: {dist:.3e}");
        }
        for (k, &gap) in recon.probability_gaps().iter().enumerate() {
            assert!(gap < 1e-10, "step {k} probability gap {gap:.3e}");
        }
        let max_history = recon
            .history_term_norms()
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        assert!(
            max_history > 1e-6,
            "memory model should need its history terms, max {max_history:.3e}"
        );
    }

    #[test]
    fn identity_model_reconstruction_is_constant() {
        let spec = qubit_spec(2);
        let model = InteractionModel::Blocks(MarkovBlockModel::identity(2, 2).unwrap());
        let obs = diagonal_observable();
        let record = sample_trajectory(&model, &plus_state(), &obs, 2, 418, &spec).unwrap();
        let recon = nonmark_reconstruct(&record, &model, &obs, &spec).unwrap();
        for rebuilt in recon.reduced() {
            assert_close(rebuilt.matrix(), plus_state().matrix(), 1e-12, "constant sequence");
        }
        assert!(record.purity_deficits().iter().all(|&d| d.abs() < 1e-12));
    }
}
