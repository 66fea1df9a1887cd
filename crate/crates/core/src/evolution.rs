// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Direct evolution of the global state: `μ_{k+1} = U_{k+1}·μ_k·U_{k+1}†`.
//!
//! This is the reference dynamics every other technique in the crate is
//! checked against: the reduced system state at step `k` is the partial
//! trace of `μ_k` over the chain.

use ndarray::Array2;

use crate::chain::{ChainSpec, GlobalState, ReducedState};
use crate::error::{Error, Result};
use crate::linalg::{dag, C64};
use crate::models::{InteractionModel, StepUnitary};

/// A completed direct evolution: global and reduced states for steps
/// `0..=steps`.
#[derive(Debug, Clone)]
pub struct EvolutionRun {
    spec: ChainSpec,
    states: Vec<GlobalState>,
    reduced: Vec<ReducedState>,
}

impl EvolutionRun {
    /// Global states `μ_0..μ_steps`.
    pub fn states(&self) -> &[GlobalState] {
        &self.states
    }

    /// Reduced system states `ρ_0..ρ_steps`.
    pub fn reduced(&self) -> &[ReducedState] {
        &self.reduced
    }

    /// Number of steps taken.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// The space the run lives on.
    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }
}

/// Apply `u·m·u†` without validating the result (internal stepping).
pub(crate) fn conjugate(u: &StepUnitary, m: &Array2<C64>) -> Array2<C64> {
    u.matrix().dot(m).dot(&dag(u.matrix()))
}

/// Evolve the initial product state for `steps` steps under the model's
/// step unitaries, validating every intermediate state.
pub fn evolve_direct(
    model: &InteractionModel,
    spec: &ChainSpec,
    initial_system: &ReducedState,
    steps: usize,
) -> Result<EvolutionRun> {
    if steps > spec.window() {
        return Err(Error::StepsExceedWindow {
            steps,
            window: spec.window(),
        });
    }
    let unitaries = model.step_unitaries(spec, steps)?;
    evolve_with_unitaries(spec, initial_system, &unitaries)
}

/// Same as [`evolve_direct`] but with precomputed step unitaries.
pub fn evolve_with_unitaries(
    spec: &ChainSpec,
    initial_system: &ReducedState,
    unitaries: &[StepUnitary],
) -> Result<EvolutionRun> {
    if unitaries.len() > spec.window() {
        return Err(Error::StepsExceedWindow {
            steps: unitaries.len(),
            window: spec.window(),
        });
    }
    let mut states = Vec::with_capacity(unitaries.len() + 1);
    let mut reduced = Vec::with_capacity(unitaries.len() + 1);
    let first = GlobalState::initial(spec.clone(), initial_system)?;
    reduced.push(first.reduced()?);
    states.push(first);
    for u in unitaries {
        let next = conjugate(u, states.last().expect("nonempty").matrix());
        let next = GlobalState::new(spec.clone(), next)?;
        reduced.push(next.reduced()?);
        states.push(next);
    }
    Ok(EvolutionRun {
        spec: spec.clone(),
        states,
        reduced,
    })
}

/// Reduced states of a run as raw matrices (convenience for comparisons).
pub fn reduced_sequence(run: &EvolutionRun) -> Vec<Array2<C64>> {
    run.reduced().iter().map(|r| r.matrix().clone()).collect()
}
