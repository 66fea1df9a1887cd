// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of model construction, evolution, and analysis routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A matrix or vector did not have the dimension required by the call.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A matrix required to be Hermitian deviated beyond tolerance.
    #[error("{context} is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { context: &'static str, deviation: f64 },

    /// A matrix required to be unitary (or a Kraus family required to be
    /// trace-preserving) deviated beyond tolerance.
    #[error("{context} is not unitary (deviation {deviation:.3e})")]
    NotUnitary { context: &'static str, deviation: f64 },

    /// A density matrix had trace away from one.
    #[error("{context} has trace {trace:.6e}, expected 1")]
    TraceNotOne { context: &'static str, trace: f64 },

    /// A density matrix had a negative eigenvalue beyond tolerance.
    #[error("{context} is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositive {
        context: &'static str,
        min_eigenvalue: f64,
    },

    /// A state required to be pure had a non-negligible purity deficit.
    #[error("state is not pure (purity deficit {deficit:.3e})")]
    NotPure { deficit: f64 },

    /// The truncated product space would exceed the configured dimension cap.
    #[error("global dimension {dim} exceeds cap {cap}")]
    CapExceeded { dim: usize, cap: usize },

    /// A chain-site index was outside `1..=window`.
    #[error("site {site} out of range for window {window}")]
    SiteOutOfRange { site: usize, window: usize },

    /// A site list was empty, unsorted, or contained repeats.
    #[error("invalid site list: {detail}")]
    InvalidSiteList { detail: String },

    /// More evolution steps were requested than the truncation window holds.
    #[error("steps ({steps}) exceed window ({window}); each step consumes one fresh copy")]
    StepsExceedWindow { steps: usize, window: usize },

    /// A routine specific to two-level copies was called with another copy dimension.
    #[error("{context} requires copy dimension {required}, got {actual}")]
    UnsupportedCopyDim {
        context: &'static str,
        required: usize,
        actual: usize,
    },

    /// A scalar parameter violated its stated requirement.
    #[error("parameter {name} = {value} violates requirement: {requirement}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },

    /// The memory-kernel linear solve was too ill-conditioned to trust.
    #[error("memory-kernel solve at step {step} is ill-conditioned (estimate {estimate:.3e})")]
    IllConditionedKernel { step: usize, estimate: f64 },

    /// Building a materialized kernel would be too expensive at this size.
    #[error("global dimension {global_dim} too large for a materialized kernel (max {max})")]
    KernelTooLarge { global_dim: usize, max: usize },

    /// A history of step unitaries was not ordered `U_1, U_2, …`.
    #[error("history position {position} holds the unitary for step {step}, expected step {expected}")]
    MisorderedHistory {
        position: usize,
        step: usize,
        expected: usize,
    },

    /// An observable whose spectral projectors must be rank one had a
    /// degenerate eigenvalue.
    #[error("degenerate observable: {detail}")]
    DegenerateObservable { detail: String },

    /// Measurement branch probabilities failed to sum to one.
    #[error("branch probabilities at step {step} sum to {total:.12}, expected 1")]
    ProbabilityLeak { step: usize, total: f64 },

    /// An outcome index was outside the observable's outcome range.
    #[error("outcome {outcome} out of range ({num_outcomes} outcomes)")]
    OutcomeOutOfRange { outcome: usize, num_outcomes: usize },

    /// An ensemble operation was given no records.
    #[error("ensemble is empty")]
    EmptyEnsemble,

    /// Ensemble records disagreed on shape (steps or dimensions).
    #[error("inconsistent ensemble records: {detail}")]
    MismatchedRecords { detail: String },

    /// A fit over a grid of time steps had too few points.
    #[error("time-step grid has {actual} points, need at least {needed}")]
    InsufficientTauGrid { needed: usize, actual: usize },

    /// A dense linear-algebra backend call failed.
    #[error("linear algebra failure in {context}: {message}")]
    LinearAlgebra {
        context: &'static str,
        message: String,
    },
}
