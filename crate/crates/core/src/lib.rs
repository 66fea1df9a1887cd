// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Core library for simulating a quantum system that interacts with a chain
//! of auxiliary copies, one copy per time step.
//!
//! The crate models discrete-time dynamics on a truncated product space
//! `H_sys ⊗ H_copy^⊗N`: each step applies a unitary that couples the system to
//! the next fresh copy (and, for models with memory, to previously used
//! copies). On top of that single evolution primitive it provides
//!
//! * exact reduced dynamics by direct evolution and partial trace
//!   ([`evolution`]),
//! * memory-resolved reduced dynamics via projection techniques: a two-track
//!   recursion and a discrete time-convolutionless kernel ([`projection`]),
//! * repeated measurements on outgoing copies, trajectory sampling, ensemble
//!   averaging, and cylinder-set probabilities ([`measurement`]),
//! * diagnostics for the purity and branch-operator structure of measurement
//!   trajectories ([`unravel`]).
//!
//! All matrices are dense `ndarray` arrays over `num_complex::Complex64`.

// Force linkage of the system BLAS used by `ndarray`'s matrix products.
use blas_src as _;

pub mod chain;
pub mod error;
pub mod evolution;
pub mod linalg;
pub mod measurement;
pub mod models;
pub mod projection;
pub mod unravel;

pub use error::{Error, Result};
