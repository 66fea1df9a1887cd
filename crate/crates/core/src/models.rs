// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Interaction models: the rules that produce the step unitary `U_k`
//! coupling the system to chain copy `k` (and, for models with memory, to
//! earlier copies).
//!
//! Two families are provided:
//!
//! * [`MarkovBlockModel`] — a memoryless model given directly by the block
//!   decomposition `U = Σ_ij U_ij ⊗ |i⟩⟨j|` of a single system–copy
//!   unitary; step `k` applies that unitary to the system and copy `k`.
//! * [`HamiltonianChainModel`] — `U_k = exp(+iτ·H(k))` where `H(k)` contains
//!   a free system term, a free chain term, and exchange couplings between
//!   the system and the copies selected by a [`Couplings`] rule. Memory
//!   enters through couplings that reach back to earlier copies.

use std::fmt;
use std::sync::Arc;

use ndarray::prelude::*;

use crate::chain::{chain_only_embed, embed_site_operator, ground_projector, ChainSpec};
use crate::error::{Error, Result};
use crate::linalg::{
    dag, expm_i_hermitian, frobenius_norm, hermiticity_deviation, identity, kron, matrix_unit,
    max_abs, unitarity_deviation, C64, HERMITICITY_TOL, UNITARITY_TOL,
};

/// Memoryless model defined by the blocks `U_ij` of one system–copy unitary.
#[derive(Debug, Clone)]
pub struct MarkovBlockModel {
    /// `blocks[i][j]` is the `d_sys × d_sys` block `U_ij`.
    blocks: Vec<Vec<Array2<C64>>>,
    system_dim: usize,
    copy_dim: usize,
}

impl MarkovBlockModel {
    /// Build from a `copy_dim × copy_dim` grid of `system_dim × system_dim`
    /// blocks; the assembled pair operator must be unitary.
    pub fn new(blocks: Vec<Vec<Array2<C64>>>) -> Result<Self> {
        let copy_dim = blocks.len();
        if copy_dim < 2 {
            return Err(Error::DimensionMismatch {
                context: "block grid (need at least a 2×2 grid)",
                expected: 2,
                actual: copy_dim,
            });
        }
        let system_dim = blocks[0][0].nrows();
        for row in &blocks {
            if row.len() != copy_dim {
                return Err(Error::DimensionMismatch {
                    context: "block grid row length",
                    expected: copy_dim,
                    actual: row.len(),
                });
            }
            for b in row {
                if b.nrows() != system_dim || b.ncols() != system_dim {
                    return Err(Error::DimensionMismatch {
                        context: "block shape",
                        expected: system_dim,
                        actual: b.nrows(),
                    });
                }
            }
        }
        let model = Self {
            blocks,
            system_dim,
            copy_dim,
        };
        let dev = unitarity_deviation(&model.pair_unitary());
        if dev > UNITARITY_TOL {
            return Err(Error::NotUnitary {
                context: "assembled pair operator",
                deviation: dev,
            });
        }
        Ok(model)
    }

    /// Decompose a system–copy unitary of dimension `system_dim·copy_dim`
    /// into its blocks.
    pub fn from_pair_unitary(u: &Array2<C64>, system_dim: usize, copy_dim: usize) -> Result<Self> {
        let d = system_dim * copy_dim;
        if u.nrows() != d || u.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "pair unitary",
                expected: d,
                actual: u.nrows(),
            });
        }
        let mut blocks = Vec::with_capacity(copy_dim);
        for i in 0..copy_dim {
            let mut row = Vec::with_capacity(copy_dim);
            for j in 0..copy_dim {
                let mut b = Array2::zeros((system_dim, system_dim));
                for s in 0..system_dim {
                    for t in 0..system_dim {
                        b[[s, t]] = u[[s * copy_dim + i, t * copy_dim + j]];
                    }
                }
                row.push(b);
            }
            blocks.push(row);
        }
        Self::new(blocks)
    }

    /// Exchange model: the pair unitary swaps the system with the copy
    /// (requires equal dimensions).
    pub fn swap(dim: usize) -> Result<Self> {
        let mut blocks = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut row = Vec::with_capacity(dim);
            for j in 0..dim {
                // The swap sends |s⟩⊗|j⟩ to |j⟩⊗|s⟩, so U_ij = |j⟩⟨i|.
                row.push(matrix_unit(dim, j, i));
            }
            blocks.push(row);
        }
        Self::new(blocks)
    }

    /// Trivial model: the identity on system and copy.
    pub fn identity(system_dim: usize, copy_dim: usize) -> Result<Self> {
        let mut blocks = Vec::with_capacity(copy_dim);
        for i in 0..copy_dim {
            let mut row = Vec::with_capacity(copy_dim);
            for j in 0..copy_dim {
                if i == j {
                    row.push(identity(system_dim));
                } else {
                    row.push(Array2::zeros((system_dim, system_dim)));
                }
            }
            blocks.push(row);
        }
        Self::new(blocks)
    }

    /// The block `U_ij`.
    pub fn block(&self, i: usize, j: usize) -> &Array2<C64> {
        &self.blocks[i][j]
    }

    /// Dimension of the system factor.
    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    /// Dimension of one copy.
    pub fn copy_dim(&self) -> usize {
        self.copy_dim
    }

    /// Reassemble the system–copy unitary `Σ_ij U_ij ⊗ |i⟩⟨j|`.
    pub fn pair_unitary(&self) -> Array2<C64> {
        let d = self.system_dim * self.copy_dim;
        let mut u = Array2::zeros((d, d));
        for i in 0..self.copy_dim {
            for j in 0..self.copy_dim {
                let b = &self.blocks[i][j];
                for s in 0..self.system_dim {
                    for t in 0..self.system_dim {
                        u[[s * self.copy_dim + i, t * self.copy_dim + j]] = b[[s, t]];
                    }
                }
            }
        }
        u
    }
}

/// Rule selecting which earlier copies the system couples to at step `k`,
/// and with what system operator.
#[derive(Clone)]
pub enum Couplings {
    /// Couple to every copy `1..=k` with the same operator.
    FullMemory(Array2<C64>),
    /// Couple to copies `k−1` and `k` only.
    TwoCopyWindow(Array2<C64>),
    /// Couple to the fresh copy `k` only (memoryless).
    Markov(Array2<C64>),
    /// Arbitrary rule: `f(step, site)` returns the system operator coupling
    /// the system to `site` during step `step` (zero matrix for no coupling).
    Custom {
        system_dim: usize,
        rule: Arc<dyn Fn(usize, usize) -> Array2<C64> + Send + Sync>,
    },
}

impl fmt::Debug for Couplings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FullMemory(_) => write!(f, "Couplings::FullMemory"),
            Self::TwoCopyWindow(_) => write!(f, "Couplings::TwoCopyWindow"),
            Self::Markov(_) => write!(f, "Couplings::Markov"),
            Self::Custom { system_dim, .. } => {
                write!(f, "Couplings::Custom(system_dim={system_dim})")
            }
        }
    }
}

impl Couplings {
    /// System operator coupling to chain site `site` during step `step`
    /// (`1 ≤ site ≤ step`); zero means no coupling.
    pub fn coupling(&self, step: usize, site: usize) -> Array2<C64> {
        debug_assert!(site >= 1 && site <= step);
        match self {
            Self::FullMemory(c) => c.clone(),
            Self::TwoCopyWindow(c) => {
                if site + 1 >= step {
                    c.clone()
                } else {
                    Array2::zeros(c.dim())
                }
            }
            Self::Markov(c) => {
                if site == step {
                    c.clone()
                } else {
                    Array2::zeros(c.dim())
                }
            }
            Self::Custom { rule, .. } => rule(step, site),
        }
    }

    /// Dimension of the system operators this rule produces.
    pub fn system_dim(&self) -> usize {
        match self {
            Self::FullMemory(c) | Self::TwoCopyWindow(c) | Self::Markov(c) => c.nrows(),
            Self::Custom { system_dim, .. } => *system_dim,
        }
    }

    /// How far back the rule reaches: `None` means unbounded memory.
    pub fn memory_window(&self) -> Option<usize> {
        match self {
            Self::FullMemory(_) => None,
            Self::TwoCopyWindow(_) => Some(2),
            Self::Markov(_) => Some(1),
            Self::Custom { .. } => None,
        }
    }
}

/// Model whose step unitary is the exponential of an explicit step
/// Hamiltonian on the truncated product space. Copies are two-level.
#[derive(Debug, Clone)]
pub struct HamiltonianChainModel {
    h0: Array2<C64>,
    gamma: f64,
    lambda: f64,
    tau: f64,
    couplings: Couplings,
}

impl HamiltonianChainModel {
    /// Validate parameters: `h0` Hermitian, `tau > 0`, coupling dimensions
    /// matching `h0`.
    pub fn new(
        h0: Array2<C64>,
        gamma: f64,
        lambda: f64,
        tau: f64,
        couplings: Couplings,
    ) -> Result<Self> {
        let dev = hermiticity_deviation(&h0);
        if dev > HERMITICITY_TOL * (1.0 + max_abs(&h0)) {
            return Err(Error::NotHermitian {
                context: "free system Hamiltonian",
                deviation: dev,
            });
        }
        if h0.nrows() != h0.ncols() || h0.nrows() < 2 {
            return Err(Error::DimensionMismatch {
                context: "free system Hamiltonian",
                expected: 2,
                actual: h0.nrows(),
            });
        }
        if tau <= 0.0 || tau.is_nan() {
            return Err(Error::InvalidParameter {
                name: "tau",
                value: tau,
                requirement: "strictly positive step duration",
            });
        }
        if couplings.system_dim() != h0.nrows() {
            return Err(Error::DimensionMismatch {
                context: "coupling operator",
                expected: h0.nrows(),
                actual: couplings.system_dim(),
            });
        }
        Ok(Self {
            h0,
            gamma,
            lambda,
            tau,
            couplings,
        })
    }

    /// Free system Hamiltonian.
    pub fn h0(&self) -> &Array2<C64> {
        &self.h0
    }

    /// Free chain energy per occupied reference level.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Coupling strength.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Step duration.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Coupling rule.
    pub fn couplings(&self) -> &Couplings {
        &self.couplings
    }

    /// Same model with a different step duration.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(
            self.h0.clone(),
            self.gamma,
            self.lambda,
            tau,
            self.couplings.clone(),
        )
    }
}

/// Step Hamiltonian of a [`HamiltonianChainModel`] on the full space:
/// free system term, free chain term on copies `1..=step`, and exchange
/// couplings `λ·(C_i ⊗ |1⟩⟨0|_i + C_i† ⊗ |0⟩⟨1|_i)` for the selected sites.
pub fn build_chain_hamiltonian(
    model: &HamiltonianChainModel,
    spec: &ChainSpec,
    step: usize,
) -> Result<Array2<C64>> {
    if spec.copy_dim() != 2 {
        return Err(Error::UnsupportedCopyDim {
            context: "hamiltonian chain model",
            required: 2,
            actual: spec.copy_dim(),
        });
    }
    if model.h0.nrows() != spec.system_dim() {
        return Err(Error::DimensionMismatch {
            context: "free system Hamiltonian vs spec",
            expected: spec.system_dim(),
            actual: model.h0.nrows(),
        });
    }
    if step == 0 || step > spec.window() {
        return Err(Error::SiteOutOfRange {
            site: step,
            window: spec.window(),
        });
    }
    let raise = matrix_unit(2, 1, 0);
    let lower = matrix_unit(2, 0, 1);
    let mut h = kron(&model.h0, &identity(spec.chain_dim()));
    for site in 1..=step {
        if model.gamma != 0.0 {
            let free = embed_site_operator(spec, &ground_projector(2), site)?;
            h += &free.mapv(|z| z * model.gamma);
        }
        let c = model.couplings.coupling(step, site);
        if c.nrows() != spec.system_dim() || c.ncols() != spec.system_dim() {
            return Err(Error::DimensionMismatch {
                context: "coupling operator",
                expected: spec.system_dim(),
                actual: c.nrows(),
            });
        }
        if max_abs(&c) == 0.0 || model.lambda == 0.0 {
            continue;
        }
        let up = kron(&c, &chain_only_embed(spec, &raise, site)?);
        let down = kron(&dag(&c), &chain_only_embed(spec, &lower, site)?);
        h += &(up + down).mapv(|z| z * model.lambda);
    }
    Ok(h)
}

/// Step unitary of a [`MarkovBlockModel`]: the pair unitary applied to the
/// system and chain copy `step`, identity elsewhere.
pub fn build_markov_unitary(
    model: &MarkovBlockModel,
    spec: &ChainSpec,
    step: usize,
) -> Result<Array2<C64>> {
    if model.system_dim != spec.system_dim() {
        return Err(Error::DimensionMismatch {
            context: "block model system dimension vs spec",
            expected: spec.system_dim(),
            actual: model.system_dim,
        });
    }
    if model.copy_dim != spec.copy_dim() {
        return Err(Error::DimensionMismatch {
            context: "block model copy dimension vs spec",
            expected: spec.copy_dim(),
            actual: model.copy_dim,
        });
    }
    if step == 0 || step > spec.window() {
        return Err(Error::SiteOutOfRange {
            site: step,
            window: spec.window(),
        });
    }
    let d = spec.global_dim();
    let mut u = Array2::zeros((d, d));
    for i in 0..model.copy_dim {
        for j in 0..model.copy_dim {
            let site_op = chain_only_embed(spec, &matrix_unit(model.copy_dim, i, j), step)?;
            u = u + kron(model.block(i, j), &site_op);
        }
    }
    Ok(u)
}

/// A validated step unitary on the full product space.
#[derive(Debug, Clone)]
pub struct StepUnitary {
    step: usize,
    matrix: Array2<C64>,
}

impl StepUnitary {
    /// Wrap a matrix after checking unitarity.
    pub fn new(step: usize, matrix: Array2<C64>) -> Result<Self> {
        if step == 0 {
            return Err(Error::InvalidParameter {
                name: "step",
                value: 0.0,
                requirement: "steps are numbered from 1",
            });
        }
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                context: "step unitary",
                expected: matrix.nrows(),
                actual: matrix.ncols(),
            });
        }
        let dev = unitarity_deviation(&matrix);
        if dev > UNITARITY_TOL {
            return Err(Error::NotUnitary {
                context: "step unitary",
                deviation: dev,
            });
        }
        Ok(Self { step, matrix })
    }

    /// Which evolution step this unitary implements (1-based).
    pub fn step(&self) -> usize {
        self.step
    }

    /// The matrix on the full product space.
    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    /// Largest commutator norm with single-site operators on copies beyond
    /// `step`; zero for a unitary that has not yet touched those copies.
    pub fn locality_deviation(&self, spec: &ChainSpec) -> Result<f64> {
        let mut worst = 0.0f64;
        for site in (self.step + 1)..=spec.window() {
            for r in 0..spec.copy_dim() {
                for c in 0..spec.copy_dim() {
                    let e = embed_site_operator(spec, &matrix_unit(spec.copy_dim(), r, c), site)?;
                    let comm = self.matrix.dot(&e) - e.dot(&self.matrix);
                    worst = worst.max(frobenius_norm(&comm));
                }
            }
        }
        Ok(worst)
    }
}

/// Either family of interaction model, with a uniform step-unitary interface.
#[derive(Debug, Clone)]
pub enum InteractionModel {
    /// Memoryless block model.
    Blocks(MarkovBlockModel),
    /// Hamiltonian chain model (memory set by its coupling rule).
    Chain(HamiltonianChainModel),
}

impl InteractionModel {
    /// Dimension of the system factor this model acts on.
    pub fn system_dim(&self) -> usize {
        match self {
            Self::Blocks(m) => m.system_dim(),
            Self::Chain(m) => m.h0().nrows(),
        }
    }

    /// Whether each step touches only the fresh copy.
    pub fn is_markov(&self) -> bool {
        match self {
            Self::Blocks(_) => true,
            Self::Chain(m) => matches!(m.couplings(), Couplings::Markov(_)),
        }
    }

    /// Check dimensional compatibility with a space.
    pub fn validate_against(&self, spec: &ChainSpec) -> Result<()> {
        match self {
            Self::Blocks(m) => {
                if m.system_dim() != spec.system_dim() {
                    return Err(Error::DimensionMismatch {
                        context: "model system dimension vs spec",
                        expected: spec.system_dim(),
                        actual: m.system_dim(),
                    });
                }
                if m.copy_dim() != spec.copy_dim() {
                    return Err(Error::DimensionMismatch {
                        context: "model copy dimension vs spec",
                        expected: spec.copy_dim(),
                        actual: m.copy_dim(),
                    });
                }
            }
            Self::Chain(m) => {
                if spec.copy_dim() != 2 {
                    return Err(Error::UnsupportedCopyDim {
                        context: "hamiltonian chain model",
                        required: 2,
                        actual: spec.copy_dim(),
                    });
                }
                if m.h0().nrows() != spec.system_dim() {
                    return Err(Error::DimensionMismatch {
                        context: "model system dimension vs spec",
                        expected: spec.system_dim(),
                        actual: m.h0().nrows(),
                    });
                }
            }
        }
        Ok(())
    }

    /// The unitary for evolution step `step` (1-based, `step ≤ window`).
    pub fn step_unitary(&self, spec: &ChainSpec, step: usize) -> Result<StepUnitary> {
        self.validate_against(spec)?;
        let matrix = match self {
            Self::Blocks(m) => build_markov_unitary(m, spec, step)?,
            Self::Chain(m) => {
                let h = build_chain_hamiltonian(m, spec, step)?;
                expm_i_hermitian(&h, m.tau())?
            }
        };
        StepUnitary::new(step, matrix)
    }

    /// The unitaries for steps `1..=steps`.
    pub fn step_unitaries(&self, spec: &ChainSpec, steps: usize) -> Result<Vec<StepUnitary>> {
        if steps > spec.window() {
            return Err(Error::StepsExceedWindow {
                steps,
                window: spec.window(),
            });
        }
        (1..=steps).map(|k| self.step_unitary(spec, k)).collect()
    }
}

/// Block decomposition of an operator on the system and a chosen set of
/// chain sites, indexed by per-site row and column digits.
#[derive(Debug, Clone)]
pub struct BlockMap {
    system_dim: usize,
    copy_dim: usize,
    sites: Vec<usize>,
    /// Row-major over (packed row digits, packed column digits).
    blocks: Vec<Array2<C64>>,
}

/// Decompose `u` (acting on `H_sys ⊗ (listed sites)`, sites ascending) into
/// `system_dim × system_dim` blocks indexed by the chain digits of the
/// listed sites.
pub fn extract_blocks(u: &Array2<C64>, spec: &ChainSpec, sites: &[usize]) -> Result<BlockMap> {
    if sites.is_empty() {
        return Err(Error::InvalidSiteList {
            detail: "need at least one site".into(),
        });
    }
    for w in sites.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidSiteList {
                detail: format!("sites must be strictly ascending, got {sites:?}"),
            });
        }
    }
    for &s in sites {
        if s == 0 || s > spec.window() {
            return Err(Error::SiteOutOfRange {
                site: s,
                window: spec.window(),
            });
        }
    }
    let d0 = spec.system_dim();
    let dc = spec.copy_dim();
    let packed = dc.pow(sites.len() as u32);
    let d = d0 * packed;
    if u.nrows() != d || u.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: "extract_blocks operator",
            expected: d,
            actual: u.nrows(),
        });
    }
    let mut blocks = Vec::with_capacity(packed * packed);
    for rp in 0..packed {
        for cp in 0..packed {
            let mut b = Array2::zeros((d0, d0));
            for s in 0..d0 {
                for t in 0..d0 {
                    b[[s, t]] = u[[s * packed + rp, t * packed + cp]];
                }
            }
            blocks.push(b);
        }
    }
    Ok(BlockMap {
        system_dim: d0,
        copy_dim: dc,
        sites: sites.to_vec(),
        blocks,
    })
}

impl BlockMap {
    /// Number of chain sites the decomposition covers.
    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    /// The sites covered, ascending.
    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    /// Dimension of each block.
    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    fn pack(&self, digits: &[usize]) -> Result<usize> {
        if digits.len() != self.sites.len() {
            return Err(Error::DimensionMismatch {
                context: "block digit count",
                expected: self.sites.len(),
                actual: digits.len(),
            });
        }
        let mut p = 0;
        for &d in digits {
            if d >= self.copy_dim {
                return Err(Error::OutcomeOutOfRange {
                    outcome: d,
                    num_outcomes: self.copy_dim,
                });
            }
            p = p * self.copy_dim + d;
        }
        Ok(p)
    }

    /// Block selected by per-site row digits and column digits, listed in
    /// the same order as [`sites`](Self::sites).
    pub fn get(&self, row_digits: &[usize], col_digits: &[usize]) -> Result<&Array2<C64>> {
        let packed = self.copy_dim.pow(self.sites.len() as u32);
        let r = self.pack(row_digits)?;
        let c = self.pack(col_digits)?;
        Ok(&self.blocks[r * packed + c])
    }

    /// Rebuild the full operator from the blocks.
    pub fn reassemble(&self) -> Array2<C64> {
        let packed = self.copy_dim.pow(self.sites.len() as u32);
        let d = self.system_dim * packed;
        let mut u = Array2::zeros((d, d));
        for rp in 0..packed {
            for cp in 0..packed {
                let b = &self.blocks[rp * packed + cp];
                for s in 0..self.system_dim {
                    for t in 0..self.system_dim {
                        u[[s * packed + rp, t * packed + cp]] = b[[s, t]];
                    }
                }
            }
        }
        u
    }
}
