// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Run-configuration schema and the builders that turn a parsed document
//! into engine objects. The format is strict JSON: unknown fields are
//! rejected, complex numbers are written as `[re, im]` pairs, and every
//! validation failure names the offending field.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use qrepeat_core::chain::{ChainSpec, ReducedState};
use qrepeat_core::linalg::{cx, C64};
use qrepeat_core::measurement::Observable;
use qrepeat_core::models::{Couplings, HamiltonianChainModel, InteractionModel, MarkovBlockModel};
use qrepeat_core::unravel::special_observable;

use crate::CliError;

/// One complex number as a `[re, im]` pair.
pub type CNum = [f64; 2];
/// A complex vector.
pub type CVec = Vec<CNum>;
/// A complex matrix, row-major.
pub type CMat = Vec<Vec<CNum>>;

/// Chain geometry: dimensions and the memory-window truncation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    /// Dimension of the system space.
    pub system_dim: usize,
    /// Dimension of each chain copy.
    pub copy_dim: usize,
    /// Number of chain copies kept in the truncated state.
    pub window: usize,
}

/// Interaction model descriptor. `kind` selects which other fields apply:
/// `markov-blocks` uses `preset` (currently `"swap"`) or an explicit
/// `pair_unitary`; `hamiltonian-chain` uses `h0`, `gamma`, `lambda`, `tau`,
/// and `coupling`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `"markov-blocks"` or `"hamiltonian-chain"`.
    pub kind: String,
    /// Block-model preset; only `"swap"` is defined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Explicit pair unitary on system ⊗ copy for a block model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_unitary: Option<CMat>,
    /// Free system Hamiltonian.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h0: Option<CMat>,
    /// Chain energy weight (defaults to 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Coupling strength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Step duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Which copies the system couples to, and through which operator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingConfig>,
}

/// Coupling reach preset plus the coupling operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    /// `"full-memory"`, `"two-copy"`, or `"markov"`.
    pub preset: String,
    /// The coupling operator on the system.
    pub c: CMat,
}

/// Initial system state: exactly one of `pure` or `density`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// State vector (normalized by the builder).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pure: Option<CVec>,
    /// Density matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<CMat>,
}

/// Measured observable on a chain copy: either the shorthand string
/// `"special(λ₀,λ₁)"` (qubit copies only) or an explicit matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservableConfig {
    /// Shorthand for the family with eigenprojectors `½[[1,±1],[±1,1]]`.
    Special(String),
    /// Explicit Hermitian matrix on the copy space.
    Matrix {
        /// The observable matrix.
        matrix: CMat,
    },
}

/// Base seed and ensemble size for sampled runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsConfig {
    /// Base seed from which member seeds are derived.
    #[serde(default)]
    pub base: u64,
    /// Number of trajectories in an ensemble run.
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
}

fn default_ensemble() -> usize {
    1
}

impl Default for SeedsConfig {
    fn default() -> Self {
        SeedsConfig { base: 0, ensemble: 1 }
    }
}

/// Optional overrides of numerical guard rails.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesConfig {
    /// Condition-number cap for the time-local kernel solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_condition_cap: Option<f64>,
    /// Residual threshold for the branch-operator dependence test.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependence_tol: Option<f64>,
}

/// Output file names, resolved relative to the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Per-step reduced states, CSV.
    #[serde(default = "default_states_csv")]
    pub states_csv: String,
    /// One trajectory record per line.
    #[serde(default = "default_trajectories_jsonl")]
    pub trajectories_jsonl: String,
    /// Run metadata (config echo, RNG name, seed).
    #[serde(default = "default_metadata_json")]
    pub metadata_json: String,
    /// Subcommand-specific structured report.
    #[serde(default = "default_report_json")]
    pub report_json: String,
}

fn default_states_csv() -> String {
    "states.csv".into()
}
fn default_trajectories_jsonl() -> String {
    "trajectories.jsonl".into()
}
fn default_metadata_json() -> String {
    "run_metadata.json".into()
}
fn default_report_json() -> String {
    "report.json".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            states_csv: default_states_csv(),
            trajectories_jsonl: default_trajectories_jsonl(),
            metadata_json: default_metadata_json(),
            report_json: default_report_json(),
        }
    }
}

/// A full validated run description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Chain geometry.
    pub spec: SpecConfig,
    /// Interaction model.
    pub model: ModelConfig,
    /// Initial system state.
    pub initial: InitialConfig,
    /// Measured observable (required by sampling subcommands).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<ObservableConfig>,
    /// Number of interaction steps.
    pub steps: usize,
    /// Seeding for sampled runs.
    #[serde(default)]
    pub seeds: SeedsConfig,
    /// Numerical guard-rail overrides.
    #[serde(default)]
    pub tolerances: TolerancesConfig,
    /// Output file names.
    #[serde(default)]
    pub output: OutputConfig,
}

/// Parse and structurally validate a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
    validate(&config)?;
    Ok(config)
}

/// Structural checks that do not need engine objects.
fn validate(config: &RunConfig) -> Result<(), CliError> {
    if config.steps > config.spec.window {
        return Err(CliError::Config(format!(
            "`steps` ({}) exceeds `spec.window` ({}); each step consumes one fresh copy",
            config.steps, config.spec.window
        )));
    }
    match (&config.initial.pure, &config.initial.density) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "`initial` must set exactly one of `pure` and `density`, found both".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Config(
                "`initial` must set exactly one of `pure` and `density`, found neither".into(),
            ))
        }
        _ => {}
    }
    let m = &config.model;
    match m.kind.as_str() {
        "markov-blocks" => {
            for (name, present) in [
                ("h0", m.h0.is_some()),
                ("gamma", m.gamma.is_some()),
                ("lambda", m.lambda.is_some()),
                ("tau", m.tau.is_some()),
                ("coupling", m.coupling.is_some()),
            ] {
                if present {
                    return Err(CliError::Config(format!(
                        "`model.{name}` does not apply to kind \"markov-blocks\""
                    )));
                }
            }
            match (&m.preset, &m.pair_unitary) {
                (Some(_), Some(_)) => Err(CliError::Config(
                    "`model` must set exactly one of `preset` and `pair_unitary`, found both"
                        .into(),
                )),
                (None, None) => Err(CliError::Config(
                    "`model` must set exactly one of `preset` and `pair_unitary`, found neither"
                        .into(),
                )),
                (Some(p), None) if p != "swap" => Err(CliError::Config(format!(
                    "unknown block-model preset {p:?}; expected \"swap\""
                ))),
                _ => Ok(()),
            }
        }
        "hamiltonian-chain" => {
            for (name, absent) in [
                ("h0", m.h0.is_none()),
                ("lambda", m.lambda.is_none()),
                ("tau", m.tau.is_none()),
                ("coupling", m.coupling.is_none()),
            ] {
                if absent {
                    return Err(CliError::Config(format!(
                        "kind \"hamiltonian-chain\" requires `model.{name}`"
                    )));
                }
            }
            for (name, present) in [
                ("preset", m.preset.is_some()),
                ("pair_unitary", m.pair_unitary.is_some()),
            ] {
                if present {
                    return Err(CliError::Config(format!(
                        "`model.{name}` does not apply to kind \"hamiltonian-chain\""
                    )));
                }
            }
            let preset = &m.coupling.as_ref().expect("checked above").preset;
            if !matches!(preset.as_str(), "full-memory" | "two-copy" | "markov") {
                return Err(CliError::Config(format!(
                    "unknown coupling preset {preset:?}; expected \"full-memory\", \"two-copy\", or \"markov\""
                )));
            }
            Ok(())
        }
        other => Err(CliError::Config(format!(
            "unknown `model.kind` {other:?}; expected \"markov-blocks\" or \"hamiltonian-chain\""
        ))),
    }
}

fn config_err(context: &str, err: qrepeat_core::Error) -> CliError {
    CliError::Config(format!("{context}: {err}"))
}

/// Convert a `[re, im]` table to a complex matrix, checking rectangularity.
pub fn to_array2(mat: &CMat, context: &str) -> Result<Array2<C64>, CliError> {
    let rows = mat.len();
    if rows == 0 {
        return Err(CliError::Config(format!("{context}: matrix has no rows")));
    }
    let cols = mat[0].len();
    for (r, row) in mat.iter().enumerate() {
        if row.len() != cols {
            return Err(CliError::Config(format!(
                "{context}: row {r} has {} entries, expected {cols}",
                row.len()
            )));
        }
    }
    Ok(Array2::from_shape_fn((rows, cols), |(r, c)| {
        cx(mat[r][c][0], mat[r][c][1])
    }))
}

/// Convert a `[re, im]` list to a complex vector.
pub fn to_array1(vec: &CVec) -> Array1<C64> {
    Array1::from(vec.iter().map(|p| cx(p[0], p[1])).collect::<Vec<_>>())
}

/// Build the chain geometry.
pub fn build_spec(config: &RunConfig) -> Result<ChainSpec, CliError> {
    ChainSpec::new(
        config.spec.system_dim,
        config.spec.copy_dim,
        config.spec.window,
    )
    .map_err(|e| config_err("`spec`", e))
}

/// Build the interaction model.
pub fn build_model(config: &RunConfig, spec: &ChainSpec) -> Result<InteractionModel, CliError> {
    let m = &config.model;
    match m.kind.as_str() {
        "markov-blocks" => {
            let model = if let Some(table) = &m.pair_unitary {
                let u = to_array2(table, "`model.pair_unitary`")?;
                MarkovBlockModel::from_pair_unitary(&u, spec.system_dim(), spec.copy_dim())
                    .map_err(|e| config_err("`model.pair_unitary`", e))?
            } else {
                MarkovBlockModel::swap(spec.copy_dim())
                    .map_err(|e| config_err("`model.preset`", e))?
            };
            if model.system_dim() != spec.system_dim() {
                return Err(CliError::Config(format!(
                    "`model`: swap preset needs system_dim = copy_dim, got {} and {}",
                    spec.system_dim(),
                    spec.copy_dim()
                )));
            }
            Ok(InteractionModel::Blocks(model))
        }
        "hamiltonian-chain" => {
            let h0 = to_array2(m.h0.as_ref().expect("validated"), "`model.h0`")?;
            let coupling = m.coupling.as_ref().expect("validated");
            let c = to_array2(&coupling.c, "`model.coupling.c`")?;
            let couplings = match coupling.preset.as_str() {
                "full-memory" => Couplings::FullMemory(c),
                "two-copy" => Couplings::TwoCopyWindow(c),
                "markov" => Couplings::Markov(c),
                _ => unreachable!("validated"),
            };
            let model = HamiltonianChainModel::new(
                h0,
                m.gamma.unwrap_or(0.0),
                m.lambda.expect("validated"),
                m.tau.expect("validated"),
                couplings,
            )
            .map_err(|e| config_err("`model`", e))?;
            if model.h0().nrows() != spec.system_dim() {
                return Err(CliError::Config(format!(
                    "`model.h0` is {}×{} but `spec.system_dim` is {}",
                    model.h0().nrows(),
                    model.h0().ncols(),
                    spec.system_dim()
                )));
            }
            Ok(InteractionModel::Chain(model))
        }
        _ => unreachable!("validated"),
    }
}

/// Build the initial system state (pure vectors are normalized here).
pub fn build_initial(config: &RunConfig, spec: &ChainSpec) -> Result<ReducedState, CliError> {
    if let Some(vec) = &config.initial.pure {
        if vec.len() != spec.system_dim() {
            return Err(CliError::Config(format!(
                "`initial.pure` has {} entries but `spec.system_dim` is {}",
                vec.len(),
                spec.system_dim()
            )));
        }
        let v = to_array1(vec);
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(CliError::Config("`initial.pure` is the zero vector".into()));
        }
        ReducedState::pure(&v.mapv(|z| z / norm)).map_err(|e| config_err("`initial.pure`", e))
    } else {
        let table = config.initial.density.as_ref().expect("validated");
        let rho = to_array2(table, "`initial.density`")?;
        if rho.nrows() != spec.system_dim() {
            return Err(CliError::Config(format!(
                "`initial.density` is {}×{} but `spec.system_dim` is {}",
                rho.nrows(),
                rho.ncols(),
                spec.system_dim()
            )));
        }
        ReducedState::new(rho).map_err(|e| config_err("`initial.density`", e))
    }
}

/// Parse the `"special(λ₀,λ₁)"` observable shorthand.
pub fn parse_special(text: &str) -> Result<(f64, f64), CliError> {
    let inner = text
        .trim()
        .strip_prefix("special(")
        .and_then(|rest| rest.strip_suffix(')'))
        .ok_or_else(|| {
            CliError::Config(format!(
                "`observable` string must look like \"special(λ₀,λ₁)\", got {text:?}"
            ))
        })?;
    let parts: Vec<&str> = inner.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::Config(format!(
            "`observable` shorthand needs two eigenvalues, got {text:?}"
        )));
    }
    let mut vals = [0.0f64; 2];
    for (slot, part) in vals.iter_mut().zip(&parts) {
        *slot = part.trim().parse().map_err(|_| {
            CliError::Config(format!("`observable`: {part:?} is not a number in {text:?}"))
        })?;
    }
    Ok((vals[0], vals[1]))
}

/// Build the observable if one is configured.
pub fn build_observable(
    config: &RunConfig,
    spec: &ChainSpec,
) -> Result<Option<Observable>, CliError> {
    let Some(obs_config) = &config.observable else {
        return Ok(None);
    };
    let obs = match obs_config {
        ObservableConfig::Special(text) => {
            let (l0, l1) = parse_special(text)?;
            if spec.copy_dim() != 2 {
                return Err(CliError::Config(format!(
                    "`observable` shorthand requires copy_dim 2, got {}",
                    spec.copy_dim()
                )));
            }
            special_observable(l0, l1).map_err(|e| config_err("`observable`", e))?
        }
        ObservableConfig::Matrix { matrix } => {
            let a = to_array2(matrix, "`observable.matrix`")?;
            Observable::from_matrix(a).map_err(|e| config_err("`observable.matrix`", e))?
        }
    };
    if obs.dim() != spec.copy_dim() {
        return Err(CliError::Config(format!(
            "`observable` is {}-dimensional but `spec.copy_dim` is {}",
            obs.dim(),
            spec.copy_dim()
        )));
    }
    Ok(Some(obs))
}

/// The observable, or a configuration error naming the subcommand.
pub fn require_observable(
    config: &RunConfig,
    spec: &ChainSpec,
    subcommand: &str,
) -> Result<Observable, CliError> {
    build_observable(config, spec)?.ok_or_else(|| {
        CliError::Config(format!("the {subcommand} subcommand requires an `observable`"))
    })
}
