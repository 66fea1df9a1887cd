// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Subcommand orchestration: load and validate the configuration, drive the
//! requested engine, and write the artifacts. The `verify` subcommand runs
//! every engine on the same configuration and cross-checks them against one
//! another, failing the process when any leg exceeds its tolerance.

use std::path::PathBuf;

use ndarray::Array2;
use serde::Serialize;

use qrepeat_core::chain::{ChainSpec, ReducedState};
use qrepeat_core::evolution::{evolve_direct, reduced_sequence};
use qrepeat_core::linalg::{frobenius_norm, trace_distance, C64};
use qrepeat_core::measurement::{
    cylinder_probability, ensemble_average, nonselective_evolution, run_ensemble, Observable,
    TrajectoryRecord, RNG_ALGORITHM,
};
use qrepeat_core::models::InteractionModel;
use qrepeat_core::projection::{nz_evolve, tcl_evolve_capped, DEFAULT_KERNEL_CONDITION_CAP};
use qrepeat_core::unravel::{
    asymptotic_order_scan, check_dependence, run_unravel, DependenceVerdict, PurityClass,
    DEPENDENCE_TOL,
};
use qrepeat_core::Error;

use crate::config::{
    build_initial, build_model, build_observable, build_spec, parse_config, require_observable,
    RunConfig,
};
use crate::output::{
    complex_pair, complex_table, ensure_dir, write_json, write_jsonl, write_states_csv,
};
use crate::{CliError, Command, CommonArgs};

/// Tolerance for the deterministic evolution cross-checks in `verify`.
const VERIFY_EVOLUTION_TOL: f64 = 1e-8;
/// Tolerance for branch-probability normalization in `verify`.
const VERIFY_NORMALIZATION_TOL: f64 = 1e-10;
/// Tolerance for marginalization consistency of outcome-prefix weights.
const VERIFY_CONSISTENCY_TOL: f64 = 1e-12;
/// Tolerance for sampled path log-weights against the prefix weights.
const VERIFY_LOGPROB_TOL: f64 = 1e-10;
/// Tolerance for the memoryless identity between the outcome-averaged and
/// the unmeasured evolution.
const VERIFY_MARKOV_MEAN_TOL: f64 = 1e-10;
/// Floor of the statistical tolerance for the sampled ensemble mean.
const VERIFY_MEAN_FLOOR: f64 = 0.02;
/// Standard-error multiple allowed for the sampled ensemble mean.
const VERIFY_MEAN_SIGMA: f64 = 6.0;
/// Smallest ensemble the statistical legs run on.
const VERIFY_MIN_ENSEMBLE: usize = 8;
/// Step durations used for the power-law fit in `unravel` reports.
const ORDER_SCAN_TAUS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];

/// Everything a subcommand needs, built once from the arguments.
struct Prepared {
    config: RunConfig,
    spec: ChainSpec,
    model: InteractionModel,
    initial: ReducedState,
    out_dir: PathBuf,
}

fn num(e: Error) -> CliError {
    CliError::Numerical(e)
}

fn prepare(args: &CommonArgs) -> Result<Prepared, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::io(&args.config, e))?;
    let mut config = parse_config(&text)?;
    if let Some(seed) = args.seed {
        config.seeds.base = seed;
    }
    if let Some(ensemble) = args.ensemble {
        config.seeds.ensemble = ensemble;
    }
    let spec = build_spec(&config)?;
    let model = build_model(&config, &spec)?;
    let initial = build_initial(&config, &spec)?;
    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out_dir)?;
    Ok(Prepared { config, spec, model, initial, out_dir })
}

#[derive(Serialize)]
struct Metadata<'a> {
    artifact_version: &'static str,
    subcommand: &'a str,
    rng_algorithm: &'static str,
    base_seed: u64,
    ensemble: usize,
    config: &'a RunConfig,
}

fn write_metadata(p: &Prepared, subcommand: &str) -> Result<(), CliError> {
    let meta = Metadata {
        artifact_version: env!("CARGO_PKG_VERSION"),
        subcommand,
        rng_algorithm: RNG_ALGORITHM,
        base_seed: p.config.seeds.base,
        ensemble: p.config.seeds.ensemble,
        config: &p.config,
    };
    write_json(&p.out_dir.join(&p.config.output.metadata_json), &meta)
}

/// Run one subcommand end to end.
pub fn dispatch(command: &Command) -> Result<(), CliError> {
    let p = prepare(command.common())?;
    match command {
        Command::Evolve(_) => run_evolve(&p),
        Command::Nz(_) => run_nz(&p),
        Command::Tcl(_) => run_tcl(&p),
        Command::Trajectories(_) => run_trajectories(&p),
        Command::Unravel(_) => run_unravel_cmd(&p),
        Command::Verify(_) => run_verify(&p),
    }?;
    write_metadata(&p, command.name())
}

fn state_matrices(states: &[ReducedState]) -> Vec<Array2<C64>> {
    states.iter().map(|s| s.matrix().clone()).collect()
}

#[derive(Serialize)]
struct EvolveReport {
    subcommand: &'static str,
    steps: usize,
    purities: Vec<f64>,
}

fn run_evolve(p: &Prepared) -> Result<(), CliError> {
    let run = evolve_direct(&p.model, &p.spec, &p.initial, p.config.steps).map_err(num)?;
    let mats = reduced_sequence(&run);
    write_states_csv(&p.out_dir.join(&p.config.output.states_csv), &mats)?;
    let report = EvolveReport {
        subcommand: "evolve",
        steps: p.config.steps,
        purities: run.reduced().iter().map(|s| s.purity()).collect(),
    };
    write_json(&p.out_dir.join(&p.config.output.report_json), &report)
}

#[derive(Serialize)]
struct NzReport {
    subcommand: &'static str,
    steps: usize,
    purities: Vec<f64>,
    /// Frobenius norm of the correlated component carried forward at each
    /// step; zero exactly when the dynamics is memoryless.
    correlation_norms: Vec<f64>,
}

fn run_nz(p: &Prepared) -> Result<(), CliError> {
    let nz = nz_evolve(&p.model, &p.spec, &p.initial, p.config.steps).map_err(num)?;
    write_states_csv(
        &p.out_dir.join(&p.config.output.states_csv),
        &state_matrices(nz.reduced()),
    )?;
    let report = NzReport {
        subcommand: "nz",
        steps: p.config.steps,
        purities: nz.reduced().iter().map(|s| s.purity()).collect(),
        correlation_norms: nz.q_components().iter().map(frobenius_norm).collect(),
    };
    write_json(&p.out_dir.join(&p.config.output.report_json), &report)
}

#[derive(Serialize)]
struct TclConditionEntry {
    step: usize,
    condition: f64,
}

#[derive(Serialize)]
struct TclReport {
    subcommand: &'static str,
    steps: usize,
    purities: Vec<f64>,
    condition_cap: f64,
    /// Condition-number estimates of the per-step kernel solves.
    kernel_conditions: Vec<TclConditionEntry>,
}

fn kernel_condition_cap(config: &RunConfig) -> f64 {
    config
        .tolerances
        .kernel_condition_cap
        .unwrap_or(DEFAULT_KERNEL_CONDITION_CAP)
}

fn run_tcl(p: &Prepared) -> Result<(), CliError> {
    let cap = kernel_condition_cap(&p.config);
    let tcl =
        tcl_evolve_capped(&p.model, &p.spec, &p.initial, p.config.steps, cap).map_err(num)?;
    write_states_csv(
        &p.out_dir.join(&p.config.output.states_csv),
        &state_matrices(tcl.reduced()),
    )?;
    let report = TclReport {
        subcommand: "tcl",
        steps: p.config.steps,
        purities: tcl.reduced().iter().map(|s| s.purity()).collect(),
        condition_cap: cap,
        kernel_conditions: tcl
            .conditions()
            .iter()
            .map(|&(step, condition)| TclConditionEntry { step, condition })
            .collect(),
    };
    write_json(&p.out_dir.join(&p.config.output.report_json), &report)
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    seed: u64,
    outcomes: &'a [usize],
    probabilities: &'a [f64],
    purity_deficits: &'a [f64],
}

#[derive(Serialize)]
struct TrajectoriesReport {
    subcommand: &'static str,
    steps: usize,
    count: usize,
    outcome_eigenvalues: Vec<f64>,
    /// Per-step standard error of the sampled mean (Frobenius based).
    std_error: Vec<f64>,
    /// Per-step sampled mean reduced state as `[re, im]` tables.
    mean_states: Vec<Vec<Vec<[f64; 2]>>>,
}

fn run_trajectories(p: &Prepared) -> Result<(), CliError> {
    let obs = require_observable(&p.config, &p.spec, "trajectories")?;
    let records = run_ensemble(
        &p.model,
        &p.initial,
        &obs,
        p.config.steps,
        p.config.seeds.base,
        p.config.seeds.ensemble,
        &p.spec,
    )
    .map_err(num)?;
    let lines: Vec<TrajectoryLine> = records
        .iter()
        .map(|r| TrajectoryLine {
            seed: r.seed(),
            outcomes: r.outcomes(),
            probabilities: r.branch_probs(),
            purity_deficits: r.purity_deficits(),
        })
        .collect();
    write_jsonl(&p.out_dir.join(&p.config.output.trajectories_jsonl), &lines)?;
    let summary = ensemble_average(&records).map_err(num)?;
    let report = TrajectoriesReport {
        subcommand: "trajectories",
        steps: p.config.steps,
        count: summary.count(),
        outcome_eigenvalues: obs.eigenvalues().to_vec(),
        std_error: summary.std_error().to_vec(),
        mean_states: summary
            .mean_reduced()
            .iter()
            .map(|s| complex_table(s.matrix()))
            .collect(),
    };
    write_json(&p.out_dir.join(&p.config.output.report_json), &report)
}

#[derive(Serialize)]
struct DependenceEntry {
    first_outcome: usize,
    second_outcome: usize,
    verdict: &'static str,
    /// Normalized smallest singular value of the stacked operator pair.
    residual: f64,
    /// `[nu, mu]` with `nu·H₀ + mu·H₁ ≈ 0`, present only when dependent.
    certificate: Option<[[f64; 2]; 2]>,
    /// `‖H₀ − H₁‖_F` for this outcome pair.
    difference_norm: f64,
}

#[derive(Serialize)]
struct BranchOperatorEntry {
    first_outcome: usize,
    second_outcome: usize,
    operators: Vec<Vec<Vec<[f64; 2]>>>,
}

#[derive(Serialize)]
struct OrderEntry {
    row: [usize; 2],
    col: [usize; 2],
    observed_order: Option<f64>,
    predicted_order: usize,
    norms: Vec<f64>,
}

#[derive(Serialize)]
struct UnravelOut {
    subcommand: &'static str,
    steps: usize,
    ensemble: usize,
    classification: &'static str,
    max_purity_deficit: f64,
    dependence_tol: f64,
    dependence: Vec<DependenceEntry>,
    branch_operators: Vec<BranchOperatorEntry>,
    /// Power-law fits of the two-interaction unitary blocks; present for
    /// Hamiltonian chain models only.
    asymptotic_orders: Option<Vec<OrderEntry>>,
}

fn classification_name(class: PurityClass) -> &'static str {
    match class {
        PurityClass::MarkovPure => "markov-pure",
        PurityClass::SpecialPure => "special-pure",
        PurityClass::Mixing => "mixing",
        PurityClass::Inconclusive => "inconclusive",
    }
}

fn run_unravel_cmd(p: &Prepared) -> Result<(), CliError> {
    let obs = require_observable(&p.config, &p.spec, "unravel")?;
    let report = run_unravel(
        &p.model,
        &obs,
        &p.initial,
        p.config.steps,
        p.config.seeds.base,
        p.config.seeds.ensemble,
        &p.spec,
    )
    .map_err(num)?;
    let tol = p.config.tolerances.dependence_tol.unwrap_or(DEPENDENCE_TOL);

    let mut dependence = Vec::new();
    for (&(m, n), ops) in report.h_ops() {
        // Re-test at the configured tolerance so an override in the config
        // is reflected in the report.
        let dep = if (tol - DEPENDENCE_TOL).abs() > f64::EPSILON && ops.len() >= 2 {
            check_dependence(&ops[0], &ops[1], tol).map_err(num)?
        } else {
            report.dependence()[&(m, n)].clone()
        };
        let (verdict, certificate) = match dep.verdict {
            DependenceVerdict::Dependent { nu, mu } => {
                ("dependent", Some([complex_pair(nu), complex_pair(mu)]))
            }
            DependenceVerdict::Independent => ("independent", None),
            DependenceVerdict::Degenerate => ("degenerate", None),
        };
        dependence.push(DependenceEntry {
            first_outcome: m,
            second_outcome: n,
            verdict,
            residual: dep.residual,
            certificate,
            difference_norm: report.h_difference_norms()[&(m, n)],
        });
    }

    let branch_operators = report
        .h_ops()
        .iter()
        .map(|(&(m, n), ops)| BranchOperatorEntry {
            first_outcome: m,
            second_outcome: n,
            operators: ops.iter().map(complex_table).collect(),
        })
        .collect();

    let asymptotic_orders = match &p.model {
        InteractionModel::Chain(chain) => Some(
            asymptotic_order_scan(chain, &ORDER_SCAN_TAUS)
                .map_err(num)?
                .into_iter()
                .map(|o| OrderEntry {
                    row: [o.row.0, o.row.1],
                    col: [o.col.0, o.col.1],
                    observed_order: o.observed_order,
                    predicted_order: o.predicted_order,
                    norms: o.norms,
                })
                .collect(),
        ),
        InteractionModel::Blocks(_) => None,
    };

    let out = UnravelOut {
        subcommand: "unravel",
        steps: p.config.steps,
        ensemble: p.config.seeds.ensemble,
        classification: classification_name(report.classification()),
        max_purity_deficit: report.max_purity_deficit(),
        dependence_tol: tol,
        dependence,
        branch_operators,
        asymptotic_orders,
    };
    write_json(&p.out_dir.join(&p.config.output.report_json), &out)
}

#[derive(Serialize)]
struct Leg {
    name: &'static str,
    /// `passed`, `failed`, `skipped`, or `info` (never gates the exit code).
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_discrepancy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
    detail: String,
}

impl Leg {
    fn checked(name: &'static str, discrepancy: f64, tolerance: f64, detail: String) -> Self {
        let status = if discrepancy <= tolerance { "passed" } else { "failed" };
        Leg {
            name,
            status,
            max_discrepancy: Some(discrepancy),
            tolerance: Some(tolerance),
            detail,
        }
    }

    fn skipped(name: &'static str, detail: String) -> Self {
        Leg { name, status: "skipped", max_discrepancy: None, tolerance: None, detail }
    }

    fn info(name: &'static str, discrepancy: f64, detail: String) -> Self {
        Leg {
            name,
            status: "info",
            max_discrepancy: Some(discrepancy),
            tolerance: None,
            detail,
        }
    }
}

#[derive(Serialize)]
struct VerifyReport {
    subcommand: &'static str,
    passed: bool,
    legs: Vec<Leg>,
}

fn max_state_distance(a: &[ReducedState], b: &[ReducedState]) -> Result<f64, CliError> {
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = trace_distance(x.matrix(), y.matrix()).map_err(num)?;
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Enumerate all outcome strings of the given length.
fn outcome_paths(num_outcomes: usize, len: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![Vec::new()];
    for _ in 0..len {
        let mut next = Vec::with_capacity(paths.len() * num_outcomes);
        for path in &paths {
            for a in 0..num_outcomes {
                let mut p = path.clone();
                p.push(a);
                next.push(p);
            }
        }
        paths = next;
    }
    paths
}

fn run_verify(p: &Prepared) -> Result<(), CliError> {
    let steps = p.config.steps;
    let mut legs = Vec::new();

    let direct = evolve_direct(&p.model, &p.spec, &p.initial, steps).map_err(num)?;

    // Leg 1: the memory-resolved recursion must reproduce the direct
    // evolution exactly (up to floating-point slack).
    let nz = nz_evolve(&p.model, &p.spec, &p.initial, steps).map_err(num)?;
    let nz_gap = max_state_distance(nz.reduced(), direct.reduced())?;
    legs.push(Leg::checked(
        "nz-vs-direct",
        nz_gap,
        VERIFY_EVOLUTION_TOL,
        "trace distance between the memory-resolved and direct reduced states, max over steps"
            .into(),
    ));

    // Leg 2: the time-local scheme must match too, unless its kernel solve
    // is ill-conditioned — then the typed diagnostic is the contract.
    match tcl_evolve_capped(&p.model, &p.spec, &p.initial, steps, kernel_condition_cap(&p.config))
    {
        Ok(tcl) => {
            let tcl_gap = max_state_distance(tcl.reduced(), direct.reduced())?;
            legs.push(Leg::checked(
                "tcl-vs-direct",
                tcl_gap,
                VERIFY_EVOLUTION_TOL,
                "trace distance between the time-local and direct reduced states, max over steps"
                    .into(),
            ));
        }
        Err(e @ Error::IllConditionedKernel { .. }) => {
            legs.push(Leg::skipped(
                "tcl-vs-direct",
                format!("time-local scheme unavailable here: {e}; the typed diagnostic is the contracted behavior"),
            ));
        }
        Err(e) => return Err(num(e)),
    }

    match build_observable(&p.config, &p.spec)? {
        Some(obs) => verify_measurement_legs(p, &obs, direct.reduced(), &mut legs)?,
        None => {
            for name in [
                "cylinder-normalization",
                "cylinder-consistency",
                "path-log-probability",
                "ensemble-mean",
            ] {
                legs.push(Leg::skipped(name, "no observable configured".into()));
            }
        }
    }

    let passed = legs.iter().all(|l| l.status != "failed");
    let report = VerifyReport { subcommand: "verify", passed, legs };
    write_json(&p.out_dir.join(&p.config.output.report_json), &report)?;

    if passed {
        Ok(())
    } else {
        let failed: Vec<String> = report
            .legs
            .iter()
            .filter(|l| l.status == "failed")
            .map(|l| {
                format!(
                    "{} (discrepancy {:.3e} > tolerance {:.3e})",
                    l.name,
                    l.max_discrepancy.unwrap_or(f64::NAN),
                    l.tolerance.unwrap_or(f64::NAN),
                )
            })
            .collect();
        Err(CliError::Check(failed.join("; ")))
    }
}

fn verify_measurement_legs(
    p: &Prepared,
    obs: &Observable,
    direct_reduced: &[ReducedState],
    legs: &mut Vec<Leg>,
) -> Result<(), CliError> {
    let steps = p.config.steps;
    let depth = steps.min(2);

    // Leg 3: outcome-prefix weights at the checked depth sum to one.
    let mut total = 0.0;
    for path in outcome_paths(obs.num_outcomes(), depth) {
        total +=
            cylinder_probability(&p.model, &p.initial, obs, &path, &p.spec).map_err(num)?;
    }
    legs.push(Leg::checked(
        "cylinder-normalization",
        (total - 1.0).abs(),
        VERIFY_NORMALIZATION_TOL,
        format!("outcome-prefix weights at depth {depth} sum to one"),
    ));

    // Leg 4: marginalizing the last outcome of a prefix recovers the
    // shorter prefix's weight.
    let mut worst_margin = 0.0f64;
    for d in 1..=depth {
        for prefix in outcome_paths(obs.num_outcomes(), d - 1) {
            let short = if prefix.is_empty() {
                1.0
            } else {
                cylinder_probability(&p.model, &p.initial, obs, &prefix, &p.spec).map_err(num)?
            };
            let mut summed = 0.0;
            for a in 0..obs.num_outcomes() {
                let mut longer = prefix.clone();
                longer.push(a);
                summed += cylinder_probability(&p.model, &p.initial, obs, &longer, &p.spec)
                    .map_err(num)?;
            }
            worst_margin = worst_margin.max((short - summed).abs());
        }
    }
    legs.push(Leg::checked(
        "cylinder-consistency",
        worst_margin,
        VERIFY_CONSISTENCY_TOL,
        format!("marginalization consistency over all outcome prefixes of depth ≤ {depth}"),
    ));

    let ensemble = p.config.seeds.ensemble;
    if ensemble < VERIFY_MIN_ENSEMBLE {
        legs.push(Leg::skipped(
            "path-log-probability",
            format!("ensemble size {ensemble} below the statistical minimum {VERIFY_MIN_ENSEMBLE}"),
        ));
        legs.push(Leg::skipped(
            "ensemble-mean",
            format!("ensemble size {ensemble} below the statistical minimum {VERIFY_MIN_ENSEMBLE}"),
        ));
        return Ok(());
    }

    let records = run_ensemble(
        &p.model,
        &p.initial,
        obs,
        steps,
        p.config.seeds.base,
        ensemble,
        &p.spec,
    )
    .map_err(num)?;

    // Leg 5: each sampled path's accumulated log-weight equals the log of
    // its outcome-prefix weight.
    let sample: Vec<&TrajectoryRecord> = records.iter().take(5).collect();
    let mut worst_log = 0.0f64;
    for record in &sample {
        let cyl = cylinder_probability(&p.model, &p.initial, obs, record.outcomes(), &p.spec)
            .map_err(num)?;
        let gap = if cyl > 0.0 {
            (record.log_probability() - cyl.ln()).abs()
        } else {
            f64::INFINITY
        };
        worst_log = worst_log.max(gap);
    }
    legs.push(Leg::checked(
        "path-log-probability",
        worst_log,
        VERIFY_LOGPROB_TOL,
        format!("sampled path log-weight vs prefix weight, {} trajectories", sample.len()),
    ));

    // Leg 6: the sampled mean must converge to the outcome-averaged
    // (non-selective) evolution — the estimator's true target.
    let nonselective =
        nonselective_evolution(&p.model, &p.initial, obs, steps, &p.spec).map_err(num)?;
    let summary = ensemble_average(&records).map_err(num)?;
    let mean_gap = max_state_distance(summary.mean_reduced(), &nonselective)?;
    let max_se = summary.std_error().iter().cloned().fold(0.0f64, f64::max);
    let mean_tol = VERIFY_MEAN_FLOOR.max(VERIFY_MEAN_SIGMA * max_se);
    legs.push(Leg::checked(
        "ensemble-mean",
        mean_gap,
        mean_tol,
        format!(
            "sampled mean of {ensemble} trajectories vs the outcome-averaged evolution; \
             tolerance max({VERIFY_MEAN_FLOOR}, {VERIFY_MEAN_SIGMA}× max standard error {max_se:.3e})"
        ),
    ));

    // Memoryless models: measuring the consumed copy is invisible to the
    // reduced state, so the outcome average must match the unmeasured
    // evolution to floating-point accuracy. Memory models keep a genuine
    // backaction; report its size without gating on it.
    let backaction = max_state_distance(&nonselective, direct_reduced)?;
    if p.model.is_markov() {
        legs.push(Leg::checked(
            "nonselective-vs-direct",
            backaction,
            VERIFY_MARKOV_MEAN_TOL,
            "outcome-averaged vs unmeasured evolution; exact identity for memoryless models"
                .into(),
        ));
    } else {
        legs.push(Leg::info(
            "measurement-backaction",
            backaction,
            "trace distance between the outcome-averaged and unmeasured evolution; \
             models with memory retain a real measurement backaction"
                .into(),
        ));
    }
    Ok(())
}
