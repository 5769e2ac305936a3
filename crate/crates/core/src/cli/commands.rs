//! The four subcommands and the exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::config::{OutputFormat, RunConfig};
use super::snapshot::{format_value, write_snapshot};
use super::tables::{csv_line, diagnostics_csv, ladder_csv};
use crate::diagnostics::{
    dq_ladder, envelope_constants, estimate_suite, g_marginal_deviation, relative_entropy,
    Diagnostician, EntropyKind,
};
use crate::error::{Error, Result};
use crate::evolve::{evolve_run, random_envelope, ImplicitEuler};
use crate::grid::Grid;
use crate::model::ModelParams;
use crate::operators::{firing_flux, maxwellian_field, DensityField, Generator, GeneratorParts};
use crate::steady::{solve_steady_marching, solve_steady_nullspace, SteadyMethod, SteadyState};

/// Overrides the configured output directory; `--out` wins over it.
pub const OUT_DIR_ENV: &str = "VCKINETIC_OUT_DIR";

/// Thresholds shared by `steady` and `verify`.
pub const COLUMN_SUM_TOL: f64 = 1e-12;
pub const ANNIHILATION_TOL: f64 = 1e-13;
pub const MARGINAL_TOL: f64 = 1e-10;
pub const AGREEMENT_TOL: f64 = 1e-8;
pub const MONOTONE_SLACK: f64 = 1e-12;
/// Relative slack for the `d_q^{1/q}` ladder, covering quadrature noise.
pub const LADDER_SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Steady,
    Evolve,
    Verify,
    Sweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExitStatus {
    Pass = 0,
    PropertyFailure = 1,
    ConfigError = 2,
    SolverFailure = 3,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn of_error(error: &Error) -> ExitStatus {
        match error {
            Error::Config(_) | Error::Parse(_) => ExitStatus::ConfigError,
            _ => ExitStatus::SolverFailure,
        }
    }

    fn of_flag(passed: bool) -> ExitStatus {
        if passed {
            ExitStatus::Pass
        } else {
            ExitStatus::PropertyFailure
        }
    }
}

#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// `--out`, then the environment override, then the config file.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or(env)
        .unwrap_or_else(|| config.output.directory.clone())
}

/// Runs one invocation end to end. Failures are printed to stderr and, when
/// the output directory is known, written to `failure.json`.
pub fn run(invocation: &Invocation) -> ExitStatus {
    let config = match RunConfig::load(&invocation.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitStatus::of_error(&e);
        }
    };
    let env = std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    let out = resolve_out_dir(invocation.out.as_deref(), env, &config);
    let seed = invocation.seed.unwrap_or(0);
    let result =
        fs::create_dir_all(&out)
            .map_err(Error::from)
            .and_then(|_| match invocation.command {
                Command::Steady => cmd_steady(&config, &out),
                Command::Evolve => cmd_evolve(&config, &out, seed),
                Command::Verify => cmd_verify(&config, &out, seed),
                Command::Sweep => cmd_sweep(&config, &out),
            });
    match result {
        Ok(status) => status,
        Err(e) => {
            let status = ExitStatus::of_error(&e);
            eprintln!("error: {e}");
            let report = json!({
                "command": invocation.command,
                "exit_code": status.code(),
                "error": e.to_string(),
            });
            let _ = fs::write(out.join("failure.json"), pretty(&report));
            status
        }
    }
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    s.push('\n');
    s
}

/// One named property with its measured value and bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Check {
        Check {
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} value={} threshold={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            format_value(self.value),
            format_value(self.threshold)
        )
    }
}

/// Metzler sign pattern and zero column sums.
pub fn structure_checks(generator: &Generator) -> Vec<Check> {
    vec![
        Check::at_most(
            "generator_off_diagonal_sign",
            (-generator.min_off_diagonal()).max(0.0),
            0.0,
        ),
        Check::at_most(
            "generator_column_sums",
            generator.max_abs_column_sum(),
            COLUMN_SUM_TOL,
        ),
    ]
}

/// The conductance operator applied to the sampled Maxwellian.
pub fn annihilation_check(fokker_planck: &Generator) -> Result<Check> {
    let m = maxwellian_field(fokker_planck.grid(), fokker_planck.params());
    let peak = m.iter().copied().fold(0.0, f64::max);
    let worst = fokker_planck
        .apply_slice(&m)?
        .iter()
        .fold(0.0f64, |a, r| a.max(r.abs()));
    Ok(Check::at_most(
        "maxwellian_annihilation",
        worst / peak,
        ANNIHILATION_TOL,
    ))
}

fn solve_configured(config: &RunConfig, generator: &Generator) -> Result<SteadyState> {
    let s = &config.solver;
    match s.method {
        SteadyMethod::Nullspace => solve_steady_nullspace(generator, s.tol, s.max_iter),
        SteadyMethod::Marching => solve_steady_marching(generator, s.march_dt, s.tol, s.max_steps),
    }
}

struct SteadyRun {
    grid: Grid,
    params: ModelParams,
    parts: GeneratorParts,
    steady: SteadyState,
}

fn steady_run(config: &RunConfig, params: &ModelParams) -> Result<SteadyRun> {
    let grid = config.grid_for(params)?;
    let parts = GeneratorParts::assemble(&grid, params)?;
    let steady = solve_configured(config, &parts.full)?;
    Ok(SteadyRun {
        grid,
        params: *params,
        parts,
        steady,
    })
}

fn steady_summary(config: &RunConfig, run: &SteadyRun) -> Result<(serde_json::Value, bool)> {
    let SteadyRun {
        grid,
        params,
        steady,
        ..
    } = run;
    let suite = estimate_suite(steady, grid, params)?;
    let deviation = g_marginal_deviation(&steady.density, params, grid);
    let ladder = dq_ladder(&steady.density, grid, params, &config.diagnostics.ladder())?;
    let passed = suite.passed() && deviation <= MARGINAL_TOL;
    let summary = json!({
        "command": "steady",
        "passed": passed,
        "grid": grid,
        "params": params,
        "method": steady.method,
        "iterations": steady.iterations,
        "residual": steady.residual,
        "mass": steady.density.mass(),
        "max_p": steady.density.max(),
        "min_p": steady.density.min(),
        "firing_flux": firing_flux(&steady.density, grid, params),
        "g_marginal_deviation": deviation,
        "g_marginal_threshold": MARGINAL_TOL,
        "estimates": suite,
        "ladder": ladder,
    });
    Ok((summary, passed))
}

fn write_steady_outputs(
    config: &RunConfig,
    run: &SteadyRun,
    out: &Path,
    summary: &serde_json::Value,
) -> Result<()> {
    let formats = &config.output;
    if formats.wants(OutputFormat::Snapshot) {
        write_snapshot(&out.join("steady.snap"), &run.steady.density, &run.params)?;
    }
    if formats.wants(OutputFormat::Csv) {
        let ladder = dq_ladder(
            &run.steady.density,
            &run.grid,
            &run.params,
            &config.diagnostics.ladder(),
        )?;
        fs::write(out.join("ladder.csv"), ladder_csv(&ladder))?;
    }
    if formats.wants(OutputFormat::Coo) {
        run.parts
            .full
            .write_coo(fs::File::create(out.join("generator.coo"))?)?;
    }
    if formats.wants(OutputFormat::Json) {
        fs::write(out.join("summary.json"), pretty(summary))?;
    }
    Ok(())
}

/// Stationary density, estimate battery and `g`-marginal check.
pub fn cmd_steady(config: &RunConfig, out: &Path) -> Result<ExitStatus> {
    let run = steady_run(config, &config.model)?;
    let (summary, passed) = steady_summary(config, &run)?;
    write_steady_outputs(config, &run, out, &summary)?;
    println!(
        "{} steady: residual={} g_marginal_deviation={} max_p={}",
        if passed { "PASS" } else { "FAIL" },
        format_value(run.steady.residual),
        format_value(summary["g_marginal_deviation"].as_f64().unwrap_or(f64::NAN)),
        format_value(run.steady.density.max()),
    );
    Ok(ExitStatus::of_flag(passed))
}

/// Largest single-step increase along a series, zero if non-increasing.
pub fn worst_increase(series: impl IntoIterator<Item = f64>) -> f64 {
    let mut worst: f64 = 0.0;
    let mut prev: Option<f64> = None;
    for x in series {
        if let Some(p) = prev {
            worst = worst.max(x - p);
        }
        prev = Some(x);
    }
    worst
}

/// Relaxation from the configured initial condition towards `p*`.
pub fn cmd_evolve(config: &RunConfig, out: &Path, seed: u64) -> Result<ExitStatus> {
    let initial_spec = config
        .initial
        .ok_or_else(|| Error::Config("evolve needs an [initial] block".into()))?;
    let evolve_config = config.evolve_config();
    evolve_config.validate()?;
    let run = steady_run(config, &config.model)?;
    let reference = run.steady.density.clone();
    let initial = initial_spec.build(&reference, &run.params, seed)?;
    let kinds = config.diagnostics.h_tags.clone();
    let ladder = config.diagnostics.ladder();
    let diag = Diagnostician::new(reference.clone(), run.params, kinds.clone(), ladder.clone())?;
    let outcome = evolve_run(&run.parts, initial, &evolve_config, &diag)?;

    let rises: Vec<(EntropyKind, f64)> = kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            (
                kind,
                worst_increase(outcome.series.iter().map(|r| r.entropy[k])),
            )
        })
        .collect();
    let monotone = rises.iter().all(|(_, r)| *r <= MONOTONE_SLACK);
    let distance = relative_entropy(&outcome.final_field, &reference, EntropyKind::Quadratic)?;
    let converged = distance < config.diagnostics.distance_threshold;
    let passed = monotone && converged;

    if config.output.wants(OutputFormat::Csv) {
        fs::write(
            out.join("evolve.csv"),
            diagnostics_csv(&kinds, ladder.len(), &outcome.series),
        )?;
    }
    if config.output.wants(OutputFormat::Snapshot) {
        write_snapshot(&out.join("final.snap"), &outcome.final_field, &run.params)?;
    }
    if config.output.wants(OutputFormat::Json) {
        let summary = json!({
            "command": "evolve",
            "passed": passed,
            "seed": seed,
            "initial": initial_spec,
            "evolve": evolve_config,
            "steps": evolve_config.steps(),
            "snapshots": outcome.series.len(),
            "entropy_worst_increase": rises.iter().map(|(k, r)| json!({"h": k, "value": r})).collect::<Vec<_>>(),
            "entropy_monotone": monotone,
            "final_weighted_l2_distance": distance,
            "distance_threshold": config.diagnostics.distance_threshold,
            "converged": converged,
            "ladder_q": ladder,
        });
        fs::write(out.join("summary.json"), pretty(&summary))?;
    }
    for (kind, rise) in &rises {
        println!(
            "{} entropy_monotone_{}: worst_increase={}",
            if *rise <= MONOTONE_SLACK {
                "PASS"
            } else {
                "FAIL"
            },
            kind.tag(),
            format_value(*rise)
        );
    }
    if converged {
        println!("PASS converged: distance={}", format_value(distance));
    } else {
        println!(
            "FAIL not converged: distance={} threshold={} at t_end={}",
            format_value(distance),
            format_value(config.diagnostics.distance_threshold),
            format_value(evolve_config.t_end)
        );
    }
    Ok(ExitStatus::of_flag(passed))
}

/// Envelope and entropy behaviour of random implicit Euler trajectories.
pub struct TrajectoryBattery {
    pub checks: Vec<Check>,
    pub csv: String,
}

pub fn trajectory_battery(
    full: &Generator,
    reference: &DensityField,
    config: &super::config::VerifyConfig,
    seed: u64,
) -> Result<TrajectoryBattery> {
    let stepper = ImplicitEuler::new(full, config.dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = EntropyKind::ALL;
    let mut csv = csv_line(
        [
            "trajectory",
            "c_plus_bound",
            "step",
            "time",
            "c_minus",
            "c_plus",
        ]
        .iter()
        .map(|s| s.to_string())
        .chain(kinds.iter().map(|k| format!("entropy_{}", k.tag()))),
    );
    let (mut overshoot, mut envelope_rise, mut entropy_rise) = (f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for t in 0..config.trajectories {
        let bound = rng.gen_range(config.c_plus_min..=config.c_plus_max);
        let mut field = random_envelope(reference, bound, &mut rng)?;
        let mut prev: Option<(f64, f64, [f64; 3])> = None;
        for step in 0..=config.steps {
            if step > 0 {
                field = stepper.step(&field)?;
            }
            let (lo, hi) = envelope_constants(&field, reference)?;
            let mut e = [0.0; 3];
            for (slot, kind) in e.iter_mut().zip(kinds) {
                *slot = relative_entropy(&field, reference, kind)?;
            }
            overshoot = overshoot.max(hi - bound);
            if let Some((plo, phi, pe)) = prev {
                envelope_rise = envelope_rise.max(hi - phi).max(plo - lo);
                for k in 0..3 {
                    entropy_rise = entropy_rise.max(e[k] - pe[k]);
                }
            }
            prev = Some((lo, hi, e));
            let mut cells = vec![
                t.to_string(),
                format_value(bound),
                step.to_string(),
                format_value(step as f64 * config.dt),
                format_value(lo),
                format_value(hi),
            ];
            cells.extend(e.iter().map(|&x| format_value(x)));
            csv.push_str(&csv_line(cells));
        }
    }
    Ok(TrajectoryBattery {
        checks: vec![
            Check::at_most("comparison_principle", overshoot.max(0.0), MONOTONE_SLACK),
            Check::at_most("envelope_monotone", envelope_rise, MONOTONE_SLACK),
            Check::at_most("entropy_monotone", entropy_rise, MONOTONE_SLACK),
        ],
        csv,
    })
}

/// Full property battery, one line per check.
pub fn cmd_verify(config: &RunConfig, out: &Path, seed: u64) -> Result<ExitStatus> {
    let params = config.model;
    let grid = config.build_grid()?;
    let parts = GeneratorParts::assemble(&grid, &params)?;
    let mut checks = structure_checks(&parts.full);
    checks.push(annihilation_check(&parts.fokker_planck)?);

    let s = &config.solver;
    let nullspace = solve_steady_nullspace(&parts.full, s.tol, s.max_iter)?;
    let marching = solve_steady_marching(&parts.full, s.march_dt, s.tol, s.max_steps)?;
    let reference = &nullspace.density;
    checks.push(Check::at_most("steady_residual", nullspace.residual, s.tol));
    checks.push(Check::at_most(
        "g_marginal_deviation",
        g_marginal_deviation(reference, &params, &grid),
        MARGINAL_TOL,
    ));
    checks.push(Check::at_most(
        "cross_method_agreement",
        reference.max_abs_diff(&marching.density),
        AGREEMENT_TOL,
    ));
    let suite = estimate_suite(&nullspace, &grid, &params)?;
    let f = &suite.functionals;
    checks.push(Check::at_most(
        "estimates_finite",
        if suite.all_finite { 0.0 } else { 1.0 },
        0.0,
    ));
    checks.push(Check::at_most("flux_bound_f2_le_k2k3", f.f2, f.k2 * f.k3));
    checks.push(Check::at_most("sup_bound_k2_le_k1", f.k2, f.k1 + f.top_row));

    let verify = config.verify_config();
    let battery = trajectory_battery(&parts.full, reference, &verify, seed)?;
    checks.extend(battery.checks);

    let ladder = dq_ladder(reference, &grid, &params, &config.diagnostics.ladder())?;
    let finite = ladder.iter().all(|r| r.root.is_finite());
    checks.push(Check::at_most(
        "dq_ladder_finite",
        if finite { 0.0 } else { 1.0 },
        0.0,
    ));
    let rise = ladder
        .windows(2)
        .map(|w| (w[1].root - w[0].root) / w[0].root)
        .fold(0.0f64, f64::max);
    checks.push(Check::at_most("dq_ladder_monotone", rise, LADDER_SLACK));

    let passed = checks.iter().all(|c| c.passed);
    for c in &checks {
        println!("{}", c.line());
    }
    let max_p = reference.max();
    for (k, r) in ladder.iter().enumerate() {
        println!(
            "INFO ladder k={k} q={} d_q_root={} ratio_to_max_p={}",
            format_value(r.q),
            format_value(r.root),
            format_value(r.root / max_p)
        );
    }

    let mut table = csv_line(["check", "passed", "value", "threshold"]);
    for c in &checks {
        table.push_str(&csv_line([
            c.name.clone(),
            c.passed.to_string(),
            format_value(c.value),
            format_value(c.threshold),
        ]));
    }
    if config.output.wants(OutputFormat::Csv) {
        fs::write(out.join("verify_checks.csv"), table)?;
        fs::write(out.join("verify_trajectories.csv"), battery.csv)?;
        fs::write(out.join("ladder.csv"), ladder_csv(&ladder))?;
    }
    if config.output.wants(OutputFormat::Json) {
        let summary = json!({
            "command": "verify",
            "passed": passed,
            "seed": seed,
            "grid": grid,
            "params": params,
            "checks": checks,
            "failures": checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect::<Vec<_>>(),
            "ladder": ladder,
            "max_p": max_p,
        });
        fs::write(out.join("summary.json"), pretty(&summary))?;
    }
    Ok(ExitStatus::of_flag(passed))
}

/// Steady solves across one parameter, one subdirectory per value.
pub fn cmd_sweep(config: &RunConfig, out: &Path) -> Result<ExitStatus> {
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("sweep needs a [sweep] block".into()))?;
    let name = sweep.parameter.name();
    let mut table = csv_line([
        "parameter",
        "value",
        "status",
        "max_p",
        "firing_flux",
        "k1",
        "k2",
        "k3",
        "f2",
        "iterations",
    ]);
    let mut worst = ExitStatus::Pass;
    let mut rows = Vec::new();
    for (index, &value) in sweep.values.iter().enumerate() {
        let params = sweep.parameter.apply(&config.model, value);
        let dir = out.join(format!("{name}_{index}"));
        let attempt = fs::create_dir_all(&dir).map_err(Error::from).and_then(|_| {
            let run = steady_run(config, &params)?;
            let (summary, passed) = steady_summary(config, &run)?;
            write_steady_outputs(config, &run, &dir, &summary)?;
            Ok((run, passed))
        });
        let (status, cells) = match attempt {
            Ok((run, passed)) => {
                let f = estimate_suite(&run.steady, &run.grid, &run.params)?.functionals;
                let status = ExitStatus::of_flag(passed);
                let label = if passed { "pass" } else { "property-failure" };
                let numbers = [
                    run.steady.density.max(),
                    firing_flux(&run.steady.density, &run.grid, &run.params),
                    f.k1,
                    f.k2,
                    f.k3,
                    f.f2,
                ];
                let mut cells = vec![label.to_string()];
                cells.extend(numbers.iter().map(|&x| format_value(x)));
                cells.push(run.steady.iterations.to_string());
                (status, cells)
            }
            Err(e) => {
                eprintln!("sweep {name}={value}: {e}");
                let mut cells = vec![
                    if matches!(ExitStatus::of_error(&e), ExitStatus::ConfigError) {
                        "config-error".to_string()
                    } else {
                        "solver-failure".to_string()
                    },
                ];
                cells.extend(std::iter::repeat_n("nan".to_string(), 7));
                (ExitStatus::of_error(&e), cells)
            }
        };
        worst = worst.max(status);
        let mut line = vec![name.to_string(), format_value(value)];
        line.extend(cells.clone());
        println!("{}", line.join(" "));
        table.push_str(&csv_line(&line));
        rows.push(json!({"value": value, "status": cells[0], "max_p": cells[1]}));
    }
    if config.output.wants(OutputFormat::Csv) {
        fs::write(out.join("sweep.csv"), table)?;
    }
    if config.output.wants(OutputFormat::Json) {
        let summary = json!({
            "command": "sweep",
            "parameter": name,
            "exit_code": worst.code(),
            "rows": rows,
        });
        fs::write(out.join("summary.json"), pretty(&summary))?;
    }
    Ok(worst)
}
