//! `shell-ld` command-line driver.
//!
//! Every subcommand reads a configuration (or the built-in `[model] N = 8`),
//! writes its tables to `--out`, and records them in `manifest.json`. One
//! NDJSON summary line goes to stdout; errors go to stderr as NDJSON.
//!
//! Exit codes: 0 success, 1 invariant failure or runtime error, 2 configuration
//! or usage error.

pub mod config;
pub mod export;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use shell_ld::action::sphere_initial_control;
use shell_ld::experiments::noiseless_terminal;
use shell_ld::rng::member_stream;
use shell_ld::{
    check_noise_hypotheses, energy_budget, estimate_operator_constants, identity_suite,
    integrate_controlled_sde, integrate_sde, integrate_skeleton, ldp_check, minimize_action,
    rate_function, verify_energy_estimates, weak_convergence_study, ActionProblem, ControlPath,
    Estimator, IdentitySettings, Model, SphereEvent, Target, Trajectory,
};

use crate::config::{ConfigError, RunConfig};
use crate::export::{cells_table, encode_trajectory, json_object, Cell, Format, Table};
use crate::manifest::{sha256_hex, unix_ms, OutputEntry, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Configuration used when `--config` is absent.
pub const DEFAULT_CONFIG: &str = "[model]\nN = 8\n";

#[derive(Debug, Parser)]
#[command(
    name = "shell-ld",
    version,
    about = "Small-noise stochastic shell-model laboratory"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (`key = value` lines with `[section]` headers).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format (overrides `output.format`).
    #[arg(long, global = true, value_parser = ["ndjson", "csv", "binary"])]
    pub format: Option<String>,
    /// Worker threads for ensembles and rate sweeps; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
    /// `section.key=value` override; repeatable, applied in order.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// One sample path of the SDE (controlled when `control.kind` is set).
    Simulate,
    /// Controlled deterministic skeleton.
    Skeleton,
    /// Minimum-action control for the configured target.
    MinimizeAction,
    /// Rate function over `action.scales`.
    Rate,
    /// Ensemble check of the energy estimates.
    VerifyEnergy,
    /// Distance between controlled SDE and skeleton over `experiment.eps_list`.
    WeakConvergence,
    /// Naive and importance-sampled `-eps log P` against the minimum action.
    LdpCheck,
    /// Operator identities, interpolation inequality and monotonicity.
    CheckIdentities,
    /// Operator and noise constants.
    Constants,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Skeleton => "skeleton",
            Command::MinimizeAction => "minimize-action",
            Command::Rate => "rate",
            Command::VerifyEnergy => "verify-energy",
            Command::WeakConvergence => "weak-convergence",
            Command::LdpCheck => "ldp-check",
            Command::CheckIdentities => "check-identities",
            Command::Constants => "constants",
        }
    }
}

/// Result of a subcommand before anything is written.
struct Outcome {
    /// `(file stem, encoded bytes)`; the extension follows the format.
    artifacts: Vec<(String, Vec<u8>)>,
    summary: Vec<(&'static str, Cell)>,
    failed: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            artifacts: Vec::new(),
            summary: Vec::new(),
            failed: Vec::new(),
        }
    }
    fn table(&mut self, name: &str, t: &Table, f: Format) {
        self.artifacts.push((name.to_string(), t.encode(f)));
    }
    fn trajectory(&mut self, name: &str, t: &Trajectory<f64>, f: Format) {
        self.artifacts
            .push((name.to_string(), encode_trajectory(t, f)));
    }
    fn summarize(&mut self, key: &'static str, v: impl Into<Cell>) {
        self.summary.push((key, v.into()));
    }
    fn require(&mut self, name: &str, ok: bool) {
        if !ok {
            self.failed.push(name.to_string());
        }
    }
}

/// Parses `args` (including the program name) and runs, writing the summary
/// to `stdout` and errors to `stderr`. Returns the exit code.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let msg = e.render().to_string();
            emit_error(
                stderr,
                &[("error", "usage".into()), ("message", msg.trim().into())],
            );
            return EXIT_CONFIG;
        }
    };
    match execute(&cli, stdout) {
        Ok(code) => code,
        Err(e) => report_error(&e, stderr),
    }
}

pub fn run() -> i32 {
    run_with(
        std::env::args_os(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    )
}

fn emit_error(stderr: &mut dyn Write, fields: &[(&str, Cell)]) {
    let _ = writeln!(
        stderr,
        "{}",
        json_object(fields.iter().map(|(k, v)| (*k, v)))
    );
}

fn report_error(e: &anyhow::Error, stderr: &mut dyn Write) -> i32 {
    if let Some(c) = e.downcast_ref::<ConfigError>() {
        emit_error(
            stderr,
            &[
                ("error", "config".into()),
                ("message", c.message.clone().into()),
                ("origin", c.origin.clone().into()),
                ("line", c.line.into()),
            ],
        );
        return EXIT_CONFIG;
    }
    if let Some(core) = e.downcast_ref::<shell_ld::Error>() {
        use shell_ld::Error as E;
        let message: Cell = format!("{e:#}").into();
        return match core {
            E::EpsilonThreshold {
                bound,
                epsilon,
                threshold,
            } => {
                emit_error(
                    stderr,
                    &[
                        ("error", "config".into()),
                        ("message", message),
                        ("bound", (*bound).into()),
                        ("epsilon", (*epsilon).into()),
                        ("threshold", (*threshold).into()),
                    ],
                );
                EXIT_CONFIG
            }
            E::InvalidParams(_)
            | E::ConservationViolated { .. }
            | E::DimensionMismatch { .. }
            | E::CutoffTooLarge { .. }
            | E::InvalidNorm(_)
            | E::VariantMismatch { .. }
            | E::InvalidCovariance(_)
            | E::InvalidArgument(_)
            | E::EnergyCapExceeded { .. } => {
                emit_error(stderr, &[("error", "config".into()), ("message", message)]);
                EXIT_CONFIG
            }
            E::Blowup { .. } | E::NonFinite(_) | E::AdjointNonFinite { .. } => {
                emit_error(stderr, &[("error", "runtime".into()), ("message", message)]);
                EXIT_INVARIANT
            }
        };
    }
    emit_error(
        stderr,
        &[("error", "io".into()), ("message", format!("{e:#}").into())],
    );
    EXIT_INVARIANT
}

/// Loads the configuration named by the flags, with flag overrides applied
/// last.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError {
            origin: p.display().to_string(),
            line: 0,
            message: format!("cannot read configuration: {e}"),
        })?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(f) = &cli.format {
        overrides.push(format!("output.format={f}"));
    }
    if let Some(o) = &cli.out {
        overrides.push(format!("output.dir={}", o.display()));
    }
    Ok(config::parse_config_with(&text, &overrides)?)
}

/// Canonical text without the output directory, which never affects results.
pub fn hashed_config_text(cfg: &RunConfig) -> String {
    let mut skip = false;
    cfg.to_canonical_string()
        .lines()
        .filter(|l| {
            if l.starts_with('[') {
                skip = *l == "[output]";
                return true;
            }
            !(skip && l.starts_with("dir ="))
        })
        .map(|l| format!("{l}\n"))
        .collect()
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<i32> {
    let started = unix_ms();
    let cfg = load_config(cli)?;
    let format = Format::parse(cfg.format()).expect("validated choice");
    let workers = usize::try_from(cli.workers).unwrap_or(usize::MAX);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;
    let outcome = pool.install(|| dispatch(cli.command, &cfg, format))?;

    let dir = PathBuf::from(cfg.text("output", "dir"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut outputs = Vec::new();
    for (stem, bytes) in &outcome.artifacts {
        let file = format!("{stem}.{}", format.extension());
        write_file(&dir.join(&file), bytes)?;
        outputs.push(OutputEntry::new(&file, bytes));
    }
    let status = if outcome.failed.is_empty() {
        "ok"
    } else {
        "invariant_failed"
    };
    let canonical = hashed_config_text(&cfg);
    let manifest = RunManifest {
        tool: "shell-ld",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cli.command.name().to_string(),
        config_hash: sha256_hex(canonical.as_bytes()),
        config: canonical,
        seed: cfg.seed(),
        workers,
        format: cfg.format().to_string(),
        status: status.to_string(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        outputs: outputs.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
    write_file(&dir.join("manifest.json"), format!("{json}\n").as_bytes())?;

    let mut summary: Vec<(&str, Cell)> = vec![
        ("subcommand", cli.command.name().into()),
        ("status", status.into()),
        ("failed", outcome.failed.join(",").into()),
        ("config_hash", manifest.config_hash.clone().into()),
        (
            "outputs",
            outputs
                .iter()
                .map(|o| o.file.as_str())
                .collect::<Vec<_>>()
                .join(",")
                .into(),
        ),
    ];
    summary.extend(outcome.summary);
    writeln!(
        stdout,
        "{}",
        json_object(summary.iter().map(|(k, v)| (*k, v)))
    )
    .context("writing summary")?;
    Ok(if outcome.failed.is_empty() {
        EXIT_OK
    } else {
        EXIT_INVARIANT
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn dispatch(cmd: Command, cfg: &RunConfig, f: Format) -> Result<Outcome> {
    match cmd {
        Command::Simulate => simulate(cfg, f),
        Command::Skeleton => skeleton(cfg, f),
        Command::MinimizeAction => minimize(cfg, f),
        Command::Rate => rate(cfg, f),
        Command::VerifyEnergy => verify_energy(cfg, f),
        Command::WeakConvergence => weak(cfg, f),
        Command::LdpCheck => ldp(cfg, f),
        Command::CheckIdentities => identities(cfg, f),
        Command::Constants => constants(cfg, f),
    }
}

fn budget_table(traj: &Trajectory<f64>, model: &Model<f64>) -> Result<Table> {
    let b = energy_budget(traj, model)?;
    let mut t = Table::new([
        "t",
        "energy",
        "dissipation",
        "forcing_work",
        "ito_correction",
        "martingale",
        "residual",
    ]);
    for j in 0..b.t.len() {
        t.push(
            [
                b.t[j],
                b.energy[j],
                b.dissipation[j],
                b.forcing_work[j],
                b.ito_correction[j],
                b.martingale[j],
                b.residual[j],
            ]
            .map(Cell::F)
            .to_vec(),
        );
    }
    Ok(t)
}

fn energy(u: &shell_ld::ShellState<f64>) -> f64 {
    u.iter().map(|z| z.norm_sqr()).sum()
}

fn simulate(cfg: &RunConfig, f: Format) -> Result<Outcome> {
    let model = cfg.model()?;
    let (u0, grid) = (cfg.initial_state()?, cfg.grid()?);
    let eps = cfg.float("experiment", "epsilon");
    let mut rng = member_stream(cfg.seed(), 0);
    let traj = if cfg.has_control() {
        integrate_controlled_sde(&model, eps, &cfg.control()?, &u0, &grid, &mut rng)?
    } else {
        integrate_sde(&model, eps, &u0, &grid, &mut rng)?
    };
    let mut o = Outcome::new();
    o.trajectory("trajectory", &traj, f);
    o.table("budget", &budget_table(&traj, &model)?, f);
    o.summarize("epsilon", eps);
    o.summarize("steps", grid.steps());
    o.summarize("terminal_energy", energy(traj.terminal()));
    o.summarize("girsanov_log_lr", traj.girsanov_log_lr);
    Ok(o)
}

fn skeleton(cfg: &RunConfig, f: Format) -> Result<Outcome> {
    let model = cfg.model()?;
    let (u0, grid) = (cfg.initial_state()?, cfg.grid()?);
    let traj = integrate_skeleton(&model, &cfg.control()?, &u0, &grid)?;
    let budget = budget_table(&traj, &model)?;
    let mut o = Outcome::new();
    o.trajectory("trajectory", &traj, f);
    o.table("budget", &budget, f);
    o.summarize("steps", grid.steps());
    o.summarize("terminal_energy", energy(traj.terminal()));
    Ok(o)
}

fn action_problem(cfg: &RunConfig, target: Target<f64>) -> Result<ActionProblem<f64>> {
    let mut p = ActionProblem::new(cfg.model()?, cfg.initial_state()?, cfg.grid()?, target)?;
    p.penalty = cfg.float("action", "penalty");
    p.penalty_growth = cfg.float("action", "penalty_growth");
    p.penalty_stages = cfg.usize("action", "penalty_stages");
    p.grad_tol = cfg.float("action", "grad_tol");
    p.step_tol = cfg.float("action", "step_tol");
    p.max_iters = cfg.usize("action", "max_iters");
    p.memory = cfg.usize("action", "memory");
    p.validate()?;
    Ok(p)
}

fn configured_target(cfg: &RunConfig) -> Result<Target<f64>> {
    Ok(match cfg.point_target()? {
        Some(phi) => Target::Point(phi),
        None => Target::Sphere {
            center: noiseless_terminal(&cfg.ensemble()?)?,
            radius: cfg.float("action", "radius"),
        },
    })
}

fn minimize(cfg: &RunConfig, f: Format) -> Result<Outcome> {
    let prob = action_problem(cfg, configured_target(cfg)?)?;
    let init = match prob.target {
        Target::Sphere { .. } => sphere_initial_control(&prob),
        Target::Point(_) => ControlPath::zeros(prob.grid, prob.model.num_shells()),
    };
    let (r, trace) = minimize_action(&prob, &init)?;
    let mut o = Outcome::new();
    let result = Table::record(vec![
        ("action_value", r.action_value.into()),
        ("rate", r.rate.into()),
        ("energy", r.energy.into()),
        ("terminal_gap", r.terminal_gap.into()),
        ("iterations", r.iterations.into()),
        ("converged", r.converged.into()),
        ("unreachable", r.unreachable.into()),
        ("final_penalty", r.final_penalty.into()),
        ("grad_norm", r.grad_norm.into()),
    ]);
    let mut tr = Table::new([
        "stage",
        "iteration",
        "penalty",
        "objective",
        "action",
        "gap",
        "step",
        "grad_norm",
    ]);
    for row in &trace {
        tr.push(vec![
            row.stage.into(),
            row.iteration.into(),
            row.penalty.into(),
            row.objective.into(),
            row.action.into(),
            row.gap.into(),
            row.step.into(),
            row.grad_norm.into(),
        ]);
    }
    o.table("result", &result, f);
    o.table("trace", &tr, f);
    o.table("control", &cells_table(&prob.grid, r.v_star.cells()), f);
    if r.action_value.is_finite() {
        let path = integrate_skeleton(&prob.model, &r.v_star, &prob.u0, &prob.grid)?;
        o.trajectory("optimal_path", &path, f);
    }
    o.summarize("action_value", r.action_value);
    o.summarize("rate", r.rate);
    o.summarize("terminal_gap", r.terminal_gap);
    o.summarize("converged", r.converged);
    o.summarize("unreachable", r.unreachable);
    o.require("converged", r.converged || r.unreachable);
    Ok(o)
}

fn rate(cfg: &RunConfig, f: Format) -> Result<Outcome> {
    let base = configured_target(cfg)?;
    let scales = cfg.list("action", "scales");
    let targets: Vec<Target<f64>> = scales
        .iter()
        .map(|&s| match &base {
            Target::Point(phi) => Target::Point(phi.scale(s)),
            Target::Sphere { center, radius } => Target::Sphere {
                center: center.clone(),
                radius: radius * s,
            },
        })
        .collect();
    let template = action_problem(cfg, base)?;
    let rows = rate_function(&targets, &template)?;
    let mut t = Table::new(["scale", "action_value", "rate", "terminal_gap", "converged"]);
    let mut o = Outcome::new();
    for (s, r) in scales.iter().zip(&rows) {
        t.push(vec![
            (*s).into(),
            r.action_value.into(),
            r.rate.into(),
            r.terminal_gap.into(),
            r.converged.into(),
        ]);
        o.require(
            &format!("converged@{s}"),
            r.converged || r.action_value.is_infinite(),
        );
    }
    o.table("rate", &t, f);
    o.summarize("targets", rows.len());
    o.summarize("all_converged", rows.iter().all(|r| r.converged));
    Ok(o)
}

fn verify_energy(cfg: &RunConfig, f: Format) -> Result<Outcome> {
    let spec = cfg.ensemble()?;
    let r = verify_energy_estimates(&spec, cfg.float("experiment", "delta_weight"))?;
    let mut t = Table::new(["name", "lhs", "rhs", "margin", "holds"]);
    for row in &r.rows {
        t.push(vec![
            row.name.into(),
            row.lhs.into(),
            row.rhs.into(),
            row.margin.into(),
            row.holds.into(),
        ]);
    }
    let n = &r.noise;
    let constants = Table::record(vec![
        ("epsilon", r.epsilon.into()),
        ("delta", r.delta.into()),
        ("paths", r.paths.into()),
        ("k", n.k.into()),
        ("l", n.l.into()),
        ("k1", n.k1.into()),
        ("k2", n.k2.into()),
        ("hypothesis_class", n.hypothesis_class.into()),
        ("r1", r.r1.into()),
        ("c2", r.c2.into()),
        ("c_nu", r.c_nu.into()),
        ("c_delta_t", r.c_delta_t.into()),
        ("m", r.m.into()),
        ("measured_m", r.measured_m.into()),
    ]);
    let mut o = Outcome::new();
    o.table("energy", &t, f);
    o.table("energy_constants", &constants, f);
    for row in &r.rows {
        o.require(row.name, row.holds);
    }
    o.summarize("paths", r.paths);
    o.summarize("epsilon", r.epsilon);
    o.summarize("all_hold", r.all_hold);
    Ok(o)
}

fn weak(cfg: &RunConfig, f: Format) -> Result<Outcome> {
    let spec = cfg.ensemble()?;
    let r = weak_convergence_study(&cfg.control()?, cfg.list("experiment", "eps_list"), &spec)?;
    let mut t = Table::new(["epsilon", "d", "std_err", "envelope"]);
    for row in &r.rows {
        t.push(vec![
            row.epsilon.into(),
            row.d.into(),
            row.std_err.into(),
            row.envelope.into(),
        ]);
    }
    let mut o = Outcome::new();
    o.table("weak", &t, f);
    o.summarize("c_calibrated", r.c_calibrated);
    o.summarize("loglog_slope", r.loglog_slope);
    o.summarize("strictly_decreasing", r.strictly_decreasing);
    o.summarize("within_envelope", r.within_envelope);
    o.require("strictly_decreasing", r.strictly_decreasing);
    o.require("within_envelope", r.within_envelope);
    Ok(o)
}

fn ldp(cfg: &RunConfig, f: Format) -> Result<Outcome> {
    let spec = cfg.ensemble()?;
    let event = SphereEvent {
        delta: cfg.float("experiment", "delta"),
    };
    let center = noiseless_terminal(&spec)?;
    let template = action_problem(
        cfg,
        Target::Sphere {
            center,
            radius: event.delta,
        },
    )?;
    let r = ldp_check(
        &event,
        cfg.list("experiment", "ldp_eps"),
        &spec,
        Some(&template),
    )?;
    let mut t = Table::new([
        "epsilon",
        "estimator",
        "hits",
        "p_hat",
        "ci_low",
        "ci_high",
        "log_p_hat",
        "neg_eps_log_p",
        "neg_eps_log_ci_low",
        "neg_eps_log_ci_high",
        "i_ref",
        "std_err",
        "flagged",
    ]);
    for row in &r.rows {
        let est = if row.estimator == Estimator::Naive {
            "naive"
        } else {
            "importance"
        };
        t.push(vec![
            row.epsilon.into(),
            est.into(),
            row.hits.into(),
            row.p_hat.into(),
            row.ci_low.into(),
            row.ci_high.into(),
            row.log_p_hat.into(),
            row.neg_eps_log_p.into(),
            row.neg_eps_log_ci_low.into(),
            row.neg_eps_log_ci_high.into(),
            row.i_ref.into(),
            row.std_err.into(),
            row.flagged.into(),
        ]);
    }
    let mut o = Outcome::new();
    o.table("ldp", &t, f);
    o.table("tilt", &cells_table(&spec.grid, r.tilt.cells()), f);
    o.summarize("i_ref", r.i_ref);
    o.summarize("rate_converged", r.rate_converged);
    o.summarize("importance_monotone", r.importance_monotone);
    o.summarize("importance_above_ref", r.importance_above_ref);
    o.summarize(
        "estimators_consistent",
        r.estimators_consistent
            .map_or("n/a", |b| if b { "true" } else { "false" }),
    );
    o.require("rate_converged", r.rate_converged);
    o.require(
        "estimators_consistent",
        r.estimators_consistent != Some(false),
    );
    // exact monotonicity and the lower bound are asserted for the Gaussian case
    if cfg.is_linear() && cfg.is_additive() {
        o.require("importance_monotone", r.importance_monotone);
        o.require("importance_above_ref", r.importance_above_ref);
    }
    Ok(o)
}

fn identities(cfg: &RunConfig, f: Format) -> Result<Outcome> {
    let settings = IdentitySettings {
        pair_samples: cfg.usize("experiment", "identity_pairs"),
        interpolation_samples: cfg.usize("experiment", "identity_states"),
        monotonicity_samples: cfg.usize("experiment", "monotonicity_samples"),
        seed: cfg.seed(),
    };
    let r = identity_suite(
        cfg.float("model", "k0"),
        cfg.float("model", "nu"),
        &settings,
    )?;
    let mut t = Table::new([
        "name",
        "num_shells",
        "samples",
        "worst",
        "tolerance",
        "violations",
        "passed",
        "diagnostic",
    ]);
    let mut o = Outcome::new();
    for c in &r.checks {
        t.push(vec![
            c.name.into(),
            c.num_shells.into(),
            c.samples.into(),
            c.worst.into(),
            c.tolerance.into(),
            c.violations.into(),
            c.passed.into(),
            c.diagnostic.into(),
        ]);
        if !c.diagnostic {
            o.require(&format!("{}@N={}", c.name, c.num_shells), c.passed);
        }
    }
    o.table("identities", &t, f);
    o.summarize("checks", r.checks.len());
    o.summarize("all_passed", r.all_passed);
    Ok(o)
}

fn constants(cfg: &RunConfig, f: Format) -> Result<Outcome> {
    let params = cfg.model_params()?;
    let samples = cfg.usize("experiment", "constants_samples");
    // operator constants and noise constants are independent sweeps
    let (ops, noise) = rayon::join(
        || estimate_operator_constants(&params, samples, cfg.seed()),
        || -> shell_ld::Result<_> {
            check_noise_hypotheses(
                &cfg.sigma()?,
                &cfg.covariance()?,
                &params,
                samples,
                cfg.seed(),
            )
        },
    );
    let (ops, noise) = (ops?, noise?);
    let g = &noise.epsilon_guards;
    let t = Table::record(vec![
        ("num_shells", ops.num_shells.into()),
        ("c1", ops.c1.into()),
        ("c2", ops.c2.into()),
        ("c3", ops.c3.into()),
        ("c4", ops.c4.into()),
        ("monotonicity_margin", ops.monotonicity_margin.into()),
        (
            "monotonicity_violations",
            ops.monotonicity_violations.into(),
        ),
        ("samples", ops.samples.into()),
        ("k", noise.k.into()),
        ("l", noise.l.into()),
        ("k1", noise.k1.into()),
        ("k2", noise.k2.into()),
        ("sampled_k", noise.sampled_k.into()),
        ("sampled_l", noise.sampled_l.into()),
        ("hypothesis_class", noise.hypothesis_class.into()),
        ("eps_nu_over_2k", g.nu_over_2k.into()),
        (
            "eps_nu_over_2k_and_half_inv_k_sq",
            g.nu_over_2k_and_half_inv_k_sq.into(),
        ),
        ("eps_nu_over_4k", g.nu_over_4k.into()),
        ("eps_three_nu_over_2k", g.three_nu_over_2k.into()),
        ("eps_nu_over_3k", g.nu_over_3k.into()),
        ("eps_nu_over_2l", g.nu_over_2l.into()),
        ("eps_nu_over_l", g.nu_over_l.into()),
    ]);
    let mut o = Outcome::new();
    o.table("constants", &t, f);
    o.summarize("c1", ops.c1);
    o.summarize("c2", ops.c2);
    o.summarize("c3", ops.c3);
    o.summarize("c4", ops.c4);
    o.summarize("monotonicity_violations", ops.monotonicity_violations);
    o.require("local_monotonicity", ops.monotonicity_violations == 0);
    o.require(
        "sampled_k_bounded",
        noise.sampled_k <= noise.k * (1.0 + 1e-12),
    );
    o.require(
        "sampled_l_bounded",
        noise.sampled_l <= noise.l * (1.0 + 1e-12),
    );
    Ok(o)
}
