//! Command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use thiserror::Error;

use crate::chetaev::{simulate_constrained, verify_riemannian_form};
use crate::config::{ConfigError, Mode, RawConfig, RunConfig, Value};
use crate::constraint::{
    coupling_matrix, evaluate, fd_jacobians, project_onto_manifold, CONDITION_LIMIT,
};
use crate::control::{stabilizing_control, GainMatrix};
use crate::error::Error;
use crate::integrator::{decay_rate, default_decay_window, simulate, simulate_drift, TrajectoryRecord};
use crate::mechanics::{christoffel, energy};
use crate::scenarios::Scenario;
use crate::trajectory_csv::{read_trajectory, write_trajectory, CsvError};

#[derive(Debug, Parser)]
#[command(name = "virtcon", version, about = "Simulate stabilized virtual nonholonomic constraints")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Closed loop under the stabilizing control.
    Run(RunArgs),
    /// Uncontrolled motion (u = 0).
    Drift(RunArgs),
    /// Physically constrained motion; the initial velocity is projected onto M.
    Chetaev(RunArgs),
    /// Print Jacobian and transversality diagnostics at the initial state.
    Check(RunArgs),
    /// Fit exponential decay rates to a trajectory CSV.
    Decay(DecayArgs),
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset name (flocking, usv-northeast, usv-anticyclone).
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub dt: Option<f64>,
    #[arg(long = "t-final", allow_hyphen_values = true)]
    pub t_final: Option<f64>,
    /// Diagonal gains, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub gains: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a gnuplot script for the constraint values.
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Args)]
pub struct DecayArgs {
    /// Trajectory CSV written by run, drift or chetaev.
    #[arg(long)]
    pub input: PathBuf,
    /// Fit window start (default 0 s after the first sample).
    #[arg(long, requires = "t1")]
    pub t0: Option<f64>,
    /// Fit window end (default min(10 s, run length)).
    #[arg(long, requires = "t0")]
    pub t1: Option<f64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] Error),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 parse, 3 validation, 4 transversality, 5 blowup, 6 other numerical, 7 io.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Parse { .. }) | CliError::Csv(_) => 2,
            CliError::Config(ConfigError::Validation { .. }) => 3,
            CliError::Model(e) => match e {
                Error::InvalidParameter { .. } | Error::DimensionMismatch { .. } => 3,
                Error::Transversality { .. } => 4,
                Error::Blowup { .. } => 5,
                _ => 6,
            },
            CliError::Io { .. } => 7,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "parse",
            3 => "validation",
            4 => "transversality",
            5 => "blowup",
            6 => "numerical",
            _ => "io",
        }
    }

    /// Single machine-readable line for stderr.
    pub fn report_line(&self) -> String {
        let message = self.to_string().replace('\n', " ");
        format!("error kind={} code={} message={message:?}", self.kind(), self.exit_code())
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Merges a config file with command-line overrides.
pub fn resolve_config(args: &RunArgs, mode: Mode) -> Result<RunConfig, CliError> {
    let mut raw = match &args.config {
        Some(path) => RawConfig::parse(&fs::read_to_string(path).map_err(io_error(path))?)?,
        None => RawConfig::default(),
    };
    if let Some(s) = &args.scenario {
        raw.set(None, "scenario", Value::Word(s.clone()));
    }
    if let Some(dt) = args.dt {
        raw.set(None, "dt", Value::Number(dt));
    }
    if let Some(t) = args.t_final {
        raw.set(None, "t_final", Value::Number(t));
    }
    if let Some(g) = &args.gains {
        raw.set(None, "gains", Value::List(g.iter().map(|&k| Value::Number(k)).collect()));
    }
    if let Some(out) = &args.out {
        raw.set(None, "out", Value::Word(out.to_string_lossy().into_owned()));
    }
    raw.set(None, "mode", Value::Word(mode.name().into()));
    Ok(raw.resolve()?)
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn decay_lines(out: &mut String, tr: &TrajectoryRecord, window: Option<(f64, f64)>) {
    for b in 0..tr.constraint_count() {
        let rate = window
            .map_or_else(|| default_decay_window(tr, b), Ok)
            .and_then(|w| decay_rate(tr, b, w));
        match rate {
            Ok(r) => writeln!(out, "decay_rate_{b} = {r:.12}"),
            Err(e) => writeln!(out, "decay_rate_{b} = n/a ({e})"),
        }
        .expect("writing to a String");
    }
}

fn trajectory_summary(
    cfg: &RunConfig,
    sc: &Scenario,
    tr: &TrajectoryRecord,
) -> Result<String, CliError> {
    let mut out = String::new();
    let (sys, c) = (sc.system.as_ref(), sc.constraint.as_ref());
    let (mut cmin, mut cmax) = (f64::INFINITY, 0.0f64);
    for s in &tr.states {
        match coupling_matrix(c, sys, s) {
            Ok(cm) => {
                cmin = cmin.min(cm.condition);
                cmax = cmax.max(cm.condition);
            }
            Err(Error::Transversality { condition, .. }) => cmax = cmax.max(condition),
            Err(e) => return Err(e.into()),
        }
    }
    writeln!(out, "scenario = {}", cfg.scenario).ok();
    writeln!(out, "mode = {}", cfg.mode.name()).ok();
    writeln!(out, "dt = {}", cfg.dt).ok();
    writeln!(out, "t_final = {}", cfg.t_final).ok();
    writeln!(out, "samples = {}", tr.len()).ok();
    decay_lines(&mut out, tr, None);
    writeln!(out, "max_abs_phi = {:.6e}", tr.max_abs_constraint()).ok();
    writeln!(out, "final_abs_phi = {:.6e}", tr.constraint_values.last().map_or(0.0, |p| p.amax())).ok();
    writeln!(out, "initial_energy = {:.12e}", tr.energies[0]).ok();
    writeln!(out, "final_energy = {:.12e}", tr.energies[tr.len() - 1]).ok();
    writeln!(out, "coupling_condition_min = {cmin:.6e}").ok();
    writeln!(out, "coupling_condition_max = {cmax:.6e}").ok();
    Ok(out)
}

fn gnuplot_script(tr: &TrajectoryRecord, dof: usize) -> String {
    let first = 2 + 2 * dof;
    let plots: Vec<String> = (0..tr.constraint_count())
        .map(|b| format!("'trajectory.csv' using 1:(abs(${})) with lines title 'phi{b}'", first + b))
        .collect();
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset logscale y\nset xlabel 't'\nset ylabel '|phi|'\nplot {}\n",
        plots.join(", \\\n     ")
    )
}

fn write_outputs(
    cfg: &RunConfig,
    csv: &str,
    summary: &str,
    gnuplot: Option<String>,
) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out).map_err(io_error(&cfg.out))?;
    let mut files = vec![("trajectory.csv", csv.to_string()), ("summary.txt", summary.to_string())];
    if let Some(g) = gnuplot {
        files.push(("plot.gp", g));
    }
    for (name, body) in files {
        let path = cfg.out.join(name);
        fs::write(&path, body).map_err(io_error(&path))?;
    }
    Ok(())
}

fn simulate_mode(args: &RunArgs, mode: Mode) -> Result<String, CliError> {
    let cfg = resolve_config(args, mode)?;
    let mut sc = cfg.build()?;
    let (sys, c) = (sc.system.clone(), sc.constraint.clone());
    let gains = GainMatrix::new(cfg.gains.clone())?;
    let (tr, csv, extra) = match mode {
        Mode::Run => {
            let tr = simulate(sys.as_ref(), c.as_ref(), &gains, &sc.initial, cfg.dt, cfg.t_final)?;
            let csv = write_trajectory(&tr, None);
            (tr, csv, String::new())
        }
        Mode::Drift => {
            let tr = simulate_drift(sys.as_ref(), c.as_ref(), &sc.initial, cfg.dt, cfg.t_final)?;
            let csv = write_trajectory(&tr, None);
            (tr, csv, String::new())
        }
        _ => {
            sc.initial.v = project_onto_manifold(c.as_ref(), &sc.initial.q, &sc.initial.v)?;
            let sol = simulate_constrained(sys.as_ref(), c.as_ref(), &sc.initial, cfg.dt, cfg.t_final)?;
            let mut residual = 0.0f64;
            for s in &sol.trajectory.states {
                residual = residual.max(verify_riemannian_form(sys.as_ref(), c.as_ref(), s)?);
            }
            let lambda_max = sol.multipliers.iter().map(|l| l.amax()).fold(0.0, f64::max);
            let extra = format!(
                "max_abs_lambda = {lambda_max:.6e}\nmax_riemannian_residual = {residual:.6e}\n"
            );
            let csv = write_trajectory(&sol.trajectory, Some(&sol.multipliers));
            (sol.trajectory, csv, extra)
        }
    };
    let summary = trajectory_summary(&cfg, &sc, &tr)? + &extra;
    let gnuplot = args.gnuplot.then(|| gnuplot_script(&tr, sys.dof()));
    write_outputs(&cfg, &csv, &summary, gnuplot)?;
    Ok(summary)
}

fn check_mode(args: &RunArgs) -> Result<String, CliError> {
    let cfg = resolve_config(args, Mode::Check)?;
    let sc = cfg.build()?;
    let (sys, c, s) = (sc.system.as_ref(), sc.constraint.as_ref(), &sc.initial);
    let mut out = String::new();
    let (fd_q, fd_v) = fd_jacobians(c, s);
    let err_q = (c.jac_q(&s.q, &s.v) - fd_q).amax();
    let err_v = (c.jac_v(&s.q, &s.v) - fd_v).amax();
    writeln!(out, "scenario = {}", cfg.scenario).ok();
    writeln!(out, "dof = {}", sys.dof()).ok();
    writeln!(out, "inputs = {}", sys.inputs()).ok();
    writeln!(out, "constraints = {}", c.count()).ok();
    writeln!(out, "phi = {}", fmt_vec(&evaluate(c, s)?)).ok();
    writeln!(out, "energy = {:.12e}", energy(sys, s)).ok();
    writeln!(out, "christoffel_zero = {}", christoffel(sys, &s.q)?.is_zero()).ok();
    writeln!(out, "jacobian_q_fd_error = {err_q:.3e}").ok();
    writeln!(out, "jacobian_v_fd_error = {err_v:.3e}").ok();
    let coupling = coupling_matrix(c, sys, s)?;
    for (a, row) in coupling.forward.row_iter().enumerate() {
        writeln!(out, "coupling_row_{a} = {}", fmt_vec(&row.transpose())).ok();
    }
    writeln!(out, "coupling_condition = {:.6e}", coupling.condition).ok();
    writeln!(out, "condition_limit = {CONDITION_LIMIT:.1e}").ok();
    writeln!(out, "transversal = true").ok();
    let gains = GainMatrix::new(cfg.gains.clone())?;
    writeln!(out, "u_star = {}", fmt_vec(&stabilizing_control(sys, c, &gains, s)?.u)).ok();
    Ok(out)
}

fn decay_mode(args: &DecayArgs) -> Result<String, CliError> {
    let text = fs::read_to_string(&args.input).map_err(io_error(&args.input))?;
    let loaded = read_trajectory(&text)?;
    let window = args.t0.zip(args.t1);
    let mut out = String::new();
    writeln!(out, "samples = {}", loaded.record.len()).ok();
    decay_lines(&mut out, &loaded.record, window);
    Ok(out)
}

/// Executes a parsed command line, returning the text for stdout.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.verb {
        Verb::Run(a) => simulate_mode(a, Mode::Run),
        Verb::Drift(a) => simulate_mode(a, Mode::Drift),
        Verb::Chetaev(a) => simulate_mode(a, Mode::Chetaev),
        Verb::Check(a) => check_mode(a),
        Verb::Decay(a) => decay_mode(a),
    }
}
