//! Command-line front end.
//!
//! Exit codes: 0 success, 2 validation or failed check, 3 numerical abort, 4 I/O.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::config::{load_config, ConfigError, ScenarioConfig};
use crate::controller::Phase;
use crate::design::{implied_c_star, synthesize, verify_design, DesignReport};
use crate::gain::PrescribedGain;
use crate::objective::{optimum_oracle, ObjectiveError};
use crate::sim::diagnostics::gamma_s_coefficient;
use crate::sim::trace::{read_metrics_csv, read_trace_csv, TraceError};
use crate::sim::{RunSummary, SimError, Simulator, MAPPING_SLACK};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Parser)]
#[command(name = "dptco", version, about = "Prescribed-time distributed optimization for networked manipulators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write trace.csv, metrics.csv and summary.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the outer step.
        #[arg(long)]
        step: Option<f64>,
        /// Override the end time.
        #[arg(long = "t-end")]
        t_end: Option<f64>,
    },
    /// Print derived constants, design-criteria margins and synthesized gains.
    Design {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the optimum, the gradients there and the optimality residual.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-validate a recorded run offline.
    Check {
        #[arg(long)]
        config: PathBuf,
        /// Output directory of `simulate`, or its trace.csv.
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Io { .. }) => EXIT_IO,
            CliError::Config(_) => EXIT_VALIDATION,
            CliError::Sim(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Sim(SimError::Objective(ObjectiveError::NoConvergence { .. })) => EXIT_NUMERICAL,
            CliError::Sim(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
            CliError::Trace(_) | CliError::CheckFailed(_) => EXIT_VALIDATION,
        }
    }
}

fn io_error(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Io(source) => CliError::Io {
                context: "reading trace".into(),
                source,
            },
            other => CliError::Trace(other.to_string()),
        }
    }
}

/// One pass/fail threshold reported in `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdCheck {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

fn at_most(name: &'static str, value: f64, limit: f64) -> ThresholdCheck {
    ThresholdCheck {
        name,
        value,
        limit,
        pass: value <= limit,
    }
}

fn below(name: &'static str, value: f64, limit: f64) -> ThresholdCheck {
    ThresholdCheck {
        name,
        value,
        limit,
        pass: value < limit,
    }
}

/// Convergence, conservation, mapping and phase-switch thresholds of a completed run.
pub fn threshold_checks(s: &RunSummary) -> Vec<ThresholdCheck> {
    let mut checks = vec![
        at_most("max_conservation", s.max_conservation, 1e-8),
        at_most("mapping_violations", s.mapping.violations as f64, 0.0),
    ];
    // Runs that stop before the deadline have no last active step.
    if !s.grad_norm_last_active.is_nan() {
        checks.extend([
            below("grad_norm_last_active", s.grad_norm_last_active, 1e-2),
            at_most("torque_last_active", s.torque_last_active, 1e-1),
        ]);
    }
    if !s.grad_norm_max_frozen.is_nan() {
        checks.extend([
            below("grad_norm_max_frozen", s.grad_norm_max_frozen, 1e-2),
            below("final_output_error", s.final_output_error, 1e-2),
            at_most("max_torque_frozen", s.max_torque_frozen, 0.0),
            at_most("max_qdot_frozen", s.max_qdot_frozen, 1e-3),
            at_most("frozen_output_drift", s.frozen_output_drift, 1e-6),
        ]);
    }
    if let Some(l) = &s.lyapunov {
        checks.push(ThresholdCheck {
            name: "lyapunov_pass_fraction",
            value: l.fraction,
            limit: 0.99,
            pass: l.fraction >= 0.99,
        });
    }
    checks
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryFile<'a> {
    pub summary: &'a RunSummary,
    pub thresholds: Vec<ThresholdCheck>,
    pub all_thresholds_pass: bool,
}

fn persist(dir: &Path, name: &str, tmp: NamedTempFile) -> Result<(), CliError> {
    tmp.persist(dir.join(name))
        .map_err(|e| CliError::Io {
            context: format!("writing {}", dir.join(name).display()),
            source: e.error,
        })
        .map(|_| ())
}

fn staged<F>(dir: &Path, name: &str, write: F) -> Result<NamedTempFile, CliError>
where
    F: FnOnce(&mut io::BufWriter<&File>) -> io::Result<()>,
{
    let context = format!("writing {}", dir.join(name).display());
    let tmp = NamedTempFile::new_in(dir).map_err(io_error(context.clone()))?;
    {
        let mut w = io::BufWriter::new(tmp.as_file());
        write(&mut w).map_err(io_error(context.clone()))?;
        w.flush().map_err(io_error(context))?;
    }
    Ok(tmp)
}

pub struct SimulateOutcome {
    pub summary: RunSummary,
    pub thresholds: Vec<ThresholdCheck>,
    pub warnings: Vec<String>,
}

/// Runs a scenario and writes its three artifacts into `out_dir`.
///
/// The files are staged as temporaries in `out_dir` and renamed only after
/// all three were written. If a rename fails, files already renamed are removed.
pub fn cmd_simulate(config: &ScenarioConfig, out_dir: &Path) -> Result<SimulateOutcome, CliError> {
    let built = config.build()?;
    let sim = Simulator::new(built.scenario)?;
    let run = sim.run()?;
    let thresholds = threshold_checks(&run.summary);
    let summary_file = SummaryFile {
        summary: &run.summary,
        all_thresholds_pass: thresholds.iter().all(|t| t.pass),
        thresholds: thresholds.clone(),
    };

    fs::create_dir_all(out_dir).map_err(io_error(format!("creating {}", out_dir.display())))?;
    let trace = staged(out_dir, TRACE_FILE, |w| run.trace.write_trace_csv(w))?;
    let metrics = staged(out_dir, METRICS_FILE, |w| run.trace.write_metrics_csv(w))?;
    let summary = staged(out_dir, SUMMARY_FILE, |w| {
        serde_json::to_writer_pretty(&mut *w, &summary_file)?;
        writeln!(w)
    })?;
    let mut written = Vec::new();
    for (name, tmp) in [(TRACE_FILE, trace), (METRICS_FILE, metrics), (SUMMARY_FILE, summary)] {
        if let Err(e) = persist(out_dir, name, tmp) {
            for done in written {
                let _ = fs::remove_file(out_dir.join(done));
            }
            return Err(e);
        }
        written.push(name);
    }
    Ok(SimulateOutcome {
        summary: run.summary,
        thresholds,
        warnings: built.warnings,
    })
}

/// Design report for the configured gains and for gains synthesized at the same `c*`.
#[derive(Debug, Clone, Serialize)]
pub struct DesignOutput {
    pub c_star: f64,
    pub c_star_source: &'static str,
    pub configured: DesignReport,
    pub synthesized: Option<(crate::controller::ControlGains, DesignReport)>,
    pub synthesis_error: Option<String>,
}

pub fn cmd_design(config: &ScenarioConfig) -> Result<DesignOutput, CliError> {
    let built = config.build()?;
    let nc = built.constants;
    let gains = &built.scenario.gains;
    let (c_star, c_star_source) = match config.control.c_star {
        Some(c) => (c, "config"),
        None => (implied_c_star(&nc, gains.c, gains.iota), "implied by c"),
    };
    let configured = verify_design(&nc, gains, c_star);
    let synth_c_star = if c_star > 0.0 { c_star } else { 1.0 };
    let synth_iota = if gains.iota > 2.0 { gains.iota } else { 2.5 };
    let (synthesized, synthesis_error) = match synthesize(&nc, synth_c_star, synth_iota, config.control.margin) {
        Ok(g) => {
            let report = verify_design(&nc, &g, synth_c_star);
            (Some((g, report)), None)
        }
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(DesignOutput {
        c_star,
        c_star_source,
        configured,
        synthesized,
        synthesis_error,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleOutput {
    pub z_star: [f64; 2],
    pub gradients: Vec<[f64; 2]>,
    pub residual: f64,
    pub method: crate::objective::OracleMethod,
}

pub fn cmd_oracle(config: &ScenarioConfig) -> Result<OracleOutput, CliError> {
    let objective = config.objective()?;
    let top = config.topology()?;
    let opt = optimum_oracle(&objective, &top).map_err(SimError::from)?;
    let gradients = objective
        .stacked_gradient_at(&opt.z_star)
        .iter()
        .map(|g| [g[0], g[1]])
        .collect();
    Ok(OracleOutput {
        z_star: [opt.z_star[0], opt.z_star[1]],
        gradients,
        residual: opt.residual,
        method: opt.method,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckItem {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub samples: usize,
    pub partial: bool,
    pub notes: Vec<String>,
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }
}

/// Offline re-validation of a recorded run against its configuration.
pub fn cmd_check(config: &ScenarioConfig, trace_path: &Path) -> Result<CheckReport, CliError> {
    let (trace_file, dir) = if trace_path.is_dir() {
        (trace_path.join(TRACE_FILE), trace_path.to_path_buf())
    } else {
        let dir = trace_path.parent().map(Path::to_path_buf).unwrap_or_default();
        (trace_path.to_path_buf(), dir)
    };
    let open = |p: &Path| {
        File::open(p)
            .map(BufReader::new)
            .map_err(io_error(format!("opening {}", p.display())))
    };
    let samples = read_trace_csv(open(&trace_file)?)?;
    let metrics_file = dir.join(METRICS_FILE);
    let metrics = if metrics_file.exists() {
        Some(read_metrics_csv(open(&metrics_file)?)?)
    } else {
        None
    };
    let built = config.build()?;
    let n = built.scenario.topology.node_count();
    let gain = built.scenario.gain;
    let iota = built.scenario.gains.iota;
    let gamma_s = gamma_s_coefficient(built.scenario.gains.k1_max(), gain.b());
    let abort = built.scenario.settings.abort_norm;
    let sim = Simulator::new(built.scenario)?;

    let mut items = Vec::new();
    let mut notes = Vec::new();
    if samples.is_empty() {
        return Err(CliError::Trace("no samples".into()));
    }
    if let Some(bad) = samples.iter().position(|s| s.agents.len() != n) {
        return Err(CliError::Trace(format!("sample {bad} does not list all {n} agents")));
    }

    let ordered = samples.windows(2).all(|w| w[1].t > w[0].t);
    let first_frozen = samples.iter().position(|s| s.phase == Phase::Frozen);
    let phases_ok = match first_frozen {
        Some(k) => samples[k..].iter().all(|s| s.phase == Phase::Frozen),
        None => true,
    };
    let deadline_ok = samples
        .iter()
        .all(|s| (s.phase == Phase::Active) == (s.t < gain.deadline()));
    items.push(CheckItem {
        name: "ordering",
        pass: ordered && phases_ok && deadline_ok,
        detail: format!(
            "times increasing: {ordered}, single switch: {phases_ok}, phases match deadline {}: {deadline_ok}",
            gain.deadline()
        ),
    });

    let finite = samples.iter().all(|s| {
        s.agents.iter().all(|a| {
            a.q.iter()
                .chain(a.qdot.iter())
                .chain(a.varpi.iter())
                .chain(a.v.iter())
                .chain(a.theta_hat.iter())
                .all(|x| x.is_finite() && x.abs() <= abort)
        }) && s.torques.iter().all(|t| t.iter().all(|x| x.is_finite()))
    });
    let stacked = |f: &dyn Fn(usize, usize) -> f64, s: usize| (0..n).map(|i| f(s, i)).sum::<f64>().sqrt();
    let max_qdot = (0..samples.len())
        .map(|s| stacked(&|s, i| samples[s].agents[i].qdot.norm_squared(), s))
        .fold(0.0, f64::max);
    let max_tau = (0..samples.len())
        .map(|s| stacked(&|s, i| samples[s].torques[i].norm_squared(), s))
        .fold(0.0, f64::max);
    let max_theta = (0..samples.len())
        .map(|s| stacked(&|s, i| samples[s].agents[i].theta_hat.norm_squared(), s))
        .fold(0.0, f64::max);
    items.push(CheckItem {
        name: "boundedness",
        pass: finite,
        detail: format!("max |qdot| = {max_qdot:e}, max |tau| = {max_tau:e}, max |theta_hat| = {max_theta:e}"),
    });

    let worst_conservation = samples
        .iter()
        .map(|s| s.agents.iter().map(|a| a.v).sum::<crate::objective::Point>().norm())
        .fold(0.0, f64::max);
    items.push(CheckItem {
        name: "conservation",
        pass: worst_conservation <= 1e-8,
        detail: format!("max |sum v| = {worst_conservation:e}"),
    });

    let mut sup_r: f64 = 0.0;
    let mut sup_s: f64 = 0.0;
    let mut violations = 0usize;
    let mut active = 0usize;
    for s in samples.iter().filter(|s| s.phase == Phase::Active) {
        let Ok(mu) = gain.eval_mu(s.t) else {
            violations += 1;
            continue;
        };
        active += 1;
        let errors = sim.errors(&s.agents);
        let mapped = sim.mapped(&errors, &s.agents, mu);
        sup_r = sup_r.max(mapped.er_norm());
        sup_s = sup_s.max(mapped.es_norm());
        let slack = 1.0 + MAPPING_SLACK;
        if errors.e_r_norm() > mu.powf(-iota) * sup_r * slack
            || errors.e_s_norm() > mu.powf(1.0 - iota) * gamma_s * sup_s * slack
        {
            violations += 1;
        }
    }
    items.push(CheckItem {
        name: "mapping_bounds",
        pass: violations == 0,
        detail: format!("{violations} violations over {active} active samples"),
    });

    match first_frozen {
        None => {
            notes.push("partial check: the trace ends before the deadline, no Frozen-phase assertions".into());
        }
        Some(k) => {
            let torque_zero = samples[k..].iter().all(|s| s.torques.iter().all(|t| t.norm() == 0.0));
            let last_active_torque = if k > 0 {
                stacked(&|s, i| samples[s].torques[i].norm_squared(), k - 1)
            } else {
                f64::NAN
            };
            let from = k.saturating_sub(1);
            let held = samples[from..].iter().all(|s| {
                s.agents.iter().zip(&samples[from].agents).all(|(a, b)| {
                    a.varpi == b.varpi && a.v == b.v && a.theta_hat == b.theta_hat
                })
            });
            items.push(CheckItem {
                name: "phase_switch",
                pass: torque_zero && held && last_active_torque <= 1e-1,
                detail: format!(
                    "torque zero after switch: {torque_zero}, optimizer and estimate held: {held}, |tau| at last active sample = {last_active_torque:e}"
                ),
            });
        }
    }

    if let Some(rows) = metrics {
        let consistent = rows.len() == samples.len()
            && rows.iter().zip(&samples).all(|(r, s)| r.t.to_bits() == s.t.to_bits());
        items.push(CheckItem {
            name: "metrics_alignment",
            pass: consistent,
            detail: format!("{} metric rows for {} samples", rows.len(), samples.len()),
        });
    } else {
        notes.push(format!("{} not found, metric alignment skipped", metrics_file.display()));
    }

    Ok(CheckReport {
        samples: samples.len(),
        partial: first_frozen.is_none(),
        notes,
        items,
    })
}

fn apply_overrides(config: &mut ScenarioConfig, step: Option<f64>, t_end: Option<f64>) {
    if let Some(h) = step {
        config.sim.step = h;
    }
    if let Some(t) = t_end {
        config.sim.t_end = t;
    }
}

fn report_error<E: Write>(err: &mut E, e: &CliError) -> i32 {
    let _ = writeln!(err, "error: {e}");
    e.exit_code()
}

fn load<E: Write>(path: &Path, err: &mut E) -> Result<ScenarioConfig, CliError> {
    let (config, warnings) = load_config(path)?;
    for w in warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    Ok(config)
}

fn print_design<O: Write>(out: &mut O, d: &DesignOutput) -> io::Result<()> {
    writeln!(out, "c* = {} ({})", d.c_star, d.c_star_source)?;
    let c = &d.configured.constants;
    writeln!(out, "delta = {}, delta_bar = {}, delta_underbar = {}", c.delta, c.delta_bar, c.delta_underbar)?;
    writeln!(out, "eps_bar = {}, eps_underbar = {}", c.eps_bar, c.eps_underbar)?;
    writeln!(out, "c_delta = {}, c_s = {}", c.c_delta, c.c_s)?;
    writeln!(out, "k_tilde = {} (k_tilde1 = {}, k_tilde2 = {}, sigma_min = {})", c.k_tilde, c.k_tilde1, c.k_tilde2, c.sigma_min)?;
    writeln!(out, "l1 = {}, l2 = {}, l1 l2 = {}", c.l1, c.l2, d.configured.small_gain_product)?;
    for check in &d.configured.checks {
        writeln!(
            out,
            "{:<9} {} margin {:e}: {}",
            check.name,
            if check.pass { "pass" } else { "FAIL" },
            check.margin,
            check.detail
        )?;
    }
    writeln!(out, "configured gains all pass: {}", d.configured.all_pass)?;
    match (&d.synthesized, &d.synthesis_error) {
        (Some((g, r)), _) => {
            writeln!(
                out,
                "synthesized for c* = {}: c = {}, iota = {}, k1 = {:?}, k2 = {:?}, sigma = {:?}",
                r.c_star, g.c, g.iota, g.k1, g.k2, g.sigma
            )?;
            writeln!(out, "synthesized l1 l2 = {}, all pass: {}", r.small_gain_product, r.all_pass)?;
        }
        (None, Some(e)) => writeln!(out, "synthesis failed: {e}")?,
        (None, None) => {}
    }
    Ok(())
}

/// Parses `args` and runs the chosen subcommand; returns the exit code.
pub fn run<I, T, O, E>(args: I, out: &mut O, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    O: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Simulate {
            config,
            out: out_dir,
            step,
            t_end,
        } => {
            let mut cfg = match load(&config, err) {
                Ok(c) => c,
                Err(e) => return report_error(err, &e),
            };
            apply_overrides(&mut cfg, step, t_end);
            let started = Instant::now();
            match cmd_simulate(&cfg, &out_dir) {
                Ok(outcome) => {
                    let s = &outcome.summary;
                    let _ = writeln!(out, "z* = ({:.16e}, {:.16e})", s.z_star[0], s.z_star[1]);
                    let _ = writeln!(
                        out,
                        "steps: {} active, {} total, {} integration substeps",
                        s.active_steps, s.total_steps, s.total_substeps
                    );
                    for t in &outcome.thresholds {
                        let _ = writeln!(
                            out,
                            "{:<24} {} value {:e} limit {:e}",
                            t.name,
                            if t.pass { "pass" } else { "FAIL" },
                            t.value,
                            t.limit
                        );
                    }
                    let _ = writeln!(err, "elapsed {:.2} s", started.elapsed().as_secs_f64());
                    EXIT_OK
                }
                Err(e) => report_error(err, &e),
            }
        }
        Command::Design { config } => {
            let result = load(&config, err).and_then(|c| cmd_design(&c));
            match result {
                Ok(d) => {
                    let _ = print_design(out, &d);
                    EXIT_OK
                }
                Err(e) => report_error(err, &e),
            }
        }
        Command::Oracle { config } => match load(&config, err).and_then(|c| cmd_oracle(&c)) {
            Ok(o) => {
                let _ = writeln!(out, "z* = ({:.16e}, {:.16e})", o.z_star[0], o.z_star[1]);
                for (i, g) in o.gradients.iter().enumerate() {
                    let _ = writeln!(out, "grad f_{i}(z*) = ({:.16e}, {:.16e})", g[0], g[1]);
                }
                let _ = writeln!(out, "residual = {:e} ({:?})", o.residual, o.method);
                EXIT_OK
            }
            Err(e) => report_error(err, &e),
        },
        Command::Check { config, trace } => match load(&config, err).and_then(|c| cmd_check(&c, &trace)) {
            Ok(report) => {
                for item in &report.items {
                    let _ = writeln!(
                        out,
                        "{:<18} {}: {}",
                        item.name,
                        if item.pass { "pass" } else { "FAIL" },
                        item.detail
                    );
                }
                for note in &report.notes {
                    let _ = writeln!(out, "note: {note}");
                }
                if report.pass() {
                    EXIT_OK
                } else {
                    let e = CliError::CheckFailed(format!(
                        "{} of {} checks failed",
                        report.items.iter().filter(|i| !i.pass).count(),
                        report.items.len()
                    ));
                    report_error(err, &e)
                }
            }
            Err(e) => report_error(err, &e),
        },
    }
}
