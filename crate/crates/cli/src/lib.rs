//! Configuration parsing, run orchestration and report emission for the
//! `crossdiff` binary.

pub mod config;
pub mod output;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crossdiff_core::assumptions::{certify_lemma, check_dominance, check_noise_assumptions};
use crossdiff_core::monitors::{ensemble_moments_threads, n_uniformity_study, refinement_study};
use crossdiff_core::stepper::run_path;
use crossdiff_core::{EnsembleEstimate, Error, LemmaKind, RefinementTable};
use thiserror::Error as ThisError;

pub use config::{config_echo, parse_config, write_config, ConfigError, ConvergeKind, ParsedConfig};
pub use output::{emit_plot_script, PlotKind, RunManifest};

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for invalid configuration or input.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code for numerical failure.
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{}", join_errors(.0))]
    Config(Vec<ConfigError>),

    #[error(transparent)]
    Core(#[from] Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("plot script: {0}")]
    Plot(String),

    #[error("{0}")]
    Numerical(String),
}

fn join_errors(errs: &[ConfigError]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n")
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(
                Error::Convergence { .. }
                | Error::StepFailure { .. }
                | Error::BlowUp { .. }
                | Error::EnsembleFailed { .. }
                | Error::Falsified { .. },
            )
            | CliError::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Simulate,
    Ensemble,
    Converge,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Simulate => "simulate",
            Command::Ensemble => "ensemble",
            Command::Converge => "converge",
        }
    }
}

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFlags {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
    /// Worker threads for path-parallel work; all cores when absent.
    pub threads: Option<usize>,
}

/// Files written by a command plus a short human-readable summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn apply_flags(cfg: &ParsedConfig, flags: &RunFlags) -> Result<ParsedConfig, CliError> {
    let mut c = cfg.clone();
    if let Some(seed) = flags.seed {
        c.run.seed = seed;
        c.check.seed = seed;
    }
    if let Some(paths) = flags.paths {
        c.run.n_paths = paths;
    }
    if let Some(out) = &flags.out {
        c.output_dir = out.clone();
    }
    let errs: Vec<ConfigError> = c
        .run
        .validation_errors()
        .into_iter()
        .map(|e| ConfigError {
            line: None,
            key: "flags".into(),
            message: e.to_string(),
        })
        .collect();
    if errs.is_empty() {
        Ok(c)
    } else {
        Err(CliError::Config(errs))
    }
}

fn seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| base.wrapping_add(k)).collect()
}

fn finish(mut manifest: RunManifest, dir: &Path, files: Vec<PathBuf>, summary: String) -> Result<Outcome, CliError> {
    for f in &files {
        manifest.record(f)?;
    }
    let mut files = files;
    files.push(manifest.write(dir)?);
    Ok(Outcome { files, summary })
}

fn check(c: &ParsedConfig) -> Result<Outcome, CliError> {
    let params = &c.run.params;
    let dominance = check_dominance(params);
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "dominance: strong margins {:?} ({}), weak margins {:?} ({})",
        dominance.strong_margins,
        if dominance.strong_ok { "ok" } else { "violated" },
        dominance.weak_margins,
        if dominance.weak_ok { "ok" } else { "violated" },
    );
    let mut rows = Vec::new();
    for kind in LemmaKind::ALL {
        let cert = certify_lemma(kind, params, c.check.samples, c.check.seed)?;
        let _ = writeln!(
            summary,
            "{}: alpha1 {:e}, alpha2 {:e}, worst slack {:e} over {} samples",
            kind.name(),
            cert.alpha1,
            cert.alpha2,
            cert.worst_slack,
            cert.samples_tested
        );
        rows.push(format!(
            "{},{:.17e},{:.17e},{},{:.17e},{:.17e}",
            kind.name(),
            cert.alpha1,
            cert.alpha2,
            cert.samples_tested,
            cert.worst_slack,
            cert.worst_relative_slack
        ));
    }
    let noise = check_noise_assumptions(&c.run.noise, params, c.check.samples.min(10_000), c.check.seed)?;
    let _ = writeln!(
        summary,
        "noise: lipschitz {:e}, growth {:e}, derivative {:e}, entropy coupling {:e}",
        noise.lipschitz_estimate, noise.growth_estimate, noise.derivative_estimate, noise.entropy_coupling_estimate
    );
    let dir = &c.output_dir;
    let certs = output::write_text(
        dir,
        "certificates.csv",
        &output::csv_text("kind,alpha1,alpha2,samples,worst_slack,worst_relative_slack", rows),
    )?;
    let noise_csv = output::write_text(
        dir,
        "noise.csv",
        &output::csv_text(
            "quantity,estimate,pass",
            [
                format!("lipschitz,{:.17e},{}", noise.lipschitz_estimate, noise.pass.lipschitz),
                format!("growth,{:.17e},{}", noise.growth_estimate, noise.pass.growth),
                format!("derivative,{:.17e},{}", noise.derivative_estimate, noise.pass.derivative),
                format!(
                    "entropy_coupling,{:.17e},{}",
                    noise.entropy_coupling_estimate, noise.pass.entropy_coupling
                ),
            ],
        ),
    )?;
    let manifest = RunManifest::new("check", config_echo(c), vec![c.check.seed]);
    finish(manifest, dir, vec![certs, noise_csv], summary)
}

fn simulate(c: &ParsedConfig) -> Result<Outcome, CliError> {
    let rec = run_path(&c.run, c.run.seed)?;
    let dir = &c.output_dir;
    let csv = output::write_text(dir, "monitors.csv", &rec.monitor_csv(c.run.params.n()))?;
    let plot = emit_plot_script(std::slice::from_ref(&csv), PlotKind::Monitors)?;
    let manifest = RunManifest::new("simulate", config_echo(c), vec![c.run.seed]);
    let last = rec.monitors.last().map(|r| r.t).unwrap_or(0.0);
    let summary = format!("{} monitor rows up to t = {last}", rec.monitors.len());
    let outcome = finish(manifest, dir, vec![csv, plot], summary)?;
    match rec.failure {
        Some(e) if rec.truncated => Err(CliError::Numerical(format!(
            "path truncated at t = {last}: {e} (partial output in {})",
            dir.display()
        ))),
        _ => Ok(outcome),
    }
}

fn moments_csv(est: &[EnsembleEstimate]) -> String {
    output::csv_text(EnsembleEstimate::CSV_HEADER, est.iter().map(|e| e.csv_line()))
}

fn ensemble(c: &ParsedConfig, threads: Option<usize>) -> Result<Outcome, CliError> {
    let est = ensemble_moments_threads(&c.run, c.run.n_paths, c.run.seed, threads)?;
    let dir = &c.output_dir;
    let csv = output::write_text(dir, "moments.csv", &moments_csv(&est))?;
    let manifest = RunManifest::new("ensemble", config_echo(c), seeds(c.run.seed, c.run.n_paths));
    let summary = est
        .iter()
        .map(|e| format!("{} = {:e} +/- {:e}", e.name, e.mean, e.std_error))
        .collect::<Vec<_>>()
        .join("\n");
    finish(manifest, dir, vec![csv], summary)
}

/// Column header of the N-uniformity CSV.
pub const UNIFORMITY_HEADER: &str = "N,name,mean,std_error,paths,truncated,ratio";

fn refinement_csv(t: &RefinementTable) -> String {
    output::csv_text(RefinementTable::CSV_HEADER, t.csv_lines())
}

fn converge(c: &ParsedConfig, threads: Option<usize>) -> Result<Outcome, CliError> {
    let dir = &c.output_dir;
    let manifest = RunManifest::new("converge", config_echo(c), seeds(c.run.seed, c.run.n_paths));
    match &c.converge.kind {
        ConvergeKind::Modes => {
            let modes: Vec<usize> = c.converge.levels.iter().map(|&v| v as usize).collect();
            let table = n_uniformity_study(&c.run, &modes, c.run.n_paths, c.run.seed, threads)?;
            let lo = (0..modes.len()).min_by_key(|&i| modes[i]).unwrap_or(0);
            let mut rows = Vec::new();
            for (m, est) in modes.iter().zip(&table.estimates) {
                for (k, e) in est.iter().enumerate() {
                    rows.push(format!("{m},{},{:.17e}", e.csv_line(), e.mean / table.estimates[lo][k].mean));
                }
            }
            let csv = output::write_text(dir, "uniformity.csv", &output::csv_text(UNIFORMITY_HEADER, rows))?;
            let summary = format!("max/min N ratios: {:?}", table.ratios);
            finish(manifest, dir, vec![csv], summary)
        }
        ConvergeKind::Refinement(kind) => {
            let table = refinement_study(*kind, &c.run, &c.converge.levels, c.run.n_paths, c.run.seed, threads)?;
            let csv = output::write_text(dir, "refinement.csv", &refinement_csv(&table))?;
            let plot = emit_plot_script(std::slice::from_ref(&csv), PlotKind::Refinement)?;
            let summary = format!(
                "{} refinement: mean distances {:?}, orders {:?}, {} truncated",
                kind.name(),
                table.mean_distance,
                table.orders,
                table.truncated_paths
            );
            finish(manifest, dir, vec![csv, plot], summary)
        }
    }
}

/// Runs one subcommand on a parsed config.
pub fn run_command(cmd: Command, cfg: &ParsedConfig, flags: &RunFlags) -> Result<Outcome, CliError> {
    let c = apply_flags(cfg, flags)?;
    match cmd {
        Command::Check => check(&c),
        Command::Simulate => simulate(&c),
        Command::Ensemble => ensemble(&c, flags.threads),
        Command::Converge => converge(&c, flags.threads),
    }
}

/// Parses `text`, runs `cmd` and reports to `out` / `err`; returns the exit code.
pub fn execute(cmd: Command, text: &str, flags: &RunFlags, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cfg = match parse_config(text) {
        Ok(c) => c,
        Err(errs) => {
            for e in &errs {
                let _ = writeln!(err, "error: {e}");
            }
            return EXIT_VALIDATION;
        }
    };
    for w in &cfg.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    match run_command(cmd, &cfg, flags) {
        Ok(o) => {
            let _ = writeln!(out, "{}", o.summary.trim_end());
            for f in &o.files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            EXIT_OK
        }
        Err(e) => {
            for line in e.to_string().lines() {
                let _ = writeln!(err, "error: {line}");
            }
            e.exit_code()
        }
    }
}
