//! Batch front end: scenario files in, tables, verdict streams and
//! simulation results out.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod format;
pub mod scenario;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use catdisp_core::oracle::Perturbation;
use catdisp_core::DispersalKind;
use clap::{Parser, Subcommand};

pub use scenario::Scenario;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    /// Malformed scenario, unreadable file, invalid parameters.
    #[error("bad input: {0}")]
    BadInput(String),
    /// A series, quadrature or iteration missed its tolerance.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Verification mismatch or mean-ordering violation.
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::BadInput(_) => EXIT_BAD_INPUT,
            Self::Numeric(_) => EXIT_NUMERIC,
            Self::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl From<catdisp_core::Error> for CliError {
    fn from(e: catdisp_core::Error) -> Self {
        match e {
            catdisp_core::Error::NumericFailure(m) => Self::Numeric(m),
            catdisp_core::Error::Domain(m) | catdisp_core::Error::Usage(m) => Self::BadInput(m),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "catdisp", version, about = "Catastrophe-dispersion branching processes")]
pub struct Cli {
    /// Scenario file (JSON, schema_version 1).
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Directory for output files; without it the primary output goes to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed, overriding the scenario's simulation seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; changes speed only, never results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Offspring means of every environment under all four mechanisms (CSV).
    MeanTable,
    /// Survival/extinction verdicts per mechanism and grid point (JSON lines).
    Classify,
    /// Monte Carlo survival frequencies (JSON summary and per-replicate CSV).
    Simulate,
    /// Classify and simulate every sweep point.
    Scan,
    /// Oracle cross-checks of every analytic formula.
    Verify {
        /// Scales one mechanism's analytic mean, as MECH:RELATIVE (negative control).
        #[arg(long, hide = true, value_parser = parse_perturbation)]
        perturb_mean: Option<Perturbation>,
    },
}

fn parse_perturbation(s: &str) -> Result<Perturbation, String> {
    let (mech, rel) = s.split_once(':').ok_or("expected MECH:RELATIVE")?;
    let mechanism = DispersalKind::ALL
        .into_iter()
        .find(|k| k.label() == mech)
        .ok_or_else(|| format!("unknown mechanism {mech:?}"))?;
    let relative = rel.parse::<f64>().map_err(|e| e.to_string())?;
    Ok(Perturbation { mechanism, relative })
}

/// Destination of command output: files in `dir`, or the primary file on
/// `stdout` when no directory is given.
pub struct Sink<'a> {
    dir: Option<PathBuf>,
    stdout: &'a mut (dyn Write + Send),
}

impl<'a> Sink<'a> {
    pub fn new(dir: Option<PathBuf>, stdout: &'a mut (dyn Write + Send)) -> Result<Self, CliError> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| CliError::BadInput(format!("cannot create {}: {e}", d.display())))?;
        }
        Ok(Sink { dir, stdout })
    }

    /// Writes `file` into the output directory; primary files also go to
    /// stdout when there is no directory, the rest are dropped.
    pub fn emit(&mut self, file: &str, bytes: &[u8], primary: bool) -> Result<(), CliError> {
        match &self.dir {
            Some(d) => {
                let path = d.join(file);
                std::fs::write(&path, bytes).map_err(|e| CliError::BadInput(format!("cannot write {}: {e}", path.display())))
            }
            None if primary => self.stdout.write_all(bytes).map_err(|e| CliError::BadInput(format!("stdout: {e}"))),
            None => Ok(()),
        }
    }

    pub fn note(&mut self, line: &str) -> Result<(), CliError> {
        if self.dir.is_some() {
            writeln!(self.stdout, "{line}").map_err(|e| CliError::BadInput(format!("stdout: {e}")))?;
        }
        Ok(())
    }
}

fn load(path: Option<&Path>) -> Result<Scenario, CliError> {
    let path = path.ok_or_else(|| CliError::BadInput("this command needs --scenario <path>".into()))?;
    Scenario::load(path)
}

/// Parses `args` and runs the command; returns the process exit code and
/// reports errors on `stderr`.
pub fn run<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_BAD_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "catdisp: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::BadInput(format!("thread pool: {e}")))?;
    let mut sink = Sink::new(cli.out.clone(), stdout)?;
    pool.install(|| match &cli.command {
        Command::Verify { perturb_mean } => commands::verify(*perturb_mean, &mut sink),
        command => {
            let scenario = load(cli.scenario.as_deref())?;
            let seed = cli.seed.unwrap_or(scenario.simulation.seed);
            match command {
                Command::MeanTable => commands::mean_table(&scenario, &mut sink),
                Command::Classify => commands::classify(&scenario, seed, &mut sink),
                Command::Simulate => commands::simulate(&scenario, seed, &mut sink),
                Command::Scan => commands::scan(&scenario, seed, &mut sink),
                Command::Verify { .. } => unreachable!("handled above"),
            }
        }
    })
}
