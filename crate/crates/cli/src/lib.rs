//! Experiment runner for the `reduite` library.
//!
//! A run reads one TOML config (or a bundled preset), executes a
//! subcommand, and writes `<stem>.<table>.csv` files plus a `<stem>.json`
//! report into the output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod presets;
pub mod verify;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

pub use commands::{Check, Command, Outcome};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
use output::Table;

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "REDUITE_OUT";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where to write outputs; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Overrides the config seed.
    pub seed: Option<u64>,
    /// Overrides `verify.criteria`.
    pub criteria: Option<Vec<u32>>,
}

/// A config document and where it came from.
#[derive(Clone, Debug)]
pub struct Source {
    pub origin: String,
    pub text: String,
}

impl Source {
    pub fn from_path(path: &Path) -> CliResult<Source> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(Source {
            origin: path.display().to_string(),
            text,
        })
    }

    pub fn preset(name: &str) -> CliResult<Source> {
        Ok(Source {
            origin: format!("preset:{name}"),
            text: presets::get(name)?.to_string(),
        })
    }

    /// Built-in default for commands that need no config.
    pub fn empty(cmd: Command) -> Source {
        Source {
            origin: "defaults".into(),
            text: format!("command = \"{}\"\n", cmd.name()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub library_version: &'static str,
    pub command: String,
    pub source: String,
    /// The config exactly as read.
    pub config_text: String,
    pub config: ExperimentConfig,
    pub seed: Option<u64>,
    pub verdict: Option<String>,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub results: Value,
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

/// Parse `source` and resolve the command to run. `cmd = None` takes the
/// command from the config.
pub fn resolve(cmd: Option<Command>, source: &Source) -> CliResult<(Command, ExperimentConfig)> {
    let cfg = config::parse(&source.text)?;
    let declared = cfg
        .command
        .as_deref()
        .map(str::parse::<Command>)
        .transpose()?;
    let cmd = match (cmd, declared) {
        (Some(c), Some(d)) if !c.accepts(d) => {
            return Err(CliError::Config {
                path: "command".into(),
                message: format!("config is written for `{d}`, not `{c}`"),
            })
        }
        (Some(Command::Reconstruct), Some(d)) => d,
        (Some(c), _) => c,
        (None, Some(d)) => d,
        (None, None) => {
            return Err(CliError::Config {
                path: "command".into(),
                message: "missing; name the subcommand or set `command` in the config".into(),
            })
        }
    };
    Ok((cmd, cfg))
}

/// Run a command and write its outputs.
pub fn run(cmd: Option<Command>, source: &Source, opts: &RunOptions) -> CliResult<RunReport> {
    let (cmd, mut cfg) = resolve(cmd, source)?;
    if let Some(c) = &opts.criteria {
        cfg.verify.criteria = c.clone();
    }
    let t0 = Instant::now();
    let mut outcome = if cmd == Command::Verify {
        verify::run_suite(&cfg, opts)?
    } else {
        commands::compute(cmd, &cfg, opts.seed)?
    };
    let elapsed = t0.elapsed().as_secs_f64();
    if let Some(max) = cfg.expect.as_ref().and_then(|e| e.max_seconds) {
        outcome.checks.push(Check {
            name: "max_seconds".into(),
            pass: elapsed < max,
            detail: format!("wall clock {elapsed:.2} s (limit {max} s)"),
        });
    }
    let seed = if cmd.is_stochastic() {
        opts.seed.or(cfg.seed)
    } else {
        None
    };
    let mut report = RunReport {
        tool: "reduite",
        version: env!("CARGO_PKG_VERSION"),
        library_version: reduite::VERSION,
        command: cmd.name().into(),
        source: source.origin.clone(),
        config_text: source.text.clone(),
        seed,
        verdict: outcome.verdict.clone(),
        pass: outcome.pass(),
        checks: outcome.checks,
        results: outcome.results,
        outputs: Vec::new(),
        wall_clock_s: elapsed,
        tables: outcome.tables,
        config: cfg,
    };
    if let Some(dir) = &opts.out_dir {
        write_report(dir, &mut report)?;
    }
    Ok(report)
}

/// Write the CSV tables and the JSON report.
pub fn write_report(dir: &Path, report: &mut RunReport) -> CliResult<()> {
    let stem = report.config.stem(&report.command);
    let paths = output::write_tables(dir, &stem, &report.tables)?;
    report.outputs = paths
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    report.outputs.push(format!("{stem}.json"));
    let json = serde_json::to_string_pretty(report)?;
    output::write_atomic(&dir.join(format!("{stem}.json")), json.as_bytes())
}

/// Compute a command inside a dedicated thread pool and return the CSV
/// bytes it would write.
pub fn csv_bytes_with_threads(
    source: &Source,
    seed: Option<u64>,
    threads: usize,
) -> CliResult<Vec<u8>> {
    let (cmd, cfg) = resolve(None, source)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Unsupported(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| commands::compute(cmd, &cfg, seed))?;
    Ok(outcome
        .tables
        .iter()
        .flat_map(|t| t.to_csv().into_bytes())
        .collect())
}
