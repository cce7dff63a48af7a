use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reduite_cli::{presets, run, CliError, Command, RunOptions, Source, OUT_ENV};

/// Potential-theory experiments for Poisson problems with measure data.
#[derive(Parser)]
#[command(name = "reduite", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset (see `reduite presets`).
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", env = OUT_ENV, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Sub {
    /// Grid solutions against closed forms over a refinement study.
    Solve,
    /// D1 norm via the smallest excessive majorant, optional growth test.
    Reduite,
    /// Tail curve T_n and the diffuse/concentrated verdict.
    Tail,
    /// Energy functionals on the window {n <= u <= 2n}.
    Reconstruct {
        #[arg(value_enum)]
        functional: Option<Functional>,
    },
    /// Monte Carlo diagnostics.
    Mc {
        #[arg(value_enum)]
        kind: McKind,
    },
    /// Run the verification suite.
    Verify {
        /// Only these criteria (comma separated).
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u32>,
    },
    /// Table of kernel constants.
    Constants,
    /// Run whatever command the config names.
    Run,
    /// List bundled presets.
    Presets,
}

#[derive(Clone, Copy, ValueEnum)]
enum Functional {
    Local,
    Nonlocal,
}

#[derive(Clone, Copy, ValueEnum)]
enum McKind {
    Classd,
    Reducing,
    Maximal,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn real_main(cli: Cli) -> Result<bool, CliError> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Unsupported(format!("thread pool: {e}")))?;
    }
    let cmd = match &cli.command {
        Sub::Presets => {
            for (name, text) in presets::PRESETS {
                let desc = text
                    .lines()
                    .find_map(|l| l.strip_prefix("description = "))
                    .map(|d| d.trim_matches('"'))
                    .unwrap_or("");
                println!("{name:<30} {desc}");
            }
            return Ok(true);
        }
        Sub::Run => None,
        Sub::Solve => Some(Command::Solve),
        Sub::Reduite => Some(Command::Reduite),
        Sub::Tail => Some(Command::Tail),
        Sub::Reconstruct { functional } => Some(match functional {
            None => Command::Reconstruct,
            Some(Functional::Local) => Command::ReconstructLocal,
            Some(Functional::Nonlocal) => Command::ReconstructNonlocal,
        }),
        Sub::Mc { kind } => Some(match kind {
            McKind::Classd => Command::McClassD,
            McKind::Reducing => Command::McReducing,
            McKind::Maximal => Command::McMaximal,
        }),
        Sub::Verify { .. } => Some(Command::Verify),
        Sub::Constants => Some(Command::Constants),
    };
    let source = match (&cli.common.config, &cli.common.preset) {
        (Some(p), _) => Source::from_path(p)?,
        (None, Some(name)) => Source::preset(name)?,
        (None, None) => match cmd {
            Some(c @ (Command::Verify | Command::Constants)) => Source::empty(c),
            _ => {
                return Err(CliError::Unsupported(
                    "this command needs --config or --preset".into(),
                ))
            }
        },
    };
    let opts = RunOptions {
        out_dir: Some(cli.common.out.clone()),
        seed: cli.common.seed,
        criteria: match &cli.command {
            Sub::Verify { criteria } if !criteria.is_empty() => Some(criteria.clone()),
            _ => None,
        },
    };
    let report = run(cmd, &source, &opts)?;
    for c in &report.checks {
        eprintln!(
            "{} {}: {}",
            if c.pass { "ok  " } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    if let Some(v) = &report.verdict {
        println!("verdict: {v}");
    }
    for o in &report.outputs {
        println!("wrote {}", cli.common.out.join(o).display());
    }
    Ok(report.pass)
}
