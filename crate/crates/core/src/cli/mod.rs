//! Command-line front end: config parsing, experiment orchestration, reports
//! and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod report;
pub mod run;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, ExperimentKind};
pub use report::{emit_report, parse_text_metrics, render_text, Format, Metric, RunReport};
pub use run::{run, RunOptions};

use crate::error::{Error, Result};

/// Configuration used by `acceptance` when no `--config` is given; the suite
/// fixes its own models, only the seed is taken from here.
pub const DEFAULT_ACCEPTANCE_CONFIG: &str = r#"
[grid]
T = 1.0
n_steps = 50

[market]
sigma = 1.0
phi = 0.2
S0 = 1.0
alpha = 1.0

[solver]
seed = 42

[experiment]
kind = "acceptance"
"#;

#[derive(Debug, Parser)]
#[command(name = "defaultlab", version, about = "Default-time enlargement, jump BSDEs and exponential-utility pricing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory for the resolved config, CSV artifacts and report.json.
    #[arg(long, global = true, env = "DEFAULTLAB_OUT_DIR", default_value = "out")]
    pub out_dir: PathBuf,

    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (0 uses all cores); never changes results.
    #[arg(long, global = true, env = "DEFAULTLAB_WORKERS", default_value_t = 0)]
    pub workers: usize,

    /// Report format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate scenarios and check sampling moments.
    Simulate,
    /// Check the enlargement identities and the joint compensator.
    VerifyEnlargement,
    /// Solve the utility BSDE for the configured claim.
    Solve,
    /// Verify martingale optimality over constant strategies.
    Optimize,
    /// Indifference price of the configured claim.
    Indifference,
    /// Value and strategy on the horizon stopped at default.
    RandomHorizon,
    /// Exact serial-tree representation, tree BSDE and dynamic programming.
    Oracle,
    /// Run the acceptance suite.
    Acceptance {
        /// Comma-separated criterion ids, e.g. `A1,A4`.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<String>>,
    },
}

impl Command {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Command::Simulate => ExperimentKind::Simulate,
            Command::VerifyEnlargement => ExperimentKind::VerifyEnlargement,
            Command::Solve => ExperimentKind::Solve,
            Command::Optimize => ExperimentKind::Optimize,
            Command::Indifference => ExperimentKind::Indifference,
            Command::RandomHorizon => ExperimentKind::RandomHorizon,
            Command::Oracle => ExperimentKind::Oracle,
            Command::Acceptance { .. } => ExperimentKind::Acceptance,
        }
    }
}

fn execute(cli: &Cli) -> Result<RunReport> {
    let config = match (&cli.config, &cli.command) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Command::Acceptance { .. }) => ExperimentConfig::from_toml(DEFAULT_ACCEPTANCE_CONFIG)?,
        (None, _) => return Err(Error::Config("--config is required for this subcommand".into())),
    };
    let opts = RunOptions {
        out_dir: cli.out_dir.clone(),
        workers: cli.workers,
        seed: cli.seed,
    };
    if let Command::Acceptance { only: Some(ids) } = &cli.command {
        return run_acceptance_subset(&config, &opts, ids);
    }
    run(&config, cli.command.kind(), &opts)
}

fn run_acceptance_subset(config: &ExperimentConfig, opts: &RunOptions, ids: &[String]) -> Result<RunReport> {
    for id in ids {
        if !acceptance::CRITERIA.contains(&id.as_str()) {
            return Err(Error::Config(format!("unknown acceptance criterion `{id}`")));
        }
    }
    let start = std::time::Instant::now();
    let mut cfg = config.clone();
    cfg.experiment.kind = ExperimentKind::Acceptance;
    if let Some(seed) = opts.seed {
        cfg.solver.seed = seed;
    }
    cfg.resolve(opts.workers)?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let text = cfg.to_toml()?;
    std::fs::write(opts.out_dir.join("config.resolved.toml"), &text)?;
    let results = acceptance::run_suite(&acceptance::SuiteOptions {
        seed: cfg.solver.seed,
        workers: opts.workers,
        out_dir: Some(opts.out_dir.clone()),
        only: Some(ids.to_vec()),
    })?;
    let mut report = RunReport {
        experiment: ExperimentKind::Acceptance.name().to_string(),
        metrics: vec![],
        artifacts: vec![],
        warnings: vec![],
        wall_time_s: 0.0,
        seed: cfg.solver.seed,
        workers: opts.workers,
        config: text,
    };
    for c in results {
        report.metrics.extend(c.metrics);
        report.artifacts.extend(c.artifacts);
        report.warnings.extend(c.warnings);
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::solver("cli", e.to_string()))?;
    std::fs::write(opts.out_dir.join("report.json"), json)?;
    Ok(report)
}

/// Parses `args`, runs, prints the report and returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if code == 0 {
                let _ = write!(stdout, "{e}");
            } else {
                let _ = write!(stderr, "{e}");
            }
            return code;
        }
    };
    match execute(&cli) {
        Ok(report) => {
            match emit_report(&report, cli.format) {
                Ok(text) => {
                    let _ = writeln!(stdout, "{}", text.trim_end());
                }
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    return 1;
                }
            }
            if report.passed() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            let msg = match &e {
                Error::Solver { .. } => format!("error: {e}"),
                _ => format!("error: [{}] {e}", e.module()),
            };
            let _ = writeln!(stderr, "{msg}");
            e.exit_code()
        }
    }
}
