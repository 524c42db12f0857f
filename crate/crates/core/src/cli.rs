//! Command-line entry point.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::buffer::Policy;
use crate::data::cache::write_split;
use crate::data::{corrupt, CorruptionSpec};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::harness::{parse_values, report, run_experiment, run_sweep, RunConfig};
use crate::model::LossKind;

/// Relative error the finite-difference suite must stay under.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "acr", version, about = "Class-incremental training with confidence-variance replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Buffer policy: challenging (acr), hard, random-balanced, reservoir.
    #[arg(long)]
    policy: Option<Policy>,
    /// Any config key, e.g. `--set epochs=10 --set stream.side=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and evaluate every configured seed.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Repeat `run` for each value of one config key.
    Sweep {
        #[arg(long)]
        param: String,
        /// `2..7` or `2,3,4`.
        #[arg(long)]
        values: String,
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write corrupted copies of every task's test split as binary caches.
    Corrupt {
        config: PathBuf,
        /// `kind:severity`, e.g. `gaussian-noise:3`.
        spec: CorruptionSpec,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Summarize every summary.csv under a directory.
    Report { dir: PathBuf },
    /// Finite-difference check of the encoder and proxy gradients.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        configs: u64,
        #[arg(long, default_value = "pcl")]
        loss: String,
    },
}

fn load_config(path: &PathBuf, o: &Overrides) -> Result<RunConfig> {
    let mut config = RunConfig::load(path)?;
    config.apply_env(std::env::vars())?;
    config.apply_overrides(&o.set)?;
    if let Some(seed) = o.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &o.out {
        config.out_dir = out.clone();
    }
    if let Some(p) = o.policy {
        config.policy = p;
    }
    config.validate()?;
    Ok(config)
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn execute(command: Command, out: &mut impl Write) -> Result<i32> {
    let print = |out: &mut dyn Write, s: &str| writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e));
    match command {
        Command::Run { config, overrides } => {
            let config = load_config(&config, &overrides)?;
            let summary = run_experiment(&config)?;
            print(out, &crate::harness::summary_csv(&summary.rows))?;
            print(out, &format!("outputs written to {}", summary.out_dir.display()))?;
        }
        Command::Sweep { param, values, config, overrides } => {
            let config = load_config(&config, &overrides)?;
            let values = parse_values(&values)?;
            let results = run_sweep(&config, &param, &values)?;
            for (v, s) in &results {
                let acc = s.aggregate[0].mean.unwrap_or(f64::NAN);
                print(out, &format!("{param}={v}: ACC_iid {acc:.4} over {} seeds", s.rows.len()))?;
            }
        }
        Command::Corrupt { config, spec, overrides } => {
            let config = load_config(&config, &overrides)?;
            let seed = config.seeds[0];
            let stream = config.stream.build(seed)?;
            let dir = &config.out_dir;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let spec = CorruptionSpec { seed: spec.seed.wrapping_add(seed), ..spec };
            for task in &stream.tasks {
                let corrupted = corrupt(&task.test, stream.kind, &spec)?;
                let path = dir.join(format!("task{}_{}.bin", task.id, spec.label()));
                write_split(&path, stream.kind, task.id, &corrupted)?;
                print(out, &path.display().to_string())?;
            }
        }
        Command::Report { dir } => {
            print(out, report(&dir)?.trim_end())?;
        }
        Command::Gradcheck { configs, loss } => {
            let kind: LossKind = serde_json::from_value(serde_json::Value::String(loss.clone()))
                .map_err(|_| Error::InvalidArgument(format!("unknown loss {loss:?}")))?;
            let r = gradcheck::suite(configs, kind)?;
            let verdict = if r.max_rel_error < GRADCHECK_TOLERANCE { "pass" } else { "FAIL" };
            print(
                out,
                &format!(
                    "gradcheck: {configs} configurations, {} coordinates, max relative error {:.3e} (worst {}) {verdict}",
                    r.checked, r.max_rel_error, r.worst
                ),
            )?;
            return Ok(if verdict == "pass" { 0 } else { 1 });
        }
    }
    Ok(0)
}
