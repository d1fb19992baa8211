//! Batch front end: reads a JSON run config, runs one command and writes
//! `<command>_<hash>.csv`, `.json` and a gnuplot `.gp` script into the
//! output directory. Wall-clock facts go to a `.log` sidecar only.

/// Command-line guide chapter, compiled as a doc-test.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
struct Guide;

pub mod config;
pub mod failure;
pub mod run;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

pub use config::{Command, Overrides, RunConfig};
pub use failure::Failure;
pub use run::{execute, Artifact, Outcome};

#[derive(Debug, Parser)]
#[command(name = "hjhom", version, about = "Effective Hamiltonians of 1D nonconvex Hamilton-Jacobi equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
    /// Run config (JSON, see docs/config.schema.json).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for random potentials; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Size of the worker pool (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Clone, Copy, Debug, Subcommand)]
pub enum Sub {
    /// Effective Hamiltonian on a momentum grid.
    Effective,
    /// Discounted cell-problem estimates.
    Cell,
    /// Oscillatory against homogenized time evolution.
    Evolve,
    /// One admissible slope field of the metric problem.
    Corrector,
    /// Formula, cell estimate and curve side by side.
    Compare,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Effective => Command::Effective,
            Sub::Cell => Command::Cell,
            Sub::Evolve => Command::Evolve,
            Sub::Corrector => Command::Corrector,
            Sub::Compare => Command::Compare,
        }
    }
}

/// Files written by [`run_cli`].
#[derive(Debug)]
pub struct Written {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub log: PathBuf,
}

/// Loads the config, runs it in a pool of `workers` threads and writes the
/// artifacts plus the sidecar log.
pub fn run_cli(cli: &Cli) -> Result<Written, Failure> {
    let Some(path) = &cli.config else {
        return Err(Failure::config("config_present", "--config <file> is required".into(), ""));
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config("config_readable", format!("{}: {e}", path.display()), ""))?;
    let overrides = Overrides {
        command: Some(cli.command.into()),
        seed: cli.seed,
        out: cli.out.as_ref().map(|p| p.display().to_string()),
    };
    let cfg = RunConfig::load(&text, &overrides)?;
    let workers = match cli.workers {
        Some(0) => return Err(Failure::config("workers_positive", "--workers must be at least 1".into(), "")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::io(format!("worker pool: {e}")))?;
    let started = Instant::now();
    let outcome = pool.install(|| execute(&cfg))?;
    let elapsed = started.elapsed();
    let dir = PathBuf::from(&cfg.out);
    let files = write_all(&dir, &outcome.artifacts)?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut log = format!(
        "finished_unix={stamp}\nelapsed_seconds={:.3}\nworkers={workers}\ncommand={}\nhash={}\n",
        elapsed.as_secs_f64(),
        cfg.command.name(),
        outcome.hash
    );
    for f in &files {
        log.push_str(&format!("wrote={}\n", f.display()));
    }
    let log_path = dir.join(format!("{}_{}.log", cfg.command.name(), outcome.hash));
    std::fs::write(&log_path, log).map_err(|e| Failure::io(format!("{}: {e}", log_path.display())))?;
    Ok(Written { dir, files, log: log_path })
}

fn write_all(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    artifacts
        .iter()
        .map(|a| {
            let p = dir.join(&a.name);
            std::fs::write(&p, &a.contents).map_err(|e| Failure::io(format!("{}: {e}", p.display())))?;
            Ok(p)
        })
        .collect()
}
