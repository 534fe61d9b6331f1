//! Command line driver.
//!
//! Every run writes its artifacts into the output directory. On failure the
//! process exits nonzero (2 config/input, 3 non-convergence, 4 degenerate
//! flow, 1 io) and leaves a machine-readable `error.csv` next to whatever
//! artifacts were already written.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use diffeo::config::{Command, RawConfig, RunConfig};
use diffeo::error::Error;
use diffeo::{harness, io};

#[derive(Parser)]
#[command(
    name = "diffeo",
    version,
    about = "Sobolev H^s geometry on diffeomorphism groups of the flat torus"
)]
struct Cli {
    #[command(subcommand)]
    task: Task,

    /// Config file: UTF-8 `key = value` lines under `[section]` headers.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Random seed (overrides `run.seed`).
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Output directory (overrides `run.out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads, 0 = automatic (overrides `run.threads`).
    #[arg(long, global = true, value_name = "INT")]
    threads: Option<usize>,

    /// Grid size `n` or `n1,n2` (overrides `grid.n`).
    #[arg(long, global = true, value_name = "n[,n]")]
    grid: Option<String>,

    /// Sobolev order s, must satisfy s > d/2 + 1 (overrides `metric.order`).
    #[arg(long, global = true, value_name = "s")]
    order: Option<f64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Task {
    /// Integrate the flow of a time-dependent velocity field to a diffeomorphism.
    Flow,
    /// Geodesic distance between two diffeomorphisms by energy minimization.
    Distance,
    /// Register a source image onto a target along a geodesic deformation.
    Register,
    /// Karcher mean of a set of images under the deformation metric.
    Karcher,
    /// Match two landmark sets with a kernel geodesic.
    Landmarks,
    /// Run the built-in invariant battery; needs no config or inputs.
    Selfcheck,
}

impl From<Task> for Command {
    fn from(t: Task) -> Command {
        match t {
            Task::Flow => Command::Flow,
            Task::Distance => Command::Distance,
            Task::Register => Command::Register,
            Task::Karcher => Command::Karcher,
            Task::Landmarks => Command::Landmarks,
            Task::Selfcheck => Command::Selfcheck,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RawConfig, Error> {
    let mut raw = match &cli.config {
        Some(p) => RawConfig::parse(&std::fs::read_to_string(p)?)?,
        None => RawConfig::default(),
    };
    if let Some(s) = cli.seed {
        raw.set("run.seed", s.to_string());
    }
    if let Some(o) = &cli.out {
        raw.set("run.out", o.display().to_string());
    }
    if let Some(t) = cli.threads {
        raw.set("run.threads", t.to_string());
    }
    if let Some(g) = &cli.grid {
        raw.set("grid.n", g.clone());
    }
    if let Some(s) = cli.order {
        raw.set("metric.order", s.to_string());
    }
    Ok(raw)
}

/// Best-effort `error.csv` so scripted callers never have to parse stderr.
fn report_error(out: &PathBuf, e: &Error) {
    let _ = std::fs::create_dir_all(out);
    let msg = e.to_string().replace('"', "\"\"");
    let body = format!("code,tag,message\n{},{},\"{}\"\n", e.exit_code(), e.tag(), msg);
    let _ = io::atomic_write(&out.join("error.csv"), body.as_bytes());
}

fn main() {
    let cli = Cli::parse();
    let mut out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));

    let result = load_config(&cli)
        .and_then(|raw| RunConfig::build(cli.task.into(), raw))
        .and_then(|cfg| {
            out = cfg.out.clone();
            if cfg.threads > 0 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build_global()
                    .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
            }
            harness::run(&cfg)
        });

    if let Err(e) = result {
        report_error(&out, &e);
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
