//! `graphmtl` command line: world generation, single runs, sweeps, the
//! consensus suite, the verification suites and plotting.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use graphmtl::graph::TaskGraph;
use graphmtl::harness::config::{ExperimentConfig, WorldSource};
use graphmtl::harness::consensus::consensus_suite;
use graphmtl::harness::plot::{emit_plots, PlotAxis, References, Series};
use graphmtl::harness::runner::{prepare_world, reference_losses, resolve_hyperparams, run_experiment, OUT_ENV};
use graphmtl::harness::sweep::{run_sweep, write_sweep};
use graphmtl::synthdata::generate_world;
use graphmtl::trace::read_trace_csv;
use graphmtl::verification::full_suite;
use graphmtl::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "graphmtl", version, about = "Graph-regularized distributed multi-task learning experiments")]
struct Cli {
    /// Overrides the seed of every config touched by the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and save it to a directory.
    Gen {
        /// Config whose `world.*` keys describe the world; defaults apply otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one config.
    Run {
        config: PathBuf,
        /// Output directory, replacing `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand a sweep file into a directory of configs and run them.
    Sweep {
        file: PathBuf,
        /// Directory receiving the configs and run outputs.
        #[arg(long)]
        dir: PathBuf,
        /// Only write the configs.
        #[arg(long)]
        no_run: bool,
    },
    /// Consensus checks on the world and hyperparameters of a config.
    ConsensusSuite {
        config: PathBuf,
        /// Report CSV path.
        #[arg(long, default_value = "consensus.csv")]
        out: PathBuf,
    },
    /// Run every verification suite and write one report CSV per suite.
    Verify {
        #[arg(long, default_value = "verify")]
        out: PathBuf,
    },
    /// Plot population loss from run directories or trace files.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of rounds, samples, passes.
        #[arg(long, default_value = "rounds,samples,passes")]
        axes: String,
        /// Training samples per machine, for the passes axis. Read from the
        /// run's `config.cfg` when absent.
        #[arg(long)]
        n: Option<usize>,
        /// Compute Local and Centralized reference lines from the first run's config.
        #[arg(long)]
        references: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Io(_) | Error::Csv(_) | Error::InvalidAdjacency { .. } => {
            EXIT_CONFIG
        }
        _ => EXIT_SOLVER,
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> graphmtl::Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn out_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: Cli) -> graphmtl::Result<u8> {
    let seed = cli.seed;
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = match config {
                Some(p) => load_config(&p, seed)?,
                None => ExperimentConfig::default().with_seed(seed.unwrap_or(0)),
            };
            let WorldSource::Generate(spec) = &cfg.world else {
                return Err(Error::Config("gen needs world.* keys, not world.path".into()));
            };
            let world = generate_world(spec)?;
            let dir = out_path(&out);
            world.save(&dir)?;
            println!("world written to {}", dir.display());
            if !world.connected {
                eprintln!("warning: the relatedness graph is disconnected");
            }
            Ok(0)
        }
        Command::Run { config, out } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let summary = run_experiment(&cfg)?;
            print!("{}", summary.to_text());
            Ok(if summary.ok() { 0 } else { EXIT_SOLVER })
        }
        Command::Sweep { file, dir, no_run } => {
            let text = fs::read_to_string(&file)?;
            let dir = out_path(&dir);
            let files = write_sweep(&text, &dir)?;
            println!("{} configs in {}", files.len(), dir.display());
            if no_run {
                return Ok(0);
            }
            let summaries = run_sweep(&dir, seed)?;
            let mut failed = 0;
            for s in &summaries {
                let status = s.error.as_deref().unwrap_or("ok");
                println!("{}\t{}\t{}", s.out_dir.display(), s.algorithm.as_str(), status);
                failed += usize::from(!s.ok());
            }
            Ok(if failed == 0 { 0 } else { EXIT_SOLVER })
        }
        Command::ConsensusSuite { config, out } => {
            let cfg = load_config(&config, seed)?;
            let world = prepare_world(&cfg)?;
            let graph = TaskGraph::from_adjacency(world.adjacency.clone())?;
            let hp = resolve_hyperparams(&cfg, &world, &graph)?;
            let report = consensus_suite(&graph, &hp, cfg.loss, &world.train)?;
            let path = out_path(&out);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            report.save(&path)?;
            print!("{}", report.to_csv());
            Ok(if report.all_pass() { 0 } else { EXIT_CHECK })
        }
        Command::Verify { out } => {
            let dir = out_path(&out);
            fs::create_dir_all(&dir)?;
            let mut all_pass = true;
            for report in full_suite(seed.unwrap_or(0))? {
                report.save(&dir.join(format!("{}.csv", report.suite)))?;
                let ok = report.all_pass();
                all_pass &= ok;
                println!("{} {}", if ok { "PASS" } else { "FAIL" }, report.suite);
                for c in report.failures() {
                    println!("  {} observed {} vs {}", c.name, c.observed, c.bound_or_band);
                }
            }
            Ok(if all_pass { 0 } else { EXIT_CHECK })
        }
        Command::Plot {
            inputs,
            out,
            axes,
            n,
            references,
        } => {
            let axes: Vec<PlotAxis> = axes.split(',').map(|a| PlotAxis::parse(a.trim())).collect::<Result<_, _>>()?;
            let mut traces = Vec::with_capacity(inputs.len());
            let mut first_cfg = None;
            for input in &inputs {
                let (trace_path, cfg_path) = if input.is_dir() {
                    (input.join("trace.csv"), Some(input.join("config.cfg")))
                } else {
                    (input.clone(), input.parent().map(|p| p.join("config.cfg")))
                };
                let cfg = match cfg_path.filter(|p| p.exists()) {
                    Some(p) => Some(load_config(&p, seed)?),
                    None => None,
                };
                let name = cfg
                    .as_ref()
                    .map(|c| c.algorithm.as_str().to_string())
                    .unwrap_or_else(|| input.display().to_string());
                if first_cfg.is_none() {
                    first_cfg = cfg;
                }
                traces.push((name, read_trace_csv(&trace_path)?));
            }
            let n_train = match (n, &first_cfg) {
                (Some(n), _) => n,
                (None, Some(cfg)) => match &cfg.world {
                    WorldSource::Generate(spec) => spec.n,
                    WorldSource::Load(_) => prepare_world(cfg)?.spec.n,
                },
                (None, None) => return Err(Error::Config("--n is required without a config.cfg".into())),
            };
            let refs = match (&first_cfg, references) {
                (Some(cfg), true) => reference_losses(cfg, &prepare_world(cfg)?)?,
                (None, true) => return Err(Error::Config("--references needs a run directory with config.cfg".into())),
                _ => References::default(),
            };
            let series: Vec<Series<'_>> = traces.iter().map(|(name, rows)| Series { name: name.clone(), rows }).collect();
            for p in emit_plots(&series, &axes, refs, n_train, &out_path(&out))? {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}
