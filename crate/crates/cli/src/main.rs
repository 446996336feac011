use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};

use graphcon::checks::{run_checks, CHECK_NAMES};
use graphcon::dataset::{gen_grid, gen_sbm, Dataset};
use graphcon::diagnostics::depth_gradient_sweep;
use graphcon::experiments::{
    cmd_depth_sweep, cmd_sensitivity_sweep, cmd_train, energy_profile, write_energy_csv, write_gradient_sweep_csv,
    write_sweep_csv, ExperimentConfig,
};
use graphcon::training::write_history_csv;

#[derive(Parser)]
#[command(name = "graphcon", version, about = "Graph-coupled oscillator networks")]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Worker threads for sweep cells.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lattice graph with uniform random features.
    GenGrid,
    /// Labelled stochastic block model with splits.
    GenSbm,
    /// Layer-wise Dirichlet energies on a lattice (energy_profile.csv).
    EnergyProfile,
    /// Numerical checks; `all` runs every check. Writes checks.json.
    Checks { names: Vec<String> },
    /// Trains one model (metrics.csv, model.json, summary.json).
    Train,
    /// Accuracy and gradient magnitude against depth.
    DepthSweep,
    /// Accuracy over an alpha grid, then a gamma grid.
    SensitivitySweep,
}

fn init_logging() {
    let level = std::env::var("GRAPHCON_LOG").unwrap_or_else(|_| "error".into());
    let filter = match level.as_str() {
        "error" | "info" | "debug" => level.as_str(),
        _ => "error",
    };
    env_logger::Builder::new()
        .parse_filters(filter)
        .format_timestamp(None)
        .init();
    if filter != level {
        warn!("ignoring GRAPHCON_LOG={level:?}; expected error, info or debug");
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_dataset(ds: &Dataset, out: &Path) -> Result<()> {
    let paths = ds.save(out)?;
    ds.write_node_map(&out.join("node_map.tsv"))?;
    info!(
        "wrote {} nodes, {} edges to {}",
        ds.num_nodes(),
        ds.graph.num_edges(),
        paths.edges.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let jobs = cli.jobs.max(1);

    match &cli.command {
        Command::GenGrid => {
            let g = &cfg.grid;
            save_dataset(&gen_grid(g.width, g.height, g.features, cfg.seed)?, out)?;
        }
        Command::GenSbm => {
            let s = &cfg.dataset.sbm;
            save_dataset(&gen_sbm(s.num_nodes, s.communities, s.p_in, s.p_out, cfg.seed)?, out)?;
        }
        Command::EnergyProfile => {
            let curves = energy_profile(&cfg.energy_profile, cfg.seed)?;
            for c in &curves {
                info!(
                    "{} alpha={:?}: slope {:.4} ratio {:.3e} oversmoothing {}",
                    c.model, c.alpha, c.report.slope, c.report.terminal_ratio, c.report.oversmoothing
                );
            }
            write_energy_csv(&curves, create(&out.join("energy_profile.csv"))?)?;
        }
        Command::Checks { names } => {
            if names.is_empty() {
                return Ok(ExitCode::SUCCESS);
            }
            let names: Vec<String> = if names.iter().any(|n| n == "all") {
                CHECK_NAMES.iter().map(|s| s.to_string()).collect()
            } else {
                names.clone()
            };
            let results = run_checks(&names, &cfg.checks, cfg.seed)?;
            write_json(&out.join("checks.json"), &results)?;
            println!("{}", serde_json::to_string_pretty(&results)?);
            if results.iter().any(|r| !r.pass) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Train => {
            let (_, mcfg, outcome) = cmd_train(&cfg)?;
            write_history_csv(&outcome.history, create(&out.join("metrics.csv"))?)?;
            outcome.best.save(&out.join("model.json"))?;
            let summary = serde_json::json!({
                "model": mcfg,
                "epochs_run": outcome.history.len(),
                "best_epoch": outcome.best_epoch,
                "best_val_metric": outcome.best_val_metric,
                "test_metric": outcome.test_metric,
            });
            write_json(&out.join("summary.json"), &summary)?;
        }
        Command::DepthSweep => {
            let rows = cmd_depth_sweep(&cfg, jobs)?;
            write_sweep_csv(&rows, create(&out.join("depth_sweep.csv"))?)?;
            let grads = depth_gradient_sweep(&cfg.gradient_sweep, cfg.seed)?;
            write_gradient_sweep_csv(&grads, create(&out.join("gradient_sweep.csv"))?)?;
        }
        Command::SensitivitySweep => {
            let rows = cmd_sensitivity_sweep(&cfg, jobs)?;
            write_sweep_csv(&rows, create(&out.join("sensitivity.csv"))?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
