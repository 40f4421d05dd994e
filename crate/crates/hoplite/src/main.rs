use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hoplite_core::geometry::{
    centered_hex_count, generate_grid, DEFAULT_CELL_DIAMETER_KM, MAX_RINGS,
};
use hoplite_core::harness::{
    bench_scoring, check_run, run_experiments, write_results, ExperimentConfig,
};
use hoplite_core::orchestrator::{Tyche, TycheConfig};
use hoplite_core::trace::parse_demand_trace;
use hoplite_core::{Error, Result};

/// `println!` that reports write errors instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(io::stdout().lock(), $($arg)*)?
    };
}

const EXIT_ERROR: u8 = 1;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "hoplite", version, about = "GEO beam-hopping pattern engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments enabled in a TOML config and write CSV + JSON.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time brute-force against sliding-window scoring.
    BenchScoring {
        #[arg(long, value_delimiter = ',', default_value = "3,4,5,6")]
        rings: Vec<u32>,
        /// Interference threshold in cell diameters.
        #[arg(long, default_value_t = 1.0)]
        ds_diameters: f64,
        #[arg(long, default_value_t = 200)]
        patterns: usize,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Feed each demand vector of a trace file through the orchestrator.
    ServeTrace {
        demands: PathBuf,
        #[arg(long, default_value_t = 30)]
        horizon: usize,
        #[arg(long, default_value_t = 200)]
        mcts_iterations: usize,
        #[arg(long, default_value_t = 10)]
        beta: u32,
        /// Wait for background search to finish after every request.
        #[arg(long)]
        wait: bool,
        /// Cache snapshot to load at start (if present) and save at exit.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the hexagonal grid as JSON.
    DumpGrid {
        #[arg(long)]
        rings: u32,
        #[arg(long, default_value_t = DEFAULT_CELL_DIAMETER_KM)]
        cell_diameter_km: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::BenchScoring {
            rings,
            ds_diameters,
            patterns,
            repeats,
            seed,
        } => bench(&rings, ds_diameters, patterns, repeats, seed),
        Command::ServeTrace {
            demands,
            horizon,
            mcts_iterations,
            beta,
            wait,
            snapshot,
            seed,
        } => serve(
            &demands,
            horizon,
            mcts_iterations,
            beta,
            wait,
            snapshot.as_deref(),
            seed,
        ),
        Command::DumpGrid {
            rings,
            cell_diameter_km,
        } => dump_grid(rings, cell_diameter_km),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        // downstream closed the pipe, e.g. `| head`
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e @ Error::Invariant(_)) => {
            log::error!("invariant violated: {e}");
            ExitCode::from(EXIT_INVARIANT)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    let res = run_experiments(&cfg)?;
    for path in write_results(&cfg.output_dir, &res)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn bench(
    rings: &[u32],
    ds_diameters: f64,
    patterns: usize,
    repeats: usize,
    seed: u64,
) -> Result<()> {
    let cfg = ExperimentConfig::default();
    out!("cells,beams,ds_km,bruteforce_ns,sliding_ns,speedup");
    for &r in rings {
        let system = cfg.system(r)?;
        let row = bench_scoring(
            &system,
            ds_diameters * system.grid.cell_diameter(),
            patterns,
            repeats,
            seed,
        )?;
        out!(
            "{},{},{},{:.1},{:.1},{:.3}",
            row.cells,
            row.beams,
            row.ds_km,
            row.bruteforce_ns,
            row.sliding_ns,
            row.speedup
        );
    }
    Ok(())
}

fn dump_grid(rings: u32, cell_diameter_km: f64) -> Result<()> {
    let json = generate_grid(rings, cell_diameter_km)?.to_json()?;
    out!("{json}");
    Ok(())
}

fn rings_for(cells: usize) -> Result<u32> {
    (1..=MAX_RINGS)
        .find(|&r| centered_hex_count(r) == cells)
        .ok_or_else(|| {
            Error::Config(format!(
                "{cells} values per line is not a hexagonal grid size"
            ))
        })
}

fn serve(
    demands: &Path,
    horizon: usize,
    mcts_iterations: usize,
    beta: u32,
    wait: bool,
    snapshot: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let trace = parse_demand_trace(&std::fs::read_to_string(demands)?)?;
    let Some(first) = trace.first() else {
        log::warn!("empty demand trace");
        return Ok(());
    };
    let mut exp = ExperimentConfig::default();
    exp.scheduler.mcts.iterations = mcts_iterations;
    let system = exp.system(rings_for(first.len())?)?;
    let cfg = TycheConfig {
        horizon,
        beta,
        scheduler: exp.scheduler.clone(),
        seed,
        ..TycheConfig::default()
    };
    let tyche = Tyche::new(system, cfg)?;
    if let Some(path) = snapshot.filter(|p| p.exists()) {
        let n = tyche.cache().load(path)?;
        log::info!("loaded {n} cached plans from {}", path.display());
    }
    out!("request,source,latency_ms,served_bits,dropped_packets");
    for (id, demand) in trace.into_iter().enumerate() {
        let resp = tyche.handle_request(&tyche.request(demand.clone(), id as u64))?;
        let sim = tyche.system().replay(&resp.bhtp, &demand)?;
        check_run(tyche.system(), &sim)?;
        out!(
            "{},{},{:.3},{},{}",
            resp.request_id,
            resp.source.name(),
            resp.latency.as_secs_f64() * 1e3,
            sim.total_served_bits(),
            sim.total_dropped()
        );
        if wait {
            tyche.wait_idle();
        }
    }
    tyche.wait_idle();
    let stats = tyche.job_stats();
    log::info!(
        "background jobs: {} enqueued, {} coalesced, {} dropped, {} completed, {} failed; cache {:?}",
        stats.enqueued,
        stats.coalesced,
        stats.dropped,
        stats.completed,
        stats.failed,
        tyche.cache().stats()
    );
    if let Some(path) = snapshot {
        tyche.cache().save(path)?;
        log::info!(
            "saved {} cached plans to {}",
            tyche.cache().len(),
            path.display()
        );
    }
    Ok(())
}
