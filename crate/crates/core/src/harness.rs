//! Experiment runner: throughput sweeps, timing tables, convergence traces,
//! scoring benchmarks and discretization / interference-threshold sweeps.
//!
//! Offered load is expressed as a fraction of system capacity: the mean
//! arrival rate is chosen so that total expected arrivals per slot equal
//! `load * K * beam_capacity_packets`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::pattern_random;
use crate::channel::LinkParams;
use crate::error::{Error, Result};
use crate::geometry::{centered_hex_count, generate_grid, DEFAULT_CELL_DIAMETER_KM, MAX_RINGS};
use crate::mcts::{compute_pattern_mcts, compute_pattern_mcts_traced, MctsConfig};
use crate::orchestrator::{Source, Tyche, TycheConfig};
use crate::schedule::{Algorithm, Scheduler, SchedulerSettings};
use crate::scoring::{score_bruteforce, Scorer, ScorerKind};
use crate::system::{default_beams, RunTrace, SystemModel};
use crate::traffic::{generate_demand, QueueState, TrafficParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiments {
    pub throughput: bool,
    pub timing: bool,
    pub convergence: bool,
    pub scoring_bench: bool,
    pub beta_sweep: bool,
    pub ds_sweep: bool,
}

impl Default for Experiments {
    fn default() -> Self {
        Self {
            throughput: true,
            timing: false,
            convergence: false,
            scoring_bench: false,
            beta_sweep: false,
            ds_sweep: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub rings: Vec<u32>,
    pub patterns: usize,
    pub load: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            rings: vec![3, 4, 5, 6],
            patterns: 10,
            load: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub rings: u32,
    pub load: f64,
    pub iterations: usize,
    /// Iteration budgets for the committed-pattern sweep; `iterations` is
    /// always appended as the final budget.
    pub budgets: Vec<usize>,
    /// Slots of closed-loop simulation per variant; 0 skips it.
    pub throughput_slots: usize,
}

impl ConvergenceConfig {
    pub fn budget_ladder(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self
            .budgets
            .iter()
            .copied()
            .filter(|&x| x >= 1 && x < self.iterations)
            .collect();
        b.sort_unstable();
        b.dedup();
        b.push(self.iterations);
        b
    }
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            rings: 4,
            load: 2.0,
            iterations: 300,
            budgets: vec![1, 2, 3, 5, 8, 12, 20, 30, 50, 80, 120, 200],
            throughput_slots: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringBenchConfig {
    pub rings: Vec<u32>,
    pub patterns: usize,
    pub repeats: usize,
    /// Threshold in cell diameters.
    pub ds_diameters: f64,
}

impl Default for ScoringBenchConfig {
    fn default() -> Self {
        Self {
            rings: vec![3, 4, 5, 6],
            patterns: 200,
            repeats: 20,
            ds_diameters: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaSweepConfig {
    pub betas: Vec<u32>,
    pub load: f64,
}

impl Default for BetaSweepConfig {
    fn default() -> Self {
        Self {
            betas: vec![2, 4, 6, 8, 10],
            load: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsSweepConfig {
    pub diameters: Vec<f64>,
    /// Grid used for the per-score timing.
    pub timing_rings: u32,
    pub load: f64,
}

impl Default for DsSweepConfig {
    fn default() -> Self {
        Self {
            diameters: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            timing_rings: 6,
            load: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rings: u32,
    /// Beam count; `None` means a quarter of the cells, rounded down.
    pub beams: Option<usize>,
    pub cell_diameter_km: f64,
    pub loads: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub slots: usize,
    pub hotspot_count: usize,
    pub hotspot_multiplier: f64,
    pub output_dir: PathBuf,
    pub link: LinkParams,
    pub traffic: TrafficParams,
    pub scheduler: SchedulerSettings,
    pub experiments: Experiments,
    pub timing: TimingConfig,
    pub convergence: ConvergenceConfig,
    pub scoring: ScoringBenchConfig,
    pub beta: BetaSweepConfig,
    pub ds: DsSweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rings: 3,
            beams: None,
            cell_diameter_km: DEFAULT_CELL_DIAMETER_KM,
            loads: vec![0.2, 0.5, 0.8, 1.0, 1.2],
            algorithms: Algorithm::ALL.to_vec(),
            seeds: (0..10).collect(),
            slots: 30,
            hotspot_count: 0,
            hotspot_multiplier: 1.0,
            output_dir: PathBuf::from("results"),
            link: LinkParams::default(),
            traffic: TrafficParams::default(),
            scheduler: SchedulerSettings::default(),
            experiments: Experiments::default(),
            timing: TimingConfig::default(),
            convergence: ConvergenceConfig::default(),
            scoring: ScoringBenchConfig::default(),
            beta: BetaSweepConfig::default(),
            ds: DsSweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let all_rings = [self.rings, self.convergence.rings, self.ds.timing_rings]
            .into_iter()
            .chain(self.timing.rings.iter().copied())
            .chain(self.scoring.rings.iter().copied());
        for r in all_rings {
            if !(1..=MAX_RINGS).contains(&r) {
                return Err(Error::Config(format!(
                    "ring counts must lie in 1..={MAX_RINGS}, got {r}"
                )));
            }
        }
        if !(self.cell_diameter_km.is_finite() && self.cell_diameter_km > 0.0) {
            return Err(Error::Config("cell_diameter_km must be positive".into()));
        }
        let cells = centered_hex_count(self.rings);
        if let Some(k) = self.beams {
            if k == 0 || k > cells {
                return Err(Error::Config(format!(
                    "beams must lie in 1..={cells} for {} rings, got {k}",
                    self.rings
                )));
            }
        }
        if self.hotspot_count > cells {
            return Err(Error::Config(format!(
                "hotspot_count {} exceeds the {cells} cells",
                self.hotspot_count
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.slots == 0 {
            return Err(Error::Config("slots must be at least 1".into()));
        }
        if self.loads.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config("loads must be finite and nonnegative".into()));
        }
        if !(self.hotspot_multiplier.is_finite() && self.hotspot_multiplier >= 0.0) {
            return Err(Error::Config(
                "hotspot_multiplier must be finite and nonnegative".into(),
            ));
        }
        if self.beta.betas.contains(&0) {
            return Err(Error::Config("beta values must be at least 1".into()));
        }
        self.link.validate()?;
        self.traffic.validate()?;
        self.scheduler.mcts.validate()?;
        self.scheduler.ga.validate()?;
        Ok(())
    }

    /// The system for `rings`, honouring an explicit beam count only at the
    /// configured main grid size.
    pub fn system(&self, rings: u32) -> Result<SystemModel> {
        let grid = generate_grid(rings, self.cell_diameter_km)?;
        let beams = match self.beams {
            Some(k) if rings == self.rings => k,
            _ => default_beams(grid.len()),
        };
        SystemModel::new(grid, self.link.clone(), self.traffic.clone(), beams)
    }

    pub fn demand(&self, system: &SystemModel, load: f64, seed: u64) -> Result<Vec<f64>> {
        let mean = system.mean_rate_for_load(load, self.hotspot_count, self.hotspot_multiplier);
        generate_demand(
            &system.grid,
            mean,
            self.hotspot_count,
            self.hotspot_multiplier,
            seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub algorithm: String,
    pub cells: usize,
    pub beams: usize,
    pub load: f64,
    pub seed: u64,
    pub beta: Option<u32>,
    pub ds_km: Option<f64>,
    pub throughput_bits: u64,
    pub dropped_packets: u64,
    pub arrived_packets: u64,
    pub mean_pattern_ms: f64,
    pub max_pattern_ms: f64,
}

const METRIC_COLUMNS: [&str; 10] = [
    "algorithm",
    "cells",
    "beams",
    "load",
    "seed",
    "beta",
    "ds_km",
    "throughput_bits",
    "dropped_packets",
    "arrived_packets",
];

/// CSV for metric records. Timing columns are optional so that seeded runs
/// can be compared byte for byte.
pub fn metrics_csv(records: &[MetricsRecord], include_timing: bool) -> String {
    let mut header = METRIC_COLUMNS.to_vec();
    if include_timing {
        header.extend(["mean_pattern_ms", "max_pattern_ms"]);
    }
    rows_csv(&header, records, |r| {
        let mut row = vec![
            r.algorithm.clone(),
            r.cells.to_string(),
            r.beams.to_string(),
            r.load.to_string(),
            r.seed.to_string(),
            r.beta.map(|b| b.to_string()).unwrap_or_default(),
            r.ds_km.map(|d| d.to_string()).unwrap_or_default(),
            r.throughput_bits.to_string(),
            r.dropped_packets.to_string(),
            r.arrived_packets.to_string(),
        ];
        if include_timing {
            row.push(format!("{:.6}", r.mean_pattern_ms));
            row.push(format!("{:.6}", r.max_pattern_ms));
        }
        row
    })
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Post-hoc checks on a simulated run: cardinality, range, whole-packet
/// accounting and per-slot capacity bounds.
pub fn check_run(system: &SystemModel, trace: &RunTrace) -> Result<()> {
    let bits = system.traffic.packet_bits;
    let invariant = |msg: String| Err(Error::Invariant(msg));
    if let Err(e) = trace.bhtp().validate(system.cells(), system.beams) {
        return invariant(format!("emitted plan is malformed: {e}"));
    }
    for (slot, (p, r)) in trace.patterns.iter().zip(&trace.reports).enumerate() {
        let caps = system.capacities(p);
        for cell in 0..system.cells() {
            if r.served_bits[cell] != r.served_packets[cell] * bits {
                return invariant(format!(
                    "slot {slot} cell {cell}: served bits are not whole packets"
                ));
            }
            if r.served_packets[cell] > system.traffic.packets_per_slot(caps[cell]) {
                return invariant(format!("slot {slot} cell {cell}: served beyond capacity"));
            }
        }
    }
    Ok(())
}

fn record(
    algorithm: &str,
    system: &SystemModel,
    load: f64,
    seed: u64,
    trace: &RunTrace,
    beta: Option<u32>,
    ds_km: Option<f64>,
) -> MetricsRecord {
    let times = &trace.pattern_times;
    let mean = if times.is_empty() {
        0.0
    } else {
        times.iter().map(|&d| ms(d)).sum::<f64>() / times.len() as f64
    };
    MetricsRecord {
        algorithm: algorithm.to_string(),
        cells: system.cells(),
        beams: system.beams,
        load,
        seed,
        beta,
        ds_km,
        throughput_bits: trace.total_served_bits(),
        dropped_packets: trace.total_dropped(),
        arrived_packets: trace.reports.iter().flat_map(|r| &r.arrived_packets).sum(),
        mean_pattern_ms: mean,
        max_pattern_ms: times.iter().map(|&d| ms(d)).fold(0.0, f64::max),
    }
}

/// One closed-loop run per (algorithm, load, seed), in that nesting order.
pub fn run_throughput_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let system = cfg.system(cfg.rings)?;
    let mut jobs = Vec::new();
    for &alg in &cfg.algorithms {
        for &load in &cfg.loads {
            for &seed in &cfg.seeds {
                jobs.push((alg, load, seed));
            }
        }
    }
    jobs.par_iter()
        .map(|&(alg, load, seed)| {
            let rates = cfg.demand(&system, load, seed)?;
            let trace =
                Scheduler::new(alg, cfg.scheduler.clone(), seed).run(&system, &rates, cfg.slots)?;
            check_run(&system, &trace)?;
            Ok(record(alg.name(), &system, load, seed, &trace, None, None))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub label: String,
    pub cells: usize,
    pub beams: usize,
    pub patterns: usize,
    pub mean_ms: f64,
    pub stdev_ms: f64,
}

fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

/// Per-pattern wall time for each algorithm and grid size, run sequentially.
/// `mcts_unoptimized` is MCTS with brute-force scoring and no pruning.
pub fn run_timing_table(cfg: &ExperimentConfig) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    let mut variants: Vec<(String, Algorithm, SchedulerSettings)> = cfg
        .algorithms
        .iter()
        .map(|&a| (a.name().to_string(), a, cfg.scheduler.clone()))
        .collect();
    if cfg.algorithms.contains(&Algorithm::Mcts) {
        let mut slow = cfg.scheduler.clone();
        slow.mcts.pruning = false;
        slow.mcts.scorer = ScorerKind::BruteForce;
        variants.push(("mcts_unoptimized".into(), Algorithm::Mcts, slow));
    }
    for &rings in &cfg.timing.rings {
        let system = cfg.system(rings)?;
        let rates = cfg.demand(&system, cfg.timing.load, cfg.seeds[0])?;
        for (label, alg, settings) in &variants {
            let trace = Scheduler::new(*alg, settings.clone(), cfg.seeds[0]).run(
                &system,
                &rates,
                cfg.timing.patterns,
            )?;
            check_run(&system, &trace)?;
            let times: Vec<f64> = trace.pattern_times.iter().map(|&d| ms(d)).collect();
            let (mean_ms, stdev_ms) = mean_stdev(&times);
            rows.push(TimingRow {
                label: label.clone(),
                cells: system.cells(),
                beams: system.beams,
                patterns: times.len(),
                mean_ms,
                stdev_ms,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub seed: u64,
    pub pruning: bool,
    /// Mean over stages of the best-so-far simulated score per iteration.
    pub aggregate: Vec<f64>,
    pub stage_best: Vec<Vec<f64>>,
    pub iterations_to_99: usize,
    pub plateau: f64,
    /// Iteration budgets and the full-interference score of the pattern
    /// committed under each.
    pub budgets: Vec<usize>,
    pub budget_scores: Vec<f64>,
    /// Smallest budget whose pattern scores at least 99% of the pattern
    /// committed under the largest budget.
    pub budget_to_99: usize,
    /// Closed-loop throughput with this variant, if requested.
    pub throughput_bits: Option<u64>,
}

/// Smallest budget whose score reaches `fraction` of the last budget's score.
pub fn budget_convergence(budgets: &[usize], scores: &[f64], fraction: f64) -> usize {
    let Some(&last) = scores.last() else {
        return 0;
    };
    budgets
        .iter()
        .zip(scores)
        .find(|(_, &s)| s >= fraction * last)
        .map_or(0, |(&b, _)| b)
}

/// Traces MCTS on each seed's initial queue snapshot with and without pruning.
pub fn run_convergence_trace(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceRecord>> {
    let conv = &cfg.convergence;
    let system = cfg.system(conv.rings)?;
    let ds = cfg.scheduler.ds_km.unwrap_or(system.grid.cell_diameter());
    let mut jobs = Vec::new();
    for &seed in &cfg.seeds {
        for pruning in [true, false] {
            jobs.push((seed, pruning));
        }
    }
    jobs.par_iter()
        .map(|&(seed, pruning)| {
            let rates = cfg.demand(&system, conv.load, seed)?;
            let queues = QueueState::from_rates(&rates, system.traffic.ttl_slots);
            let totals: Vec<f64> = queues.totals().into_iter().map(|d| d as f64).collect();
            let mcts = MctsConfig {
                iterations: conv.iterations,
                pruning,
                seed,
                ..cfg.scheduler.mcts.clone()
            };
            let (_, trace) =
                compute_pattern_mcts_traced(&system.score_context(&totals, ds), &mcts)?;
            let aggregate = trace.aggregate();
            let ctx = system.score_context(&totals, ds);
            let budgets = conv.budget_ladder();
            let budget_scores = budgets
                .iter()
                .map(|&b| {
                    let m = MctsConfig {
                        iterations: b,
                        ..mcts.clone()
                    };
                    score_bruteforce(&compute_pattern_mcts(&ctx, &m)?, &ctx)
                })
                .collect::<Result<Vec<f64>>>()?;
            let budget_to_99 = budget_convergence(&budgets, &budget_scores, 0.99);
            let throughput_bits = if conv.throughput_slots > 0 {
                let settings = SchedulerSettings {
                    mcts: mcts.clone(),
                    ..cfg.scheduler.clone()
                };
                let run = Scheduler::new(Algorithm::Mcts, settings, seed).run(
                    &system,
                    &rates,
                    conv.throughput_slots,
                )?;
                check_run(&system, &run)?;
                Some(run.total_served_bits())
            } else {
                None
            };
            Ok(ConvergenceRecord {
                seed,
                pruning,
                iterations_to_99: trace.iterations_to_reach(0.99).unwrap_or(0),
                plateau: aggregate.last().copied().unwrap_or(0.0),
                aggregate,
                stage_best: trace.stage_best,
                budgets,
                budget_scores,
                budget_to_99,
                throughput_bits,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoringRow {
    pub cells: usize,
    pub beams: usize,
    pub ds_km: f64,
    pub bruteforce_ns: f64,
    pub sliding_ns: f64,
    pub speedup: f64,
}

/// Mean nanoseconds per score for each backend over the same random patterns.
pub fn bench_scoring(
    system: &SystemModel,
    ds_km: f64,
    patterns: usize,
    repeats: usize,
    seed: u64,
) -> Result<ScoringRow> {
    let n = system.cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queues: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.0..2.0 * system.beam_capacity_packets()))
        .collect();
    let ctx = system.score_context(&queues, ds_km);
    let pats = (0..patterns.max(1))
        .map(|_| pattern_random(n, system.beams, &mut rng).map(|p| p.cells().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let time = |kind: ScorerKind| {
        let mut scorer = Scorer::new(kind, n);
        let mut sink = 0.0;
        // warm-up pass
        for p in &pats {
            sink += scorer.score_cells(&ctx, p);
        }
        let t0 = Instant::now();
        for _ in 0..repeats.max(1) {
            for p in &pats {
                sink += scorer.score_cells(&ctx, p);
            }
        }
        let ns = t0.elapsed().as_secs_f64() * 1e9 / (pats.len() * repeats.max(1)) as f64;
        std::hint::black_box(sink);
        ns
    };
    let bruteforce_ns = time(ScorerKind::BruteForce);
    let sliding_ns = time(ScorerKind::Sliding);
    Ok(ScoringRow {
        cells: n,
        beams: system.beams,
        ds_km,
        bruteforce_ns,
        sliding_ns,
        speedup: bruteforce_ns / sliding_ns,
    })
}

pub fn run_scoring_bench(cfg: &ExperimentConfig) -> Result<Vec<ScoringRow>> {
    let sc = &cfg.scoring;
    sc.rings
        .iter()
        .map(|&rings| {
            let system = cfg.system(rings)?;
            let ds = sc.ds_diameters * system.grid.cell_diameter();
            bench_scoring(&system, ds, sc.patterns, sc.repeats, cfg.seeds[0])
        })
        .collect()
}

/// Throughput of plans served through the cache path for each beta, next to
/// the plan computed directly on the raw demand (`beta` empty). Cached plans
/// are replayed against the raw demand.
pub fn run_beta_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let system = cfg.system(cfg.rings)?;
    let load = cfg.beta.load;
    let per_seed: Vec<Vec<MetricsRecord>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let rates = cfg.demand(&system, load, seed)?;
            let mut out = Vec::new();
            let direct = Scheduler::new(Algorithm::Mcts, cfg.scheduler.clone(), seed)
                .run(&system, &rates, cfg.slots)?;
            check_run(&system, &direct)?;
            out.push(record(
                "mcts_direct",
                &system,
                load,
                seed,
                &direct,
                None,
                None,
            ));
            for &beta in &cfg.beta.betas {
                let tyche = Tyche::new(
                    system.clone(),
                    TycheConfig {
                        horizon: cfg.slots,
                        beta,
                        scheduler: cfg.scheduler.clone(),
                        seed,
                        ..TycheConfig::default()
                    },
                )?;
                tyche.handle_request(&tyche.request(rates.clone(), 0))?;
                tyche.wait_idle();
                let resp = tyche.handle_request(&tyche.request(rates.clone(), 1))?;
                if resp.source != Source::Cache {
                    return Err(Error::Invariant(format!(
                        "beta {beta}: background plan was not cached"
                    )));
                }
                let replay = system.replay(&resp.bhtp, &rates)?;
                check_run(&system, &replay)?;
                out.push(record(
                    "tyche",
                    &system,
                    load,
                    seed,
                    &replay,
                    Some(beta),
                    None,
                ));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DsRow {
    pub ds_diameters: f64,
    pub ds_km: f64,
    pub timing_cells: usize,
    pub sliding_ns: f64,
    pub mean_throughput_bits: f64,
}

/// Per-score time on the timing grid and mean MCTS throughput on the main
/// grid, for each interference threshold.
pub fn run_ds_sweep(cfg: &ExperimentConfig) -> Result<Vec<DsRow>> {
    let timing_system = cfg.system(cfg.ds.timing_rings)?;
    let system = cfg.system(cfg.rings)?;
    let mut rows = Vec::new();
    for &mult in &cfg.ds.diameters {
        let ds_km = mult * system.grid.cell_diameter();
        let bench = bench_scoring(
            &timing_system,
            mult * timing_system.grid.cell_diameter(),
            cfg.scoring.patterns,
            cfg.scoring.repeats,
            cfg.seeds[0],
        )?;
        let settings = SchedulerSettings {
            ds_km: Some(ds_km),
            ..cfg.scheduler.clone()
        };
        let totals = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let rates = cfg.demand(&system, cfg.ds.load, seed)?;
                let run = Scheduler::new(Algorithm::Mcts, settings.clone(), seed)
                    .run(&system, &rates, cfg.slots)?;
                check_run(&system, &run)?;
                Ok(run.total_served_bits() as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(DsRow {
            ds_diameters: mult,
            ds_km,
            timing_cells: timing_system.cells(),
            sliding_ns: bench.sliding_ns,
            mean_throughput_bits: totals.iter().sum::<f64>() / totals.len() as f64,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExperimentResults {
    pub throughput: Vec<MetricsRecord>,
    pub timing: Vec<TimingRow>,
    pub convergence: Vec<ConvergenceRecord>,
    pub scoring: Vec<ScoringRow>,
    pub beta: Vec<MetricsRecord>,
    pub ds: Vec<DsRow>,
}

/// Runs every enabled experiment. Timing experiments run on a single worker.
pub fn run_experiments(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let ex = &cfg.experiments;
    let mut res = ExperimentResults::default();
    if ex.throughput {
        res.throughput = run_throughput_sweep(cfg)?;
    }
    if ex.convergence {
        res.convergence = run_convergence_trace(cfg)?;
    }
    if ex.beta_sweep {
        res.beta = run_beta_sweep(cfg)?;
    }
    if ex.timing || ex.scoring_bench || ex.ds_sweep {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| -> Result<()> {
            if ex.timing {
                res.timing = run_timing_table(cfg)?;
            }
            if ex.scoring_bench {
                res.scoring = run_scoring_bench(cfg)?;
            }
            if ex.ds_sweep {
                res.ds = run_ds_sweep(cfg)?;
            }
            Ok(())
        })?;
    }
    Ok(res)
}

fn rows_csv<T, F>(header: &[&str], rows: &[T], mut row: F) -> String
where
    F: FnMut(&T) -> Vec<String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    // writing to memory cannot fail
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(row(r)).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv fields are utf-8")
}

/// Writes CSV tables and a single JSON document under `dir`. Returns the
/// paths written.
pub fn write_results(dir: &Path, res: &ExperimentResults) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files: Vec<(&str, String)> = Vec::new();
    if !res.throughput.is_empty() {
        files.push(("throughput.csv", metrics_csv(&res.throughput, true)));
    }
    if !res.timing.is_empty() {
        files.push((
            "timing.csv",
            rows_csv(
                &["label", "cells", "beams", "patterns", "mean_ms", "stdev_ms"],
                &res.timing,
                |r| {
                    vec![
                        r.label.clone(),
                        r.cells.to_string(),
                        r.beams.to_string(),
                        r.patterns.to_string(),
                        format!("{:.6}", r.mean_ms),
                        format!("{:.6}", r.stdev_ms),
                    ]
                },
            ),
        ));
    }
    if !res.convergence.is_empty() {
        files.push((
            "convergence.csv",
            rows_csv(
                &[
                    "seed",
                    "pruning",
                    "iterations_to_99",
                    "plateau",
                    "budget_to_99",
                    "throughput_bits",
                ],
                &res.convergence,
                |r| {
                    vec![
                        r.seed.to_string(),
                        r.pruning.to_string(),
                        r.iterations_to_99.to_string(),
                        r.plateau.to_string(),
                        r.budget_to_99.to_string(),
                        r.throughput_bits.map(|t| t.to_string()).unwrap_or_default(),
                    ]
                },
            ),
        ));
    }
    if !res.scoring.is_empty() {
        files.push((
            "scoring.csv",
            rows_csv(
                &[
                    "cells",
                    "beams",
                    "ds_km",
                    "bruteforce_ns",
                    "sliding_ns",
                    "speedup",
                ],
                &res.scoring,
                |r| {
                    vec![
                        r.cells.to_string(),
                        r.beams.to_string(),
                        r.ds_km.to_string(),
                        format!("{:.1}", r.bruteforce_ns),
                        format!("{:.1}", r.sliding_ns),
                        format!("{:.3}", r.speedup),
                    ]
                },
            ),
        ));
    }
    if !res.beta.is_empty() {
        files.push(("beta.csv", metrics_csv(&res.beta, false)));
    }
    if !res.ds.is_empty() {
        files.push((
            "ds.csv",
            rows_csv(
                &[
                    "ds_diameters",
                    "ds_km",
                    "timing_cells",
                    "sliding_ns",
                    "mean_throughput_bits",
                ],
                &res.ds,
                |r| {
                    vec![
                        r.ds_diameters.to_string(),
                        r.ds_km.to_string(),
                        r.timing_cells.to_string(),
                        format!("{:.1}", r.sliding_ns),
                        r.mean_throughput_bits.to_string(),
                    ]
                },
            ),
        ));
    }
    files.push(("results.json", serde_json::to_string_pretty(res)?));
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            rings: 2,
            loads: vec![0.0, 1.0],
            seeds: vec![1, 2],
            slots: 4,
            ..ExperimentConfig::default()
        };
        cfg.scheduler.mcts.iterations = 10;
        cfg.scheduler.ga.population_size = 10;
        cfg.scheduler.ga.generations = 2;
        cfg
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            rings = 4
            loads = [1.2]
            algorithms = ["greedy", "mcts"]
            seeds = [7]
            [scheduler.mcts]
            iterations = 50
            pruning = false
            "#,
        )
        .unwrap();
        assert_eq!(cfg.rings, 4);
        assert_eq!(cfg.algorithms, vec![Algorithm::Greedy, Algorithm::Mcts]);
        assert_eq!(cfg.scheduler.mcts.iterations, 50);
        assert!(!cfg.scheduler.mcts.pruning);
        assert_eq!(cfg.slots, 30);
        let back = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&back).unwrap(), cfg);
    }

    #[test]
    fn config_rejections() {
        assert!(ExperimentConfig::from_toml_str("seeds = []").is_err());
        assert!(ExperimentConfig::from_toml_str("algorithms = [\"madrl\"]").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("loads = [-1.0]").is_err());
        assert!(ExperimentConfig::from_toml_str("rings = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("rings = 31").is_err());
        assert!(ExperimentConfig::from_toml_str("[timing]\nrings = [3, 0]").is_err());
        assert!(ExperimentConfig::from_toml_str("beams = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("rings = 1\nbeams = 8").is_err());
        assert!(ExperimentConfig::from_toml_str("hotspot_count = 38").is_err());
        assert!(ExperimentConfig::from_toml_str("cell_diameter_km = 0.0").is_err());
        assert!(ExperimentConfig::from_toml_str("rings = 1\nbeams = 7").is_ok());
        assert!(ExperimentConfig::from_toml_str("[scheduler.mcts]\niteratons = 5").is_err());
        assert!(ExperimentConfig::from_toml_str("[link]\naltitude = 1.0").is_err());
    }

    #[test]
    fn budget_convergence_picks_first_budget_within_fraction() {
        assert_eq!(
            budget_convergence(&[1, 5, 10, 20], &[0.5, 0.95, 0.991, 1.0], 0.99),
            10
        );
        assert_eq!(budget_convergence(&[1, 5], &[2.0, 1.0], 0.99), 1);
        assert_eq!(budget_convergence(&[], &[], 0.99), 0);
    }

    #[test]
    fn zero_load_zero_throughput() {
        let cfg = small();
        let recs = run_throughput_sweep(&cfg).unwrap();
        assert_eq!(recs.len(), 5 * 2 * 2);
        for r in recs.iter().filter(|r| r.load == 0.0) {
            assert_eq!(r.throughput_bits, 0);
        }
        assert!(recs
            .iter()
            .filter(|r| r.load == 1.0)
            .all(|r| r.throughput_bits > 0));
    }

    #[test]
    fn sweep_csv_is_deterministic() {
        let cfg = small();
        let a = metrics_csv(&run_throughput_sweep(&cfg).unwrap(), false);
        let b = metrics_csv(&run_throughput_sweep(&cfg).unwrap(), false);
        assert_eq!(a, b);
        assert!(a.starts_with(&METRIC_COLUMNS.join(",")));
    }

    #[test]
    fn served_bits_match_packet_accounting() {
        let cfg = small();
        let system = cfg.system(2).unwrap();
        let rates = cfg.demand(&system, 1.0, 3).unwrap();
        let run = Scheduler::new(Algorithm::Greedy, cfg.scheduler.clone(), 3)
            .run(&system, &rates, 6)
            .unwrap();
        check_run(&system, &run).unwrap();
        let packets: u64 = run.reports.iter().flat_map(|r| &r.served_packets).sum();
        assert_eq!(run.total_served_bits(), packets * cfg.traffic.packet_bits);
    }

    #[test]
    fn writes_all_outputs() {
        let mut cfg = small();
        cfg.experiments = Experiments {
            throughput: true,
            timing: true,
            convergence: true,
            scoring_bench: true,
            beta_sweep: true,
            ds_sweep: true,
        };
        cfg.timing.rings = vec![2];
        cfg.timing.patterns = 2;
        cfg.convergence.rings = 2;
        cfg.convergence.iterations = 10;
        cfg.convergence.budgets = vec![2, 5, 40];
        cfg.convergence.throughput_slots = 2;
        cfg.scoring.rings = vec![2];
        cfg.scoring.patterns = 5;
        cfg.scoring.repeats = 2;
        cfg.beta.betas = vec![2, 10];
        cfg.ds.diameters = vec![1.0, 2.0];
        cfg.ds.timing_rings = 2;
        let res = run_experiments(&cfg).unwrap();
        assert_eq!(res.beta.len(), 2 * 3);
        assert_eq!(res.convergence.len(), 4);
        assert_eq!(res.convergence[0].budgets, vec![2, 5, 10]);
        let dir = tempfile::tempdir().unwrap();
        let files = write_results(dir.path(), &res).unwrap();
        assert_eq!(files.len(), 7);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("results.json")).unwrap())
                .unwrap();
        assert!(json["throughput"].is_array());
    }
}
