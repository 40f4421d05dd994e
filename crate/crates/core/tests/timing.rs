//! Wall-clock checks. Only the loose bounds are asserted; the rest is printed
//! for inspection with `--nocapture`.

use hoplite_core::geometry::DEFAULT_CELL_DIAMETER_KM;
use hoplite_core::harness::{bench_scoring, run_timing_table, ExperimentConfig};
use hoplite_core::mcts::MctsConfig;
use hoplite_core::schedule::{Algorithm, Scheduler, SchedulerSettings};

fn config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        rings: 6,
        seeds: vec![0],
        ..ExperimentConfig::default()
    };
    cfg.timing.rings = vec![3, 6];
    cfg.timing.patterns = 3;
    cfg.scheduler.mcts = MctsConfig {
        iterations: 100,
        ..MctsConfig::default()
    };
    cfg.scheduler.ga.generations = 20;
    cfg
}

#[test]
fn greedy_slot_is_fast_at_127_cells() {
    let cfg = config();
    let system = cfg.system(6).unwrap();
    assert_eq!((system.cells(), system.beams), (127, 31));
    let rates = cfg.demand(&system, 1.0, 0).unwrap();
    let trace = Scheduler::new(Algorithm::Greedy, SchedulerSettings::default(), 0)
        .run(&system, &rates, 30)
        .unwrap();
    let worst = trace.pattern_times.iter().max().unwrap().as_secs_f64() * 1e3;
    let mean = trace
        .pattern_times
        .iter()
        .map(|d| d.as_secs_f64())
        .sum::<f64>()
        * 1e3
        / 30.0;
    eprintln!("greedy at N=127: mean {mean:.4} ms, worst {worst:.4} ms per slot");
    assert!(mean < 10.0, "mean greedy slot {mean} ms");
}

#[test]
fn timing_table_report() {
    let rows = run_timing_table(&config()).unwrap();
    for r in &rows {
        eprintln!(
            "{:>17} N={:<3} K={:<2} {:>10.3} ms (sd {:.3})",
            r.label, r.cells, r.beams, r.mean_ms, r.stdev_ms
        );
    }
    let at = |label: &str, n: usize| {
        rows.iter()
            .find(|r| r.label == label && r.cells == n)
            .unwrap()
            .mean_ms
    };
    for n in [37, 127] {
        eprintln!(
            "N={n}: mcts optimized {:.3} ms vs unoptimized {:.3} ms",
            at("mcts", n),
            at("mcts_unoptimized", n)
        );
        assert!(at("greedy", n) < at("mcts", n));
    }
    // search cost grows with the grid
    assert!(at("mcts", 127) > at("mcts", 37));
}

#[test]
fn wider_threshold_costs_more_per_score() {
    let system = config().system(6).unwrap();
    let narrow = bench_scoring(&system, DEFAULT_CELL_DIAMETER_KM, 100, 50, 1).unwrap();
    let wide = bench_scoring(&system, 5.0 * DEFAULT_CELL_DIAMETER_KM, 100, 50, 1).unwrap();
    eprintln!(
        "sliding score at N=127: {:.0} ns at 1 D, {:.0} ns at 5 D",
        narrow.sliding_ns, wide.sliding_ns
    );
    assert!(wide.sliding_ns > narrow.sliding_ns);
}
