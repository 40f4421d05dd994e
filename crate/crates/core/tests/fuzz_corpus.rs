//! Replays the checked-in fuzz seeds plus seeded mutations of them through
//! the same checks the fuzz targets make.

use std::fs;
use std::path::PathBuf;

use hoplite_core::cache::{decode_snapshot, CacheConfig, PlanCache};
use hoplite_core::harness::ExperimentConfig;
use hoplite_core::trace::parse_demand_trace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

fn mutants(seed: &[u8], rng: &mut ChaCha8Rng, count: usize) -> Vec<Vec<u8>> {
    (0..count)
        .map(|_| {
            let mut m = seed.to_vec();
            match rng.random_range(0..4) {
                0 if !m.is_empty() => {
                    let i = rng.random_range(0..m.len());
                    m[i] ^= 1 << rng.random_range(0..8);
                }
                1 => {
                    let keep = rng.random_range(0..=m.len());
                    m.truncate(keep);
                }
                2 if !m.is_empty() => {
                    let i = rng.random_range(0..m.len());
                    m[i] = rng.random();
                }
                _ => {
                    let i = rng.random_range(0..=m.len());
                    let extra: Vec<u8> =
                        (0..rng.random_range(1..8)).map(|_| rng.random()).collect();
                    m.splice(i..i, extra);
                }
            }
            m
        })
        .collect()
}

fn check_snapshot(data: &[u8]) -> bool {
    let Ok(entries) = decode_snapshot(data) else {
        return false;
    };
    let cache = PlanCache::new(CacheConfig::default()).unwrap();
    for e in entries {
        assert!(e.verify());
        cache.store_discretized(e.vector, e.bhtp).unwrap();
    }
    let again = decode_snapshot(&cache.encode_snapshot()).unwrap();
    assert_eq!(again.len(), cache.len());
    true
}

fn check_config(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else {
        return false;
    };
    match ExperimentConfig::from_toml_str(text) {
        Ok(cfg) => {
            assert!(cfg.validate().is_ok());
            true
        }
        Err(_) => false,
    }
}

fn check_trace(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else {
        return false;
    };
    let Ok(rows) = parse_demand_trace(text) else {
        return false;
    };
    let width = rows.first().map_or(0, Vec::len);
    for row in &rows {
        assert_eq!(row.len(), width);
        assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
    true
}

fn replay(target: &str, check: fn(&[u8]) -> bool, expect_ok: &[&str], expect_err: &[&str]) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for (name, bytes) in corpus(target) {
        let ok = check(&bytes);
        if expect_ok.contains(&name.as_str()) {
            assert!(ok, "{target}/{name} should be accepted");
        }
        if expect_err.contains(&name.as_str()) {
            assert!(!ok, "{target}/{name} should be rejected");
        }
        for m in mutants(&bytes, &mut rng, 2000) {
            check(&m);
        }
    }
}

#[test]
fn snapshot_seeds_and_mutants() {
    replay(
        "snapshot_decode",
        check_snapshot,
        &["plans_7cells.bin", "empty.bin"],
        &["bad_version.bin", "truncated.bin"],
    );
}

#[test]
fn config_seeds_and_mutants() {
    replay(
        "config_parse",
        check_config,
        &["quick.toml", "full.toml", "minimal.toml"],
        &["invalid_rings.toml"],
    );
}

#[test]
fn trace_seeds_and_mutants() {
    replay(
        "demand_trace_parse",
        check_trace,
        &["demo.txt", "mixed.txt"],
        &["ragged.txt", "nonfinite.txt"],
    );
}
