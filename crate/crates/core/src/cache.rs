//! Demand-keyed plan store.
//!
//! Demand vectors are snapped onto the grid `{k * C_max / beta}`, hashed with
//! SHA-256 and keyed by the first four digest bytes. Each entry keeps the
//! discretized vector so a truncated-key collision is detected on lookup and
//! reported as a miss.
//!
//! Snapshot layout (all integers little-endian):
//!
//! ```text
//! header:  b"HPLC" | version: u32
//! record:  len: u32 | key: [u8; 4] | n: u32 | k: u32 | t: u32
//!          | vector: n x f32 | plan: t x k x u32
//! ```
//!
//! `len` counts the bytes after itself.

use std::fs;
use std::io::Write;
use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use lru::LruCache;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pattern::{Bhtp, IlluminationPattern};

pub type CacheKey = [u8; 4];

const MAGIC: &[u8; 4] = b"HPLC";
const VERSION: u32 = 1;
pub const DEFAULT_CAPACITY: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Nearest grid point, ties upward.
    #[default]
    Nearest,
    Floor,
}

/// Snaps `v` onto `{k * c_max / beta : k = 0..=beta}` after clamping to `[0, c_max]`.
pub fn discretize(v: &[f64], c_max: f64, beta: u32, mode: Rounding) -> Result<Vec<f32>> {
    if beta == 0 {
        return Err(Error::Config("beta must be at least 1".into()));
    }
    if !(c_max.is_finite() && c_max > 0.0) {
        return Err(Error::Config("c_max must be positive".into()));
    }
    let step = c_max / beta as f64;
    Ok(v.iter()
        .map(|&x| {
            let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, c_max) };
            let units = x / step;
            let k = match mode {
                Rounding::Nearest => (units + 0.5).floor(),
                // tolerance keeps grid points (stored as f32) on themselves
                Rounding::Floor => (units + 1e-4).floor(),
            };
            (k.min(beta as f64) * step) as f32
        })
        .collect())
}

/// First four bytes of SHA-256 over the vector's little-endian f32 bytes.
pub fn key_for(discretized: &[f32]) -> CacheKey {
    let mut h = Sha256::new();
    for x in discretized {
        h.update(x.to_le_bytes());
    }
    let digest = h.finalize();
    [digest[0], digest[1], digest[2], digest[3]]
}

/// Modelled bytes per stored entry: key, plan, vector and two 4-byte fields.
pub fn entry_size_bytes(n: usize, k: usize, t: usize) -> usize {
    4 + t * k * 4 + 4 * n + 8
}

/// [`entry_size_bytes`] for fractional beam counts such as `N / 4`.
pub fn entry_size_model(n: f64, k: f64, t: f64) -> f64 {
    4.0 + t * k * 4.0 + 4.0 * n + 8.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub vector: Vec<f32>,
    pub bhtp: Bhtp,
}

impl CacheEntry {
    pub fn verify(&self) -> bool {
        key_for(&self.vector) == self.key
    }

    fn beams(&self) -> usize {
        self.bhtp
            .patterns
            .first()
            .map_or(0, IlluminationPattern::len)
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        let (n, k, t) = (self.vector.len(), self.beams(), self.bhtp.horizon());
        let len = 4 + 12 + 4 * n + 4 * t * k;
        out.extend_from_slice(&(len as u32).to_le_bytes());
        out.extend_from_slice(&self.key);
        for v in [n, k, t] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for x in &self.vector {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for p in &self.bhtp.patterns {
            for &c in p.cells() {
                out.extend_from_slice(&(c as u32).to_le_bytes());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub beta: u32,
    /// Grid ceiling, in the demand vector's unit.
    pub c_max: f64,
    pub capacity: usize,
    pub rounding: Rounding,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            beta: 10,
            c_max: 1.0,
            capacity: DEFAULT_CAPACITY,
            rounding: Rounding::Nearest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub collisions: u64,
    pub entries: usize,
}

#[derive(Debug)]
pub struct PlanCache {
    cfg: CacheConfig,
    entries: Mutex<LruCache<CacheKey, CacheEntry>>,
    hits: AtomicU64,
    misses: AtomicU64,
    collisions: AtomicU64,
}

impl PlanCache {
    pub fn new(cfg: CacheConfig) -> Result<Self> {
        discretize(&[], cfg.c_max, cfg.beta, cfg.rounding)?;
        let cap = NonZeroUsize::new(cfg.capacity)
            .ok_or_else(|| Error::Config("cache capacity must be positive".into()))?;
        Ok(Self {
            cfg,
            entries: Mutex::new(LruCache::new(cap)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            collisions: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn discretize(&self, v: &[f64]) -> Vec<f32> {
        discretize(v, self.cfg.c_max, self.cfg.beta, self.cfg.rounding).expect("validated in new")
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, LruCache<CacheKey, CacheEntry>> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn lookup(&self, v: &[f64]) -> Option<Bhtp> {
        self.lookup_discretized(&self.discretize(v))
    }

    /// Probe with an already discretized vector.
    pub fn lookup_discretized(&self, d: &[f32]) -> Option<Bhtp> {
        let key = key_for(d);
        let found = {
            let mut map = self.lock();
            match map.get(&key) {
                Some(e) if e.vector == d => Ok(e.bhtp.clone()),
                Some(_) => Err(true),
                None => Err(false),
            }
        };
        match found {
            Ok(bhtp) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(bhtp)
            }
            Err(collided) => {
                if collided {
                    self.collisions.fetch_add(1, Ordering::Relaxed);
                }
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn store(&self, v: &[f64], bhtp: Bhtp) -> Result<()> {
        self.store_discretized(self.discretize(v), bhtp)
    }

    /// Stores under the key of `d`, replacing whatever held that key.
    pub fn store_discretized(&self, d: Vec<f32>, bhtp: Bhtp) -> Result<()> {
        if let Some(first) = bhtp.patterns.first() {
            bhtp.validate(d.len(), first.len())?;
        }
        let entry = CacheEntry {
            key: key_for(&d),
            vector: d,
            bhtp,
        };
        self.lock().put(entry.key, entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            collisions: self.collisions.load(Ordering::Relaxed),
            entries: self.len(),
        }
    }

    /// Entries from least to most recently used.
    pub fn entries(&self) -> Vec<CacheEntry> {
        self.lock().iter().rev().map(|(_, e)| e.clone()).collect()
    }

    pub fn encode_snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for e in self.entries() {
            e.encode_into(&mut out);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_snapshot();
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    /// Loads a snapshot, inserting entries in file order (LRU first).
    pub fn load(&self, path: &Path) -> Result<usize> {
        let bytes = fs::read(path)?;
        let entries = decode_snapshot(&bytes)?;
        let count = entries.len();
        let mut map = self.lock();
        for e in entries {
            map.put(e.key, e);
        }
        Ok(count)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Snapshot(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Parses a snapshot, checking framing, cardinalities, cell ids and that every
/// key matches its vector.
pub fn decode_snapshot(bytes: &[u8]) -> Result<Vec<CacheEntry>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)
        .map_err(|_| Error::Snapshot("missing header".into()))?
        != MAGIC
    {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let body = r.take(len)?;
        out.push(decode_record(body)?);
    }
    Ok(out)
}

fn decode_record(body: &[u8]) -> Result<CacheEntry> {
    let mut r = Reader { buf: body, pos: 0 };
    let key: CacheKey = r.take(4)?.try_into().expect("4 bytes");
    let n = r.u32()? as usize;
    let k = r.u32()? as usize;
    let t = r.u32()? as usize;
    if k == 0 && t > 0 {
        return Err(Error::Snapshot("plan with zero beams".into()));
    }
    let expected = t
        .checked_mul(k)
        .and_then(|tk| tk.checked_add(n))
        .and_then(|w| w.checked_mul(4))
        .and_then(|b| b.checked_add(16));
    if expected != Some(body.len()) {
        return Err(Error::Snapshot(format!(
            "record length {} does not match n={n} k={k} t={t}",
            body.len()
        )));
    }
    let vector: Vec<f32> = r
        .take(4 * n)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mut patterns = Vec::with_capacity(t);
    for _ in 0..t {
        let cells: Vec<usize> = r
            .take(4 * k)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        patterns.push(
            IlluminationPattern::with_beams(cells, n, k)
                .map_err(|e| Error::Snapshot(e.to_string()))?,
        );
    }
    let entry = CacheEntry {
        key,
        vector,
        bhtp: Bhtp::new(patterns),
    };
    if !entry.verify() {
        return Err(Error::Snapshot("key does not match stored vector".into()));
    }
    Ok(entry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plan(n: usize, k: usize, t: usize, offset: usize) -> Bhtp {
        Bhtp::new(
            (0..t)
                .map(|s| {
                    IlluminationPattern::new((0..k).map(|m| (s + offset + m) % n).collect(), n)
                        .unwrap()
                })
                .collect(),
        )
    }

    fn cache(beta: u32, c_max: f64) -> PlanCache {
        PlanCache::new(CacheConfig {
            beta,
            c_max,
            ..CacheConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn grid_points() {
        let g = discretize(
            &[0.0, 12.5, 30.0, 55.0, 62.5, 99.0, 140.0, -3.0],
            100.0,
            4,
            Rounding::Nearest,
        )
        .unwrap();
        assert_eq!(g, vec![0.0, 25.0, 25.0, 50.0, 75.0, 100.0, 100.0, 0.0]);
        let two = discretize(&[10.0, 49.0, 50.0, 90.0], 100.0, 1, Rounding::Nearest).unwrap();
        assert_eq!(two, vec![0.0, 0.0, 100.0, 100.0]);
        let fl = discretize(&[24.9, 25.0, 99.9], 100.0, 4, Rounding::Floor).unwrap();
        assert_eq!(fl, vec![0.0, 25.0, 75.0]);
        assert!(discretize(&[1.0], 100.0, 0, Rounding::Nearest).is_err());
    }

    #[test]
    fn discretize_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for beta in [1, 2, 3, 7, 10, 64] {
            for mode in [Rounding::Nearest, Rounding::Floor] {
                let c_max = rng.random_range(1.0..5000.0);
                let v: Vec<f64> = (0..200)
                    .map(|_| rng.random_range(-10.0..c_max * 1.1))
                    .collect();
                let once = discretize(&v, c_max, beta, mode).unwrap();
                let again: Vec<f64> = once.iter().map(|&x| x as f64).collect();
                assert_eq!(discretize(&again, c_max, beta, mode).unwrap(), once);
            }
        }
    }

    #[test]
    fn miss_hit_and_overwrite() {
        let c = cache(4, 100.0);
        let v = vec![10.0, 55.0, 80.0];
        assert!(c.lookup(&v).is_none());
        c.store(&v, plan(3, 1, 2, 0)).unwrap();
        assert_eq!(c.lookup(&v).unwrap(), plan(3, 1, 2, 0));
        c.store(&v, plan(3, 1, 2, 1)).unwrap();
        assert_eq!(c.lookup(&v).unwrap(), plan(3, 1, 2, 1));
        // within half a step per component: same grid cell, same plan
        assert_eq!(c.lookup(&[2.0, 59.0, 70.0]).unwrap(), plan(3, 1, 2, 1));
        assert_eq!(c.len(), 1);
        let s = c.stats();
        assert_eq!((s.hits, s.misses, s.collisions), (3, 1, 0));
    }

    #[test]
    fn lru_eviction() {
        let c = PlanCache::new(CacheConfig {
            beta: 10,
            c_max: 10.0,
            capacity: 2,
            ..CacheConfig::default()
        })
        .unwrap();
        c.store(&[1.0], plan(1, 1, 1, 0)).unwrap();
        c.store(&[2.0], plan(1, 1, 1, 0)).unwrap();
        assert!(c.lookup(&[1.0]).is_some());
        c.store(&[3.0], plan(1, 1, 1, 0)).unwrap();
        assert!(c.lookup(&[2.0]).is_none());
        assert!(c.lookup(&[1.0]).is_some() && c.lookup(&[3.0]).is_some());
    }

    #[test]
    fn many_entries_never_return_foreign_plans() {
        let c = cache(10, 1000.0);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let vs: Vec<Vec<f64>> = (0..10_000)
            .map(|_| (0..12).map(|_| rng.random_range(0.0..1000.0)).collect())
            .collect();
        for (i, v) in vs.iter().enumerate() {
            c.store(v, plan(12, 3, 1, i % 12)).unwrap();
        }
        // a later store of an identical discretized vector wins
        let mut owner = std::collections::HashMap::new();
        for (i, v) in vs.iter().enumerate() {
            owner.insert(
                c.discretize(v)
                    .iter()
                    .map(|x| x.to_bits())
                    .collect::<Vec<_>>(),
                i,
            );
        }
        for v in &vs {
            let d = c.discretize(v);
            let last = owner[&d.iter().map(|x| x.to_bits()).collect::<Vec<_>>()];
            if let Some(got) = c.lookup(v) {
                assert_eq!(got, plan(12, 3, 1, last % 12));
            }
        }
        assert!(c.entries().iter().all(CacheEntry::verify));
    }

    #[test]
    fn entry_sizes() {
        assert_eq!(entry_size_model(127.0, 127.0 / 4.0, 30.0), 4330.0);
        assert_eq!(entry_size_bytes(0, 0, 0), 12);
        assert_eq!(entry_size_bytes(37, 9, 30), 1240);
    }

    #[test]
    fn snapshot_round_trip() {
        let c = cache(8, 50.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..50 {
            let v: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..50.0)).collect();
            c.store(&v, plan(7, 2, 3, i)).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.bin");
        c.save(&path).unwrap();
        let d = cache(8, 50.0);
        assert_eq!(d.load(&path).unwrap(), c.len());
        assert_eq!(d.entries(), c.entries());
        assert_eq!(d.encode_snapshot(), c.encode_snapshot());
    }

    #[test]
    fn snapshot_rejects_damage() {
        let c = cache(8, 50.0);
        c.store(&[1.0, 20.0, 40.0], plan(3, 1, 2, 0)).unwrap();
        let good = c.encode_snapshot();
        assert!(decode_snapshot(&good).is_ok());
        assert!(decode_snapshot(&good[..good.len() - 1]).is_err());
        assert!(decode_snapshot(b"XXXX\x01\0\0\0").is_err());
        let mut bad_key = good.clone();
        bad_key[12] ^= 1;
        assert!(decode_snapshot(&bad_key).is_err());
        let mut bad_cell = good.clone();
        let last = bad_cell.len() - 4;
        bad_cell[last] = 9;
        assert!(decode_snapshot(&bad_cell).is_err());
        assert_eq!(decode_snapshot(b"HPLC\x01\0\0\0").unwrap(), vec![]);
    }

    #[test]
    fn snapshot_rejects_zero_beam_plans() {
        let mut body = key_for(&[0.0]).to_vec();
        for v in [1u32, 0, u32::MAX] {
            body.extend(v.to_le_bytes());
        }
        body.extend(0f32.to_le_bytes());
        let mut bytes = b"HPLC\x01\0\0\0".to_vec();
        bytes.extend((body.len() as u32).to_le_bytes());
        bytes.extend(body);
        assert!(matches!(decode_snapshot(&bytes), Err(Error::Snapshot(_))));
    }
}
