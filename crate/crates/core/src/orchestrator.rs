//! Tyche: cached plans with a greedy online fallback and background search.
//!
//! A request's demand is discretized and looked up. A hit returns the stored
//! plan. A miss returns a closed-loop greedy plan computed on the spot and
//! queues a background job that builds a closed-loop MCTS plan for the
//! discretized demand and stores it. Jobs for the same discretized demand are
//! coalesced while pending or running; the pending queue is bounded and drops
//! its oldest job when full.

use std::collections::{HashSet, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cache::{CacheConfig, PlanCache};
use crate::error::{Error, Result};
use crate::pattern::Bhtp;
use crate::schedule::{Algorithm, Scheduler, SchedulerSettings};
use crate::system::SystemModel;

pub const DEFAULT_HORIZON: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TycheConfig {
    pub horizon: usize,
    pub queue_depth: usize,
    pub workers: usize,
    /// Grid resolution; the ceiling is the per-beam packet capacity unless
    /// `c_max` is set.
    pub beta: u32,
    pub c_max: Option<f64>,
    pub cache_capacity: usize,
    pub scheduler: SchedulerSettings,
    pub seed: u64,
}

impl Default for TycheConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            queue_depth: 8,
            workers: 1,
            beta: 10,
            c_max: None,
            cache_capacity: crate::cache::DEFAULT_CAPACITY,
            scheduler: SchedulerSettings::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TycheRequest {
    /// Per-cell arrival rates in packets per slot.
    pub demand: Vec<f64>,
    pub horizon: usize,
    pub request_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Cache,
    OnlineGreedy,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Cache => "cache",
            Source::OnlineGreedy => "online_greedy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TycheResponse {
    pub request_id: u64,
    pub bhtp: Bhtp,
    pub source: Source,
    pub latency: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct JobStats {
    pub enqueued: u64,
    pub coalesced: u64,
    pub dropped: u64,
    pub started: u64,
    pub completed: u64,
    pub failed: u64,
}

struct Job {
    id: Vec<u32>,
    vector: Vec<f32>,
    horizon: usize,
}

#[derive(Default)]
struct JobState {
    pending: VecDeque<Job>,
    /// Bit patterns of every pending or running discretized demand.
    in_flight: HashSet<Vec<u32>>,
    running: usize,
    shutdown: bool,
    stats: JobStats,
}

struct Shared {
    system: SystemModel,
    cache: PlanCache,
    cfg: TycheConfig,
    jobs: Mutex<JobState>,
    work: Condvar,
    idle: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, JobState> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct Tyche {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl Tyche {
    pub fn new(system: SystemModel, cfg: TycheConfig) -> Result<Self> {
        if cfg.horizon == 0 || cfg.queue_depth == 0 || cfg.workers == 0 {
            return Err(Error::Config(
                "horizon, queue_depth and workers must be positive".into(),
            ));
        }
        cfg.scheduler.mcts.validate()?;
        let cache = PlanCache::new(CacheConfig {
            beta: cfg.beta,
            c_max: cfg.c_max.unwrap_or_else(|| system.beam_capacity_packets()),
            capacity: cfg.cache_capacity,
            ..CacheConfig::default()
        })?;
        let shared = Arc::new(Shared {
            system,
            cache,
            cfg,
            jobs: Mutex::new(JobState::default()),
            work: Condvar::new(),
            idle: Condvar::new(),
        });
        let workers = (0..shared.cfg.workers)
            .map(|i| {
                let s = Arc::clone(&shared);
                thread::Builder::new()
                    .name(format!("tyche-worker-{i}"))
                    .spawn(move || worker_loop(&s))
                    .map_err(Error::Io)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { shared, workers })
    }

    pub fn system(&self) -> &SystemModel {
        &self.shared.system
    }

    pub fn cache(&self) -> &PlanCache {
        &self.shared.cache
    }

    pub fn config(&self) -> &TycheConfig {
        &self.shared.cfg
    }

    pub fn request(&self, demand: Vec<f64>, request_id: u64) -> TycheRequest {
        TycheRequest {
            demand,
            horizon: self.shared.cfg.horizon,
            request_id,
        }
    }

    pub fn handle_request(&self, req: &TycheRequest) -> Result<TycheResponse> {
        let t0 = Instant::now();
        let sys = &self.shared.system;
        if req.demand.len() != sys.cells() {
            return Err(Error::DemandLength {
                got: req.demand.len(),
                expected: sys.cells(),
            });
        }
        if req.horizon == 0 {
            return Err(Error::Config("request horizon must be at least 1".into()));
        }
        let vector = self.shared.cache.discretize(&req.demand);
        if let Some(mut bhtp) = self.shared.cache.lookup_discretized(&vector) {
            if bhtp.horizon() >= req.horizon {
                bhtp.patterns.truncate(req.horizon);
                return Ok(TycheResponse {
                    request_id: req.request_id,
                    bhtp,
                    source: Source::Cache,
                    latency: t0.elapsed(),
                });
            }
        }
        let mut greedy = Scheduler::new(
            Algorithm::Greedy,
            self.shared.cfg.scheduler.clone(),
            self.shared.cfg.seed,
        );
        let bhtp = greedy.plan(sys, &req.demand, req.horizon)?;
        let latency = t0.elapsed();
        self.enqueue(vector, req.horizon);
        Ok(TycheResponse {
            request_id: req.request_id,
            bhtp,
            source: Source::OnlineGreedy,
            latency,
        })
    }

    fn enqueue(&self, vector: Vec<f32>, horizon: usize) {
        let id: Vec<u32> = vector.iter().map(|x| x.to_bits()).collect();
        let mut st = self.shared.lock();
        if st.in_flight.contains(&id) {
            st.stats.coalesced += 1;
            return;
        }
        if st.pending.len() >= self.shared.cfg.queue_depth {
            if let Some(old) = st.pending.pop_front() {
                st.in_flight.remove(&old.id);
                st.stats.dropped += 1;
            }
        }
        st.in_flight.insert(id.clone());
        st.pending.push_back(Job {
            id,
            vector,
            horizon,
        });
        st.stats.enqueued += 1;
        drop(st);
        self.shared.work.notify_one();
    }

    /// Blocks until no job is pending or running.
    pub fn wait_idle(&self) {
        let mut st = self.shared.lock();
        while !st.pending.is_empty() || st.running > 0 {
            st = self.shared.idle.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    pub fn job_stats(&self) -> JobStats {
        self.shared.lock().stats
    }
}

impl Drop for Tyche {
    fn drop(&mut self) {
        self.shared.lock().shutdown = true;
        self.shared.work.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn worker_loop(shared: &Shared) {
    loop {
        let job = {
            let mut st = shared.lock();
            loop {
                if st.shutdown {
                    return;
                }
                if let Some(job) = st.pending.pop_front() {
                    st.running += 1;
                    st.stats.started += 1;
                    break job;
                }
                st = shared.work.wait(st).unwrap_or_else(|e| e.into_inner());
            }
        };
        let outcome = background_fill(shared, &job);
        let mut st = shared.lock();
        st.running -= 1;
        st.in_flight.remove(&job.id);
        match outcome {
            Ok(()) => st.stats.completed += 1,
            Err(e) => {
                st.stats.failed += 1;
                log::warn!("background plan failed: {e}");
            }
        }
        drop(st);
        shared.idle.notify_all();
    }
}

fn background_fill(shared: &Shared, job: &Job) -> Result<()> {
    let rates: Vec<f64> = job.vector.iter().map(|&x| x as f64).collect();
    let mut mcts = Scheduler::new(
        Algorithm::Mcts,
        shared.cfg.scheduler.clone(),
        shared.cfg.seed,
    );
    let horizon = job.horizon.max(shared.cfg.horizon);
    let bhtp = mcts.plan(&shared.system, &rates, horizon)?;
    shared.cache.store_discretized(job.vector.clone(), bhtp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcts::MctsConfig;
    use crate::system::tests::system;

    fn tyche(rings: u32, iterations: usize) -> Tyche {
        let cfg = TycheConfig {
            horizon: 5,
            scheduler: SchedulerSettings {
                mcts: MctsConfig {
                    iterations,
                    ..MctsConfig::default()
                },
                ..SchedulerSettings::default()
            },
            ..TycheConfig::default()
        };
        Tyche::new(system(rings), cfg).unwrap()
    }

    #[test]
    fn miss_then_hit() {
        let t = tyche(3, 10);
        let demand: Vec<f64> = (0..37).map(|i| 1000.0 + 200.0 * (i % 7) as f64).collect();
        let first = t.handle_request(&t.request(demand.clone(), 1)).unwrap();
        assert_eq!(first.source, Source::OnlineGreedy);
        first.bhtp.validate(37, 9).unwrap();
        t.wait_idle();
        let second = t.handle_request(&t.request(demand.clone(), 2)).unwrap();
        assert_eq!(second.source, Source::Cache);
        assert_eq!(Some(second.bhtp), t.cache().lookup(&demand));
        assert_eq!(t.job_stats().completed, 1);
    }

    #[test]
    fn rejects_wrong_length() {
        let t = tyche(1, 5);
        assert!(matches!(
            t.handle_request(&t.request(vec![1.0; 3], 0)),
            Err(Error::DemandLength {
                got: 3,
                expected: 7
            })
        ));
    }

    #[test]
    fn shorter_requests_reuse_longer_plans() {
        let t = tyche(1, 5);
        let d = vec![3000.0; 7];
        t.handle_request(&t.request(d.clone(), 0)).unwrap();
        t.wait_idle();
        let req = TycheRequest {
            demand: d,
            horizon: 2,
            request_id: 1,
        };
        let r = t.handle_request(&req).unwrap();
        assert_eq!(r.source, Source::Cache);
        assert_eq!(r.bhtp.horizon(), 2);
    }
}
