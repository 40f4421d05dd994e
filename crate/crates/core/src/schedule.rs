//! Algorithm selection and closed-loop plan construction.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{pattern_ga, pattern_greedy, pattern_periodic, pattern_random, GaConfig};
use crate::error::{Error, Result};
use crate::mcts::{compute_pattern_mcts, MctsConfig};
use crate::pattern::{Bhtp, IlluminationPattern};
use crate::system::{RunTrace, SystemModel};
use crate::traffic::QueueState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Random,
    Periodic,
    Greedy,
    Ga,
    Mcts,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Random,
        Algorithm::Periodic,
        Algorithm::Greedy,
        Algorithm::Ga,
        Algorithm::Mcts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Random => "random",
            Algorithm::Periodic => "periodic",
            Algorithm::Greedy => "greedy",
            Algorithm::Ga => "ga",
            Algorithm::Mcts => "mcts",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAlgorithm(s.to_string()))
    }
}

/// Per-algorithm settings for one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSettings {
    pub mcts: MctsConfig,
    pub ga: GaConfig,
    /// Interference distance threshold in km; `None` means one cell diameter.
    pub ds_km: Option<f64>,
}

/// Stateful per-run scheduler: owns the RNG used by the random baseline and
/// derives per-slot seeds for the search-based ones.
#[derive(Debug, Clone)]
pub struct Scheduler {
    pub algorithm: Algorithm,
    pub settings: SchedulerSettings,
    seed: u64,
    rng: ChaCha8Rng,
}

impl Scheduler {
    pub fn new(algorithm: Algorithm, settings: SchedulerSettings, seed: u64) -> Self {
        Self {
            algorithm,
            settings,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn slot_seed(&self, slot: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(slot as u64)
    }

    pub fn pattern(
        &mut self,
        system: &SystemModel,
        slot: usize,
        queues: &QueueState,
    ) -> Result<IlluminationPattern> {
        let n = system.cells();
        let k = system.beams;
        let totals: Vec<f64> = queues.totals().into_iter().map(|d| d as f64).collect();
        let ds = self.settings.ds_km.unwrap_or(system.grid.cell_diameter());
        match self.algorithm {
            Algorithm::Random => pattern_random(n, k, &mut self.rng),
            Algorithm::Periodic => pattern_periodic(n, k, slot),
            Algorithm::Greedy => pattern_greedy(&totals, k),
            Algorithm::Ga => {
                let cfg = GaConfig {
                    rng_seed: self.slot_seed(slot),
                    ..self.settings.ga.clone()
                };
                pattern_ga(&system.score_context(&totals, ds), &cfg)
            }
            Algorithm::Mcts => {
                let cfg = MctsConfig {
                    seed: self.slot_seed(slot),
                    ..self.settings.mcts.clone()
                };
                compute_pattern_mcts(&system.score_context(&totals, ds), &cfg)
            }
        }
    }

    /// Simulates `slots` slots from primed queues fed by `rates`, scheduling
    /// every slot against the queues left by the previous ones.
    pub fn run(&mut self, system: &SystemModel, rates: &[f64], slots: usize) -> Result<RunTrace> {
        if rates.len() != system.cells() {
            return Err(Error::DemandLength {
                got: rates.len(),
                expected: system.cells(),
            });
        }
        let queues = QueueState::from_rates(rates, system.traffic.ttl_slots);
        system.run_closed_loop(queues, slots, |slot, q| self.pattern(system, slot, q))
    }

    pub fn plan(&mut self, system: &SystemModel, rates: &[f64], slots: usize) -> Result<Bhtp> {
        self.run(system, rates, slots).map(RunTrace::into_bhtp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::tests::system;

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!(matches!(
            "madrl".parse::<Algorithm>(),
            Err(Error::UnknownAlgorithm(_))
        ));
    }

    #[test]
    fn every_algorithm_emits_valid_plans() {
        let s = system(3);
        let rates: Vec<f64> = (0..37).map(|i| 500.0 + 300.0 * (i % 5) as f64).collect();
        let settings = SchedulerSettings {
            mcts: MctsConfig {
                iterations: 20,
                ..MctsConfig::default()
            },
            ga: GaConfig {
                population_size: 20,
                generations: 3,
                ..GaConfig::default()
            },
            ds_km: None,
        };
        for a in Algorithm::ALL {
            let plan = Scheduler::new(a, settings.clone(), 1)
                .plan(&s, &rates, 4)
                .unwrap();
            assert_eq!(plan.horizon(), 4);
            plan.validate(37, 9).unwrap();
            let again = Scheduler::new(a, settings.clone(), 1)
                .plan(&s, &rates, 4)
                .unwrap();
            assert_eq!(plan, again);
        }
        assert!(Scheduler::new(Algorithm::Greedy, settings, 0)
            .run(&s, &rates[..4], 2)
            .is_err());
    }
}
