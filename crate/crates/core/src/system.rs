//! The simulated system: grid, link budget, traffic parameters and beam count,
//! plus the closed-loop slot runner shared by the harness and the orchestrator.

use std::time::{Duration, Instant};

use crate::channel::{LinkBudget, LinkParams};
use crate::error::{Error, Result};
use crate::geometry::CellGrid;
use crate::pattern::{Bhtp, IlluminationPattern};
use crate::scoring::ScoreContext;
use crate::traffic::{QueueState, SlotReport, TrafficParams};

/// Default beam count for `n` cells: one quarter, rounded down.
pub fn default_beams(n_cells: usize) -> usize {
    (n_cells / 4).max(1)
}

#[derive(Debug, Clone)]
pub struct SystemModel {
    pub grid: CellGrid,
    pub budget: LinkBudget,
    pub link: LinkParams,
    pub traffic: TrafficParams,
    pub beams: usize,
}

impl SystemModel {
    pub fn new(
        grid: CellGrid,
        link: LinkParams,
        traffic: TrafficParams,
        beams: usize,
    ) -> Result<Self> {
        traffic.validate()?;
        if beams == 0 || beams > grid.len() {
            return Err(Error::TooManyBeams {
                beams,
                cells: grid.len(),
            });
        }
        let budget = LinkBudget::new(&grid, &link)?;
        Ok(Self {
            grid,
            budget,
            link,
            traffic,
            beams,
        })
    }

    pub fn cells(&self) -> usize {
        self.grid.len()
    }

    /// Best-case pattern throughput per slot (bits): every beam at the
    /// noise-limited capacity of the best cell.
    pub fn omega_max(&self) -> f64 {
        self.beams as f64 * self.budget.peak_capacity() * self.traffic.slot_secs
    }

    /// Per-beam capacity ceiling in packets per slot.
    pub fn beam_capacity_packets(&self) -> f64 {
        self.traffic.packets_per_slot(self.budget.peak_capacity()) as f64
    }

    /// Mean ordinary-cell arrival rate giving an expected total offered load
    /// of `load` times the system capacity `beams * beam_capacity_packets`.
    pub fn mean_rate_for_load(
        &self,
        load: f64,
        hotspot_count: usize,
        hotspot_multiplier: f64,
    ) -> f64 {
        let weight = self.cells() as f64 + hotspot_count as f64 * (hotspot_multiplier - 1.0);
        load * self.beams as f64 * self.beam_capacity_packets() / weight
    }

    pub fn score_context<'a>(&'a self, queue_packets: &'a [f64], ds_km: f64) -> ScoreContext<'a> {
        ScoreContext {
            grid: &self.grid,
            budget: &self.budget,
            queue_packets,
            beams: self.beams,
            slot_secs: self.traffic.slot_secs,
            packet_bits: self.traffic.packet_bits as f64,
            ds_km,
            omega_max: self.omega_max(),
            euclidean_filter: false,
        }
    }

    /// Physical per-cell capacities under `pattern` (full interference).
    pub fn capacities(&self, pattern: &IlluminationPattern) -> Vec<f64> {
        self.budget.pattern_capacities(pattern)
    }

    /// Runs `slots` slots, asking `scheduler` for each slot's pattern given the
    /// current queues, then serving and advancing them.
    pub fn run_closed_loop<F>(
        &self,
        mut queues: QueueState,
        slots: usize,
        mut scheduler: F,
    ) -> Result<RunTrace>
    where
        F: FnMut(usize, &QueueState) -> Result<IlluminationPattern>,
    {
        let mut trace = RunTrace::default();
        for slot in 0..slots {
            let t0 = Instant::now();
            let pattern = scheduler(slot, &queues)?;
            trace.pattern_times.push(t0.elapsed());
            let caps = self.capacities(&pattern);
            let report = queues.advance(&pattern, &caps, self.beams, &self.traffic)?;
            trace.push(pattern, report);
        }
        Ok(trace)
    }

    /// Serves a precomputed plan against queues fed by `rates`.
    pub fn replay(&self, bhtp: &Bhtp, rates: &[f64]) -> Result<RunTrace> {
        if rates.len() != self.cells() {
            return Err(Error::DemandLength {
                got: rates.len(),
                expected: self.cells(),
            });
        }
        let queues = QueueState::from_rates(rates, self.traffic.ttl_slots);
        self.run_closed_loop(queues, bhtp.horizon(), |slot, _| {
            Ok(bhtp.patterns[slot].clone())
        })
    }
}

/// Per-slot history of one simulated run.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub patterns: Vec<IlluminationPattern>,
    pub reports: Vec<SlotReport>,
    pub pattern_times: Vec<Duration>,
}

impl RunTrace {
    fn push(&mut self, pattern: IlluminationPattern, report: SlotReport) {
        self.patterns.push(pattern);
        self.reports.push(report);
    }

    pub fn total_served_bits(&self) -> u64 {
        self.reports.iter().map(SlotReport::total_served_bits).sum()
    }

    pub fn total_dropped(&self) -> u64 {
        self.reports.iter().map(SlotReport::total_dropped).sum()
    }

    pub fn bhtp(&self) -> Bhtp {
        Bhtp::new(self.patterns.clone())
    }

    pub fn into_bhtp(self) -> Bhtp {
        Bhtp::new(self.patterns)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::{generate_grid, DEFAULT_CELL_DIAMETER_KM};

    pub(crate) fn system(rings: u32) -> SystemModel {
        let grid = generate_grid(rings, DEFAULT_CELL_DIAMETER_KM).unwrap();
        let k = default_beams(grid.len());
        SystemModel::new(grid, LinkParams::default(), TrafficParams::default(), k).unwrap()
    }

    #[test]
    fn standard_beam_counts() {
        assert_eq!(default_beams(37), 9);
        assert_eq!(default_beams(61), 15);
        assert_eq!(default_beams(91), 22);
        assert_eq!(default_beams(127), 31);
    }

    #[test]
    fn load_calibration() {
        let s = system(3);
        let m = s.mean_rate_for_load(1.0, 0, 1.0);
        assert!((m * 37.0 - 9.0 * s.beam_capacity_packets()).abs() < 1e-6);
        assert!(s.beam_capacity_packets() > 1000.0);
    }

    #[test]
    fn rejects_too_many_beams() {
        let grid = generate_grid(1, DEFAULT_CELL_DIAMETER_KM).unwrap();
        assert!(
            SystemModel::new(grid, LinkParams::default(), TrafficParams::default(), 8).is_err()
        );
    }

    #[test]
    fn replay_served_bits_bounded_by_capacity() {
        let s = system(3);
        let rates = vec![5_000.0; 37];
        let plan = Bhtp::new(vec![
            IlluminationPattern::new((0..9).collect(), 37).unwrap();
            3
        ]);
        let run = s.replay(&plan, &rates).unwrap();
        for (p, r) in run.patterns.iter().zip(&run.reports) {
            let caps = s.capacities(p);
            for c in 0..37 {
                assert!(r.served_bits[c] as f64 <= caps[c] * 0.1 + 1e-6);
            }
        }
        assert!(s.replay(&plan, &rates[..3]).is_err());
    }
}
