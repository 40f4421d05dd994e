//! Per-cell packet queues with aging, TTL expiry, service and arrivals.
//!
//! Each queue keeps packet counts per age bucket `1..=ttl`. A slot serves the
//! oldest packets first, ages the rest by one slot, drops whatever would
//! exceed the TTL and then injects the slot's arrivals at age 1. Service is in
//! whole packets: `floor(C * T_slot / packet_bits)`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CellGrid;
use crate::pattern::IlluminationPattern;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficParams {
    pub slot_secs: f64,
    pub packet_bits: u64,
    pub ttl_slots: usize,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            slot_secs: 0.1,
            packet_bits: 1500 * 8,
            ttl_slots: 20,
        }
    }
}

impl TrafficParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.slot_secs.is_finite() && self.slot_secs > 0.0) {
            return Err(Error::Config("slot_secs must be positive".into()));
        }
        if self.packet_bits == 0 || self.ttl_slots == 0 {
            return Err(Error::Config(
                "packet_bits and ttl_slots must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Whole packets a link of `capacity_bps` can carry in one slot.
    pub fn packets_per_slot(&self, capacity_bps: f64) -> u64 {
        let bits = capacity_bps * self.slot_secs;
        if bits <= 0.0 {
            0
        } else {
            (bits / self.packet_bits as f64).floor() as u64
        }
    }
}

/// Bits a cell can move in one slot: `min(C * T_slot, d * packet_bits)`.
pub fn throughput_for_cell(
    capacity_bps: f64,
    queued_packets: f64,
    slot_secs: f64,
    packet_bits: f64,
) -> f64 {
    (capacity_bps * slot_secs).min(queued_packets * packet_bits)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueState {
    n: usize,
    ttl: usize,
    /// `buckets[cell * ttl + (age - 1)]`
    buckets: Vec<u64>,
    arrivals: Vec<u64>,
}

impl QueueState {
    /// Empty queues with constant per-slot arrivals.
    pub fn new(arrivals: Vec<u64>, ttl: usize) -> Self {
        let n = arrivals.len();
        Self {
            n,
            ttl: ttl.max(1),
            buckets: vec![0; n * ttl.max(1)],
            arrivals,
        }
    }

    /// Queues pre-filled with one slot's worth of arrivals at age 1.
    pub fn primed(arrivals: Vec<u64>, ttl: usize) -> Self {
        let mut q = Self::new(arrivals, ttl);
        for cell in 0..q.n {
            q.buckets[cell * q.ttl] = q.arrivals[cell];
        }
        q
    }

    /// Builds queues from arrival rates in packets per slot, rounded to whole packets.
    pub fn from_rates(rates: &[f64], ttl: usize) -> Self {
        Self::primed(
            rates.iter().map(|&r| r.max(0.0).round() as u64).collect(),
            ttl,
        )
    }

    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn ttl(&self) -> usize {
        self.ttl
    }

    pub fn arrivals(&self) -> &[u64] {
        &self.arrivals
    }

    /// Packets of age `age` (1-based) waiting in `cell`.
    pub fn bucket(&self, cell: usize, age: usize) -> u64 {
        self.buckets[cell * self.ttl + age - 1]
    }

    pub fn set_bucket(&mut self, cell: usize, age: usize, packets: u64) {
        self.buckets[cell * self.ttl + age - 1] = packets;
    }

    fn cell_buckets(&self, cell: usize) -> &[u64] {
        &self.buckets[cell * self.ttl..(cell + 1) * self.ttl]
    }

    /// Queue total `d` for one cell.
    pub fn total(&self, cell: usize) -> u64 {
        self.cell_buckets(cell).iter().sum()
    }

    pub fn totals(&self) -> Vec<u64> {
        (0..self.n).map(|c| self.total(c)).collect()
    }

    /// Serves, ages, expires and refills every queue in place.
    pub fn advance(
        &mut self,
        pattern: &IlluminationPattern,
        capacities: &[f64],
        beams: usize,
        params: &TrafficParams,
    ) -> Result<SlotReport> {
        pattern.expect_beams(beams)?;
        if capacities.len() != self.n {
            return Err(Error::DemandLength {
                got: capacities.len(),
                expected: self.n,
            });
        }
        let mut report = SlotReport::zeroed(self.n);
        let ttl = self.ttl;
        for cell in 0..self.n {
            let cap = capacities[cell];
            if cap != 0.0 && !pattern.contains(cell) {
                return Err(Error::Invariant(format!(
                    "unserved cell {cell} has nonzero capacity"
                )));
            }
            let row = &mut self.buckets[cell * ttl..(cell + 1) * ttl];

            let mut budget = params.packets_per_slot(cap);
            let mut served = 0;
            for slot in row.iter_mut().rev() {
                if budget == 0 {
                    break;
                }
                let take = (*slot).min(budget);
                *slot -= take;
                budget -= take;
                served += take;
            }

            let dropped = row[ttl - 1];
            row.copy_within(0..ttl - 1, 1);
            row[0] = self.arrivals[cell];

            report.served_packets[cell] = served;
            report.served_bits[cell] = served * params.packet_bits;
            report.dropped_packets[cell] = dropped;
            report.arrived_packets[cell] = self.arrivals[cell];
        }
        Ok(report)
    }
}

/// Per-cell accounting for one slot.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotReport {
    pub served_bits: Vec<u64>,
    pub served_packets: Vec<u64>,
    pub dropped_packets: Vec<u64>,
    pub arrived_packets: Vec<u64>,
}

impl SlotReport {
    fn zeroed(n: usize) -> Self {
        Self {
            served_bits: vec![0; n],
            served_packets: vec![0; n],
            dropped_packets: vec![0; n],
            arrived_packets: vec![0; n],
        }
    }

    pub fn total_served_bits(&self) -> u64 {
        self.served_bits.iter().sum()
    }

    pub fn total_dropped(&self) -> u64 {
        self.dropped_packets.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotOutcome {
    pub report: SlotReport,
    pub queue_after: QueueState,
}

/// Functional form of [`QueueState::advance`].
pub fn advance_slot(
    state: &QueueState,
    pattern: &IlluminationPattern,
    capacities: &[f64],
    beams: usize,
    params: &TrafficParams,
) -> Result<SlotOutcome> {
    let mut queue_after = state.clone();
    let report = queue_after.advance(pattern, capacities, beams, params)?;
    Ok(SlotOutcome {
        report,
        queue_after,
    })
}

/// Arrival rates (packets/slot): ordinary cells draw uniformly from
/// `[0.5, 1.5] * mean_rate`, `hotspot_count` random cells get
/// `mean_rate * hotspot_multiplier`.
pub fn generate_demand(
    grid: &CellGrid,
    mean_rate: f64,
    hotspot_count: usize,
    hotspot_multiplier: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = grid.len();
    if hotspot_count > n {
        return Err(Error::TooManyHotspots {
            count: hotspot_count,
            cells: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rates: Vec<f64> = (0..n)
        .map(|_| mean_rate * rng.random_range(0.5..=1.5))
        .collect();
    for cell in sample(&mut rng, n, hotspot_count).into_iter() {
        rates[cell] = mean_rate * hotspot_multiplier;
    }
    Ok(rates)
}
