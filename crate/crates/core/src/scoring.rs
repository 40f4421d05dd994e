//! Pattern scoring: normalised one-slot throughput of an illumination pattern.
//!
//! Two backends produce the same quantity. The brute-force scorer sums
//! co-channel interference from every other served cell (`O(K^2)`). The
//! sliding-window scorer first extracts the served cells in ascending `x`
//! from the grid's pre-sorted order, then collects interferers with a
//! three-pointer window: a cell pair is kept only when both `|dx|` and `|dy|`
//! are within the threshold `D_s`. Pairs outside that square are ignored.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::LinkBudget;
use crate::error::{Error, Result};
use crate::geometry::{CellGrid, CellId};
use crate::pattern::IlluminationPattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[serde(rename = "bruteforce")]
    BruteForce,
    #[default]
    #[serde(rename = "sliding")]
    Sliding,
}

impl std::str::FromStr for ScorerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bruteforce" => Ok(Self::BruteForce),
            "sliding" => Ok(Self::Sliding),
            other => Err(Error::Config(format!("unknown scorer backend `{other}`"))),
        }
    }
}

/// Everything a scorer reads. The queue snapshot is in packets.
#[derive(Debug, Clone, Copy)]
pub struct ScoreContext<'a> {
    pub grid: &'a CellGrid,
    pub budget: &'a LinkBudget,
    pub queue_packets: &'a [f64],
    pub beams: usize,
    pub slot_secs: f64,
    pub packet_bits: f64,
    /// Interference distance threshold, km.
    pub ds_km: f64,
    /// Normaliser, bits per slot.
    pub omega_max: f64,
    /// Keep only window pairs inside the Euclidean disc of radius `ds_km`.
    pub euclidean_filter: bool,
}

impl ScoreContext<'_> {
    #[inline]
    fn cell_bits(&self, cell: CellId, signal: f64, interference: f64) -> f64 {
        let sinr = signal / (self.budget.noise_power() + interference);
        let cap = self.budget.bandwidth() * (1.0 + sinr).log2();
        (cap * self.slot_secs).min(self.queue_packets[cell] * self.packet_bits)
    }
}

/// Interferers per served cell.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InterferenceMap {
    pub entries: BTreeMap<CellId, Vec<CellId>>,
}

impl InterferenceMap {
    pub fn interferers(&self, cell: CellId) -> &[CellId] {
        self.entries.get(&cell).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Unordered pairs `(a, b)` with `a < b`, sorted.
    pub fn pairs(&self) -> Vec<(CellId, CellId)> {
        let mut out: Vec<_> = self
            .entries
            .iter()
            .flat_map(|(&a, list)| list.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect();
        out.sort_unstable();
        out
    }
}

/// Pointer movement counts from one window pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WindowStats {
    pub slow_steps: usize,
    pub fast_steps: usize,
    pub temp_steps: usize,
}

/// Served cells in ascending `x` via the mark-then-scan pass over the
/// grid's pre-sorted order.
pub fn mark_and_extract_sorted(pattern: &IlluminationPattern, grid: &CellGrid) -> Vec<CellId> {
    let mut marks = vec![0u64; grid.len().div_ceil(64)];
    let mut out = Vec::with_capacity(pattern.len());
    extract_sorted_into(pattern.cells(), grid, &mut marks, &mut out);
    out
}

fn extract_sorted_into(
    cells: &[CellId],
    grid: &CellGrid,
    marks: &mut [u64],
    out: &mut Vec<CellId>,
) {
    // one bit per x-rank; reading the words back in order yields x-sorted ids
    for &c in cells {
        let r = grid.x_rank(c);
        marks[r / 64] |= 1 << (r % 64);
    }
    out.clear();
    let order = grid.sorted_by_x();
    for (w, word) in marks.iter_mut().enumerate() {
        let mut bits = std::mem::take(word);
        while bits != 0 {
            out.push(order[w * 64 + bits.trailing_zeros() as usize]);
            bits &= bits - 1;
        }
    }
}

/// The three-pointer window. Calls `on_pair(a, b)` once per unordered pair
/// with `|dx| <= ds` and `|dy| <= ds`.
fn window_pairs(
    ordered: &[CellId],
    grid: &CellGrid,
    ds: f64,
    mut on_pair: impl FnMut(CellId, CellId),
) -> WindowStats {
    let cells = grid.cells();
    debug_assert!(
        ordered.windows(2).all(|w| cells[w[0]].x <= cells[w[1]].x),
        "window input must be x-sorted"
    );
    let len = ordered.len();
    let mut stats = WindowStats::default();
    let mut slow = 0;
    let mut fast = 0;
    while slow < len {
        let cs = &cells[ordered[slow]];
        while fast < len {
            if (cells[ordered[fast]].x - cs.x).abs() <= ds {
                fast += 1;
                stats.fast_steps += 1;
            } else {
                break;
            }
        }
        // window is [slow, fast)
        let mut temp = slow + 1;
        while temp < fast {
            stats.temp_steps += 1;
            let ct = &cells[ordered[temp]];
            if (ct.y - cs.y).abs() <= ds {
                on_pair(ordered[slow], ordered[temp]);
            }
            temp += 1;
        }
        slow += 1;
        stats.slow_steps += 1;
        if fast < slow {
            fast = slow;
        }
    }
    stats
}

/// Builds the interference map for an x-sorted served-cell list.
pub fn interference_cells_sliding_window(
    ordered: &[CellId],
    grid: &CellGrid,
    ds_km: f64,
) -> InterferenceMap {
    interference_cells_with_stats(ordered, grid, ds_km).0
}

pub fn interference_cells_with_stats(
    ordered: &[CellId],
    grid: &CellGrid,
    ds_km: f64,
) -> (InterferenceMap, WindowStats) {
    let mut map = InterferenceMap::default();
    for &c in ordered {
        map.entries.insert(c, Vec::new());
    }
    let stats = window_pairs(ordered, grid, ds_km, |a, b| {
        map.entries.get_mut(&a).expect("served").push(b);
        map.entries.get_mut(&b).expect("served").push(a);
    });
    (map, stats)
}

fn check_cardinality(pattern: &IlluminationPattern, ctx: &ScoreContext<'_>) -> Result<()> {
    pattern.expect_beams(ctx.beams)
}

/// Normalised throughput with interference from every other served cell.
pub fn score_bruteforce(pattern: &IlluminationPattern, ctx: &ScoreContext<'_>) -> Result<f64> {
    check_cardinality(pattern, ctx)?;
    Ok(Scorer::new(ScorerKind::BruteForce, ctx.grid.len()).score_cells(ctx, pattern.cells()))
}

/// Normalised throughput with interferers limited to the sliding window.
pub fn score_sliding_window(pattern: &IlluminationPattern, ctx: &ScoreContext<'_>) -> Result<f64> {
    check_cardinality(pattern, ctx)?;
    Ok(Scorer::new(ScorerKind::Sliding, ctx.grid.len()).score_cells(ctx, pattern.cells()))
}

/// Reusable scorer with scratch buffers sized to the grid.
#[derive(Debug, Clone)]
pub struct Scorer {
    kind: ScorerKind,
    marks: Vec<u64>,
    ordered: Vec<CellId>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    interference: Vec<f64>,
}

impl Scorer {
    pub fn new(kind: ScorerKind, n_cells: usize) -> Self {
        Self {
            kind,
            marks: vec![0; n_cells.div_ceil(64)],
            ordered: Vec::with_capacity(n_cells),
            xs: Vec::with_capacity(n_cells),
            ys: Vec::with_capacity(n_cells),
            interference: Vec::with_capacity(n_cells),
        }
    }

    pub fn kind(&self) -> ScorerKind {
        self.kind
    }

    pub fn score(&mut self, ctx: &ScoreContext<'_>, pattern: &IlluminationPattern) -> Result<f64> {
        check_cardinality(pattern, ctx)?;
        Ok(self.score_cells(ctx, pattern.cells()))
    }

    /// Scores ascending, distinct cell ids without validation.
    pub fn score_cells(&mut self, ctx: &ScoreContext<'_>, cells: &[CellId]) -> f64 {
        match self.kind {
            ScorerKind::BruteForce => score_cells_bruteforce(ctx, cells),
            ScorerKind::Sliding => self.score_cells_sliding(ctx, cells),
        }
    }

    /// Same pair set as [`window_pairs`], over contiguous x-sorted
    /// coordinates and with the `dy` test folded into the sums.
    fn score_cells_sliding(&mut self, ctx: &ScoreContext<'_>, cells: &[CellId]) -> f64 {
        let grid = ctx.grid;
        let budget = ctx.budget;
        let ds = ctx.ds_km;
        extract_sorted_into(cells, grid, &mut self.marks, &mut self.ordered);
        let ordered = &self.ordered;
        let k = ordered.len();
        let (xs, ys, acc) = (&mut self.xs, &mut self.ys, &mut self.interference);
        xs.clear();
        ys.clear();
        acc.clear();
        for &c in ordered {
            let cell = &grid.cells()[c];
            xs.push(cell.x);
            ys.push(cell.y);
        }
        acc.resize(k, 0.0);
        let (rx, n) = budget.rx_matrix();
        let mut fast = 0;
        for slow in 0..k {
            fast = fast.max(slow + 1);
            let x0 = xs[slow];
            while fast < k && xs[fast] - x0 <= ds {
                fast += 1;
            }
            let (a, y0) = (ordered[slow], ys[slow]);
            let row_a = &rx[a * n..(a + 1) * n];
            let window = slow + 1..fast;
            let cells = ordered[window.clone()].iter().zip(&ys[window.clone()]);
            let mut own = 0.0;
            if ctx.euclidean_filter {
                for ((&b, &y), acc_t) in cells.zip(&mut acc[window]) {
                    if (y - y0).abs() <= ds && grid.distance_unchecked(a, b) <= ds {
                        own += row_a[b];
                        *acc_t += rx[b * n + a];
                    }
                }
            } else {
                for ((&b, &y), acc_t) in cells.zip(&mut acc[window]) {
                    let w = ((y - y0).abs() <= ds) as u8 as f64;
                    own += w * row_a[b];
                    *acc_t += w * rx[b * n + a];
                }
            }
            acc[slow] += own;
        }
        let mut total = 0.0;
        for (i, &n) in ordered.iter().enumerate() {
            total += ctx.cell_bits(n, budget.rx_power(n, n), acc[i]);
        }
        total / ctx.omega_max
    }
}

fn score_cells_bruteforce(ctx: &ScoreContext<'_>, cells: &[CellId]) -> f64 {
    let mut total = 0.0;
    for &n in cells {
        let row = ctx.budget.rx_row(n);
        let mut interference = 0.0;
        for &l in cells {
            if l != n {
                interference += row[l];
            }
        }
        total += ctx.cell_bits(n, row[n], interference);
    }
    total / ctx.omega_max
}
