//! Hexagonal cell layout in the projected plane.
//!
//! Cells are laid out on a pointy-top axial hex lattice centred on the
//! sub-satellite point, numbered ring by ring in spiral order. Centre spacing
//! between adjacent cells equals the configured cell diameter. The grid keeps
//! a permutation of cell ids sorted by ascending `x` (ties by id), which the
//! sliding-window scorer reuses on every call.

use serde::Serialize;

use crate::error::{Error, Result};

/// Footprint of a 1.5 degree 3 dB beam seen from 36000 km, `2 H tan(theta/2)`.
pub const DEFAULT_CELL_DIAMETER_KM: f64 = 942.0;

pub type CellId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub id: CellId,
    /// Projected coordinate, km.
    pub x: f64,
    /// Projected coordinate, km.
    pub y: f64,
    pub ring: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellGrid {
    cells: Vec<Cell>,
    cell_diameter: f64,
    sorted_by_x: Vec<CellId>,
    /// Position of each cell in `sorted_by_x`.
    #[serde(skip)]
    x_rank: Vec<usize>,
    #[serde(skip)]
    diameter_km: f64,
    /// Row-major `n x n` centre distances.
    #[serde(skip)]
    distances: Vec<f64>,
}

// Axial neighbour offsets, walked in this order around each ring.
const AXIAL_DIRECTIONS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

/// Largest supported ring count. Per-pair tables grow with the square of the
/// cell count.
pub const MAX_RINGS: u32 = 30;

/// Number of cells in a hex grid with `rings` rings around the centre cell.
pub fn centered_hex_count(rings: u32) -> usize {
    let r = rings as usize;
    1 + 3 * r * (r + 1)
}

/// Builds a grid of `1 + 3 r (r + 1)` cells centred at the origin.
pub fn generate_grid(rings: u32, cell_diameter: f64) -> Result<CellGrid> {
    if rings == 0 {
        return Err(Error::InvalidGrid("ring count must be at least 1".into()));
    }
    if rings > MAX_RINGS {
        return Err(Error::InvalidGrid(format!(
            "at most {MAX_RINGS} rings are supported, got {rings}"
        )));
    }
    CellGrid::spiral(centered_hex_count(rings), cell_diameter)
}

impl CellGrid {
    /// The first `count` cells of the ring-by-ring spiral. Equal to
    /// [`generate_grid`] when `count` is a centred hexagonal number; other
    /// counts give a partially filled outer ring (used for small exhaustive
    /// test instances).
    pub fn spiral(count: usize, cell_diameter: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidGrid(
                "grid must contain at least one cell".into(),
            ));
        }
        if count > centered_hex_count(MAX_RINGS) {
            return Err(Error::InvalidGrid(format!(
                "{count} cells exceeds the {MAX_RINGS}-ring limit"
            )));
        }
        if !(cell_diameter.is_finite() && cell_diameter > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "cell diameter must be positive, got {cell_diameter}"
            )));
        }

        let mut axial: Vec<(i32, i32, u32)> = Vec::with_capacity(count);
        axial.push((0, 0, 0));
        let mut ring = 1i32;
        while axial.len() < count {
            let (dq, dr) = AXIAL_DIRECTIONS[4];
            let (mut q, mut r) = (dq * ring, dr * ring);
            for &(sq, sr) in &AXIAL_DIRECTIONS {
                for _ in 0..ring {
                    axial.push((q, r, ring as u32));
                    q += sq;
                    r += sr;
                }
            }
            ring += 1;
        }
        axial.truncate(count);

        let row_height = cell_diameter * 3f64.sqrt() / 2.0;
        let cells: Vec<Cell> = axial
            .iter()
            .enumerate()
            .map(|(id, &(q, r, ring))| Cell {
                id,
                x: cell_diameter * (q as f64 + r as f64 / 2.0),
                y: row_height * r as f64,
                ring,
            })
            .collect();
        Ok(Self::from_cells(cells, cell_diameter))
    }

    fn from_cells(cells: Vec<Cell>, cell_diameter: f64) -> Self {
        let mut sorted_by_x: Vec<CellId> = (0..cells.len()).collect();
        sorted_by_x.sort_by(|&a, &b| cells[a].x.total_cmp(&cells[b].x).then(a.cmp(&b)));
        let mut x_rank = vec![0; cells.len()];
        for (r, &c) in sorted_by_x.iter().enumerate() {
            x_rank[c] = r;
        }

        let n = cells.len();
        let mut distances = vec![0.0; n * n];
        for a in &cells {
            for b in &cells {
                distances[a.id * n + b.id] = (a.x - b.x).hypot(a.y - b.y);
            }
        }
        let diameter_km = distances.iter().copied().fold(0.0, f64::max);
        Self {
            cells,
            cell_diameter,
            sorted_by_x,
            x_rank,
            diameter_km,
            distances,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, id: CellId) -> Result<&Cell> {
        self.cells.get(id).ok_or(Error::InvalidCell {
            id,
            len: self.cells.len(),
        })
    }

    pub fn cell_diameter(&self) -> f64 {
        self.cell_diameter
    }

    /// Cell ids in ascending `x`, ties broken by id.
    pub fn sorted_by_x(&self) -> &[CellId] {
        &self.sorted_by_x
    }

    #[inline]
    pub(crate) fn x_rank(&self, id: CellId) -> usize {
        self.x_rank[id]
    }

    /// Largest centre-to-centre distance in the grid, km.
    pub fn diameter(&self) -> f64 {
        self.diameter_km
    }

    /// Diagonal of the bounding box of all cell centres, km. Any threshold at
    /// least this large makes the axis-wise interference window cover every pair.
    pub fn bounding_diagonal(&self) -> f64 {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for c in &self.cells {
            x0 = x0.min(c.x);
            x1 = x1.max(c.x);
            y0 = y0.min(c.y);
            y1 = y1.max(c.y);
        }
        (x1 - x0).hypot(y1 - y0)
    }

    /// Euclidean planar distance between two cell centres, km.
    pub fn distance(&self, i: CellId, j: CellId) -> Result<f64> {
        self.cell(i)?;
        self.cell(j)?;
        Ok(self.distance_unchecked(i, j))
    }

    /// Unchecked variant for hot loops; panics on out-of-range ids.
    #[inline]
    pub(crate) fn distance_unchecked(&self, i: CellId, j: CellId) -> f64 {
        self.distances[i * self.cells.len() + j]
    }

    /// Distances from `i` to every cell, indexed by cell id.
    #[inline]
    pub(crate) fn distance_row(&self, i: CellId) -> &[f64] {
        let n = self.cells.len();
        &self.distances[i * n..(i + 1) * n]
    }

    /// Planar distance of a cell centre from the sub-satellite point, km.
    pub fn radial_offset(&self, id: CellId) -> f64 {
        let c = &self.cells[id];
        c.x.hypot(c.y)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.cells)?)
    }
}
