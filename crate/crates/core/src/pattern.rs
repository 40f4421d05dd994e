use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CellId;

/// The set of cells illuminated during one slot, kept sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IlluminationPattern {
    cells: Vec<CellId>,
}

impl IlluminationPattern {
    /// Validates that every id is below `n_cells` and appears once.
    pub fn new(mut cells: Vec<CellId>, n_cells: usize) -> Result<Self> {
        cells.sort_unstable();
        for w in cells.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateCell(w[0]));
            }
        }
        if let Some(&last) = cells.last() {
            if last >= n_cells {
                return Err(Error::InvalidCell {
                    id: last,
                    len: n_cells,
                });
            }
        }
        Ok(Self { cells })
    }

    /// Like [`IlluminationPattern::new`] but also checks the beam count.
    pub fn with_beams(cells: Vec<CellId>, n_cells: usize, beams: usize) -> Result<Self> {
        let p = Self::new(cells, n_cells)?;
        p.expect_beams(beams)?;
        Ok(p)
    }

    pub(crate) fn from_sorted_unchecked(cells: Vec<CellId>) -> Self {
        debug_assert!(cells.windows(2).all(|w| w[0] < w[1]));
        Self { cells }
    }

    pub fn expect_beams(&self, beams: usize) -> Result<()> {
        if self.cells.len() != beams {
            return Err(Error::PatternCardinality {
                got: self.cells.len(),
                expected: beams,
            });
        }
        Ok(())
    }

    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: CellId) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    /// 0/1 indicator vector of length `n_cells`.
    pub fn indicator(&self, n_cells: usize) -> Vec<bool> {
        let mut x = vec![false; n_cells];
        for &c in &self.cells {
            x[c] = true;
        }
        x
    }
}

/// Beam hopping transmission plan: one pattern per slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bhtp {
    pub patterns: Vec<IlluminationPattern>,
}

impl Bhtp {
    pub fn new(patterns: Vec<IlluminationPattern>) -> Self {
        Self { patterns }
    }

    pub fn horizon(&self) -> usize {
        self.patterns.len()
    }

    /// Checks every slot serves exactly `beams` distinct in-range cells.
    pub fn validate(&self, n_cells: usize, beams: usize) -> Result<()> {
        for p in &self.patterns {
            p.expect_beams(beams)?;
            for w in p.cells().windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::DuplicateCell(w[0]));
                }
            }
            if let Some(&last) = p.cells().last() {
                if last >= n_cells {
                    return Err(Error::InvalidCell {
                        id: last,
                        len: n_cells,
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_sorted_and_validated() {
        let p = IlluminationPattern::new(vec![5, 1, 3], 6).unwrap();
        assert_eq!(p.cells(), &[1, 3, 5]);
        assert!(p.contains(3) && !p.contains(2));
        assert!(matches!(
            IlluminationPattern::new(vec![1, 1], 6),
            Err(Error::DuplicateCell(1))
        ));
        assert!(IlluminationPattern::new(vec![6], 6).is_err());
        assert!(IlluminationPattern::with_beams(vec![0, 1], 6, 3).is_err());
        assert_eq!(p.indicator(6), vec![false, true, false, true, false, true]);
    }

    #[test]
    fn bhtp_validation() {
        let ok = Bhtp::new(vec![IlluminationPattern::new(vec![0, 2], 4).unwrap(); 3]);
        assert!(ok.validate(4, 2).is_ok());
        assert!(ok.validate(4, 3).is_err());
        assert!(ok.validate(2, 2).is_err());
    }
}
