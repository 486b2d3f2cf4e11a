//! Cell indexing, moves and distances on the 7×11 torus.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

pub const ROWS: usize = 7;
pub const COLS: usize = 11;
pub const NUM_CELLS: usize = ROWS * COLS;

/// Largest toroidal Manhattan distance between two cells: 3 + 5.
pub const MAX_DISTANCE: usize = ROWS / 2 + COLS / 2;

/// Flat cell index in `0..77`, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct CellIndex(u8);

impl CellIndex {
    pub fn new(i: usize) -> Result<Self> {
        if i < NUM_CELLS {
            Ok(Self(i as u8))
        } else {
            Err(contract(format!("cell index {i} outside 0..{NUM_CELLS}")))
        }
    }

    #[inline]
    pub(crate) const fn new_unchecked(i: usize) -> Self {
        Self(i as u8)
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn row(self) -> usize {
        self.get() / COLS
    }

    #[inline]
    pub fn col(self) -> usize {
        self.get() % COLS
    }

    pub fn coord(self) -> GridCoord {
        GridCoord {
            row: self.row(),
            col: self.col(),
        }
    }

    /// Neighbouring cell one step in `action`'s direction, wrapping at the edges.
    #[inline]
    pub fn translate(self, action: Action) -> Self {
        let (r, c) = (self.row(), self.col());
        let (r, c) = match action {
            Action::North => ((r + ROWS - 1) % ROWS, c),
            Action::South => ((r + 1) % ROWS, c),
            Action::East => (r, (c + 1) % COLS),
            Action::West => (r, (c + COLS - 1) % COLS),
        };
        Self::new_unchecked(r * COLS + c)
    }

    pub fn all() -> impl Iterator<Item = CellIndex> {
        (0..NUM_CELLS).map(Self::new_unchecked)
    }
}

impl TryFrom<usize> for CellIndex {
    type Error = crate::Error;

    fn try_from(i: usize) -> Result<Self> {
        Self::new(i)
    }
}

impl From<CellIndex> for usize {
    fn from(c: CellIndex) -> usize {
        c.get()
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridCoord {
    pub row: usize,
    pub col: usize,
}

impl GridCoord {
    pub fn new(row: usize, col: usize) -> Result<Self> {
        if row < ROWS && col < COLS {
            Ok(Self { row, col })
        } else {
            Err(contract(format!("coordinate ({row}, {col}) outside the 7×11 grid")))
        }
    }

    pub fn index(self) -> CellIndex {
        CellIndex::new_unchecked(self.row * COLS + self.col)
    }
}

/// Row by integer division, column by remainder.
pub fn index_to_coord(i: usize) -> Result<GridCoord> {
    Ok(CellIndex::new(i)?.coord())
}

pub fn coord_to_index(c: GridCoord) -> CellIndex {
    c.index()
}

/// Manhattan distance with wrap-around on both axes.
#[inline]
pub fn toroidal_distance(a: CellIndex, b: CellIndex) -> usize {
    let dr = a.row().abs_diff(b.row());
    let dc = a.col().abs_diff(b.col());
    dr.min(ROWS - dr) + dc.min(COLS - dc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    North,
    East,
    South,
    West,
}

impl Action {
    /// Fixed order; also the tie-break order of the greedy agent and the
    /// network's output order.
    pub const ALL: [Action; 4] = [Action::North, Action::East, Action::South, Action::West];

    pub fn opposite(self) -> Self {
        match self {
            Action::North => Action::South,
            Action::South => Action::North,
            Action::East => Action::West,
            Action::West => Action::East,
        }
    }

    /// (Δrow, Δcol) before wrapping.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::North => (-1, 0),
            Action::East => (0, 1),
            Action::South => (1, 0),
            Action::West => (0, -1),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| contract(format!("action index {i} outside 0..4")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::North => "NORTH",
            Action::East => "EAST",
            Action::South => "SOUTH",
            Action::West => "WEST",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
