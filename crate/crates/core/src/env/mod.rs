//! Deterministic Hungry Geese simulator on a 7×11 torus.

mod game;
mod grid;
pub mod replay;

pub use game::{new_game, CellSet, GameConfig, GameState, Goose, StepInfo, StepOutcome, MAX_GEESE};
pub use grid::{
    coord_to_index, index_to_coord, toroidal_distance, Action, CellIndex, GridCoord, COLS,
    MAX_DISTANCE, NUM_CELLS, ROWS,
};
