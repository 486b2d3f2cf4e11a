//! JSON-lines episode export: one line per state.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::game::{GameState, MAX_GEESE};
use super::grid::Action;
use crate::error::Result;

/// Marker used in `actions` for a goose that did not act.
pub const NO_ACTION: &str = "NONE";

/// One line of a replay file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayFrame {
    pub step: u32,
    pub geese: Vec<Vec<usize>>,
    pub food: Vec<usize>,
    /// Actions taken from this state, [`NO_ACTION`] for geese that did not act.
    pub actions: Vec<String>,
    pub rewards: Vec<i64>,
}

impl ReplayFrame {
    pub fn new(state: &GameState, actions: &[Option<Action>; MAX_GEESE]) -> Self {
        Self {
            step: state.step_count(),
            geese: state
                .geese()
                .iter()
                .map(|g| g.body().iter().map(|c| c.get()).collect())
                .collect(),
            food: state.food().iter().map(|c| c.get()).collect(),
            actions: actions
                .iter()
                .map(|a| a.map_or(NO_ACTION, Action::name).to_string())
                .collect(),
            rewards: state.rewards().to_vec(),
        }
    }
}

/// Writes frames as JSON lines.
pub struct ReplayWriter<W: Write> {
    out: W,
}

impl<W: Write> ReplayWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, frame: &ReplayFrame) -> Result<()> {
        serde_json::to_writer(&mut self.out, frame)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
