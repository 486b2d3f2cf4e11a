//! Game state and the simultaneous-move step function.
//!
//! Rules applied by [`GameState::step`], in order:
//!
//! 1. Every live goose moves its head one cell (wrapping). Moving in the
//!    reverse of the previous action kills the goose outright.
//! 2. A goose whose new head is on food grows (its tail stays) and the food is
//!    consumed; several geese on the same food all grow.
//! 3. Every other moving goose drops its tail cell.
//! 4. A head on any occupied cell of the updated bodies dies: its own body,
//!    another body, or another head (every goose involved dies). Dead bodies
//!    leave the board immediately.
//! 5. Every `hunger_rate` steps each survivor loses one tail cell; reaching
//!    length 0 is death.
//! 6. Consumed food is replaced on uniformly drawn free cells.
//! 7. The cumulative reward of a live goose is `step + length`; a dead goose
//!    keeps the value it held before the fatal step.
//!
//! Every random draw picks a position in the ascending list of free cells
//! with `gen_range(0..free.len())` from the state's own generator, so a
//! trajectory is a pure function of the seed and the submitted actions.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{Action, CellIndex, NUM_CELLS};
use crate::error::{config, contract, Result};

pub const MAX_GEESE: usize = 4;

/// Bitset over the 77 cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CellSet(u128);

impl CellSet {
    #[inline]
    pub fn insert(&mut self, c: CellIndex) {
        self.0 |= 1u128 << c.get();
    }

    #[inline]
    pub fn contains(self, c: CellIndex) -> bool {
        self.0 & (1u128 << c.get()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: CellSet) -> CellSet {
        CellSet(self.0 | other.0)
    }

    /// Cells not in the set, ascending.
    pub fn complement_cells(self) -> impl Iterator<Item = CellIndex> {
        CellIndex::all().filter(move |&c| !self.contains(c))
    }
}

impl FromIterator<CellIndex> for CellSet {
    fn from_iter<I: IntoIterator<Item = CellIndex>>(iter: I) -> Self {
        let mut s = CellSet::default();
        for c in iter {
            s.insert(c);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub num_geese: usize,
    pub food_count: usize,
    pub hunger_rate: u32,
    pub max_steps: u32,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            num_geese: 4,
            food_count: 2,
            hunger_rate: 40,
            max_steps: 200,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_GEESE).contains(&self.num_geese) {
            return Err(config(format!(
                "num_geese must be in 1..={MAX_GEESE}, got {}",
                self.num_geese
            )));
        }
        if self.food_count < 1 {
            return Err(config("food_count must be at least 1"));
        }
        if self.num_geese + self.food_count > NUM_CELLS {
            return Err(config(format!(
                "{} geese and {} food do not fit on {NUM_CELLS} cells",
                self.num_geese, self.food_count
            )));
        }
        if self.hunger_rate == 0 {
            return Err(config("hunger_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Goose {
    body: VecDeque<CellIndex>,
    last_action: Option<Action>,
}

impl Goose {
    /// Cells head first.
    pub fn body(&self) -> &VecDeque<CellIndex> {
        &self.body
    }

    pub fn alive(&self) -> bool {
        !self.body.is_empty()
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    pub fn head(&self) -> Option<CellIndex> {
        self.body.front().copied()
    }

    pub fn tail(&self) -> Option<CellIndex> {
        self.body.back().copied()
    }

    pub fn last_action(&self) -> Option<Action> {
        self.last_action
    }
}

/// Per-step report alongside the successor state.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: GameState,
    /// Cumulative reward per goose after the step.
    pub env_reward: [i64; MAX_GEESE],
    pub newly_dead: [bool; MAX_GEESE],
    pub done: bool,
}

/// What an in-place step changed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct StepInfo {
    pub newly_dead: [bool; MAX_GEESE],
    pub ate: [bool; MAX_GEESE],
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameState {
    step: u32,
    geese: [Goose; MAX_GEESE],
    food: Vec<CellIndex>,
    rewards: [i64; MAX_GEESE],
    config: GameConfig,
    rng: ChaCha8Rng,
}

/// Fresh game with the default hunger and episode-length rules.
pub fn new_game(seed: u64, num_geese: usize, food_count: usize) -> Result<GameState> {
    GameState::new(
        seed,
        GameConfig {
            num_geese,
            food_count,
            ..GameConfig::default()
        },
    )
}

impl GameState {
    /// Places `num_geese` single-cell geese (goose 0 first) and then the food,
    /// each on a uniformly drawn free cell.
    pub fn new(seed: u64, config: GameConfig) -> Result<Self> {
        config.validate()?;
        let mut state = Self {
            step: 0,
            geese: Default::default(),
            food: Vec::with_capacity(config.food_count),
            rewards: [0; MAX_GEESE],
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        for g in 0..config.num_geese {
            let cell = state
                .draw_free_cell()
                .ok_or_else(|| config_err("no free cell for goose"))?;
            state.geese[g].body.push_back(cell);
            state.rewards[g] = 1;
        }
        state.refill_food();
        if state.food.len() < config.food_count {
            return Err(config_err("no free cell for food"));
        }
        Ok(state)
    }

    /// Test hook: builds a state from explicit bodies and food.
    pub fn from_parts(
        step: u32,
        bodies: [Vec<CellIndex>; MAX_GEESE],
        last_actions: [Option<Action>; MAX_GEESE],
        food: Vec<CellIndex>,
        config: GameConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut geese: [Goose; MAX_GEESE] = Default::default();
        let mut occupied = CellSet::default();
        for (g, body) in bodies.into_iter().enumerate() {
            for w in body.windows(2) {
                if super::grid::toroidal_distance(w[0], w[1]) != 1 {
                    return Err(contract(format!("goose {g} body is not contiguous")));
                }
            }
            for &c in &body {
                if occupied.contains(c) {
                    return Err(contract(format!("cell {c} occupied twice")));
                }
                occupied.insert(c);
            }
            geese[g].body = body.into();
            geese[g].last_action = last_actions[g];
        }
        for &f in &food {
            if occupied.contains(f) {
                return Err(contract(format!("food on occupied cell {f}")));
            }
            occupied.insert(f);
        }
        let mut rewards = [0; MAX_GEESE];
        for g in 0..MAX_GEESE {
            if geese[g].alive() {
                rewards[g] = step as i64 + geese[g].len() as i64;
            }
        }
        Ok(Self {
            step,
            geese,
            food,
            rewards,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }

    pub fn geese(&self) -> &[Goose; MAX_GEESE] {
        &self.geese
    }

    pub fn goose(&self, g: usize) -> &Goose {
        &self.geese[g]
    }

    pub fn food(&self) -> &[CellIndex] {
        &self.food
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    /// Cumulative reward per goose.
    pub fn rewards(&self) -> [i64; MAX_GEESE] {
        self.rewards
    }

    pub fn alive_count(&self) -> usize {
        self.geese.iter().filter(|g| g.alive()).count()
    }

    /// Cells covered by live geese.
    pub fn occupied(&self) -> CellSet {
        self.geese.iter().flat_map(|g| g.body.iter().copied()).collect()
    }

    pub fn food_set(&self) -> CellSet {
        self.food.iter().copied().collect()
    }

    /// Game over: at most one goose left in a multi-goose game, no goose
    /// left in a solo game, or the step limit reached.
    pub fn is_done(&self) -> bool {
        let min_alive = if self.config.num_geese > 1 { 2 } else { 1 };
        self.alive_count() < min_alive || self.step >= self.config.max_steps
    }

    /// All four actions except the reverse of the last one.
    pub fn legal_actions(&self, g: usize) -> Result<Vec<Action>> {
        let goose = self
            .geese
            .get(g)
            .ok_or_else(|| contract(format!("goose index {g} out of range")))?;
        if !goose.alive() {
            return Err(contract(format!("goose {g} is dead")));
        }
        Ok(legal_after(goose.last_action))
    }

    fn draw_free_cell(&mut self) -> Option<CellIndex> {
        let blocked = self.occupied().union(self.food_set());
        let free = NUM_CELLS - blocked.len();
        if free == 0 {
            return None;
        }
        let k = self.rng.gen_range(0..free);
        blocked.complement_cells().nth(k)
    }

    fn refill_food(&mut self) {
        while self.food.len() < self.config.food_count {
            match self.draw_free_cell() {
                Some(c) => self.food.push(c),
                None => break,
            }
        }
    }

    /// Successor state; see the module docs for the rules.
    pub fn step(&self, actions: [Option<Action>; MAX_GEESE]) -> Result<StepOutcome> {
        let mut next = self.clone();
        let info = next.step_mut(actions)?;
        Ok(StepOutcome {
            env_reward: next.rewards,
            newly_dead: info.newly_dead,
            done: info.done,
            next,
        })
    }

    /// In-place variant of [`GameState::step`].
    pub fn step_mut(&mut self, actions: [Option<Action>; MAX_GEESE]) -> Result<StepInfo> {
        if self.is_done() {
            return Err(contract("step on a finished game"));
        }
        for g in 0..MAX_GEESE {
            match (self.geese[g].alive(), actions[g]) {
                (true, None) => return Err(contract(format!("no action for live goose {g}"))),
                (false, Some(_)) => return Err(contract(format!("action for dead goose {g}"))),
                _ => {}
            }
        }
        self.step += 1;
        let mut info = StepInfo::default();
        let food = self.food_set();
        let mut eaten = CellSet::default();
        let mut moving = [false; MAX_GEESE];

        for (g, goose) in self.geese.iter_mut().enumerate() {
            let Some(action) = actions[g] else { continue };
            let head = goose.body[0];
            let reversed = goose.last_action == Some(action.opposite());
            goose.last_action = Some(action);
            if reversed {
                goose.body.clear();
                info.newly_dead[g] = true;
                continue;
            }
            let new_head = head.translate(action);
            if food.contains(new_head) {
                eaten.insert(new_head);
                info.ate[g] = true;
            } else {
                goose.body.pop_back();
            }
            goose.body.push_front(new_head);
            moving[g] = true;
        }

        // A head dies when its cell is covered more than once.
        let mut counts = [0u8; NUM_CELLS];
        for goose in &self.geese {
            for &c in &goose.body {
                counts[c.get()] += 1;
            }
        }
        for g in 0..MAX_GEESE {
            if moving[g] && counts[self.geese[g].body[0].get()] > 1 {
                info.newly_dead[g] = true;
            }
        }
        for g in 0..MAX_GEESE {
            if info.newly_dead[g] {
                self.geese[g].body.clear();
            }
        }

        if self.step % self.config.hunger_rate == 0 {
            for (g, goose) in self.geese.iter_mut().enumerate() {
                if goose.alive() {
                    goose.body.pop_back();
                    if goose.body.is_empty() {
                        info.newly_dead[g] = true;
                    }
                }
            }
        }

        if !eaten.is_empty() {
            self.food.retain(|&f| !eaten.contains(f));
            self.refill_food();
        }

        for (g, goose) in self.geese.iter().enumerate() {
            if goose.alive() {
                self.rewards[g] = self.step as i64 + goose.len() as i64;
            }
        }
        info.done = self.is_done();
        Ok(info)
    }
}

pub(crate) fn legal_after(last: Option<Action>) -> Vec<Action> {
    Action::ALL
        .into_iter()
        .filter(|&a| Some(a.opposite()) != last)
        .collect()
}

fn config_err(msg: &str) -> crate::Error {
    config(msg)
}
