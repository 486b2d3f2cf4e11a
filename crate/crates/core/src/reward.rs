//! Per-step reward shapers.
//!
//! * [`vanilla_delta`]: change in the environment's cumulative reward
//!   (`step + length` while alive).
//! * [`dqn_training_reward`]: event bonuses for eating, dying, outliving every
//!   enemy, step milestones and plain survival.
//! * [`manhattan_reward`]: eat bonus plus a distance term on the nearest food,
//!   quadratic when the head moved closer and linear otherwise.

use serde::{Deserialize, Serialize};

use crate::env::{toroidal_distance, CellIndex, GameState, MAX_DISTANCE, MAX_GEESE};
use crate::error::{config, contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShaperKind {
    VanillaDelta,
    DqnTraining,
    ManhattanShaped,
}

impl std::str::FromStr for ShaperKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla_delta" => Ok(Self::VanillaDelta),
            "dqn_training" => Ok(Self::DqnTraining),
            "manhattan_shaped" => Ok(Self::ManhattanShaped),
            other => Err(config(format!("unknown reward shaper '{other}'"))),
        }
    }
}

/// Shaper constants. Penalties are stored with their sign (≤ 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShaperParams {
    pub eat_bonus: f64,
    pub death_penalty: f64,
    pub win_bonus: f64,
    pub milestone_bonus: f64,
    pub milestone_period: u32,
    pub survive_bonus: f64,
    /// Eat bonus of the distance-based shaper.
    pub approach_eat_bonus: f64,
    pub max_food_distance: f64,
    /// Reward moving away quadratically and approaching linearly, the
    /// branch direction of the printed pseudocode. Off by default.
    pub printed_branch: bool,
}

impl Default for ShaperParams {
    fn default() -> Self {
        Self {
            eat_bonus: 50.0,
            death_penalty: -1000.0,
            win_bonus: 1000.0,
            milestone_bonus: 50.0,
            milestone_period: 100,
            survive_bonus: 10.0,
            approach_eat_bonus: 500.0,
            max_food_distance: MAX_DISTANCE as f64,
            printed_branch: false,
        }
    }
}

impl ShaperParams {
    pub fn validate(&self) -> Result<()> {
        let bonuses = [
            self.eat_bonus,
            self.win_bonus,
            self.milestone_bonus,
            self.survive_bonus,
            self.approach_eat_bonus,
            self.max_food_distance,
        ];
        if bonuses.iter().any(|b| !(*b >= 0.0)) {
            return Err(config("reward bonuses must be non-negative"));
        }
        if !(self.death_penalty <= 0.0) {
            return Err(config("death_penalty must be non-positive"));
        }
        if self.milestone_period == 0 {
            return Err(config("milestone_period must be positive"));
        }
        Ok(())
    }
}

/// One environment transition seen from `player`.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub prev: &'a GameState,
    pub next: &'a GameState,
    pub player: usize,
    pub env_reward_delta: i64,
}

impl<'a> StepContext<'a> {
    pub fn new(prev: &'a GameState, next: &'a GameState, player: usize) -> Result<Self> {
        if player >= MAX_GEESE {
            return Err(contract(format!("player index {player} out of range")));
        }
        if next.step_count() != prev.step_count() + 1 {
            return Err(contract("next is not the successor of prev"));
        }
        Ok(Self {
            prev,
            next,
            player,
            env_reward_delta: next.rewards()[player] - prev.rewards()[player],
        })
    }

    fn was_alive(&self) -> bool {
        self.prev.goose(self.player).alive()
    }

    fn is_alive(&self) -> bool {
        self.next.goose(self.player).alive()
    }

    fn died(&self) -> bool {
        self.was_alive() && !self.is_alive()
    }

    fn grew(&self) -> bool {
        self.is_alive() && self.next.goose(self.player).len() > self.prev.goose(self.player).len()
    }

    fn enemies_alive(&self, s: &GameState) -> usize {
        (0..MAX_GEESE)
            .filter(|&g| g != self.player && s.goose(g).alive())
            .count()
    }
}

/// Difference of cumulative environment rewards; 0 once the player is dead.
pub fn vanilla_delta(ctx: &StepContext<'_>) -> f64 {
    ctx.env_reward_delta as f64
}

/// Sum of the event bonuses that fired this step.
pub fn dqn_training_reward(ctx: &StepContext<'_>, p: &ShaperParams) -> f64 {
    if !ctx.was_alive() {
        return 0.0;
    }
    let mut r = 0.0;
    if ctx.grew() {
        r += p.eat_bonus;
    }
    if ctx.died() {
        r += p.death_penalty;
    }
    if ctx.is_alive() && ctx.enemies_alive(ctx.prev) > 0 && ctx.enemies_alive(ctx.next) == 0 {
        r += p.win_bonus;
    }
    if ctx.is_alive() {
        let step = ctx.next.step_count();
        if step > 0 && step % p.milestone_period == 0 {
            r += p.milestone_bonus;
        } else {
            r += p.survive_bonus;
        }
    }
    r
}

fn nearest_food(head: CellIndex, food: &[CellIndex]) -> Option<usize> {
    food.iter().map(|&f| toroidal_distance(head, f)).min()
}

/// Distance-shaped reward from the previous and current nearest-food
/// distances.
pub fn manhattan_from_distances(
    prev_distance: usize,
    distance: usize,
    ate: bool,
    p: &ShaperParams,
) -> f64 {
    let mut r = 0.0;
    if ate {
        r += p.approach_eat_bonus;
    }
    let slack = p.max_food_distance - distance as f64;
    let rewarded = if p.printed_branch {
        distance > prev_distance
    } else {
        distance < prev_distance
    };
    if rewarded {
        r += slack * slack;
    } else {
        r -= slack;
    }
    r
}

pub fn manhattan_reward(ctx: &StepContext<'_>, p: &ShaperParams) -> Result<f64> {
    if !ctx.was_alive() {
        return Ok(0.0);
    }
    if ctx.died() {
        return Ok(p.death_penalty);
    }
    let prev_head = ctx.prev.goose(ctx.player).head().expect("alive");
    let head = ctx.next.goose(ctx.player).head().expect("alive");
    let d_prev = nearest_food(prev_head, ctx.prev.food())
        .ok_or_else(|| contract("previous state has no food"))?;
    let d = nearest_food(head, ctx.next.food()).ok_or_else(|| contract("state has no food"))?;
    Ok(manhattan_from_distances(d_prev, d, ctx.grew(), p))
}

/// Dispatches to the shaper selected by `kind`.
pub fn shape(kind: ShaperKind, ctx: &StepContext<'_>, p: &ShaperParams) -> Result<f64> {
    match kind {
        ShaperKind::VanillaDelta => Ok(vanilla_delta(ctx)),
        ShaperKind::DqnTraining => Ok(dqn_training_reward(ctx, p)),
        ShaperKind::ManhattanShaped => manhattan_reward(ctx, p),
    }
}
