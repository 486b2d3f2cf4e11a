//! Seeded matches, tournaments and Elo ratings.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agents::{joint_actions, Policy};
use crate::env::{GameConfig, GameState, MAX_GEESE};
use crate::error::{config, contract, Result};

/// Outcome of one game for the seats in use.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MatchResult {
    /// Final cumulative environment reward per seat.
    pub scores: Vec<i64>,
    /// 1 + number of seats with a strictly higher score.
    pub ranks: Vec<usize>,
    pub winner: Option<usize>,
    pub food_eaten: Vec<u32>,
    pub steps: u32,
}

impl MatchResult {
    pub fn from_scores(scores: Vec<i64>, food_eaten: Vec<u32>, steps: u32) -> Self {
        let ranks: Vec<usize> = scores
            .iter()
            .map(|s| 1 + scores.iter().filter(|o| *o > s).count())
            .collect();
        let top: Vec<usize> = (0..ranks.len()).filter(|&i| ranks[i] == 1).collect();
        let winner = if top.len() == 1 { Some(top[0]) } else { None };
        Self {
            scores,
            ranks,
            winner,
            food_eaten,
            steps,
        }
    }
}

/// Plays one game to completion with `policies[g]` controlling goose `g`.
pub fn play_game(policies: &[&Policy], seed: u64, cfg: GameConfig) -> Result<MatchResult> {
    let (result, _) = play_recorded(policies, seed, cfg, |_, _| Ok(()))?;
    Ok(result)
}

/// [`play_game`] that hands every pre-step state and joint action to `on_step`,
/// and returns the final state too.
pub fn play_recorded<F>(
    policies: &[&Policy],
    seed: u64,
    cfg: GameConfig,
    mut on_step: F,
) -> Result<(MatchResult, GameState)>
where
    F: FnMut(&GameState, &[Option<crate::env::Action>; MAX_GEESE]) -> Result<()>,
{
    if policies.len() != cfg.num_geese {
        return Err(contract(format!(
            "{} policies for {} geese",
            policies.len(),
            cfg.num_geese
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut game = GameState::new(rng.gen(), cfg)?;
    let mut prev: Option<GameState> = None;
    let mut food = vec![0u32; cfg.num_geese];
    while !game.is_done() {
        let actions = joint_actions(policies, &game, prev.as_ref(), &mut rng)?;
        on_step(&game, &actions)?;
        let before = game.clone();
        let info = game.step_mut(actions)?;
        for (g, f) in food.iter_mut().enumerate() {
            *f += info.ate[g] as u32;
        }
        prev = Some(before);
    }
    let scores = game.rewards()[..cfg.num_geese].to_vec();
    Ok((MatchResult::from_scores(scores, food, game.step_count()), game))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgentSummary {
    pub name: String,
    pub seat: usize,
    pub wins: usize,
    pub win_rate: f64,
    pub mean_score: f64,
    pub max_score: i64,
    pub mean_food: f64,
    pub elo: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TournamentResult {
    pub agents: Vec<AgentSummary>,
    pub matches: Vec<MatchResult>,
    pub elo: EloTable,
}

/// Per-game seeds drawn in order from the master seed.
pub fn game_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

/// `n_games` seeded games with agent `i` always on seat `i`. Elo starts
/// from `elo` (fresh ratings when `None`).
pub fn tournament(
    agents: &[(String, Policy)],
    n_games: usize,
    seed: u64,
    base: GameConfig,
    elo: Option<EloTable>,
) -> Result<TournamentResult> {
    if n_games == 0 {
        return Err(config("tournament needs at least one game"));
    }
    if agents.is_empty() || agents.len() > MAX_GEESE {
        return Err(config(format!("{} agents; expected 1 to 4", agents.len())));
    }
    let names: Vec<&str> = agents.iter().map(|(n, _)| n.as_str()).collect();
    let mut elo = elo.unwrap_or_else(|| EloTable::new(&names, ELO_K));
    let cfg = GameConfig {
        num_geese: agents.len(),
        ..base
    };
    let policies: Vec<&Policy> = agents.iter().map(|(_, p)| p).collect();
    let mut matches = Vec::with_capacity(n_games);
    for s in game_seeds(seed, n_games) {
        let m = play_game(&policies, s, cfg)?;
        elo.update(&names, &m)?;
        matches.push(m);
    }
    let n = n_games as f64;
    let summaries = names
        .iter()
        .enumerate()
        .map(|(seat, name)| {
            let wins = matches.iter().filter(|m| m.winner == Some(seat)).count();
            AgentSummary {
                name: name.to_string(),
                seat,
                wins,
                win_rate: wins as f64 / n,
                mean_score: matches.iter().map(|m| m.scores[seat] as f64).sum::<f64>() / n,
                max_score: matches.iter().map(|m| m.scores[seat]).max().unwrap_or(0),
                mean_food: matches.iter().map(|m| m.food_eaten[seat] as f64).sum::<f64>() / n,
                elo: elo.rating(name).unwrap_or(ELO_BASE),
            }
        })
        .collect();
    Ok(TournamentResult {
        agents: summaries,
        matches,
        elo,
    })
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`
/// (1.96 for 95%).
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub const ELO_BASE: f64 = 1000.0;
pub const ELO_K: f64 = 32.0;

/// Ratings updated from 4-player results split into pairwise games.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EloTable {
    pub k: f64,
    ratings: BTreeMap<String, f64>,
    games: BTreeMap<String, u64>,
}

pub fn expected_score(rating: f64, opponent: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((opponent - rating) / 400.0))
}

impl EloTable {
    pub fn new(names: &[&str], k: f64) -> Self {
        let mut t = Self {
            k,
            ratings: BTreeMap::new(),
            games: BTreeMap::new(),
        };
        for n in names {
            t.add(n);
        }
        t
    }

    pub fn add(&mut self, name: &str) {
        self.ratings.entry(name.to_string()).or_insert(ELO_BASE);
        self.games.entry(name.to_string()).or_insert(0);
    }

    pub fn rating(&self, name: &str) -> Option<f64> {
        self.ratings.get(name).copied()
    }

    pub fn games(&self, name: &str) -> Option<u64> {
        self.games.get(name).copied()
    }

    pub fn total(&self) -> f64 {
        self.ratings.values().sum()
    }

    /// Rating changes of a single game where `a` scored `score_a` against `b`.
    pub fn pair_delta(&self, a: &str, b: &str, score_a: f64) -> Result<(f64, f64)> {
        let ra = self.rating(a).ok_or_else(|| contract(format!("unknown agent '{a}'")))?;
        let rb = self.rating(b).ok_or_else(|| contract(format!("unknown agent '{b}'")))?;
        let da = self.k * (score_a - expected_score(ra, rb));
        Ok((da, -da))
    }

    pub fn update_pair(&mut self, a: &str, b: &str, score_a: f64) -> Result<()> {
        let (da, db) = self.pair_delta(a, b, score_a)?;
        *self.ratings.get_mut(a).expect("checked") += da;
        *self.ratings.get_mut(b).expect("checked") += db;
        Ok(())
    }

    /// Applies every pairwise outcome of `result` by rank, all from the
    /// pre-game ratings. `names[seat]` identifies each seat's agent.
    pub fn update(&mut self, names: &[&str], result: &MatchResult) -> Result<()> {
        if names.len() != result.ranks.len() {
            return Err(contract("seat names do not match the result"));
        }
        let mut delta = vec![0.0; names.len()];
        for i in 0..names.len() {
            for j in i + 1..names.len() {
                let score = match result.ranks[i].cmp(&result.ranks[j]) {
                    std::cmp::Ordering::Less => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Greater => 0.0,
                };
                let (di, dj) = self.pair_delta(names[i], names[j], score)?;
                delta[i] += di;
                delta[j] += dj;
            }
        }
        for (n, d) in names.iter().zip(delta) {
            *self.ratings.get_mut(*n).expect("checked") += d;
            *self.games.get_mut(*n).expect("checked") += 1;
        }
        Ok(())
    }
}
