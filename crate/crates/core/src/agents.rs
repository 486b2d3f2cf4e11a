//! Transitions, the replay buffer, and behavior policies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{Encoder, StateTensor};
use crate::env::{toroidal_distance, Action, CellSet, GameState, MAX_GEESE};
use crate::error::{config, contract, Result};
use crate::network::{QNetwork, NUM_ACTIONS};

/// One learner experience `(s, a, r, s′, terminal)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: StateTensor,
    /// Index into [`Action::ALL`].
    pub a: usize,
    pub r: f64,
    pub s_next: StateTensor,
    pub terminal: bool,
}

/// Fixed-capacity FIFO store sampled uniformly with replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push overwrites once full.
    next: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(config("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total pushes, including evicted items.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Storage slots of a uniform sample with replacement; `None` while the
    /// buffer holds fewer than `batch_size` items.
    pub fn sample_slots<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Vec<usize>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return None;
        }
        Some((0..batch_size).map(|_| rng.gen_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        self.sample_slots(batch_size, rng)
            .map(|slots| slots.into_iter().map(|i| &self.items[i]).collect())
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, then flat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn new(start: f64, end: f64, decay_steps: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) {
            return Err(config("epsilon bounds must lie in [0, 1]"));
        }
        Ok(Self {
            start,
            end,
            decay_steps,
        })
    }

    /// 1.0 → 0.05 over the first 30% of `total_steps`.
    pub fn default_for(total_steps: u64) -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_steps: (total_steps as f64 * 0.3).round() as u64,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreSource {
    #[default]
    Random,
    RuleBased,
}

impl std::str::FromStr for ExploreSource {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "rule_based" => Ok(Self::RuleBased),
            other => Err(config(format!("unknown explore source '{other}'"))),
        }
    }
}

/// Highest-valued legal action; ties go to the earliest in N, E, S, W order.
pub fn masked_argmax(q: &[f64; NUM_ACTIONS], legal: &[Action]) -> Result<Action> {
    let mut best: Option<Action> = None;
    for a in Action::ALL {
        if !legal.contains(&a) {
            continue;
        }
        match best {
            Some(b) if q[a.index()] <= q[b.index()] => {}
            _ => best = Some(a),
        }
    }
    best.ok_or_else(|| contract("no legal action"))
}

/// What the learner sees at one decision.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub game: &'a GameState,
    pub goose: usize,
    pub encoded: &'a StateTensor,
}

pub fn epsilon_greedy<R: Rng + ?Sized>(
    net: &QNetwork,
    obs: Observation<'_>,
    legal: &[Action],
    eps: f64,
    source: ExploreSource,
    rng: &mut R,
) -> Result<Action> {
    if legal.is_empty() {
        return Err(contract("epsilon_greedy with no legal action"));
    }
    if rng.gen::<f64>() < eps {
        return match source {
            ExploreSource::Random => Ok(legal[rng.gen_range(0..legal.len())]),
            ExploreSource::RuleBased => greedy_agent(obs.game, obs.goose),
        };
    }
    masked_argmax(&net.q_single(obs.encoded)?, legal)
}

/// Cells a head entering this step would collide with, assuming every live
/// goose drops its tail.
fn blocked_cells(game: &GameState) -> CellSet {
    let mut blocked = CellSet::default();
    for goose in game.geese() {
        let body = goose.body();
        let keep = body.len().saturating_sub(1);
        for &c in body.iter().take(keep) {
            blocked.insert(c);
        }
    }
    blocked
}

/// Moves toward the nearest food along a non-lethal legal action.
pub fn greedy_agent(game: &GameState, g: usize) -> Result<Action> {
    let goose = game.goose(g);
    let head = goose
        .head()
        .ok_or_else(|| contract(format!("greedy agent for dead goose {g}")))?;
    let legal = game.legal_actions(g)?;
    let blocked = blocked_cells(game);
    let food = game.food();
    let mut best: Option<(usize, Action)> = None;
    for &a in &legal {
        let dest = head.translate(a);
        if blocked.contains(dest) {
            continue;
        }
        let d = food
            .iter()
            .map(|&f| toroidal_distance(dest, f))
            .min()
            .unwrap_or(0);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, a));
        }
    }
    Ok(best.map(|(_, a)| a).unwrap_or(legal[0]))
}

/// Agent controlling one goose.
#[derive(Clone, Debug)]
pub enum Policy {
    Greedy,
    Random,
    /// Masked argmax of a fixed network.
    Network { net: Box<QNetwork>, encoder: Encoder },
}

impl Policy {
    pub fn network(net: QNetwork, encoder: Encoder) -> Result<Self> {
        if encoder.channels() != net.in_channels() {
            return Err(config("encoder and network disagree on input channels"));
        }
        Ok(Self::Network {
            net: Box::new(net),
            encoder,
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Policy::Greedy => "greedy",
            Policy::Random => "random",
            Policy::Network { .. } => "network",
        }
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        game: &GameState,
        prev: Option<&GameState>,
        g: usize,
        rng: &mut R,
    ) -> Result<Action> {
        match self {
            Policy::Greedy => greedy_agent(game, g),
            Policy::Random => {
                let legal = game.legal_actions(g)?;
                Ok(legal[rng.gen_range(0..legal.len())])
            }
            Policy::Network { net, encoder } => {
                let s = encoder.encode(game, prev, g)?;
                masked_argmax(&net.q_single(&s)?, &game.legal_actions(g)?)
            }
        }
    }
}

/// Actions of every live goose, `None` for empty seats.
pub fn joint_actions<R: Rng + ?Sized>(
    policies: &[&Policy],
    game: &GameState,
    prev: Option<&GameState>,
    rng: &mut R,
) -> Result<[Option<Action>; MAX_GEESE]> {
    let mut actions = [None; MAX_GEESE];
    for (g, p) in policies.iter().enumerate() {
        if game.goose(g).alive() {
            actions[g] = Some(p.act(game, prev, g, rng)?);
        }
    }
    Ok(actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{CellIndex, GameConfig, GridCoord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(r: usize, c: usize) -> CellIndex {
        GridCoord::new(r, c).unwrap().index()
    }

    fn tr(tag: usize) -> Transition {
        let mut s = StateTensor::zeros(3);
        s.set(0, CellIndex::new(tag % 77).unwrap());
        Transition {
            s: s.clone(),
            a: tag % 4,
            r: tag as f64,
            s_next: s,
            terminal: false,
        }
    }

    fn solo(bodies0: Vec<CellIndex>, last: Option<Action>, food: Vec<CellIndex>) -> GameState {
        GameState::from_parts(
            0,
            [bodies0, vec![], vec![], vec![]],
            [last, None, None, None],
            food.clone(),
            GameConfig {
                num_geese: 1,
                food_count: food.len(),
                ..GameConfig::default()
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn push_and_evict() {
        let mut b = ReplayBuffer::new(3).unwrap();
        assert!(b.is_empty());
        b.push(tr(0));
        assert_eq!(b.len(), 1);
        for i in 1..4 {
            b.push(tr(i));
        }
        assert_eq!(b.len(), 3);
        let rs: Vec<f64> = b.iter().map(|t| t.r).collect();
        assert_eq!(rs, vec![1.0, 2.0, 3.0]);
        assert_eq!(b.inserted(), 4);
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn sampling_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ReplayBuffer::new(5).unwrap();
        assert!(b.sample(1, &mut rng).is_none());
        b.push(tr(7));
        assert_eq!(b.sample(1, &mut rng).unwrap()[0].r, 7.0);
        assert!(b.sample(2, &mut rng).is_none());
        for i in 0..20 {
            b.push(tr(100 + i));
        }
        for _ in 0..200 {
            for t in b.sample(5, &mut rng).unwrap() {
                assert!(t.r >= 115.0);
            }
        }
    }

    #[test]
    fn schedule() {
        let s = EpsilonSchedule::default_for(1000);
        assert_eq!(s.decay_steps, 300);
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(150) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(300), 0.05);
        assert_eq!(s.value(10_000), 0.05);
        assert_eq!(EpsilonSchedule::default_for(0).value(0), 0.05);
        assert!(EpsilonSchedule::new(1.5, 0.1, 10).is_err());
    }

    #[test]
    fn masked_argmax_skips_illegal() {
        let q = [5.0, 1.0, 2.0, 2.0];
        assert_eq!(masked_argmax(&q, &[Action::East, Action::South, Action::West]).unwrap(), Action::South);
        assert_eq!(masked_argmax(&q, &Action::ALL).unwrap(), Action::North);
        assert!(masked_argmax(&q, &[]).is_err());
    }

    #[test]
    fn greedy_moves_to_adjacent_food() {
        let g = solo(vec![cell(3, 3)], None, vec![cell(3, 4)]);
        assert_eq!(greedy_agent(&g, 0).unwrap(), Action::East);
    }

    #[test]
    fn greedy_tie_breaks_north_first() {
        // food diagonal: N and E both close the distance to 1
        let g = solo(vec![cell(3, 3)], None, vec![cell(2, 4)]);
        assert_eq!(greedy_agent(&g, 0).unwrap(), Action::North);
    }

    #[test]
    fn greedy_takes_the_only_safe_exit() {
        // arrived from the north, own body to the west, another head to the
        // south; food lies south but only east is safe
        let g = GameState::from_parts(
            0,
            [
                vec![cell(3, 3), cell(2, 3), cell(2, 2), cell(3, 2), cell(4, 2)],
                vec![cell(4, 3), cell(5, 3)],
                vec![],
                vec![],
            ],
            [Some(Action::South), Some(Action::North), None, None],
            vec![cell(6, 3)],
            GameConfig {
                num_geese: 2,
                food_count: 1,
                ..GameConfig::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(greedy_agent(&g, 0).unwrap(), Action::East);
    }

    #[test]
    fn greedy_falls_back_to_first_legal() {
        let g = GameState::from_parts(
            0,
            [
                vec![cell(3, 3), cell(3, 2)],
                vec![cell(2, 3), cell(2, 4), cell(1, 4)],
                vec![cell(4, 3), cell(4, 4), cell(5, 4)],
                vec![cell(3, 4), cell(3, 5), cell(3, 6)],
            ],
            [Some(Action::East), Some(Action::West), Some(Action::West), Some(Action::West)],
            vec![cell(0, 0)],
            GameConfig {
                food_count: 1,
                ..GameConfig::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(greedy_agent(&g, 0).unwrap(), Action::North);
    }

    #[test]
    fn tails_are_not_blocked() {
        let g = solo(
            vec![cell(3, 3), cell(3, 4), cell(2, 4), cell(2, 3)],
            Some(Action::West),
            vec![cell(6, 10)],
        );
        let blocked = blocked_cells(&g);
        assert!(!blocked.contains(cell(2, 3)));
        assert!(blocked.contains(cell(3, 3)) && blocked.contains(cell(2, 4)));
        assert_eq!(blocked.len(), 3);
    }

    #[test]
    fn epsilon_extremes() {
        let net = QNetwork::build(crate::network::ModelKind::VanillaDqn, 0);
        let game = crate::env::new_game(3, 4, 2).unwrap();
        let enc = Encoder::new(crate::encoding::EncoderKind::Slim3);
        let s = enc.encode(&game, None, 0).unwrap();
        let obs = Observation {
            game: &game,
            goose: 0,
            encoded: &s,
        };
        let legal = vec![Action::North, Action::East, Action::West];
        let q = net.q_single(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = epsilon_greedy(&net, obs, &legal, 0.0, ExploreSource::Random, &mut rng).unwrap();
            assert_eq!(a, masked_argmax(&q, &legal).unwrap());
            let a = epsilon_greedy(&net, obs, &legal, 1.0, ExploreSource::RuleBased, &mut rng).unwrap();
            assert_eq!(a, greedy_agent(&game, 0).unwrap());
            let a = epsilon_greedy(&net, obs, &legal, 1.0, ExploreSource::Random, &mut rng).unwrap();
            assert_ne!(a, Action::South);
        }
        assert!(epsilon_greedy(&net, obs, &[], 0.5, ExploreSource::Random, &mut rng).is_err());
    }
}
