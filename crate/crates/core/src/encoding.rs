//! One-hot grid encodings of a game state from one goose's point of view.
//!
//! Channel layout of the 17-plane encoding (enemies in ascending goose
//! index, skipping the player):
//!
//! | planes | content                      |
//! |--------|------------------------------|
//! | 0      | player head                  |
//! | 1–3    | enemy heads                  |
//! | 4      | player tail (last body cell) |
//! | 5–7    | enemy tails                  |
//! | 8      | player body                  |
//! | 9–11   | enemy bodies                 |
//! | 12     | player previous head         |
//! | 13–15  | enemy previous heads         |
//! | 16     | food                         |
//!
//! The 3-plane encoding is player body, union of enemy bodies, food.

use serde::{Deserialize, Serialize};

use crate::env::{CellIndex, CellSet, GameState, GridCoord, COLS, MAX_GEESE, NUM_CELLS, ROWS};
use crate::error::{config, contract, Result};

pub const FULL_CHANNELS: usize = 17;
pub const SLIM_CHANNELS: usize = 3;

/// Binary (C, 7, 11) grid stored as one 77-bit plane per channel, inline so
/// that replay storage makes no per-state allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateTensor {
    channels: usize,
    planes: [CellSet; FULL_CHANNELS],
}

impl StateTensor {
    /// Panics if `channels` exceeds [`FULL_CHANNELS`].
    pub fn zeros(channels: usize) -> Self {
        assert!(channels <= FULL_CHANNELS, "at most {FULL_CHANNELS} channels");
        Self {
            channels,
            planes: [CellSet::default(); FULL_CHANNELS],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, ROWS, COLS]
    }

    fn active(&self) -> &[CellSet] {
        &self.planes[..self.channels]
    }

    pub fn plane(&self, c: usize) -> CellSet {
        self.active()[c]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        if self.plane(c).contains(CellIndex::new(row * COLS + col).expect("in grid")) {
            1.0
        } else {
            0.0
        }
    }

    pub fn set(&mut self, c: usize, cell: CellIndex) {
        assert!(c < self.channels, "channel {c} out of range");
        self.planes[c].insert(cell);
    }

    pub fn channel_sum(&self, c: usize) -> usize {
        self.plane(c).len()
    }

    /// Writes the dense row-major values into `out` (length `C·77`).
    pub fn write_dense(&self, out: &mut [f64]) {
        assert_eq!(out.len(), self.channels * NUM_CELLS);
        for (c, plane) in self.active().iter().enumerate() {
            let dst = &mut out[c * NUM_CELLS..(c + 1) * NUM_CELLS];
            for (i, v) in dst.iter_mut().enumerate() {
                *v = if plane.contains(CellIndex::new_unchecked(i)) {
                    1.0
                } else {
                    0.0
                };
            }
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.channels * NUM_CELLS];
        self.write_dense(&mut out);
        out
    }

    /// Cyclic shift of every plane by (`dr`, `dc`) cells.
    pub fn roll(&self, dr: usize, dc: usize) -> Self {
        let mut out = Self::zeros(self.channels);
        for (c, p) in self.active().iter().enumerate() {
            for cell in CellIndex::all().filter(|&x| p.contains(x)) {
                let moved = GridCoord {
                    row: (cell.row() + dr) % ROWS,
                    col: (cell.col() + dc) % COLS,
                };
                out.planes[c].insert(moved.index());
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Full17,
    Slim3,
}

impl EncoderKind {
    pub fn channels(self) -> usize {
        match self {
            EncoderKind::Full17 => FULL_CHANNELS,
            EncoderKind::Slim3 => SLIM_CHANNELS,
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full17" => Ok(Self::Full17),
            "slim3" => Ok(Self::Slim3),
            other => Err(config(format!("unknown encoder '{other}'"))),
        }
    }
}

/// Default target of the centering transform: the middle cell (3, 5).
pub const DEFAULT_CENTER: CellIndex = CellIndex::new_unchecked(3 * COLS + 5);

/// Encoder variant plus optional centering on the player's head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Encoder {
    pub kind: EncoderKind,
    pub center: Option<CellIndex>,
}

impl Encoder {
    pub fn new(kind: EncoderKind) -> Self {
        Self { kind, center: None }
    }

    pub fn centered(kind: EncoderKind, center: CellIndex) -> Self {
        Self {
            kind,
            center: Some(center),
        }
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    pub fn encode(
        &self,
        state: &GameState,
        prev: Option<&GameState>,
        player: usize,
    ) -> Result<StateTensor> {
        let t = match self.kind {
            EncoderKind::Full17 => encode_full(state, prev, player)?,
            EncoderKind::Slim3 => encode_slim(state, player)?,
        };
        match (self.center, state.goose(player).head()) {
            (Some(center), Some(head)) => Ok(center_on_player(&t, head, center)),
            _ => Ok(t),
        }
    }
}

fn enemies(player: usize) -> impl Iterator<Item = usize> {
    (0..MAX_GEESE).filter(move |&g| g != player)
}

fn check_player(player: usize) -> Result<()> {
    if player < MAX_GEESE {
        Ok(())
    } else {
        Err(contract(format!("player index {player} out of range")))
    }
}

/// 17-plane encoding; previous-head planes are empty without `prev`.
pub fn encode_full(state: &GameState, prev: Option<&GameState>, player: usize) -> Result<StateTensor> {
    check_player(player)?;
    let mut t = StateTensor::zeros(FULL_CHANNELS);
    let order = std::iter::once(player).chain(enemies(player));
    for (slot, g) in order.enumerate() {
        let goose = state.goose(g);
        if !goose.alive() {
            continue;
        }
        if let Some(h) = goose.head() {
            t.set(slot, h);
        }
        if let Some(tail) = goose.tail() {
            t.set(4 + slot, tail);
        }
        for &c in goose.body() {
            t.set(8 + slot, c);
        }
        if let Some(ph) = prev.and_then(|p| p.goose(g).head()) {
            t.set(12 + slot, ph);
        }
    }
    for &f in state.food() {
        t.set(16, f);
    }
    Ok(t)
}

/// 3-plane encoding: player body, all enemy bodies, food.
pub fn encode_slim(state: &GameState, player: usize) -> Result<StateTensor> {
    check_player(player)?;
    let mut t = StateTensor::zeros(SLIM_CHANNELS);
    for &c in state.goose(player).body() {
        t.set(0, c);
    }
    for g in enemies(player) {
        for &c in state.goose(g).body() {
            t.set(1, c);
        }
    }
    for &f in state.food() {
        t.set(2, f);
    }
    Ok(t)
}

/// Toroidal translation moving `head` onto `center`.
pub fn center_on_player(t: &StateTensor, head: CellIndex, center: CellIndex) -> StateTensor {
    let dr = (center.row() + ROWS - head.row()) % ROWS;
    let dc = (center.col() + COLS - head.col()) % COLS;
    t.roll(dr, dc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{new_game, Action, GameConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cell(r: usize, c: usize) -> CellIndex {
        GridCoord::new(r, c).unwrap().index()
    }

    fn random_play(seed: u64, steps: usize) -> Vec<GameState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = new_game(seed, 4, 2).unwrap();
        let mut out = vec![s.clone()];
        for _ in 0..steps {
            if s.is_done() {
                break;
            }
            let mut acts = [None; MAX_GEESE];
            for g in 0..MAX_GEESE {
                if s.goose(g).alive() {
                    let legal = s.legal_actions(g).unwrap();
                    acts[g] = Some(legal[rng.gen_range(0..legal.len())]);
                }
            }
            s = s.step(acts).unwrap().next;
            out.push(s.clone());
        }
        out
    }

    #[test]
    fn full_channel_sums_match_state() {
        for seed in 0..20 {
            let states = random_play(seed, 60);
            for w in states.windows(2) {
                let (prev, s) = (&w[0], &w[1]);
                for player in 0..MAX_GEESE {
                    let t = encode_full(s, Some(prev), player).unwrap();
                    let order: Vec<usize> =
                        std::iter::once(player).chain(enemies(player)).collect();
                    for (slot, &g) in order.iter().enumerate() {
                        let goose = s.goose(g);
                        let live = usize::from(goose.alive());
                        assert_eq!(t.channel_sum(slot), live);
                        assert_eq!(t.channel_sum(4 + slot), live);
                        assert_eq!(t.channel_sum(8 + slot), goose.len());
                        let had_prev = live * usize::from(prev.goose(g).alive());
                        assert_eq!(t.channel_sum(12 + slot), had_prev);
                        // head and tail are body cells
                        let body = t.plane(8 + slot);
                        assert_eq!(t.plane(slot).union(body), body);
                        assert_eq!(t.plane(4 + slot).union(body), body);
                    }
                    assert_eq!(t.channel_sum(16), s.food().len());
                    assert!(t.to_dense().iter().all(|&v| v == 0.0 || v == 1.0));
                }
            }
        }
    }

    #[test]
    fn no_prev_means_empty_history() {
        let s = new_game(4, 4, 2).unwrap();
        let t = encode_full(&s, None, 0).unwrap();
        for c in 12..16 {
            assert_eq!(t.channel_sum(c), 0);
        }
        // length 1: head, tail and body coincide
        assert_eq!(t.plane(0), t.plane(4));
        assert_eq!(t.plane(0), t.plane(8));
        assert_eq!(t.channel_sum(0), 1);
    }

    #[test]
    fn slim_sums_and_disjointness() {
        for seed in 0..20 {
            for s in random_play(seed, 80) {
                for player in 0..MAX_GEESE {
                    let t = encode_slim(&s, player).unwrap();
                    let enemy_len: usize = enemies(player).map(|g| s.goose(g).len()).sum();
                    assert_eq!(t.channel_sum(0), s.goose(player).len());
                    assert_eq!(t.channel_sum(1), enemy_len);
                    assert_eq!(t.channel_sum(2), s.food().len());
                    let d = t.to_dense();
                    for i in 0..NUM_CELLS {
                        assert_eq!(d[i] * d[NUM_CELLS + i], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn solo_has_empty_enemy_plane() {
        let cfg = GameConfig {
            num_geese: 1,
            ..GameConfig::default()
        };
        let s = GameState::new(1, cfg).unwrap();
        assert_eq!(encode_slim(&s, 0).unwrap().channel_sum(1), 0);
    }

    #[test]
    fn enemy_order_is_ascending_index() {
        let cfg = GameConfig::default();
        let s = GameState::from_parts(
            0,
            [vec![cell(0, 0)], vec![cell(1, 1)], vec![cell(2, 2)], vec![cell(3, 3)]],
            [None; 4],
            vec![cell(6, 6), cell(5, 5)],
            cfg,
            0,
        )
        .unwrap();
        let t = encode_full(&s, None, 2).unwrap();
        assert!(t.plane(0).contains(cell(2, 2)));
        assert!(t.plane(1).contains(cell(0, 0)));
        assert!(t.plane(2).contains(cell(1, 1)));
        assert!(t.plane(3).contains(cell(3, 3)));
    }

    #[test]
    fn dead_goose_planes_are_empty() {
        let cfg = GameConfig {
            num_geese: 3,
            ..GameConfig::default()
        };
        let s = GameState::from_parts(
            0,
            [vec![cell(3, 3)], vec![cell(3, 5)], vec![cell(0, 0)], vec![]],
            [None; 4],
            vec![cell(6, 6), cell(5, 5)],
            cfg,
            0,
        )
        .unwrap();
        let next = s
            .step([Some(Action::East), Some(Action::West), Some(Action::North), None])
            .unwrap()
            .next;
        let t = encode_full(&next, Some(&s), 2).unwrap();
        for slot in [1, 2, 3] {
            for base in [0, 4, 8, 12] {
                assert_eq!(t.channel_sum(base + slot), 0);
            }
        }
        assert_eq!(t.shape(), [17, 7, 11]);
    }

    #[test]
    fn centering_identity_at_center() {
        let s = new_game(9, 4, 2).unwrap();
        let t = encode_full(&s, None, 0).unwrap();
        assert_eq!(center_on_player(&t, DEFAULT_CENTER, DEFAULT_CENTER), t);
        let enc = Encoder::centered(EncoderKind::Full17, DEFAULT_CENTER);
        let c = enc.encode(&s, None, 0).unwrap();
        assert!(c.plane(0).contains(DEFAULT_CENTER));
    }

    fn arb_tensor() -> impl Strategy<Value = StateTensor> {
        proptest::collection::vec(any::<u128>(), 1..18).prop_map(|bits| {
            let mask = (1u128 << NUM_CELLS) - 1;
            let mut t = StateTensor::zeros(bits.len());
            for (c, b) in bits.into_iter().enumerate() {
                for cell in CellIndex::all() {
                    if (b & mask) >> cell.get() & 1 == 1 {
                        t.set(c, cell);
                    }
                }
            }
            t
        })
    }

    proptest! {
        #[test]
        fn centering_inverts_and_preserves_sums(t in arb_tensor(), head in 0usize..77, center in 0usize..77) {
            let head = CellIndex::new(head).unwrap();
            let center = CellIndex::new(center).unwrap();
            let moved = center_on_player(&t, head, center);
            prop_assert_eq!(center_on_player(&moved, center, head), t.clone());
            for c in 0..t.channels() {
                prop_assert_eq!(moved.channel_sum(c), t.channel_sum(c));
            }
        }
    }
}
