//! Naive re-implementation of the rules on (row, col) pairs and plain
//! vectors, and a driver that replays random episodes against it.

use geese_core::env::{Action, CellIndex, GameConfig, GameState, MAX_GEESE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Pos = (usize, usize);

pub struct Oracle {
    step: u32,
    bodies: Vec<Vec<Pos>>,
    last: Vec<Option<usize>>,
    food: Vec<Pos>,
    rewards: Vec<i64>,
    cfg: GameConfig,
    rng: ChaCha8Rng,
}

const DIRS: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

fn opposite(a: usize) -> usize {
    (a + 2) % 4
}

impl Oracle {
    fn new(seed: u64, cfg: GameConfig) -> Self {
        let mut o = Oracle {
            step: 0,
            bodies: vec![Vec::new(); 4],
            last: vec![None; 4],
            food: Vec::new(),
            rewards: vec![0; 4],
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        for g in 0..cfg.num_geese {
            let p = o.draw().unwrap();
            o.bodies[g].push(p);
            o.rewards[g] = 1;
        }
        o.refill();
        o
    }

    fn draw(&mut self) -> Option<Pos> {
        let mut free = Vec::new();
        for r in 0..7 {
            for c in 0..11 {
                let taken = self.bodies.iter().any(|b| b.contains(&(r, c))) || self.food.contains(&(r, c));
                if !taken {
                    free.push((r, c));
                }
            }
        }
        if free.is_empty() {
            return None;
        }
        let k = self.rng.gen_range(0..free.len());
        Some(free[k])
    }

    fn refill(&mut self) {
        while self.food.len() < self.cfg.food_count {
            match self.draw() {
                Some(p) => self.food.push(p),
                None => break,
            }
        }
    }

    fn alive(&self) -> usize {
        self.bodies.iter().filter(|b| !b.is_empty()).count()
    }

    fn done(&self) -> bool {
        let need = if self.cfg.num_geese > 1 { 2 } else { 1 };
        self.alive() < need || self.step >= self.cfg.max_steps
    }

    fn step(&mut self, actions: &[Option<usize>; 4]) -> [bool; 4] {
        self.step += 1;
        let food_before = self.food.clone();
        let mut moved = [false; 4];
        let mut ate = [false; 4];
        let mut eaten: Vec<Pos> = Vec::new();
        for g in 0..4 {
            let Some(a) = actions[g] else { continue };
            let reverse = self.last[g] == Some(opposite(a));
            self.last[g] = Some(a);
            if reverse {
                self.bodies[g].clear();
                continue;
            }
            let (r, c) = self.bodies[g][0];
            let nr = ((r as isize + DIRS[a].0 + 7) % 7) as usize;
            let nc = ((c as isize + DIRS[a].1 + 11) % 11) as usize;
            if food_before.contains(&(nr, nc)) {
                ate[g] = true;
                if !eaten.contains(&(nr, nc)) {
                    eaten.push((nr, nc));
                }
            } else {
                self.bodies[g].pop();
            }
            self.bodies[g].insert(0, (nr, nc));
            moved[g] = true;
        }
        let mut dies = [false; 4];
        for g in 0..4 {
            if !moved[g] {
                continue;
            }
            let head = self.bodies[g][0];
            let mut n = 0;
            for b in &self.bodies {
                n += b.iter().filter(|&&p| p == head).count();
            }
            dies[g] = n > 1;
        }
        for g in 0..4 {
            if dies[g] {
                self.bodies[g].clear();
            }
        }
        if self.step % self.cfg.hunger_rate == 0 {
            for b in self.bodies.iter_mut() {
                if !b.is_empty() {
                    b.pop();
                }
            }
        }
        self.food.retain(|p| !eaten.contains(p));
        self.refill();
        for g in 0..4 {
            if !self.bodies[g].is_empty() {
                self.rewards[g] = self.step as i64 + self.bodies[g].len() as i64;
            }
        }
        ate
    }
}

fn pos(c: CellIndex) -> Pos {
    (c.row(), c.col())
}

pub fn assert_same(o: &Oracle, s: &GameState, ctx: &str) {
    assert_eq!(o.step, s.step_count(), "{ctx}");
    for g in 0..MAX_GEESE {
        let body: Vec<Pos> = s.goose(g).body().iter().map(|&c| pos(c)).collect();
        assert_eq!(o.bodies[g], body, "{ctx} goose {g}");
    }
    let food: Vec<Pos> = s.food().iter().map(|&c| pos(c)).collect();
    assert_eq!(o.food, food, "{ctx} food");
    assert_eq!(o.rewards, s.rewards().to_vec(), "{ctx} rewards");
    assert_eq!(o.done(), s.is_done(), "{ctx} done");
}

pub fn check_invariants(s: &GameState, before: &GameState, ate: &[bool; 4], ctx: &str) {
    let mut seen = [false; 77];
    for g in 0..MAX_GEESE {
        let body = s.goose(g).body();
        for (i, &c) in body.iter().enumerate() {
            assert!(!seen[c.get()], "{ctx}: cell {c} covered twice");
            seen[c.get()] = true;
            if i > 0 {
                assert_eq!(geese_core::env::toroidal_distance(body[i - 1], c), 1, "{ctx}: gap");
            }
        }
        if s.goose(g).alive() {
            let hunger = s.step_count() % s.config().hunger_rate == 0;
            let expected = before.goose(g).len() + ate[g] as usize - hunger as usize;
            assert_eq!(s.goose(g).len(), expected, "{ctx}: length of goose {g}");
        }
    }
    for &f in s.food() {
        assert!(!seen[f.get()], "{ctx}: food on a body");
        seen[f.get()] = true;
    }
    assert_eq!(s.food().len(), s.config().food_count, "{ctx}: food count");
}

/// Plays `episodes` random episodes side by side with the oracle, panicking on
/// the first divergence; returns the number of steps compared.
pub fn run_random_episodes(episodes: u64, seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total_steps = 0u64;
    for ep in 0..episodes {
        let cfg = GameConfig {
            num_geese: rng.gen_range(1..=4),
            food_count: rng.gen_range(1..=3),
            hunger_rate: [40, 40, 10, 3][rng.gen_range(0..4)],
            max_steps: 200,
        };
        let seed: u64 = rng.gen();
        let mut s = GameState::new(seed, cfg).unwrap();
        let mut o = Oracle::new(seed, cfg);
        assert_same(&o, &s, &format!("episode {ep} start"));
        while !s.is_done() {
            let mut acts = [None; 4];
            let mut oacts = [None; 4];
            for g in 0..MAX_GEESE {
                if s.goose(g).alive() {
                    let a = if rng.gen_bool(0.05) {
                        rng.gen_range(0..4)
                    } else {
                        let legal = s.legal_actions(g).unwrap();
                        legal[rng.gen_range(0..legal.len())].index()
                    };
                    acts[g] = Some(Action::from_index(a).unwrap());
                    oacts[g] = Some(a);
                }
            }
            let before = s.clone();
            let info = s.step_mut(acts).unwrap();
            let ate = o.step(&oacts);
            total_steps += 1;
            let ctx = format!("episode {ep} step {}", s.step_count());
            assert_eq!(info.ate, ate, "{ctx} ate");
            assert_same(&o, &s, &ctx);
            check_invariants(&s, &before, &ate, &ctx);
        }
    }
    total_steps
}
