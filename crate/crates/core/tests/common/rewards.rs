//! Worked reward examples on hand-built states, shared by the reward suite
//! and the acceptance runner.

use geese_core::env::{Action, CellIndex, GameConfig, GameState, GridCoord, MAX_GEESE};
use geese_core::reward::{
    dqn_training_reward, manhattan_from_distances, manhattan_reward, shape, vanilla_delta,
    ShaperKind, ShaperParams, StepContext,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub name: &'static str,
    pub got: f64,
    pub expected: f64,
}

fn cell(r: usize, c: usize) -> CellIndex {
    GridCoord::new(r, c).unwrap().index()
}

fn state(
    step: u32,
    bodies: [Vec<CellIndex>; MAX_GEESE],
    last: [Option<Action>; MAX_GEESE],
    food: Vec<CellIndex>,
) -> GameState {
    let n = bodies.iter().filter(|b| !b.is_empty()).count().max(1);
    let cfg = GameConfig {
        num_geese: n,
        food_count: food.len(),
        ..GameConfig::default()
    };
    GameState::from_parts(step, bodies, last, food, cfg, 0).unwrap()
}

fn solo(step: u32, body: Vec<CellIndex>, last: Option<Action>, food: Vec<CellIndex>) -> GameState {
    state(step, [body, vec![], vec![], vec![]], [last, None, None, None], food)
}

fn next(s: &GameState, a: [Option<Action>; MAX_GEESE]) -> GameState {
    s.step(a).unwrap().next
}

fn east() -> [Option<Action>; MAX_GEESE] {
    [Some(Action::East), None, None, None]
}

/// Goose 0 and goose 1 collide head-on; two bystanders keep the game going.
fn head_on() -> (GameState, GameState) {
    let bodies = [vec![cell(3, 3)], vec![cell(3, 5)], vec![cell(0, 8)], vec![cell(6, 8)]];
    let s0 = state(0, bodies, [None; MAX_GEESE], vec![cell(6, 0)]);
    let s1 = next(
        &s0,
        [Some(Action::East), Some(Action::West), Some(Action::North), Some(Action::North)],
    );
    (s0, s1)
}

/// Last enemy runs into its own body on `step` while goose 0 eats iff `eat`.
fn last_enemy_dies(step: u32, eat: bool) -> (GameState, GameState) {
    let enemy = vec![cell(5, 5), cell(5, 6), cell(6, 6), cell(6, 5), cell(6, 4)];
    let food = if eat { cell(1, 2) } else { cell(0, 9) };
    let s0 = state(
        step - 1,
        [vec![cell(1, 1)], enemy, vec![], vec![]],
        [None, Some(Action::West), None, None],
        vec![food],
    );
    let s1 = next(&s0, [Some(Action::East), Some(Action::South), None, None]);
    assert!(!s1.goose(1).alive());
    (s0, s1)
}

fn ctx<'a>(a: &'a GameState, b: &'a GameState) -> StepContext<'a> {
    StepContext::new(a, b, 0).unwrap()
}

pub fn all_cases() -> Vec<Case> {
    let p = ShaperParams::default();
    let printed = ShaperParams {
        printed_branch: true,
        ..p
    };
    let mut out = Vec::new();
    let mut push = |name, got, expected| out.push(Case { name, got, expected });

    // cumulative-reward delta
    let a = solo(4, vec![cell(3, 3), cell(3, 2)], Some(Action::East), vec![cell(0, 0)]);
    let b = next(&a, east());
    push("vanilla: alive without eating", vanilla_delta(&ctx(&a, &b)), 1.0);
    let a = solo(7, vec![cell(3, 3)], None, vec![cell(3, 4)]);
    let b = next(&a, east());
    push("vanilla: eating grows 1 -> 2", vanilla_delta(&ctx(&a, &b)), 2.0);
    let (s0, s1) = head_on();
    push("vanilla: dying step", vanilla_delta(&ctx(&s0, &s1)), 0.0);
    let s2 = next(&s1, [None, None, Some(Action::North), Some(Action::North)]);
    push("vanilla: dead before and after", vanilla_delta(&ctx(&s1, &s2)), 0.0);
    push(
        "dispatch: vanilla",
        shape(ShaperKind::VanillaDelta, &ctx(&a, &b), &p).unwrap(),
        2.0,
    );

    // event rewards
    let a = solo(3, vec![cell(3, 3)], None, vec![cell(0, 0)]);
    let b = next(&a, east());
    push("event: plain survival", dqn_training_reward(&ctx(&a, &b), &p), 10.0);
    push(
        "dispatch: event survival",
        shape(ShaperKind::DqnTraining, &ctx(&a, &b), &p).unwrap(),
        10.0,
    );
    push("event: death", dqn_training_reward(&ctx(&s0, &s1), &p), -1000.0);
    push("event: already dead", dqn_training_reward(&ctx(&s1, &s2), &p), 0.0);
    let a = solo(3, vec![cell(3, 3)], None, vec![cell(3, 4)]);
    let b = next(&a, east());
    push("event: eat and survive", dqn_training_reward(&ctx(&a, &b), &p), 60.0);
    let a = solo(99, vec![cell(3, 3)], None, vec![cell(0, 0)]);
    let b = next(&a, east());
    push("event: milestone step", dqn_training_reward(&ctx(&a, &b), &p), 50.0);
    let (a, b) = last_enemy_dies(100, true);
    push("event: eat on step 100 as the last enemy dies", dqn_training_reward(&ctx(&a, &b), &p), 1100.0);
    let (a, b) = last_enemy_dies(57, false);
    push("event: win off-milestone", dqn_training_reward(&ctx(&a, &b), &p), 1010.0);

    // distance shaping
    push("distance: closer 3 -> 2", manhattan_from_distances(3, 2, false, &p), 36.0);
    push("distance: away 2 -> 3", manhattan_from_distances(2, 3, false, &p), -5.0);
    push("distance: unchanged 2 -> 2", manhattan_from_distances(2, 2, false, &p), -6.0);
    push("distance: eat", manhattan_from_distances(5, 4, true, &p), 516.0);
    push("distance: printed branch away", manhattan_from_distances(2, 3, false, &printed), 25.0);
    push("distance: printed branch closer", manhattan_from_distances(3, 2, false, &printed), -6.0);
    let a = solo(0, vec![cell(3, 3)], None, vec![cell(3, 6)]);
    let b = next(&a, east());
    push("distance: state step east toward food", manhattan_reward(&ctx(&a, &b), &p).unwrap(), 36.0);
    let w = next(&a, [Some(Action::West), None, None, None]);
    push("distance: state step west away", manhattan_reward(&ctx(&a, &w), &p).unwrap(), -4.0);
    // wrap-around: food across the east edge is 2 away, not 9
    let a = solo(0, vec![cell(2, 1)], None, vec![cell(2, 10)]);
    let b = next(&a, [Some(Action::West), None, None, None]);
    push("distance: closer across the wrap", manhattan_reward(&ctx(&a, &b), &p).unwrap(), 49.0);
    push("distance: death", manhattan_reward(&ctx(&s0, &s1), &p).unwrap(), -1000.0);
    push(
        "dispatch: distance death",
        shape(ShaperKind::ManhattanShaped, &ctx(&s0, &s1), &p).unwrap(),
        -1000.0,
    );
    push("distance: already dead", manhattan_reward(&ctx(&s1, &s2), &p).unwrap(), 0.0);
    out
}

/// Plays random episodes and checks that each goose's summed deltas equal its
/// final cumulative reward minus the initial 1. Returns the episode count.
pub fn check_telescoping(episodes: u64, seed: u64) -> Result<u64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ep in 0..episodes {
        let mut game = GameState::new(rng.gen(), GameConfig::default()).unwrap();
        let initial = game.rewards();
        let mut sums = [0.0f64; MAX_GEESE];
        while !game.is_done() {
            let mut acts = [None; MAX_GEESE];
            for (g, a) in acts.iter_mut().enumerate() {
                if game.goose(g).alive() {
                    let legal = game.legal_actions(g).unwrap();
                    *a = Some(legal[rng.gen_range(0..legal.len())]);
                }
            }
            let after = game.step(acts).unwrap().next;
            for (g, sum) in sums.iter_mut().enumerate() {
                *sum += vanilla_delta(&StepContext::new(&game, &after, g).unwrap());
            }
            game = after;
        }
        for g in 0..MAX_GEESE {
            let total = (game.rewards()[g] - initial[g]) as f64;
            if sums[g] != total || initial[g] != 1 {
                return Err(format!(
                    "episode {ep} goose {g}: deltas sum to {}, final {} initial {}",
                    sums[g], game.rewards()[g], initial[g]
                ));
            }
        }
    }
    Ok(episodes)
}
