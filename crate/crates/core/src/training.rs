//! Configuration and the single-learner training loop.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use geese_tensor::{Checkpoint, OptimState, OptimizerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agents::{
    epsilon_greedy, EpsilonSchedule, ExploreSource, Observation, Policy,
    ReplayBuffer, Transition,
};
use crate::encoding::{Encoder, EncoderKind, DEFAULT_CENTER};
use crate::env::{Action, GameConfig, GameState, MAX_GEESE};
use crate::error::{config, Result};
use crate::eval::{tournament, EloTable, ELO_K};
use crate::network::{train_step, ActionSelection, ModelKind, QNetwork, TargetPair, TdConfig};
use crate::reward::{shape, ShaperKind, ShaperParams, StepContext};

pub const METRICS_HEADER: &str = "step,loss,win_rate,mean_score,elo,epsilon";
pub const LEARNER: &str = "learner";

/// Every knob of a training run. Read from a flat TOML file whose keys are
/// the field names; omitted keys take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Defaults to the model's own encoder.
    pub encoder: Option<EncoderKind>,
    pub center_on_head: bool,
    pub shaper: ShaperKind,
    pub eat_bonus: f64,
    pub death_penalty: f64,
    pub win_bonus: f64,
    pub milestone_bonus: f64,
    pub milestone_period: u32,
    pub survive_bonus: f64,
    pub approach_eat_bonus: f64,
    pub max_food_distance: f64,
    pub printed_branch: bool,
    pub gamma: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Huber threshold for the deep models.
    pub huber_delta: f64,
    pub select_on_current: bool,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions collected before the first gradient step; defaults to
    /// `batch_size · 10`.
    pub warmup: Option<u64>,
    /// Environment steps per gradient step.
    pub train_every: u64,
    pub sync_period: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of `total_steps` over which epsilon decays.
    pub eps_decay_fraction: f64,
    pub explore_source: ExploreSource,
    /// Learner transitions to collect.
    pub total_steps: u64,
    /// Evaluation cadence in learner steps; 0 disables periodic evaluation.
    pub eval_every: u64,
    pub eval_games: usize,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub eval_seed: u64,
    pub num_geese: usize,
    pub food_count: usize,
    pub hunger_rate: u32,
    pub max_steps: u32,
    /// Policies of seats 1.. : "greedy", "random" or "self" (frozen copy of
    /// the learner, refreshed at every evaluation).
    pub opponents: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let shaper = ShaperParams::default();
        Self {
            model: ModelKind::DoubleDqn,
            encoder: None,
            center_on_head: false,
            shaper: ShaperKind::DqnTraining,
            eat_bonus: shaper.eat_bonus,
            death_penalty: shaper.death_penalty,
            win_bonus: shaper.win_bonus,
            milestone_bonus: shaper.milestone_bonus,
            milestone_period: shaper.milestone_period,
            survive_bonus: shaper.survive_bonus,
            approach_eat_bonus: shaper.approach_eat_bonus,
            max_food_distance: shaper.max_food_distance,
            printed_branch: shaper.printed_branch,
            gamma: 0.99,
            lr: 1e-4,
            optimizer: OptimizerKind::Adam,
            huber_delta: 1.0,
            select_on_current: false,
            batch_size: 64,
            buffer_capacity: 50_000,
            warmup: None,
            train_every: 1,
            sync_period: 100,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.3,
            explore_source: ExploreSource::Random,
            total_steps: 50_000,
            eval_every: 5_000,
            eval_games: 50,
            checkpoint_every: 10_000,
            seed: 0,
            eval_seed: 1,
            num_geese: 4,
            food_count: 2,
            hunger_rate: 40,
            max_steps: 200,
            opponents: vec!["greedy".into(), "greedy".into(), "greedy".into()],
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config(e.to_string()))
    }

    pub fn encoder(&self) -> Encoder {
        let kind = self.encoder.unwrap_or(self.model.default_encoder());
        if self.center_on_head {
            Encoder::centered(kind, DEFAULT_CENTER)
        } else {
            Encoder::new(kind)
        }
    }

    pub fn shaper_params(&self) -> ShaperParams {
        ShaperParams {
            eat_bonus: self.eat_bonus,
            death_penalty: self.death_penalty,
            win_bonus: self.win_bonus,
            milestone_bonus: self.milestone_bonus,
            milestone_period: self.milestone_period,
            survive_bonus: self.survive_bonus,
            approach_eat_bonus: self.approach_eat_bonus,
            max_food_distance: self.max_food_distance,
            printed_branch: self.printed_branch,
        }
    }

    pub fn game_config(&self) -> GameConfig {
        GameConfig {
            num_geese: self.num_geese,
            food_count: self.food_count,
            hunger_rate: self.hunger_rate,
            max_steps: self.max_steps,
        }
    }

    pub fn td_config(&self) -> TdConfig {
        TdConfig {
            huber_delta: self.huber_delta,
            selection: if self.select_on_current {
                ActionSelection::CurrentState
            } else {
                ActionSelection::NextState
            },
            ..TdConfig::for_model(self.model, self.gamma)
        }
    }

    pub fn warmup_steps(&self) -> u64 {
        self.warmup.unwrap_or(self.batch_size as u64 * 10)
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.eps_start,
            end: self.eps_end,
            decay_steps: (self.total_steps as f64 * self.eps_decay_fraction).round() as u64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.game_config().validate()?;
        self.shaper_params().validate()?;
        EpsilonSchedule::new(self.eps_start, self.eps_end, 0)?;
        if !(0.0..=1.0).contains(&self.eps_decay_fraction) {
            return Err(config("eps_decay_fraction must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(config("gamma must lie in [0, 1]"));
        }
        if !(self.lr > 0.0) || !(self.huber_delta > 0.0) {
            return Err(config("lr and huber_delta must be positive"));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(config("need 0 < batch_size <= buffer_capacity"));
        }
        if self.train_every == 0 || self.sync_period == 0 {
            return Err(config("train_every and sync_period must be positive"));
        }
        if self.eval_every > 0 && self.eval_games == 0 {
            return Err(config("eval_games must be positive when evaluating"));
        }
        if self.opponents.len() != self.num_geese - 1 {
            return Err(config(format!(
                "{} opponents for {} geese; need num_geese - 1",
                self.opponents.len(),
                self.num_geese
            )));
        }
        for o in &self.opponents {
            if !matches!(o.as_str(), "greedy" | "random" | "self") {
                return Err(config(format!("unknown opponent '{o}'")));
            }
        }
        if self.encoder().channels() == 0 {
            return Err(config("encoder has no channels"));
        }
        Ok(())
    }
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: u64,
    /// Mean training loss since the previous row; NaN before training starts.
    pub loss: f64,
    pub win_rate: f64,
    pub mean_score: f64,
    pub elo: f64,
    pub epsilon: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.loss, self.win_rate, self.mean_score, self.elo, self.epsilon
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub pair: TargetPair,
    pub checkpoints: Vec<PathBuf>,
    pub episodes: u64,
    pub gradient_steps: u64,
}

pub fn checkpoint_with_meta(net: &QNetwork, encoder: &Encoder, step: u64) -> Checkpoint {
    let mut ck = net.to_checkpoint();
    if let Some(obj) = ck.meta.as_object_mut() {
        obj.insert("encoder".into(), json!(encoder.kind));
        obj.insert("center".into(), json!(encoder.center.map(|c| c.get())));
        obj.insert("step".into(), json!(step));
    }
    ck
}

/// Network policy stored by [`run_training`].
pub fn load_policy(path: impl AsRef<Path>) -> Result<Policy> {
    let ck = Checkpoint::load(path)?;
    let net = QNetwork::from_checkpoint(&ck)?;
    let kind = match ck.meta.get("encoder") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => net.kind().default_encoder(),
    };
    let encoder = match ck.meta.get("center").and_then(|c| c.as_u64()) {
        Some(c) => Encoder::centered(kind, crate::env::CellIndex::new(c as usize)?),
        None => Encoder::new(kind),
    };
    Policy::network(net, encoder)
}

fn opponent_policy(name: &str, learner: &QNetwork, encoder: Encoder) -> Result<Policy> {
    match name {
        "greedy" => Ok(Policy::Greedy),
        "random" => Ok(Policy::Random),
        "self" => Policy::network(learner.clone(), encoder),
        other => Err(config(format!("unknown opponent '{other}'"))),
    }
}

struct Run<'c> {
    cfg: &'c TrainConfig,
    out_dir: &'c Path,
    encoder: Encoder,
    elo: EloTable,
    seat_names: Vec<String>,
    net_seed: u64,
    checkpoints: Vec<PathBuf>,
    csv: fs::File,
    rows: Vec<MetricsRow>,
}

impl Run<'_> {
    /// Online parameters plus optimizer moments and the run's seeds.
    fn checkpoint(&mut self, net: &QNetwork, optim: &OptimState, step: u64) -> Result<()> {
        let path = self.out_dir.join(format!("checkpoint_{step:08}.gqck"));
        let mut ck = checkpoint_with_meta(net, &self.encoder, step);
        if let Some(obj) = ck.meta.as_object_mut() {
            obj.insert("optimizer".into(), serde_json::to_value(optim)?);
            obj.insert("seed".into(), json!(self.cfg.seed));
            obj.insert("net_seed".into(), json!(self.net_seed));
        }
        let half = optim.moments().count() / 2;
        for (i, m) in optim.moments().enumerate() {
            let which = if i < half { "first" } else { "second" };
            ck.push(format!("optim/{which}/{}", i % half.max(1)), m.clone());
        }
        ck.save(&path)?;
        self.checkpoints.push(path);
        Ok(())
    }

    fn evaluate(&mut self, net: &QNetwork, step: u64, loss: f64, eps: f64) -> Result<()> {
        let mut agents = vec![(LEARNER.to_string(), Policy::network(net.clone(), self.encoder)?)];
        for (i, o) in self.cfg.opponents.iter().enumerate() {
            agents.push((self.seat_names[i + 1].clone(), opponent_policy(o, net, self.encoder)?));
        }
        let result = tournament(
            &agents,
            self.cfg.eval_games,
            self.cfg.eval_seed,
            self.cfg.game_config(),
            Some(self.elo.clone()),
        )?;
        self.elo = result.elo;
        let me = &result.agents[0];
        let row = MetricsRow {
            step,
            loss,
            win_rate: me.win_rate,
            mean_score: me.mean_score,
            elo: me.elo,
            epsilon: eps,
        };
        writeln!(self.csv, "{}", row.to_csv())?;
        self.rows.push(row);
        Ok(())
    }
}

/// Trains one learner on seat 0 against the configured roster, writing
/// `metrics.csv` and checkpoints into `out_dir`.
pub fn run_training(cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let encoder = cfg.encoder();
    let shaper = cfg.shaper_params();
    let td = cfg.td_config();
    let schedule = cfg.epsilon();
    let game_cfg = cfg.game_config();
    let warmup = cfg.warmup_steps().max(cfg.batch_size as u64);

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net_seed: u64 = master.gen();
    let mut act_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut sample_rng = ChaCha8Rng::seed_from_u64(master.gen());

    let online = QNetwork::with_channels(cfg.model, encoder.channels(), net_seed);
    let mut optim = online.optimizer(cfg.optimizer, cfg.lr);
    let mut pair = TargetPair::new(online, cfg.sync_period)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;

    let seat_names: Vec<String> = std::iter::once(LEARNER.to_string())
        .chain(cfg.opponents.iter().enumerate().map(|(i, o)| format!("seat{}_{o}", i + 1)))
        .collect();
    let names: Vec<&str> = seat_names.iter().map(String::as_str).collect();
    let mut csv = fs::File::create(out_dir.join("metrics.csv"))?;
    writeln!(csv, "{METRICS_HEADER}")?;
    let mut run = Run {
        cfg,
        out_dir,
        encoder,
        elo: EloTable::new(&names, ELO_K),
        seat_names: seat_names.clone(),
        net_seed,
        checkpoints: Vec::new(),
        csv,
        rows: Vec::new(),
    };
    run.checkpoint(&pair.online, &optim, 0)?;

    let mut opponents: Vec<Policy> = cfg
        .opponents
        .iter()
        .map(|o| opponent_policy(o, &pair.online, encoder))
        .collect::<Result<_>>()?;

    let mut step = 0u64;
    let mut episodes = 0u64;
    let mut gradient_steps = 0u64;
    let mut loss_sum = 0.0;
    let mut loss_count = 0u64;

    while step < cfg.total_steps {
        episodes += 1;
        let mut game = GameState::new(master.gen(), game_cfg)?;
        let mut prev: Option<GameState> = None;
        let mut s = encoder.encode(&game, None, 0)?;
        while step < cfg.total_steps {
            let eps = schedule.value(step);
            let legal = game.legal_actions(0)?;
            let obs = Observation {
                game: &game,
                goose: 0,
                encoded: &s,
            };
            let a = epsilon_greedy(&pair.online, obs, &legal, eps, cfg.explore_source, &mut act_rng)?;
            let mut actions: [Option<Action>; MAX_GEESE] = [None; MAX_GEESE];
            actions[0] = Some(a);
            for (i, p) in opponents.iter().enumerate() {
                let g = i + 1;
                if game.goose(g).alive() {
                    actions[g] = Some(p.act(&game, prev.as_ref(), g, &mut act_rng)?);
                }
            }
            let next = game.step(actions)?.next;
            let ctx = StepContext::new(&game, &next, 0)?;
            let r = shape(cfg.shaper, &ctx, &shaper)?;
            let s_next = encoder.encode(&next, Some(&game), 0)?;
            let terminal = next.is_done() || !next.goose(0).alive();
            buffer.push(Transition {
                s,
                a: a.index(),
                r,
                s_next: s_next.clone(),
                terminal,
            });
            step += 1;

            if buffer.len() as u64 >= warmup && step % cfg.train_every == 0 {
                let batch = buffer
                    .sample(cfg.batch_size, &mut sample_rng)
                    .expect("warm buffer");
                let loss = train_step(&mut pair, &batch, &td, &mut optim)?;
                loss_sum += loss;
                loss_count += 1;
                gradient_steps += 1;
            }

            if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                let loss = if loss_count > 0 {
                    loss_sum / loss_count as f64
                } else {
                    f64::NAN
                };
                loss_sum = 0.0;
                loss_count = 0;
                run.evaluate(&pair.online, step, loss, schedule.value(step))?;
                for (p, o) in opponents.iter_mut().zip(&cfg.opponents) {
                    if o == "self" {
                        *p = opponent_policy(o, &pair.online, encoder)?;
                    }
                }
            }
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                run.checkpoint(&pair.online, &optim, step)?;
            }

            if terminal {
                break;
            }
            prev = Some(std::mem::replace(&mut game, next));
            s = s_next;
        }
    }
    if cfg.total_steps > 0 && (cfg.checkpoint_every == 0 || cfg.total_steps % cfg.checkpoint_every != 0) {
        run.checkpoint(&pair.online, &optim, cfg.total_steps)?;
    }
    run.csv.flush()?;
    Ok(TrainOutcome {
        rows: run.rows,
        pair,
        checkpoints: run.checkpoints,
        episodes,
        gradient_steps,
    })
}
