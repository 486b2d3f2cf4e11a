//! Q-value networks, TD targets and the online/target training step.

use geese_tensor::{
    BatchStats, Checkpoint, LayerSpec, OptimState, OptimizerKind, Padding, Sequential, Tape, Tensor,
    Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agents::Transition;
use crate::encoding::{EncoderKind, StateTensor};
use crate::env::{COLS, NUM_CELLS, ROWS};
use crate::error::{config, contract, Error, Result};

pub const NUM_ACTIONS: usize = 4;
pub const LEAKY_SLOPE: f64 = 0.01;
/// Width of the flattened convolutional trunk of the deep models.
pub const TRUNK_FEATURES: usize = 384;
/// Loss values above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    VanillaDqn,
    DoubleDqn,
    DuelingDqn,
}

impl ModelKind {
    pub fn default_encoder(self) -> EncoderKind {
        match self {
            ModelKind::VanillaDqn => EncoderKind::Slim3,
            _ => EncoderKind::Full17,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::VanillaDqn => "vanilla_dqn",
            ModelKind::DoubleDqn => "double_dqn",
            ModelKind::DuelingDqn => "dueling_dqn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla_dqn" => Ok(Self::VanillaDqn),
            "double_dqn" => Ok(Self::DoubleDqn),
            "dueling_dqn" => Ok(Self::DuelingDqn),
            other => Err(config(format!("unknown model kind '{other}'"))),
        }
    }
}

fn leaky() -> LayerSpec {
    LayerSpec::LeakyRelu {
        negative_slope: LEAKY_SLOPE,
    }
}

fn linear(i: usize, o: usize) -> LayerSpec {
    LayerSpec::Linear {
        in_features: i,
        out_features: o,
    }
}

fn conv(i: usize, o: usize, kernel: (usize, usize), padding: Padding, bias: bool) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel,
        padding,
        bias,
    }
}

fn vanilla_trunk(c: usize) -> Vec<LayerSpec> {
    vec![
        conv(c, 32, (3, 3), Padding::Circular, true),
        leaky(),
        conv(32, 64, (3, 3), Padding::Circular, true),
        leaky(),
        LayerSpec::Flatten,
    ]
}

fn deep_trunk(c: usize) -> Vec<LayerSpec> {
    vec![
        conv(c, 128, (3, 5), Padding::Valid, false),
        LayerSpec::batch_norm(128),
        leaky(),
        conv(128, 256, (3, 3), Padding::Valid, false),
        LayerSpec::batch_norm(256),
        leaky(),
        conv(256, 128, (3, 3), Padding::Valid, false),
        LayerSpec::batch_norm(128),
        leaky(),
        LayerSpec::Flatten,
    ]
}

fn mlp(i: usize, hidden: usize, o: usize) -> Vec<LayerSpec> {
    vec![linear(i, hidden), leaky(), linear(hidden, o)]
}

#[derive(Clone, Debug, PartialEq)]
enum Heads {
    Single(Sequential),
    Dueling {
        value: Sequential,
        advantage: Sequential,
    },
}

/// Nodes produced by [`QNetwork::forward`].
#[derive(Clone, Debug)]
pub struct NetForward {
    pub q: Var,
    pub value: Option<Var>,
    pub advantage: Option<Var>,
    pub param_vars: Vec<Var>,
    trunk: geese_tensor::SeqForward,
}

impl NetForward {
    pub fn batch_stats(&self, tape: &Tape<'_>) -> Vec<BatchStats> {
        self.trunk.batch_stats(tape)
    }

    /// Flattened trunk features feeding the head(s).
    pub fn features(&self) -> Var {
        self.trunk.output
    }
}

/// A convolutional trunk followed by one Q head or by value and advantage
/// streams.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    kind: ModelKind,
    in_channels: usize,
    trunk: Sequential,
    heads: Heads,
}

impl QNetwork {
    /// Network for the kind's default encoder.
    pub fn build(kind: ModelKind, seed: u64) -> Self {
        Self::with_channels(kind, kind.default_encoder().channels(), seed)
    }

    pub fn with_channels(kind: ModelKind, in_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match kind {
            ModelKind::VanillaDqn => {
                let trunk = Sequential::new(vanilla_trunk(in_channels), &mut rng);
                let head = Sequential::new(mlp(64 * NUM_CELLS, 128, NUM_ACTIONS), &mut rng);
                Self {
                    kind,
                    in_channels,
                    trunk,
                    heads: Heads::Single(head),
                }
            }
            ModelKind::DoubleDqn => {
                let trunk = Sequential::new(deep_trunk(in_channels), &mut rng);
                let head = Sequential::new(mlp(TRUNK_FEATURES, 64, NUM_ACTIONS), &mut rng);
                Self {
                    kind,
                    in_channels,
                    trunk,
                    heads: Heads::Single(head),
                }
            }
            ModelKind::DuelingDqn => {
                let trunk = Sequential::new(deep_trunk(in_channels), &mut rng);
                let value = Sequential::new(mlp(TRUNK_FEATURES, 128, 1), &mut rng);
                let advantage = Sequential::new(mlp(TRUNK_FEATURES, 128, NUM_ACTIONS), &mut rng);
                Self {
                    kind,
                    in_channels,
                    trunk,
                    heads: Heads::Dueling { value, advantage },
                }
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn trunk(&self) -> &Sequential {
        &self.trunk
    }

    fn parts(&self) -> Vec<(&'static str, &Sequential)> {
        let mut out = vec![("trunk", &self.trunk)];
        match &self.heads {
            Heads::Single(h) => out.push(("head", h)),
            Heads::Dueling { value, advantage } => {
                out.push(("value", value));
                out.push(("advantage", advantage));
            }
        }
        out
    }

    fn parts_mut(&mut self) -> Vec<(&'static str, &mut Sequential)> {
        let mut out = vec![("trunk", &mut self.trunk)];
        match &mut self.heads {
            Heads::Single(h) => out.push(("head", h)),
            Heads::Dueling { value, advantage } => {
                out.push(("value", value));
                out.push(("advantage", advantage));
            }
        }
        out
    }

    /// Parameter tensors: trunk, then head (or value stream, advantage stream).
    pub fn params(&self) -> Vec<&Tensor> {
        self.parts().into_iter().flat_map(|(_, s)| s.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (_, s) in self.parts_mut() {
            out.extend(s.params_mut());
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|p| p.shape().to_vec()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn optimizer(&self, kind: OptimizerKind, lr: f64) -> OptimState {
        let shapes = self.param_shapes();
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        OptimState::new(kind, lr, &refs)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.in_channels || shape[2] != ROWS || shape[3] != COLS {
            return Err(contract(format!(
                "{} expects input (B, {}, {ROWS}, {COLS}), got {shape:?}",
                self.kind.name(),
                self.in_channels
            )));
        }
        Ok(())
    }

    /// Records the network on `tape` with parameters borrowed from `self`.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: Var,
        train: bool,
        grad: bool,
    ) -> Result<NetForward> {
        let pv: Vec<Var> = self
            .params()
            .into_iter()
            .map(|p| tape.borrowed(p, grad))
            .collect();
        self.forward_with(tape, x, &pv, train)
    }

    /// Records the network with caller-supplied parameter nodes, in
    /// [`QNetwork::params`] order.
    pub fn forward_with(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        params: &[Var],
        train: bool,
    ) -> Result<NetForward> {
        self.check_input(tape.value(x).shape())?;
        let counts: Vec<usize> = self
            .parts()
            .iter()
            .map(|(_, s)| s.params().count())
            .collect();
        if params.len() != counts.iter().sum::<usize>() {
            return Err(contract("parameter node count does not match the network"));
        }
        let (tp, rest) = params.split_at(counts[0]);
        let trunk = self.trunk.forward_with(tape, x, tp, train)?;
        let features = trunk.output;
        let (q, value, advantage) = match &self.heads {
            Heads::Single(head) => {
                let out = head.forward_with(tape, features, rest, train)?;
                (out.output, None, None)
            }
            Heads::Dueling { value, advantage } => {
                let (vp, ap) = rest.split_at(counts[1]);
                let v = value.forward_with(tape, features, vp, train)?.output;
                let a = advantage.forward_with(tape, features, ap, train)?.output;
                (tape.dueling_aggregate(v, a)?, Some(v), Some(a))
            }
        };
        let batch = tape.value(x).shape()[0];
        if tape.value(q).shape() != [batch, NUM_ACTIONS] {
            return Err(contract(format!(
                "Q output shape {:?}",
                tape.value(q).shape()
            )));
        }
        Ok(NetForward {
            q,
            value,
            advantage,
            param_vars: params.to_vec(),
            trunk,
        })
    }

    /// Q-values `(B, 4)` in evaluation mode.
    pub fn q_values(&self, x: &Tensor) -> Result<Tensor> {
        self.q_values_in_mode(x, false)
    }

    /// Q-values with batch norm on batch statistics when `train`; running
    /// statistics are left untouched.
    pub fn q_values_in_mode(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.borrowed(x, false);
        let out = self.forward(&mut tape, xv, train, false)?;
        Ok(tape.value(out.q).clone())
    }

    pub fn q_single(&self, s: &StateTensor) -> Result<[f64; NUM_ACTIONS]> {
        let q = self.q_values(&batch_input([s])?)?;
        let mut out = [0.0; NUM_ACTIONS];
        out.copy_from_slice(q.data());
        Ok(out)
    }

    /// Output of the value stream, `(B, 1)`, for dueling networks.
    pub fn state_values(&self, x: &Tensor) -> Result<Option<Tensor>> {
        let mut tape = Tape::new();
        let xv = tape.borrowed(x, false);
        let out = self.forward(&mut tape, xv, false, false)?;
        Ok(out.value.map(|v| tape.value(v).clone()))
    }

    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) {
        self.trunk.apply_batch_stats(stats);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(json!({
            "model_kind": self.kind,
            "in_channels": self.in_channels,
        }));
        for (prefix, part) in self.parts() {
            for (name, t) in part.state_tensors(prefix) {
                ck.push(name, t);
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind: ModelKind = serde_json::from_value(ck.meta["model_kind"].clone())
            .map_err(|e| config(format!("checkpoint model_kind: {e}")))?;
        let in_channels = ck.meta["in_channels"]
            .as_u64()
            .ok_or_else(|| config("checkpoint lacks in_channels"))? as usize;
        let mut net = Self::with_channels(kind, in_channels, 0);
        for (prefix, part) in net.parts_mut() {
            part.load_state(prefix, &ck.arrays)?;
        }
        Ok(net)
    }
}

/// Stacks encoded states into a `(B, C, 7, 11)` tensor.
pub fn batch_input<'s>(states: impl IntoIterator<Item = &'s StateTensor>) -> Result<Tensor> {
    let states: Vec<&StateTensor> = states.into_iter().collect();
    let Some(first) = states.first() else {
        return Err(contract("empty batch"));
    };
    let c = first.channels();
    let per = c * NUM_CELLS;
    let mut data = vec![0.0; states.len() * per];
    for (i, s) in states.iter().enumerate() {
        if s.channels() != c {
            return Err(contract("batch mixes encoder kinds"));
        }
        s.write_dense(&mut data[i * per..(i + 1) * per]);
    }
    Ok(Tensor::new(&[states.len(), c, ROWS, COLS], data)?)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(contract(format!("gamma {gamma} outside [0, 1]")))
    }
}

/// `r + γ·max Q(s′, ·)` for one sample, `r` when terminal.
pub fn vanilla_target_from_q(r: f64, gamma: f64, terminal: bool, next_q: &[f64]) -> f64 {
    if terminal {
        r
    } else {
        r + gamma * next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `r + γ·Q_target(s′, argmax Q_online)` for one sample, `r` when terminal.
pub fn double_target_from_q(
    r: f64,
    gamma: f64,
    terminal: bool,
    selector_q: &[f64],
    evaluator_q: &[f64],
) -> f64 {
    if terminal {
        r
    } else {
        r + gamma * evaluator_q[argmax(selector_q)]
    }
}

pub fn td_target_vanilla(batch: &[&Transition], net: &QNetwork, gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let next_q = net.q_values(&batch_input(batch.iter().map(|t| &t.s_next))?)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| vanilla_target_from_q(t.r, gamma, t.terminal, next_q.row(i)))
        .collect())
}

/// Which state the online network's argmax is taken on in the double target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSelection {
    #[default]
    NextState,
    /// The current state `s`, as the printed equation reads.
    CurrentState,
}

pub fn td_target_double(
    batch: &[&Transition],
    pair: &TargetPair,
    gamma: f64,
    selection: ActionSelection,
) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let next = batch_input(batch.iter().map(|t| &t.s_next))?;
    let evaluator = pair.target.q_values(&next)?;
    let selector = match selection {
        ActionSelection::NextState => pair.online.q_values(&next)?,
        ActionSelection::CurrentState => {
            pair.online.q_values(&batch_input(batch.iter().map(|t| &t.s))?)?
        }
    };
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| double_target_from_q(t.r, gamma, t.terminal, selector.row(i), evaluator.row(i)))
        .collect())
}

/// Gradient-updated online network and its periodically copied target.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetPair {
    pub online: QNetwork,
    pub target: QNetwork,
    pub sync_period: u64,
    pub steps_since_sync: u64,
}

impl TargetPair {
    pub fn new(online: QNetwork, sync_period: u64) -> Result<Self> {
        if sync_period == 0 {
            return Err(config("sync_period must be positive"));
        }
        Ok(Self {
            target: online.clone(),
            online,
            sync_period,
            steps_since_sync: 0,
        })
    }

    pub fn sync(&mut self) {
        self.target = self.online.clone();
        self.steps_since_sync = 0;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Huber,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    Vanilla,
    Double,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    pub gamma: f64,
    pub loss: LossKind,
    pub huber_delta: f64,
    pub rule: TargetRule,
    pub selection: ActionSelection,
}

impl TdConfig {
    /// MSE with the plain max target for the vanilla model; Huber with the
    /// double target for the others.
    pub fn for_model(kind: ModelKind, gamma: f64) -> Self {
        let (loss, rule) = match kind {
            ModelKind::VanillaDqn => (LossKind::Mse, TargetRule::Vanilla),
            _ => (LossKind::Huber, TargetRule::Double),
        };
        Self {
            gamma,
            loss,
            huber_delta: 1.0,
            rule,
            selection: ActionSelection::NextState,
        }
    }
}

/// TD targets for `batch`, always computed from the frozen target network.
pub fn td_targets(batch: &[&Transition], pair: &TargetPair, cfg: &TdConfig) -> Result<Vec<f64>> {
    match cfg.rule {
        TargetRule::Vanilla => td_target_vanilla(batch, &pair.target, cfg.gamma),
        TargetRule::Double => td_target_double(batch, pair, cfg.gamma, cfg.selection),
    }
}

/// `Q_online(s, a) − target` per sample, evaluation mode.
pub fn td_errors(batch: &[&Transition], pair: &TargetPair, cfg: &TdConfig) -> Result<Vec<f64>> {
    td_errors_in_mode(batch, pair, cfg, false)
}

/// Like [`td_errors`], with the online forward in training mode when `train`,
/// i.e. the residual that [`train_step`] regresses.
pub fn td_errors_in_mode(
    batch: &[&Transition],
    pair: &TargetPair,
    cfg: &TdConfig,
    train: bool,
) -> Result<Vec<f64>> {
    let targets = td_targets(batch, pair, cfg)?;
    let x = batch_input(batch.iter().map(|t| &t.s))?;
    let q = pair.online.q_values_in_mode(&x, train)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| q.row(i)[t.a] - targets[i])
        .collect())
}

/// One optimizer step of the online network on `batch`; returns the loss.
pub fn train_step(
    pair: &mut TargetPair,
    batch: &[&Transition],
    cfg: &TdConfig,
    optim: &mut OptimState,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(contract("train_step on an empty batch"));
    }
    if let Some(t) = batch.iter().find(|t| t.a >= NUM_ACTIONS) {
        return Err(contract(format!("action index {} out of range", t.a)));
    }
    let targets = td_targets(batch, pair, cfg)?;
    let x = batch_input(batch.iter().map(|t| &t.s))?;
    let actions: Vec<usize> = batch.iter().map(|t| t.a).collect();

    let (loss, grads, stats) = {
        let mut tape = Tape::new();
        let xv = tape.borrowed(&x, false);
        let fwd = pair.online.forward(&mut tape, xv, true, true)?;
        let picked = tape.gather(fwd.q, &actions)?;
        let loss = match cfg.loss {
            LossKind::Mse => tape.mse_loss(picked, &targets)?,
            LossKind::Huber => tape.huber_loss(picked, &targets, cfg.huber_delta)?,
        };
        let value = tape.value(loss).item();
        if !value.is_finite() || value > DIVERGENCE_LIMIT {
            return Err(Error::Diverged(format!(
                "loss {value} after {} optimizer steps",
                optim.step
            )));
        }
        let mut g = tape.backward(loss)?;
        let grads: Vec<Option<Tensor>> = fwd.param_vars.iter().map(|&v| g.take(v)).collect();
        (value, grads, fwd.batch_stats(&tape))
    };

    let grad_refs: Vec<Option<&Tensor>> = grads.iter().map(Option::as_ref).collect();
    optim.step(&mut pair.online.params_mut(), &grad_refs)?;
    pair.online.apply_batch_stats(&stats);
    pair.steps_since_sync += 1;
    if pair.steps_since_sync >= pair.sync_period {
        pair.sync();
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::Encoder;
    use crate::env::new_game;
    use rand::Rng;

    fn random_state(channels: usize, rng: &mut ChaCha8Rng) -> StateTensor {
        let mut s = StateTensor::zeros(channels);
        for c in 0..channels {
            for cell in crate::env::CellIndex::all() {
                if rng.gen_bool(0.2) {
                    s.set(c, cell);
                }
            }
        }
        s
    }

    fn random_input(b: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states: Vec<StateTensor> = (0..b).map(|_| random_state(c, &mut rng)).collect();
        batch_input(&states).unwrap()
    }

    #[test]
    fn forward_shapes() {
        let ddqn = QNetwork::build(ModelKind::DoubleDqn, 1);
        assert_eq!(ddqn.trunk().output_shape(&[2, 17, 7, 11]).unwrap(), vec![2, 384]);
        assert_eq!(ddqn.q_values(&random_input(2, 17, 1)).unwrap().shape(), [2, 4]);

        let duel = QNetwork::build(ModelKind::DuelingDqn, 2);
        let x = random_input(3, 17, 2);
        assert_eq!(duel.q_values(&x).unwrap().shape(), [3, 4]);
        assert_eq!(duel.state_values(&x).unwrap().unwrap().shape(), [3, 1]);

        let van = QNetwork::build(ModelKind::VanillaDqn, 3);
        assert_eq!(van.q_values(&random_input(2, 3, 3)).unwrap().shape(), [2, 4]);
        assert!(van.state_values(&random_input(2, 3, 3)).unwrap().is_none());
    }

    #[test]
    fn wrong_input_is_rejected() {
        let ddqn = QNetwork::build(ModelKind::DoubleDqn, 1);
        assert!(matches!(ddqn.q_values(&random_input(1, 3, 0)), Err(Error::Contract(_))));
        let encoder = Encoder::new(EncoderKind::Full17);
        let g = new_game(4, 4, 2).unwrap();
        let s = encoder.encode(&g, None, 0).unwrap();
        assert_eq!(ddqn.q_single(&s).unwrap().len(), 4);
    }

    #[test]
    fn dueling_q_has_zero_mean_advantage() {
        let duel = QNetwork::build(ModelKind::DuelingDqn, 5);
        let x = random_input(4, 17, 5);
        let q = duel.q_values(&x).unwrap();
        let v = duel.state_values(&x).unwrap().unwrap();
        for b in 0..4 {
            let mean: f64 = q.row(b).iter().map(|qa| qa - v.row(b)[0]).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn target_arithmetic() {
        assert!((vanilla_target_from_q(1.0, 0.9, false, &[0.5, 2.0, -1.0, 1.0]) - 2.8).abs() < 1e-12);
        assert_eq!(vanilla_target_from_q(1.5, 0.9, true, &[9.0; 4]), 1.5);
        assert_eq!(vanilla_target_from_q(1.5, 0.0, false, &[9.0; 4]), 1.5);
        // online picks action 2, the target's value there is used
        let t = double_target_from_q(1.0, 0.5, false, &[0.0, 1.0, 3.0, 2.0], &[10.0, 20.0, 4.0, 30.0]);
        assert_eq!(t, 3.0);
        assert_eq!(double_target_from_q(1.0, 0.5, true, &[0.0; 4], &[5.0; 4]), 1.0);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0, 2.0, 2.0]), 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        for kind in [ModelKind::VanillaDqn, ModelKind::DoubleDqn, ModelKind::DuelingDqn] {
            let net = QNetwork::build(kind, 11);
            let ck = net.to_checkpoint();
            let mut buf = Vec::new();
            ck.write_to(&mut buf).unwrap();
            let back = QNetwork::from_checkpoint(&Checkpoint::read_from(&buf[..]).unwrap()).unwrap();
            assert_eq!(back, net);
        }
    }

    #[test]
    fn bad_gamma_and_sync_period() {
        let net = QNetwork::build(ModelKind::VanillaDqn, 0);
        assert!(TargetPair::new(net.clone(), 0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Transition {
            s: random_state(3, &mut rng),
            a: 0,
            r: 0.0,
            s_next: random_state(3, &mut rng),
            terminal: false,
        };
        assert!(td_target_vanilla(&[&t], &net, 1.5).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("dueling_dqn".parse::<ModelKind>().unwrap(), ModelKind::DuelingDqn);
        assert!("dqn".parse::<ModelKind>().is_err());
        assert_eq!(ModelKind::VanillaDqn.default_encoder(), EncoderKind::Slim3);
        assert_eq!(ModelKind::DoubleDqn.default_encoder(), EncoderKind::Full17);
    }
}
