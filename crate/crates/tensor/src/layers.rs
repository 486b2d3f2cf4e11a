//! Layer descriptors and a sequential container that owns their parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{BatchNormMode, Padding, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        padding: Padding,
        /// Per-channel additive bias; off in front of batch norm.
        #[serde(default = "default_true")]
        bias: bool,
    },
    BatchNorm2d {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    LeakyRelu {
        negative_slope: f64,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Flatten,
}

fn default_true() -> bool {
    true
}

impl LayerSpec {
    pub fn batch_norm(channels: usize) -> Self {
        Self::BatchNorm2d {
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Output shape for a given input shape (batch axis included).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::Shape(format!("{self:?} cannot take input {input:?}"));
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel: (kh, kw),
                padding,
                ..
            } => {
                if input.len() != 4 || input[1] != in_channels {
                    return Err(bad());
                }
                let (h, w) = (input[2], input[3]);
                match padding {
                    Padding::Valid if kh <= h && kw <= w => {
                        Ok(vec![input[0], out_channels, h - kh + 1, w - kw + 1])
                    }
                    Padding::Circular if kh % 2 == 1 && kw % 2 == 1 && kh <= h && kw <= w => {
                        Ok(vec![input[0], out_channels, h, w])
                    }
                    _ => Err(bad()),
                }
            }
            LayerSpec::BatchNorm2d { channels, .. } => {
                if input.len() != 4 || input[1] != channels {
                    return Err(bad());
                }
                Ok(input.to_vec())
            }
            LayerSpec::LeakyRelu { .. } => Ok(input.to_vec()),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if input.len() != 2 || input[1] != in_features {
                    return Err(bad());
                }
                Ok(vec![input[0], out_features])
            }
            LayerSpec::Flatten => {
                if input.is_empty() {
                    return Err(bad());
                }
                Ok(vec![input[0], input[1..].iter().product()])
            }
        }
    }
}

/// Uniform initialization in `±1/sqrt(fan_in)`.
pub fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// One layer and its state.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    spec: LayerSpec,
    params: Vec<Tensor>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

impl Layer {
    pub fn new<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Self {
        let mut running_mean = Vec::new();
        let mut running_var = Vec::new();
        let params = match spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel: (kh, kw),
                bias,
                ..
            } => {
                let fan_in = in_channels * kh * kw;
                let mut p = vec![uniform_fan_in(&[out_channels, in_channels, kh, kw], fan_in, rng)];
                if bias {
                    p.push(uniform_fan_in(&[out_channels], fan_in, rng));
                }
                p
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => vec![
                uniform_fan_in(&[out_features, in_features], in_features, rng),
                uniform_fan_in(&[out_features], in_features, rng),
            ],
            LayerSpec::BatchNorm2d { channels, .. } => {
                running_mean = vec![0.0; channels];
                running_var = vec![1.0; channels];
                vec![Tensor::full(&[channels], 1.0), Tensor::zeros(&[channels])]
            }
            LayerSpec::LeakyRelu { .. } | LayerSpec::Flatten => Vec::new(),
        };
        Self {
            spec,
            params,
            running_mean,
            running_var,
        }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }
}

/// Result of [`Sequential::forward`].
#[derive(Clone, Debug)]
pub struct SeqForward {
    pub output: Var,
    /// One entry per parameter tensor, in [`Sequential::params`] order.
    pub param_vars: Vec<Var>,
    /// (layer index, batch-norm node) for training-mode batch norms.
    bn_nodes: Vec<(usize, Var)>,
}

impl SeqForward {
    /// Owned copy of the batch statistics recorded during a training forward.
    pub fn batch_stats(&self, tape: &Tape<'_>) -> Vec<BatchStats> {
        self.bn_nodes
            .iter()
            .filter_map(|&(layer, node)| {
                let (mean, var) = tape.batch_stats(node)?;
                let s = tape.value(node).shape();
                Some(BatchStats {
                    layer,
                    mean: mean.to_vec(),
                    var: var.to_vec(),
                    count: s[0] * s[2] * s[3],
                })
            })
            .collect()
    }
}

/// Per-channel batch mean and biased variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Chain of layers applied in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new<R: Rng + ?Sized>(specs: Vec<LayerSpec>, rng: &mut R) -> Self {
        Self {
            layers: specs.into_iter().map(|s| Layer::new(s, rng)).collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, l| l.spec.output_shape(&shape))
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    /// Records the chain on `tape`. `train` selects batch statistics for
    /// batch norm; `grad` marks parameters as requiring gradients.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: Var,
        train: bool,
        grad: bool,
    ) -> Result<SeqForward> {
        let pv: Vec<Var> = self.params().map(|p| tape.borrowed(p, grad)).collect();
        self.forward_with(tape, x, &pv, train)
    }

    /// Like [`Sequential::forward`] but with parameter nodes supplied by the
    /// caller, in [`Sequential::params`] order.
    pub fn forward_with(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        params: &[Var],
        train: bool,
    ) -> Result<SeqForward> {
        let expected: usize = self.layers.iter().map(|l| l.params.len()).sum();
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "{} parameter nodes for {expected} parameters",
                params.len()
            )));
        }
        let mut h = x;
        let mut bn_nodes = Vec::new();
        let mut offset = 0;
        for (li, layer) in self.layers.iter().enumerate() {
            let pv = &params[offset..offset + layer.params.len()];
            offset += layer.params.len();
            h = match layer.spec {
                LayerSpec::Conv2d {
                    padding,
                    bias,
                    out_channels,
                    ..
                } => {
                    let b = if bias {
                        pv[1]
                    } else {
                        tape.constant(Tensor::zeros(&[out_channels]))
                    };
                    tape.conv2d(h, pv[0], b, padding)?
                }
                LayerSpec::BatchNorm2d { eps, .. } => {
                    let mode = if train {
                        BatchNormMode::Train { eps }
                    } else {
                        BatchNormMode::Eval {
                            running_mean: &layer.running_mean,
                            running_var: &layer.running_var,
                            eps,
                        }
                    };
                    let out = tape.batch_norm2d(h, pv[0], pv[1], mode)?;
                    if train {
                        bn_nodes.push((li, out));
                    }
                    out
                }
                LayerSpec::LeakyRelu { negative_slope } => tape.leaky_relu(h, negative_slope),
                LayerSpec::Linear { .. } => tape.linear(h, pv[0], pv[1])?,
                LayerSpec::Flatten => tape.flatten(h)?,
            };
        }
        Ok(SeqForward {
            output: h,
            param_vars: params.to_vec(),
            bn_nodes,
        })
    }

    /// Folds batch statistics from a training forward into the running
    /// estimates: `running = (1 − momentum)·running + momentum·batch`, with the
    /// unbiased batch variance.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) {
        for st in stats {
            let correction = if st.count > 1 {
                st.count as f64 / (st.count - 1) as f64
            } else {
                1.0
            };
            let layer = &mut self.layers[st.layer];
            let LayerSpec::BatchNorm2d { momentum, .. } = layer.spec else {
                continue;
            };
            for c in 0..st.mean.len() {
                layer.running_mean[c] =
                    (1.0 - momentum) * layer.running_mean[c] + momentum * st.mean[c];
                layer.running_var[c] =
                    (1.0 - momentum) * layer.running_var[c] + momentum * st.var[c] * correction;
            }
        }
    }

    /// Every parameter and running statistic, named by `prefix.layer.slot`.
    pub fn state_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            for (pi, p) in layer.params.iter().enumerate() {
                out.push((format!("{prefix}.{li}.p{pi}"), p.clone()));
            }
            if !layer.running_mean.is_empty() {
                let n = layer.running_mean.len();
                out.push((
                    format!("{prefix}.{li}.running_mean"),
                    Tensor::new(&[n], layer.running_mean.clone()).expect("len"),
                ));
                out.push((
                    format!("{prefix}.{li}.running_var"),
                    Tensor::new(&[n], layer.running_var.clone()).expect("len"),
                ));
            }
        }
        out
    }

    /// Inverse of [`Sequential::state_tensors`].
    pub fn load_state(&mut self, prefix: &str, tensors: &[(String, Tensor)]) -> Result<()> {
        let find = |name: String| -> Result<&Tensor> {
            tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (pi, p) in layer.params.iter_mut().enumerate() {
                let t = find(format!("{prefix}.{li}.p{pi}"))?;
                if t.shape() != p.shape() {
                    return Err(Error::Checkpoint(format!(
                        "{prefix}.{li}.p{pi}: shape {:?}, expected {:?}",
                        t.shape(),
                        p.shape()
                    )));
                }
                *p = t.clone();
            }
            if !layer.running_mean.is_empty() {
                let m = find(format!("{prefix}.{li}.running_mean"))?;
                let v = find(format!("{prefix}.{li}.running_var"))?;
                if m.len() != layer.running_mean.len() || v.len() != layer.running_var.len() {
                    return Err(Error::Checkpoint(format!("{prefix}.{li}: running stats length")));
                }
                layer.running_mean = m.data().to_vec();
                layer.running_var = v.data().to_vec();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ddqn_trunk() -> Vec<LayerSpec> {
        let conv = |i, o, k| LayerSpec::Conv2d {
            in_channels: i,
            out_channels: o,
            kernel: k,
            padding: Padding::Valid,
            bias: false,
        };
        let act = LayerSpec::LeakyRelu {
            negative_slope: 0.01,
        };
        vec![
            conv(17, 128, (3, 5)),
            LayerSpec::batch_norm(128),
            act.clone(),
            conv(128, 256, (3, 3)),
            LayerSpec::batch_norm(256),
            act.clone(),
            conv(256, 128, (3, 3)),
            LayerSpec::batch_norm(128),
            act,
            LayerSpec::Flatten,
        ]
    }

    #[test]
    fn shape_algebra_flattens_to_384() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(0);
        let seq = Sequential::new(ddqn_trunk(), &mut rng);
        assert_eq!(seq.output_shape(&[8, 17, 7, 11]).unwrap(), vec![8, 384]);
        assert!(seq.output_shape(&[8, 3, 7, 11]).is_err());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let mut a = rand::rngs::StdRng::seed_from_u64(3);
        let mut b = rand::rngs::StdRng::seed_from_u64(3);
        let spec = vec![LayerSpec::Linear {
            in_features: 16,
            out_features: 4,
        }];
        let s1 = Sequential::new(spec.clone(), &mut a);
        let s2 = Sequential::new(spec, &mut b);
        assert_eq!(s1, s2);
        assert!(s1.params().flat_map(|p| p.data()).all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn state_round_trip() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let src = Sequential::new(ddqn_trunk(), &mut rng);
        let mut dst = Sequential::new(ddqn_trunk(), &mut rng);
        assert_ne!(src, dst);
        dst.load_state("t", &src.state_tensors("t")).unwrap();
        assert_eq!(src, dst);
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        let mut seq = Sequential::new(vec![LayerSpec::batch_norm(1)], &mut rng);
        let input = Tensor::new(&[1, 1, 1, 2], vec![4.0, 6.0]).unwrap();
        let stats = {
            let mut tape = Tape::new();
            let x = tape.constant(input);
            let fwd = seq.forward(&mut tape, x, true, true).unwrap();
            fwd.batch_stats(&tape)
        };
        assert_eq!(stats[0].mean, vec![5.0]);
        assert_eq!(stats[0].var, vec![1.0]);
        seq.apply_batch_stats(&stats);
        assert!((seq.layers()[0].running_mean()[0] - 0.5).abs() < 1e-12);
        // unbiased variance of {4, 6} is 2
        assert!((seq.layers()[0].running_var()[0] - 1.1).abs() < 1e-12);
    }
}
