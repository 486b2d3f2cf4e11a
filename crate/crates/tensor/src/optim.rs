//! First-order optimizers over a flat list of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Optimizer hyperparameters and per-parameter moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    pub(crate) first: Vec<Tensor>,
    #[serde(skip)]
    pub(crate) second: Vec<Tensor>,
}

impl OptimState {
    /// Adam with betas (0.9, 0.999) and epsilon 1e-8.
    pub fn adam(lr: f64, shapes: &[&[usize]]) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Plain gradient descent.
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn new(kind: OptimizerKind, lr: f64, shapes: &[&[usize]]) -> Self {
        match kind {
            OptimizerKind::Adam => Self::adam(lr, shapes),
            OptimizerKind::Sgd => Self::sgd(lr),
        }
    }

    /// Moment arrays, first moments then second moments.
    pub fn moments(&self) -> impl Iterator<Item = &Tensor> {
        self.first.iter().chain(&self.second)
    }

    /// Replaces the moment arrays; shapes must match the current ones.
    pub fn set_moments(&mut self, first: Vec<Tensor>, second: Vec<Tensor>) -> Result<()> {
        let same = |a: &[Tensor], b: &[Tensor]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape())
        };
        if !same(&first, &self.first) || !same(&second, &self.second) {
            return Err(Error::Shape("optimizer moment shapes differ".into()));
        }
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// One update. A missing gradient counts as zero.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::Shape(format!(
                        "gradient {:?} for parameter {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    if let Some(g) = g {
                        for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                            *w -= self.lr * d;
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.len() != params.len() {
                    return Err(Error::Shape("optimizer built for a different parameter list".into()));
                }
                let t = self.step as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for (i, p) in params.iter_mut().enumerate() {
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    let pd = p.data_mut();
                    match grads[i] {
                        Some(g) => {
                            for (j, &d) in g.data().iter().enumerate() {
                                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * d;
                                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * d * d;
                                let mh = m[j] / bc1;
                                let vh = v[j] / bc2;
                                pd[j] -= self.lr * mh / (vh.sqrt() + self.eps);
                            }
                        }
                        None => {
                            for j in 0..pd.len() {
                                m[j] *= self.beta1;
                                v[j] *= self.beta2;
                                let mh = m[j] / bc1;
                                let vh = v[j] / bc2;
                                pd[j] -= self.lr * mh / (vh.sqrt() + self.eps);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
