//! Central finite differences against reverse-mode gradients.

use rand::rngs::StdRng;
use rand::seq::index;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Settings for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Check at most this many coordinates per input, sampled without
    /// replacement. `None` checks every coordinate.
    pub max_coords: Option<usize>,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_coords: None,
            floor: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because the perturbation moved a leaky-ReLU input
    /// across zero.
    pub skipped: usize,
}

/// Reverse-mode gradient of the scalar `f` with respect to every input.
pub fn analytic_gradients<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.borrowed(t, true)).collect();
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.borrowed(t, false)).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Shape("grad_check: function must return a scalar".into()));
    }
    Ok((v.item(), tape.leaky_relu_signs()))
}

/// Compares `analytic` against central differences of `f`.
pub fn numeric_check<F>(
    f: &F,
    inputs: &[Tensor],
    analytic: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    if analytic.len() != inputs.len() {
        return Err(Error::Shape("grad_check: gradient count".into()));
    }
    let (_, base_signs) = evaluate(f, inputs)?;
    let mut rng = StdRng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..inputs.len() {
        let n = inputs[i].len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < n => index::sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for j in coords {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + opts.h;
            let (fp, sp) = evaluate(f, &work)?;
            work[i].data_mut()[j] = orig - opts.h;
            let (fm, sm) = evaluate(f, &work)?;
            work[i].data_mut()[j] = orig;
            if sp != base_signs || sm != base_signs {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.h);
            let a = analytic[i].data()[j];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let rel = (a - numeric).abs() / denom;
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Maximum relative error between reverse-mode and central-difference gradients of `f`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(&f, inputs)?;
    numeric_check(&f, inputs, &analytic, opts)
}
