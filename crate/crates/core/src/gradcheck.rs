//! Central finite-difference checks of reverse-mode gradients.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Mode;
use crate::error::{LameError, Result};
use crate::model::LameModel;
use crate::params::{Graph, ParamGroup};
use crate::tensor::{Tape, Tensor, Var};
use crate::training::{batch_loss, LossKind, PreparedData};

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinate with the largest error, with both gradients.
    pub worst: Option<String>,
}

impl GradCheckReport {
    fn record(&mut self, at: impl FnOnce() -> String, analytic: f64, numeric: f64, floor: f64) {
        let e = relative_error(analytic, numeric, floor);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = Some(format!("{} analytic {analytic:e} numeric {numeric:e}", at()));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_error >= self.max_rel_error && other.worst.is_some() {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Checks every input coordinate of a scalar tape function. The tape seed is
/// fixed so dropout masks agree between evaluations.
pub fn check_function<F>(inputs: &[Tensor], eps: f64, floor: f64, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::with_seed(seed);
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };
    let mut tape = Tape::with_seed(seed);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheckReport::default();
    let mut xs = inputs.to_vec();
    for i in 0..xs.len() {
        for j in 0..xs[i].numel() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + eps;
            let plus = eval(&xs)?;
            xs[i].data_mut()[j] = orig - eps;
            let minus = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            report.record(|| format!("input {i}[{j}]"), grads[i][j], (plus - minus) / (2.0 * eps), floor);
        }
    }
    Ok(report)
}

/// Checks the gradient of a training batch loss with respect to the model
/// parameters. Every parameter tensor contributes up to `per_tensor`
/// coordinates, drawn from those with a nonzero analytic gradient, plus one
/// coordinate drawn uniformly; `per_tensor == usize::MAX` checks them all.
#[allow(clippy::too_many_arguments)]
pub fn check_model_loss(
    model: &LameModel,
    data: &PreparedData,
    batch: &[usize],
    loss: LossKind,
    f_measure_eps: f64,
    eps: f64,
    floor: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let grads: Vec<(crate::params::ParamId, Vec<f64>)> = {
        let mut g = Graph::new(&model.store, Mode::Eval, &ParamGroup::ALL, seed);
        let l = batch_loss(&mut g, model, data, batch, loss, f_measure_eps)?;
        g.backward(l)?;
        g.param_grads().into_iter().map(|(id, gr)| (id, gr.to_vec())).collect()
    };
    if grads.len() != model.store.len() {
        return Err(LameError::contract(format!(
            "{} of {} parameters received gradients",
            grads.len(),
            model.store.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut work = model.clone();
    let eval = |m: &LameModel| -> Result<f64> {
        let mut g = Graph::inference(&m.store);
        let l = batch_loss(&mut g, m, data, batch, loss, f_measure_eps)?;
        g.value(l).item()
    };
    let mut report = GradCheckReport::default();
    for (id, grad) in &grads {
        let coords: Vec<usize> = if per_tensor == usize::MAX {
            (0..grad.len()).collect()
        } else {
            let nonzero: Vec<usize> = (0..grad.len()).filter(|&k| grad[k] != 0.0).collect();
            let mut picked: Vec<usize> = nonzero.choose_multiple(&mut rng, per_tensor).copied().collect();
            let all: Vec<usize> = (0..grad.len()).collect();
            picked.push(*all.choose(&mut rng).expect("non-empty tensor"));
            picked
        };
        for k in coords {
            let orig = work.store.get(*id).value.data()[k];
            work.store.get_mut(*id).value.data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work.store.get_mut(*id).value.data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work.store.get_mut(*id).value.data_mut()[k] = orig;
            let name = &model.store.get(*id).name;
            report.record(|| format!("{name}[{k}]"), grad[k], (plus - minus) / (2.0 * eps), floor);
        }
    }
    Ok(report)
}
