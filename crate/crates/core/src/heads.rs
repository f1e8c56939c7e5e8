//! Classification head and training losses.

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TaskMode};
use crate::error::{LameError, Result};
use crate::params::{Graph, Initializer, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Tensor, Var};

/// Guard added to both F-measure denominators.
pub const F_MEASURE_EPS: f64 = 1e-8;

/// Shared two-layer reduction applied to every row of `O`:
/// `logit = w2 . gelu(W1 o + b1) + b2`.
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl HeadParams {
    pub fn register(store: &mut ParamStore, config: &ModelConfig, init: &mut Initializer) -> Self {
        let d = config.hidden;
        let g = ParamGroup::Head;
        HeadParams {
            w1: store.add("head.w1", g, init.weight(&[d, d])),
            b1: store.add("head.b1", g, init.zeros(&[d])),
            w2: store.add("head.w2", g, init.weight(&[d, 1])),
            b2: store.add("head.b2", g, init.zeros(&[1])),
        }
    }
}

/// Logits and probabilities over labels, both of shape `[labels]`.
#[derive(Clone, Copy, Debug)]
pub struct Prediction {
    pub logits: Var,
    pub probabilities: Var,
    pub mode: TaskMode,
}

/// Micro-summed soft confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SoftCounts {
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    pub fn_: f64,
}

impl SoftCounts {
    pub fn from_probabilities(probs: &[Vec<f64>], golds: &[Vec<f64>]) -> Result<Self> {
        if probs.len() != golds.len() {
            return Err(LameError::contract("probability and gold batch sizes differ"));
        }
        let mut c = SoftCounts::default();
        for (p_row, y_row) in probs.iter().zip(golds) {
            if p_row.len() != y_row.len() {
                return Err(LameError::contract("probability and gold widths differ"));
            }
            for (&p, &y) in p_row.iter().zip(y_row) {
                c.tp += p * y;
                c.fp += p * (1.0 - y);
                c.fn_ += (1.0 - p) * y;
                c.tn += (1.0 - p) * (1.0 - y);
            }
        }
        Ok(c)
    }

    /// `1 - (F_pos + F_neg) / 2` evaluated on plain numbers.
    pub fn f_measure_loss(&self, eps: f64) -> f64 {
        let wrong = self.fp + self.fn_;
        let f_pos = 2.0 * self.tp / (2.0 * self.tp + wrong + eps);
        let f_neg = 2.0 * self.tn / (2.0 * self.tn + wrong + eps);
        1.0 - 0.5 * (f_pos + f_neg)
    }
}

pub fn classify(g: &mut Graph, o: Var, params: &HeadParams, mode: TaskMode) -> Result<Prediction> {
    let (w1, b1, w2, b2) = (g.param(params.w1), g.param(params.b1), g.param(params.w2), g.param(params.b2));
    let width = g.value(w1).rows();
    let shape = g.value(o).shape();
    if shape.len() != 2 || shape[1] != width {
        return Err(LameError::contract(format!(
            "classifier input has shape {shape:?}, expected width {width}"
        )));
    }
    let labels = shape[0];
    let h = g.tape.matmul(o, w1)?;
    let h = g.tape.add_row(h, b1)?;
    let h = g.tape.gelu(h);
    let z = g.tape.matmul(h, w2)?;
    let z = g.tape.add_row(z, b2)?;
    let logits = g.tape.reshape(z, &[labels])?;
    let probabilities = match mode {
        TaskMode::MultiClass => g.tape.softmax_rows(logits)?,
        TaskMode::MultiLabel => g.tape.sigmoid(logits),
    };
    Ok(Prediction {
        logits,
        probabilities,
        mode,
    })
}

/// `-log p[gold]` via log-sum-exp of the logits.
pub fn cross_entropy(g: &mut Graph, pred: &Prediction, gold: usize) -> Result<Var> {
    if pred.mode != TaskMode::MultiClass {
        return Err(LameError::contract("cross-entropy needs a multi-class prediction"));
    }
    let n = g.value(pred.logits).numel();
    if gold >= n {
        return Err(LameError::contract(format!("gold class {gold} out of range for {n} classes")));
    }
    let ls = g.tape.log_softmax_rows(pred.logits)?;
    let picked = g.tape.pick(ls, gold)?;
    Ok(g.tape.scale(picked, -1.0))
}

fn check_binary(gold: &[f64]) -> Result<()> {
    if let Some(v) = gold.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(LameError::input(format!("gold entry {v} is not 0 or 1")));
    }
    Ok(())
}

/// Mean over labels of the binary cross-entropy, computed from logits.
pub fn binary_cross_entropy(g: &mut Graph, pred: &Prediction, gold: &[f64]) -> Result<Var> {
    if pred.mode != TaskMode::MultiLabel {
        return Err(LameError::contract("binary cross-entropy needs a multi-label prediction"));
    }
    check_binary(gold)?;
    g.tape.bce_with_logits(pred.logits, gold)
}

/// F-measure loss over a mini-batch with soft counts pooled over every
/// (instance, label) pair:
/// `1 - (2tp/(2tp+fp+fn+eps) + 2tn/(2tn+fp+fn+eps)) / 2`.
pub fn f_measure_loss(g: &mut Graph, preds: &[Prediction], golds: &[Vec<f64>], eps: f64) -> Result<Var> {
    if preds.is_empty() {
        return Err(LameError::contract("F-measure loss over an empty batch"));
    }
    if preds.len() != golds.len() {
        return Err(LameError::contract("prediction and gold batch sizes differ"));
    }
    let mut probs = Vec::with_capacity(preds.len());
    for (p, y) in preds.iter().zip(golds) {
        if p.mode != TaskMode::MultiLabel {
            return Err(LameError::contract("F-measure loss needs multi-label predictions"));
        }
        if g.value(p.probabilities).numel() != y.len() {
            return Err(LameError::contract("gold vector length differs from label count"));
        }
        check_binary(y)?;
        probs.push(p.probabilities);
    }
    let labels = golds[0].len();
    let p = g.tape.concat_rows(&probs)?;
    let y_data: Vec<f64> = golds.iter().flatten().copied().collect();
    let gold_mass: f64 = y_data.iter().sum();
    let total = y_data.len() as f64;
    let y = g.tape.constant(Tensor::new(vec![golds.len(), labels], y_data)?);

    let py = g.tape.mul(p, y)?;
    let tp = g.tape.sum(py);
    let p_mass = g.tape.sum(p);
    let fp = g.tape.sub(p_mass, tp)?;
    let neg_tp = g.tape.scale(tp, -1.0);
    let fn_ = g.tape.add_scalar(neg_tp, gold_mass);
    let tp_minus_p = g.tape.sub(tp, p_mass)?;
    let tn = g.tape.add_scalar(tp_minus_p, total - gold_mass);
    let wrong = g.tape.add(fp, fn_)?;

    let f_part = |g: &mut Graph, hits: Var| -> Result<Var> {
        let num = g.tape.scale(hits, 2.0);
        let den = g.tape.add(num, wrong)?;
        let den = g.tape.add_scalar(den, eps);
        g.tape.div(num, den)
    };
    let f_pos = f_part(g, tp)?;
    let f_neg = f_part(g, tn)?;
    let both = g.tape.add(f_pos, f_neg)?;
    let half = g.tape.scale(both, -0.5);
    Ok(g.tape.add_scalar(half, 1.0))
}
