//! AdamW with three learning-rate groups, slanted triangular schedules, and the
//! mini-batch training loop.
//!
//! Documents are processed one at a time; a mini-batch is one tape holding the
//! label matrix and every document of the batch, reduced to one loss and one
//! optimizer step. The encoder and label-attention groups follow their own
//! slanted triangular schedules over all optimizer steps; the head group keeps
//! a constant rate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, TaskMode};
use crate::data::{Corpus, Gold, Split};
use crate::error::{LameError, Result};
use crate::heads::{binary_cross_entropy, cross_entropy, f_measure_loss, Prediction};
use crate::metrics::{accuracy, micro_prf, Prf};
use crate::model::{LameModel, PredictionValues};
use crate::params::{Graph, ParamGroup, ParamStore};
use crate::tensor::Var;
use crate::tokenizer::{tokenize, TokenizedText, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Bce,
    FMeasure,
}

impl LossKind {
    pub fn default_for(task: TaskMode) -> Self {
        match task {
            TaskMode::MultiClass => LossKind::CrossEntropy,
            TaskMode::MultiLabel => LossKind::FMeasure,
        }
    }

    pub fn check(self, task: TaskMode) -> Result<()> {
        let ok = matches!(
            (self, task),
            (LossKind::CrossEntropy, TaskMode::MultiClass) | (LossKind::Bce | LossKind::FMeasure, TaskMode::MultiLabel)
        );
        if ok {
            Ok(())
        } else {
            let task = match task {
                TaskMode::MultiClass => "multi_class",
                TaskMode::MultiLabel => "multi_label",
            };
            Err(LameError::config(format!("loss {} cannot train a {task} task", self.as_str())))
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Bce => "bce",
            LossKind::FMeasure => "f_measure",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = LameError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
            "bce" | "binary_cross_entropy" => Ok(LossKind::Bce),
            "f_measure" | "fmeasure" => Ok(LossKind::FMeasure),
            other => Err(LameError::config(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub warm_up_fraction: f64,
    pub lr_encoder_max: f64,
    pub lr_label_attention_max: f64,
    pub lr_head_constant: f64,
    pub stlr_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// `None` picks cross-entropy for multi-class and F-measure for multi-label.
    pub loss: Option<LossKind>,
    pub f_measure_eps: f64,
    /// Multi-label decision threshold.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 42,
            warm_up_fraction: 0.1,
            lr_encoder_max: 5e-5,
            lr_label_attention_max: 4e-2,
            lr_head_constant: 1e-3,
            stlr_ratio: 32.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            seed: 0,
            loss: None,
            f_measure_eps: crate::heads::F_MEASURE_EPS,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warm_up_fraction > 0.0 && self.warm_up_fraction < 1.0) {
            return Err(LameError::config("warm_up_fraction must be in (0, 1)"));
        }
        let lrs = [self.lr_encoder_max, self.lr_label_attention_max, self.lr_head_constant];
        if lrs.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(LameError::config("learning rates must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(LameError::config("batch_size and epochs must be at least 1"));
        }
        if self.stlr_ratio < 1.0 {
            return Err(LameError::config("stlr_ratio must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(LameError::config("invalid AdamW hyperparameters"));
        }
        Ok(())
    }

    pub fn resolved_loss(&self, task: TaskMode) -> Result<LossKind> {
        let loss = self.loss.unwrap_or_else(|| LossKind::default_for(task));
        loss.check(task)?;
        Ok(loss)
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Slanted triangular learning rate: linear rise to `lr_max` over the first
/// `floor(cut_frac * total_steps)` steps, then linear decay back to
/// `lr_max / ratio` at `total_steps`.
pub fn stlr(step: usize, total_steps: usize, lr_max: f64, cut_frac: f64, ratio: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(LameError::contract(format!("stlr step {step} outside 0..={total_steps}")));
    }
    let cut = (cut_frac * total_steps as f64).floor() as usize;
    if cut == 0 {
        return Err(LameError::config(format!(
            "warm-up fraction {cut_frac} of {total_steps} steps leaves no warm-up step"
        )));
    }
    let p = if step < cut {
        step as f64 / cut as f64
    } else {
        1.0 - (step - cut) as f64 / (cut as f64 * (1.0 / cut_frac - 1.0))
    };
    let p = p.clamp(0.0, 1.0);
    Ok(lr_max * (1.0 + p * (ratio - 1.0)) / ratio)
}

/// Warm-up fraction actually used for a run: at least one warm-up step.
fn effective_cut_frac(cut_frac: f64, total_steps: usize) -> f64 {
    if (cut_frac * total_steps as f64).floor() >= 1.0 {
        cut_frac
    } else {
        1.0 / total_steps as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay scaled by `lr`.
pub fn adamw_step(param: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, h: AdamHyper) -> Result<()> {
    if param.len() != grad.len() || state.m.len() != param.len() || state.v.len() != param.len() {
        return Err(LameError::contract(format!(
            "adamw_step: param {}, grad {}, moments {}/{}",
            param.len(),
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] -= lr * (m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * param[i]);
    }
    Ok(())
}

/// Moments for every parameter of a store, indexed by parameter id.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub params: Vec<AdamState>,
}

impl OptimizerState {
    pub fn for_store(store: &ParamStore) -> Self {
        OptimizerState {
            params: store.iter().map(|(_, p)| AdamState::new(p.value.numel())).collect(),
        }
    }
}

/// Learning rate of each group at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub encoder: f64,
    pub label_attention: f64,
    pub head: f64,
}

impl GroupRates {
    pub fn at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<Self> {
        let cut = effective_cut_frac(cfg.warm_up_fraction, total_steps);
        Ok(GroupRates {
            encoder: stlr(step, total_steps, cfg.lr_encoder_max, cut, cfg.stlr_ratio)?,
            label_attention: stlr(step, total_steps, cfg.lr_label_attention_max, cut, cfg.stlr_ratio)?,
            head: cfg.lr_head_constant,
        })
    }

    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::LabelAttention => self.label_attention,
            ParamGroup::Head => self.head,
        }
    }
}

/// Excludes the encoder from optimization. Label descriptions still pass
/// through it on every forward pass.
pub fn freeze_encoder(model: &mut LameModel) {
    model.set_frozen_encoder(true);
}

/// A corpus tokenized for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub docs: Vec<TokenizedText>,
    pub ids: Vec<String>,
    pub golds: Vec<Gold>,
    pub descriptions: Vec<TokenizedText>,
    pub label_order: Vec<String>,
    pub task: TaskMode,
}

impl PreparedData {
    pub fn from_corpus(corpus: &Corpus, vocab: &Vocab, max_len: usize) -> Self {
        PreparedData {
            docs: corpus.instances.iter().map(|i| tokenize(&i.text, vocab, max_len)).collect(),
            ids: corpus.instances.iter().map(|i| i.id.clone()).collect(),
            golds: corpus.instances.iter().map(|i| i.gold.clone()).collect(),
            descriptions: corpus.labels.iter().map(|l| tokenize(&l.description, vocab, max_len)).collect(),
            label_order: corpus.label_ids(),
            task: corpus.task,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.label_order.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub task: TaskMode,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro: Option<Prf>,
}

impl EvalMetrics {
    /// Model-selection score: accuracy (multi-class) or micro-F1 (multi-label).
    pub fn score(&self) -> f64 {
        match self.task {
            TaskMode::MultiClass => self.accuracy.unwrap_or(0.0),
            TaskMode::MultiLabel => self.micro.map(|m| m.f1).unwrap_or(0.0),
        }
    }

    pub fn from_predictions(task: TaskMode, preds: &[PredictionValues], golds: &[Gold], threshold: f64) -> Result<Self> {
        if preds.len() != golds.len() {
            return Err(LameError::contract("prediction and gold counts differ"));
        }
        match task {
            TaskMode::MultiClass => {
                let p: Vec<usize> = preds.iter().map(PredictionValues::argmax).collect();
                let g = golds
                    .iter()
                    .map(|g| g.class().ok_or_else(|| LameError::contract("multi-label gold in a multi-class task")))
                    .collect::<Result<Vec<_>>>()?;
                Ok(EvalMetrics {
                    task,
                    count: preds.len(),
                    accuracy: Some(accuracy(&p, &g)?),
                    micro: None,
                })
            }
            TaskMode::MultiLabel => {
                let p: Vec<Vec<bool>> = preds.iter().map(|p| p.above(threshold)).collect();
                let g: Vec<Vec<bool>> = golds.iter().zip(&p).map(|(g, p)| g.to_flags(p.len())).collect();
                Ok(EvalMetrics {
                    task,
                    count: preds.len(),
                    accuracy: None,
                    micro: Some(micro_prf(&p, &g)?),
                })
            }
        }
    }
}

/// Eval-mode predictions and metrics on a subset of `data`.
pub fn evaluate(model: &LameModel, data: &PreparedData, indices: &[usize], threshold: f64, jobs: usize) -> Result<(EvalMetrics, Vec<PredictionValues>)> {
    if indices.is_empty() {
        return Err(LameError::input("cannot evaluate an empty split"));
    }
    let docs: Vec<TokenizedText> = indices.iter().map(|&i| data.docs[i].clone()).collect();
    let golds: Vec<Gold> = indices.iter().map(|&i| data.golds[i].clone()).collect();
    let preds = model.predict_parallel(&docs, &data.descriptions, jobs)?;
    let metrics = EvalMetrics::from_predictions(data.task, &preds, &golds, threshold)?;
    Ok((metrics, preds))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps completed so far.
    pub step: usize,
    pub lr: GroupRates,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<EvalMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub total_steps: usize,
    pub loss: LossKind,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_dev_score: Option<f64>,
}

impl TrainingReport {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializable record") + "\n")
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrainingReport,
    /// Parameters at the best dev epoch (the final ones when there is no dev split).
    pub best: ParamStore,
}

/// Builds the loss of one mini-batch on `g`: the label matrix once, every
/// document of the batch, then the mean loss (or pooled F-measure loss).
pub fn batch_loss(g: &mut Graph, model: &LameModel, data: &PreparedData, batch: &[usize], loss_kind: LossKind, f_measure_eps: f64) -> Result<Var> {
    if batch.is_empty() {
        return Err(LameError::contract("empty mini-batch"));
    }
    let labels = model.label_matrix(g, &data.descriptions, &data.label_order)?;
    let labels_n = data.num_labels();
    let mut preds: Vec<Prediction> = Vec::with_capacity(batch.len());
    let mut losses = Vec::with_capacity(batch.len());
    for &i in batch {
        let out = model.forward_document(g, labels.u, &data.docs[i])?;
        match loss_kind {
            LossKind::CrossEntropy => {
                let gold = data.golds[i]
                    .class()
                    .ok_or_else(|| LameError::contract("cross-entropy needs class labels"))?;
                losses.push(cross_entropy(g, &out.prediction, gold)?);
            }
            LossKind::Bce => losses.push(binary_cross_entropy(g, &out.prediction, &data.golds[i].to_vector(labels_n))?),
            LossKind::FMeasure => {}
        }
        preds.push(out.prediction);
    }
    if loss_kind == LossKind::FMeasure {
        let golds: Vec<Vec<f64>> = batch.iter().map(|&i| data.golds[i].to_vector(labels_n)).collect();
        return f_measure_loss(g, &preds, &golds, f_measure_eps);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = g.tape.add(total, l)?;
    }
    Ok(g.tape.scale(total, 1.0 / batch.len() as f64))
}

/// Forward, loss and backward for one mini-batch; applies one AdamW update.
/// Returns the batch loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut LameModel,
    data: &PreparedData,
    batch: &[usize],
    rates: GroupRates,
    optimizer: &mut OptimizerState,
    cfg: &TrainConfig,
    loss_kind: LossKind,
    step: usize,
) -> Result<f64> {
    let groups = model.trainable_groups();
    let tape_seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step as u64);
    let (loss_value, grads) = {
        let mut g = Graph::new(&model.store, Mode::Train, &groups, tape_seed);
        let loss = batch_loss(&mut g, model, data, batch, loss_kind, cfg.f_measure_eps)?;
        g.backward(loss)?;
        let value = g.value(loss).item()?;
        let grads: Vec<_> = g.param_grads().into_iter().map(|(id, gr)| (id, gr.to_vec())).collect();
        (value, grads)
    };
    let hyper = cfg.adam();
    for (id, grad) in grads {
        let param = model.store.get_mut(id);
        let lr = rates.get(param.group);
        adamw_step(param.value.data_mut(), &grad, &mut optimizer.params[id.index()], lr, hyper)?;
    }
    Ok(loss_value)
}

/// Runs the full schedule. `on_epoch` sees each record as it is produced.
pub fn train(
    model: &mut LameModel,
    data: &PreparedData,
    split: &Split,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(LameError::input("training split is empty"));
    }
    if data.task != model.config.task || data.num_labels() != model.config.num_labels {
        return Err(LameError::config(format!(
            "model is configured for {} {:?} labels but the data has {} {:?} labels",
            model.config.num_labels,
            model.config.task,
            data.num_labels(),
            data.task
        )));
    }
    let loss_kind = cfg.resolved_loss(data.task)?;
    let steps_per_epoch = split.train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut optimizer = OptimizerState::for_store(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = split.train.clone();

    let mut report = TrainingReport {
        total_steps,
        loss: loss_kind,
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        best_dev_score: None,
    };
    let mut best = model.store.clone();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut rates = GroupRates::at(step, total_steps, cfg)?;
        for batch in order.chunks(cfg.batch_size) {
            rates = GroupRates::at(step, total_steps, cfg)?;
            loss_sum += train_step(model, data, batch, rates, &mut optimizer, cfg, loss_kind, step)?;
            step += 1;
        }
        let dev = if split.dev.is_empty() {
            None
        } else {
            Some(evaluate(model, data, &split.dev, cfg.threshold, 1)?.0)
        };
        match dev {
            Some(m) => {
                if report.best_dev_score.is_none_or(|b| m.score() > b) {
                    report.best_dev_score = Some(m.score());
                    report.best_epoch = Some(epoch);
                    best = model.store.clone();
                }
            }
            None => {
                report.best_epoch = Some(epoch);
                best = model.store.clone();
            }
        }
        let record = EpochRecord {
            epoch,
            step,
            lr: rates,
            train_loss: loss_sum / steps_per_epoch as f64,
            dev,
        };
        on_epoch(&record);
        report.epochs.push(record);
    }
    Ok(TrainOutcome { report, best })
}
