//! Named parameter storage, initialization, and binding of parameters onto a tape.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::Mode;
use crate::error::{LameError, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    LabelAttention,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Encoder, ParamGroup::LabelAttention, ParamGroup::Head];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::LabelAttention => "label_attention",
            ParamGroup::Head => "head",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let name = name.into();
        let id = ParamId(self.params.len());
        let prev = self.index.insert(name.clone(), id);
        assert!(prev.is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, group, value });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Copies every value from `other`, which must hold the same names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .id(&p.name)
                .map(|id| other.get(id))
                .ok_or_else(|| LameError::compat(format!("missing parameter {}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(LameError::compat(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }
}

/// Truncated-normal weights (cut at two standard deviations), zero biases,
/// unit layer-norm gains.
pub struct Initializer {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    std: f64,
}

impl Initializer {
    pub fn new(seed: u64, std: f64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, std).expect("positive std"),
            std,
        }
    }

    pub fn weight(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let v = self.normal.sample(&mut self.rng);
                if v.abs() <= 2.0 * self.std {
                    break v;
                }
            })
            .collect();
        Tensor::new(shape.to_vec(), data).expect("valid shape")
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Tensor {
        Tensor::zeros(shape)
    }

    pub fn ones(&mut self, shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }
}

/// A tape plus lazily bound model parameters. Each parameter used in a forward
/// pass becomes one leaf; it receives a gradient only if its group is trainable.
pub struct Graph<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
    trainable: [bool; 3],
    mode: Mode,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode, trainable: &[ParamGroup], seed: u64) -> Self {
        let mut flags = [false; 3];
        for g in trainable {
            flags[group_slot(*g)] = true;
        }
        Graph {
            tape: Tape::with_seed(seed),
            store,
            bound: vec![None; store.len()],
            trainable: flags,
            mode,
        }
    }

    /// Eval mode, no gradients.
    pub fn inference(store: &'s ParamStore) -> Self {
        Self::new(store, Mode::Eval, &[], 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let rg = self.trainable[group_slot(p.group)];
        let v = self.tape.leaf(p.value.clone().with_requires_grad(rg));
        self.bound[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Gradient of each bound, trainable parameter after [`Graph::backward`].
    pub fn param_grads(&self) -> Vec<(ParamId, &[f64])> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| Some((ParamId(i), self.tape.grad((*v)?)?)))
            .collect()
    }
}

fn group_slot(g: ParamGroup) -> usize {
    match g {
        ParamGroup::Encoder => 0,
        ParamGroup::LabelAttention => 1,
        ParamGroup::Head => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_init_stays_within_two_std() {
        let mut init = Initializer::new(7, 0.02);
        let w = init.weight(&[64, 64]);
        assert!(w.data().iter().all(|v| v.abs() <= 0.04));
        let mean = w.data().iter().sum::<f64>() / w.numel() as f64;
        assert!(mean.abs() < 1e-3);
    }

    #[test]
    fn frozen_groups_get_no_grad() {
        let mut store = ParamStore::new();
        let a = store.add("a", ParamGroup::Encoder, Tensor::full(&[2], 1.0));
        let b = store.add("b", ParamGroup::Head, Tensor::full(&[2], 2.0));
        let mut g = Graph::new(&store, Mode::Train, &[ParamGroup::Head], 0);
        let va = g.param(a);
        let vb = g.param(b);
        assert_eq!(g.param(a), va);
        let p = g.tape.mul(va, vb).unwrap();
        let s = g.tape.sum(p);
        g.backward(s).unwrap();
        let grads = g.param_grads();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].0, b);
        assert_eq!(grads[0].1, &[1.0, 1.0]);
    }
}
