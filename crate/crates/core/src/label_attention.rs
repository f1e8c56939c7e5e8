//! Label attention: label embeddings query the document's hidden states.
//!
//! Each block runs multi-head cross-attention with `U` as queries and `H` as
//! keys and values, then `A = LayerNorm(U + attention)` and
//! `out = LayerNorm(A + FFN(A))`. Blocks stack by feeding one block's output
//! in as the next block's queries; `H` is shared by all blocks. The attention
//! weights of every block are kept for explanations.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{LameError, Result};
use crate::layers::{multi_head_attention, AttentionProjections, FeedForward, NormParams};
use crate::params::{Graph, Initializer, ParamGroup, ParamStore};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug)]
pub struct LabelAttentionBlockParams {
    pub attention: AttentionProjections,
    pub norm1: NormParams,
    pub ffn: FeedForward,
    pub norm2: NormParams,
}

impl LabelAttentionBlockParams {
    pub fn register(store: &mut ParamStore, index: usize, config: &ModelConfig, init: &mut Initializer) -> Self {
        let group = ParamGroup::LabelAttention;
        let d = config.hidden;
        let p = format!("label_attention.blocks.{index}");
        LabelAttentionBlockParams {
            attention: AttentionProjections::register(store, &format!("{p}.attention"), group, d, init),
            norm1: NormParams::register(store, &format!("{p}.norm1"), group, d, init),
            ffn: FeedForward::register(store, &format!("{p}.ffn"), group, d, config.ffn_width(), init),
            norm2: NormParams::register(store, &format!("{p}.norm2"), group, d, init),
        }
    }
}

/// Attention weights of one block, shaped `heads x labels x positions`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub weights: Tensor,
    pub block_index: usize,
}

impl AttentionRecord {
    pub fn heads(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn labels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn positions(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Distribution over positions for one head and label.
    pub fn row(&self, head: usize, label: usize) -> &[f64] {
        let (l, n) = (self.labels(), self.positions());
        let start = (head * l + label) * n;
        &self.weights.data()[start..start + n]
    }
}

/// How per-head attention is reduced to one score per token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationStrategy {
    /// Last block, arithmetic mean over heads.
    #[default]
    LastBlockMeanHeads,
}

impl ExplanationStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            ExplanationStrategy::LastBlockMeanHeads => "last_block_mean_heads",
        }
    }
}

fn check_width(g: &Graph, v: Var, config: &ModelConfig, what: &str) -> Result<()> {
    let shape = g.value(v).shape();
    if shape.len() != 2 || shape[1] != config.hidden {
        return Err(LameError::contract(format!(
            "{what} has shape {shape:?}, expected width {}",
            config.hidden
        )));
    }
    Ok(())
}

/// Multi-head cross-attention output before the residual/norm sublayers,
/// `Concat(head_i) W^O`, plus the attention weights.
pub fn cross_attention(
    g: &mut Graph,
    u_in: Var,
    h: Var,
    params: &LabelAttentionBlockParams,
    config: &ModelConfig,
    block_index: usize,
) -> Result<(Var, AttentionRecord)> {
    check_width(g, u_in, config, "label matrix")?;
    check_width(g, h, config, "document matrix")?;
    let scale = config.label_attention_scale();
    let (out, weights) = multi_head_attention(g, u_in, h, &params.attention, config.label_heads, scale)?;
    let labels = g.value(u_in).rows();
    let positions = g.value(h).rows();
    let mut data = Vec::with_capacity(weights.len() * labels * positions);
    for w in &weights {
        data.extend_from_slice(g.value(*w).data());
    }
    let record = AttentionRecord {
        weights: Tensor::new(vec![weights.len(), labels, positions], data)?,
        block_index,
    };
    Ok((out, record))
}

/// One label attention block; output has the same shape as `u_in`.
pub fn label_attention_block(
    g: &mut Graph,
    u_in: Var,
    h: Var,
    params: &LabelAttentionBlockParams,
    config: &ModelConfig,
    block_index: usize,
) -> Result<(Var, AttentionRecord)> {
    let (attn, record) = cross_attention(g, u_in, h, params, config, block_index)?;
    let attn = g.tape.dropout(attn, config.dropout, g.is_training())?;
    let a = params.norm1.add_norm(g, u_in, attn, config.layer_norm_eps)?;
    let f = params.ffn.forward(g, a)?;
    let f = g.tape.dropout(f, config.dropout, g.is_training())?;
    let out = params.norm2.add_norm(g, a, f, config.layer_norm_eps)?;
    Ok((out, record))
}

/// Folds the blocks over `u`, returning the final `O` and every block's record.
pub fn run_label_attention(
    g: &mut Graph,
    u: Var,
    h: Var,
    blocks: &[LabelAttentionBlockParams],
    config: &ModelConfig,
) -> Result<(Var, Vec<AttentionRecord>)> {
    if blocks.is_empty() {
        return Err(LameError::contract("label attention needs at least one block"));
    }
    let mut current = u;
    let mut records = Vec::with_capacity(blocks.len());
    for (i, block) in blocks.iter().enumerate() {
        let (out, rec) = label_attention_block(g, current, h, block, config, i)?;
        current = out;
        records.push(rec);
    }
    Ok((current, records))
}

/// Per-position scores for `label`: the last block's rows averaged over heads.
pub fn explanation_scores(records: &[AttentionRecord], label: usize, strategy: ExplanationStrategy) -> Result<Tensor> {
    let ExplanationStrategy::LastBlockMeanHeads = strategy;
    let last = records
        .last()
        .ok_or_else(|| LameError::contract("no attention records to explain"))?;
    if label >= last.labels() {
        return Err(LameError::contract(format!(
            "label index {label} out of range for {} labels",
            last.labels()
        )));
    }
    let heads = last.heads();
    let mut scores = vec![0.0; last.positions()];
    for head in 0..heads {
        scores.iter_mut().zip(last.row(head, label)).for_each(|(s, w)| *s += w);
    }
    scores.iter_mut().for_each(|s| *s /= heads as f64);
    Tensor::vector(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TaskMode;

    fn tiny_config(hidden: usize, heads: usize) -> ModelConfig {
        let mut c = ModelConfig::desk_scale(10, 3, TaskMode::MultiLabel);
        c.hidden = hidden;
        c.encoder_heads = heads;
        c.label_heads = heads;
        c.ffn_mult = 2;
        c
    }

    fn set(store: &mut ParamStore, id: crate::params::ParamId, data: &[f64]) {
        store.get_mut(id).value.data_mut().copy_from_slice(data);
    }

    #[test]
    fn single_head_hand_example() {
        let config = tiny_config(2, 1);
        let mut store = ParamStore::new();
        let mut init = Initializer::new(0, 0.02);
        let block = LabelAttentionBlockParams::register(&mut store, 0, &config, &mut init);
        for id in [block.attention.wq, block.attention.wk, block.attention.wv, block.attention.wo] {
            set(&mut store, id, &[1.0, 0.0, 0.0, 1.0]);
        }
        let mut g = Graph::inference(&store);
        let u = g.tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let h = g.tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let (out, rec) = cross_attention(&mut g, u, h, &block, &config, 0).unwrap();
        let s = (1.0 / 2f64.sqrt()).exp();
        let expect = [s / (s + 1.0), 1.0 / (s + 1.0)];
        let got = g.value(out).data();
        assert!((got[0] - 0.6698).abs() < 1e-4 && (got[1] - 0.3302).abs() < 1e-4);
        assert!((got[0] - expect[0]).abs() < 1e-15 && (got[1] - expect[1]).abs() < 1e-15);
        assert_eq!(rec.row(0, 0), got);
    }

    #[test]
    fn single_position_gives_unit_weights() {
        let config = tiny_config(8, 2);
        let mut store = ParamStore::new();
        let mut init = Initializer::new(1, 0.5);
        let blocks: Vec<_> = (0..2).map(|i| LabelAttentionBlockParams::register(&mut store, i, &config, &mut init)).collect();
        let mut g = Graph::inference(&store);
        let mut ini = Initializer::new(2, 1.0);
        let u = g.tape.constant(ini.weight(&[3, 8]));
        let h = g.tape.constant(ini.weight(&[1, 8]));
        let (o, recs) = run_label_attention(&mut g, u, h, &blocks, &config).unwrap();
        assert_eq!(g.value(o).shape(), &[3, 8]);
        assert_eq!(recs.len(), 2);
        for r in &recs {
            assert!(r.weights.data().iter().all(|&w| w == 1.0));
        }
    }

    #[test]
    fn stacking_threads_output_into_next_block() {
        let config = tiny_config(8, 2);
        let mut store = ParamStore::new();
        let mut init = Initializer::new(3, 0.5);
        let blocks: Vec<_> = (0..2).map(|i| LabelAttentionBlockParams::register(&mut store, i, &config, &mut init)).collect();
        let mut ini = Initializer::new(4, 1.0);
        let (ut, ht) = (ini.weight(&[3, 8]), ini.weight(&[5, 8]));

        let mut g = Graph::inference(&store);
        let (u, h) = (g.tape.constant(ut.clone()), g.tape.constant(ht.clone()));
        let (o, recs) = run_label_attention(&mut g, u, h, &blocks, &config).unwrap();
        let stacked = g.value(o).clone();

        let mut g = Graph::inference(&store);
        let (u, h) = (g.tape.constant(ut), g.tape.constant(ht));
        let (mid, r0) = label_attention_block(&mut g, u, h, &blocks[0], &config, 0).unwrap();
        let (fin, r1) = label_attention_block(&mut g, mid, h, &blocks[1], &config, 1).unwrap();
        assert_eq!(g.value(fin), &stacked);
        assert_eq!(vec![r0, r1], recs);

        let mut g = Graph::inference(&store);
        let (u, h) = (g.tape.constant(Tensor::zeros(&[3, 8])), g.tape.constant(Tensor::zeros(&[5, 8])));
        assert!(run_label_attention(&mut g, u, h, &[], &config).is_err());
    }

    #[test]
    fn zero_values_and_ffn_make_output_independent_of_document() {
        let config = tiny_config(8, 2);
        let mut store = ParamStore::new();
        let mut init = Initializer::new(5, 0.5);
        let block = LabelAttentionBlockParams::register(&mut store, 0, &config, &mut init);
        for id in [block.attention.wv, block.ffn.w1, block.ffn.b1, block.ffn.w2, block.ffn.b2] {
            let n = store.get(id).value.numel();
            set(&mut store, id, &vec![0.0; n]);
        }
        let mut ini = Initializer::new(6, 1.0);
        let ut = ini.weight(&[3, 8]);
        let run = |ht: Tensor| {
            let mut g = Graph::inference(&store);
            let (u, h) = (g.tape.constant(ut.clone()), g.tape.constant(ht));
            let (o, _) = label_attention_block(&mut g, u, h, &block, &config, 0).unwrap();
            g.value(o).clone()
        };
        let a = run(ini.weight(&[4, 8]));
        let b = run(ini.weight(&[7, 8]));
        assert_eq!(a, b);
        // LayerNorm(LayerNorm(U)) with unit gain and zero bias
        let mut g = Graph::inference(&store);
        let u = g.tape.constant(ut.clone());
        let gain = g.tape.constant(Tensor::full(&[8], 1.0));
        let bias = g.tape.constant(Tensor::zeros(&[8]));
        let n1 = g.tape.layer_norm(u, gain, bias, config.layer_norm_eps).unwrap();
        let n2 = g.tape.layer_norm(n1, gain, bias, config.layer_norm_eps).unwrap();
        for (x, y) in g.value(n2).data().iter().zip(a.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn explanation_scores_average_heads() {
        let weights = Tensor::new(vec![2, 1, 3], vec![0.2, 0.3, 0.5, 0.4, 0.5, 0.1]).unwrap();
        let rec = AttentionRecord { weights, block_index: 0 };
        let s = explanation_scores(std::slice::from_ref(&rec), 0, ExplanationStrategy::LastBlockMeanHeads).unwrap();
        let expect = [0.3, 0.4, 0.3];
        for (a, b) in s.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(explanation_scores(&[rec], 1, ExplanationStrategy::LastBlockMeanHeads).is_err());
        assert!(explanation_scores(&[], 0, ExplanationStrategy::LastBlockMeanHeads).is_err());

        let one = AttentionRecord {
            weights: Tensor::new(vec![1, 1, 2], vec![0.9, 0.1]).unwrap(),
            block_index: 0,
        };
        let s = explanation_scores(&[one], 0, ExplanationStrategy::LastBlockMeanHeads).unwrap();
        assert_eq!(s.data(), &[0.9, 0.1]);

        let uniform = AttentionRecord {
            weights: Tensor::full(&[4, 2, 5], 0.2),
            block_index: 0,
        };
        let s = explanation_scores(&[uniform], 1, ExplanationStrategy::LastBlockMeanHeads).unwrap();
        assert!(s.data().iter().all(|v| (v - 0.2).abs() < 1e-15));
    }
}
