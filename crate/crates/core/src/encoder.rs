//! Transformer encoder over token ids, and label-description embedding through
//! the same encoder.
//!
//! `H^0` is the sum of learned token and position embeddings. Each layer is
//! self-attention followed by a feed-forward network, each wrapped as
//! `LayerNorm(x + sublayer(x))`. A label is represented by the final hidden
//! state at its description's `[CLS]` position.

use crate::config::ModelConfig;
use crate::error::{LameError, Result};
use crate::layers::{multi_head_attention, AttentionProjections, FeedForward, NormParams};
use crate::params::{Graph, Initializer, ParamGroup, ParamId, ParamStore};
use crate::tensor::Var;
use crate::tokenizer::TokenizedText;

#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub attention: AttentionProjections,
    pub norm1: NormParams,
    pub ffn: FeedForward,
    pub norm2: NormParams,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub layers: Vec<EncoderLayerParams>,
}

impl EncoderParams {
    pub fn register(store: &mut ParamStore, config: &ModelConfig, init: &mut Initializer) -> Self {
        let group = ParamGroup::Encoder;
        let d = config.hidden;
        let token_embedding = store.add("encoder.token_embedding", group, init.weight(&[config.vocab_size, d]));
        let position_embedding = store.add("encoder.position_embedding", group, init.weight(&[config.max_seq_len, d]));
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("encoder.layers.{l}");
                EncoderLayerParams {
                    attention: AttentionProjections::register(store, &format!("{p}.attention"), group, d, init),
                    norm1: NormParams::register(store, &format!("{p}.norm1"), group, d, init),
                    ffn: FeedForward::register(store, &format!("{p}.ffn"), group, d, config.ffn_width(), init),
                    norm2: NormParams::register(store, &format!("{p}.norm2"), group, d, init),
                }
            })
            .collect();
        EncoderParams {
            token_embedding,
            position_embedding,
            layers,
        }
    }
}

/// A document after the encoder: `h` is `N x d_h`, `cls` is its first row.
#[derive(Clone, Debug)]
pub struct EncodedDocument {
    pub tokens: TokenizedText,
    pub h: Var,
    pub cls: Var,
}

/// `U`, one row per label in `label_order`.
#[derive(Clone, Debug)]
pub struct LabelMatrix {
    pub u: Var,
    pub label_order: Vec<String>,
}

pub fn encode(g: &mut Graph, tokens: &TokenizedText, params: &EncoderParams, config: &ModelConfig) -> Result<EncodedDocument> {
    let n = tokens.ids.len();
    if n == 0 {
        return Err(LameError::input("cannot encode an empty token sequence"));
    }
    if n > config.max_seq_len {
        return Err(LameError::input(format!(
            "sequence of {n} tokens exceeds max_seq_len {}",
            config.max_seq_len
        )));
    }
    let tok_table = g.param(params.token_embedding);
    let pos_table = g.param(params.position_embedding);
    let tok = g.tape.embedding(tok_table, &tokens.ids)?;
    let positions: Vec<usize> = (0..n).collect();
    let pos = g.tape.embedding(pos_table, &positions)?;
    let mut h = g.tape.add(tok, pos)?;
    h = g.tape.dropout(h, config.dropout, g.is_training())?;

    let scale = (config.head_width(config.encoder_heads) as f64).sqrt();
    for layer in &params.layers {
        let (attn, _) = multi_head_attention(g, h, h, &layer.attention, config.encoder_heads, scale)?;
        let attn = g.tape.dropout(attn, config.dropout, g.is_training())?;
        h = layer.norm1.add_norm(g, h, attn, config.layer_norm_eps)?;
        let f = layer.ffn.forward(g, h)?;
        let f = g.tape.dropout(f, config.dropout, g.is_training())?;
        h = layer.norm2.add_norm(g, h, f, config.layer_norm_eps)?;
    }
    let cls = g.tape.slice_rows(h, 0, 1)?;
    Ok(EncodedDocument {
        tokens: tokens.clone(),
        h,
        cls,
    })
}

/// Final hidden state at the description's `[CLS]` position (`1 x d_h`).
pub fn embed_label(g: &mut Graph, description: &TokenizedText, params: &EncoderParams, config: &ModelConfig) -> Result<Var> {
    Ok(encode(g, description, params, config)?.cls)
}

/// Embeds every description and stacks the results in the given order. Runs
/// on the caller's graph, so encoder parameters receive label-side gradients.
pub fn build_label_matrix(
    g: &mut Graph,
    descriptions: &[TokenizedText],
    label_order: &[String],
    params: &EncoderParams,
    config: &ModelConfig,
) -> Result<LabelMatrix> {
    if descriptions.len() != config.num_labels || label_order.len() != config.num_labels {
        return Err(LameError::contract(format!(
            "{} descriptions and {} label ids for a model with {} labels",
            descriptions.len(),
            label_order.len(),
            config.num_labels
        )));
    }
    let rows = descriptions
        .iter()
        .map(|d| embed_label(g, d, params, config))
        .collect::<Result<Vec<_>>>()?;
    let u = g.tape.concat_rows(&rows)?;
    Ok(LabelMatrix {
        u,
        label_order: label_order.to_vec(),
    })
}
