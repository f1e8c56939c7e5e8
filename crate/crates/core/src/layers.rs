//! Building blocks shared by the encoder and the label attention blocks.

use crate::error::Result;
use crate::params::{Graph, Initializer, ParamGroup, ParamId, ParamStore};
use crate::tensor::Var;

/// Combined `d_h x d_h` projections, split column-wise into heads.
#[derive(Clone, Debug)]
pub struct AttentionProjections {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl AttentionProjections {
    pub fn register(store: &mut ParamStore, prefix: &str, group: ParamGroup, hidden: usize, init: &mut Initializer) -> Self {
        let mut w = |name: &str| store.add(format!("{prefix}.{name}"), group, init.weight(&[hidden, hidden]));
        AttentionProjections {
            wq: w("wq"),
            wk: w("wk"),
            wv: w("wv"),
            wo: w("wo"),
        }
    }
}

/// Position-wise `gelu(x W1 + b1) W2 + b2`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        hidden: usize,
        inner: usize,
        init: &mut Initializer,
    ) -> Self {
        FeedForward {
            w1: store.add(format!("{prefix}.w1"), group, init.weight(&[hidden, inner])),
            b1: store.add(format!("{prefix}.b1"), group, init.zeros(&[inner])),
            w2: store.add(format!("{prefix}.w2"), group, init.weight(&[inner, hidden])),
            b2: store.add(format!("{prefix}.b2"), group, init.zeros(&[hidden])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (g.param(self.w1), g.param(self.b1), g.param(self.w2), g.param(self.b2));
        let h = g.tape.matmul(x, w1)?;
        let h = g.tape.add_row(h, b1)?;
        let h = g.tape.gelu(h);
        let o = g.tape.matmul(h, w2)?;
        g.tape.add_row(o, b2)
    }
}

#[derive(Clone, Debug)]
pub struct NormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl NormParams {
    pub fn register(store: &mut ParamStore, prefix: &str, group: ParamGroup, hidden: usize, init: &mut Initializer) -> Self {
        NormParams {
            gain: store.add(format!("{prefix}.gain"), group, init.ones(&[hidden])),
            bias: store.add(format!("{prefix}.bias"), group, init.zeros(&[hidden])),
        }
    }

    /// `LayerNorm(x + sub)`.
    pub fn add_norm(&self, g: &mut Graph, x: Var, sub: Var, eps: f64) -> Result<Var> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        let s = g.tape.add(x, sub)?;
        g.tape.layer_norm(s, gain, bias, eps)
    }
}

/// Multi-head scaled dot-product attention of `queries` over `keys_values`.
///
/// Returns the projected output (`rows(queries) x d_h`) and, per head, the
/// attention weight matrix (`rows(queries) x rows(keys_values)`).
pub fn multi_head_attention(
    g: &mut Graph,
    queries: Var,
    keys_values: Var,
    proj: &AttentionProjections,
    heads: usize,
    scale: f64,
) -> Result<(Var, Vec<Var>)> {
    let (wq, wk, wv, wo) = (g.param(proj.wq), g.param(proj.wk), g.param(proj.wv), g.param(proj.wo));
    let q = g.tape.matmul(queries, wq)?;
    let k = g.tape.matmul(keys_values, wk)?;
    let v = g.tape.matmul(keys_values, wv)?;
    let width = g.value(q).cols() / heads;

    let mut outputs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for i in 0..heads {
        let (qi, ki, vi) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.tape.slice_cols(q, i * width, width)?,
                g.tape.slice_cols(k, i * width, width)?,
                g.tape.slice_cols(v, i * width, width)?,
            )
        };
        let kt = g.tape.transpose(ki)?;
        let scores = g.tape.matmul(qi, kt)?;
        let scores = g.tape.scale(scores, 1.0 / scale);
        let w = g.tape.softmax_rows(scores)?;
        outputs.push(g.tape.matmul(w, vi)?);
        weights.push(w);
    }
    let joined = if heads == 1 { outputs[0] } else { g.tape.concat_cols(&outputs)? };
    Ok((g.tape.matmul(joined, wo)?, weights))
}
