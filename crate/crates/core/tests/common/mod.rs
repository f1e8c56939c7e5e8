#![allow(dead_code)]

use lame_core::data::{split, Corpus, Split};
use lame_core::synthetic::{make_synthetic_corpus, SyntheticCorpus, SyntheticSpec};
use lame_core::tensor::{Tape, Tensor, Var};
use lame_core::tokenizer::{build_vocab, Vocab};
use lame_core::training::{PreparedData, TrainConfig};
use lame_core::{ModelConfig, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: OpFn,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Sum of `out * w` for a fixed random `w`, so every output coordinate matters.
fn weighted(t: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let shape = t.shape(out).to_vec();
    let w = t.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = t.mul(out, w)?;
    Ok(t.sum(p))
}

macro_rules! case {
    ($name:expr, $seed:expr, [$($input:expr),*], |$t:ident, $v:ident| $body:expr) => {{
        let seed = $seed;
        OpCase {
            name: $name,
            inputs: vec![$($input),*],
            f: Box::new(move |$t: &mut Tape, $v: &[Var]| {
                let out: Var = $body?;
                weighted($t, out, seed)
            }),
        }
    }};
}

/// One case per differentiable tape operation.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let m34 = |r: &mut ChaCha8Rng| rand_tensor(r, &[3, 4], -1.5, 1.5);
    let ids = vec![2usize, 0, 4, 2];
    let targets: Vec<f64> = (0..4).map(|i| (i % 2) as f64).collect();
    vec![
        case!("matmul", seed, [m34(r), rand_tensor(r, &[4, 2], -1.0, 1.0)], |t, v| t.matmul(v[0], v[1])),
        case!("add", seed, [m34(r), m34(r)], |t, v| t.add(v[0], v[1])),
        case!("sub", seed, [m34(r), m34(r)], |t, v| t.sub(v[0], v[1])),
        case!("mul", seed, [m34(r), m34(r)], |t, v| t.mul(v[0], v[1])),
        case!("div", seed, [m34(r), rand_tensor(r, &[3, 4], 0.5, 2.0)], |t, v| t.div(v[0], v[1])),
        case!("scale", seed, [m34(r)], |t, v| Ok::<_, lame_core::LameError>(t.scale(v[0], -0.7))),
        case!("add_scalar", seed, [m34(r)], |t, v| Ok::<_, lame_core::LameError>(t.add_scalar(v[0], 0.3))),
        case!("add_row", seed, [m34(r), rand_tensor(r, &[4], -1.0, 1.0)], |t, v| t.add_row(v[0], v[1])),
        case!("transpose", seed, [m34(r)], |t, v| t.transpose(v[0])),
        case!("concat_rows", seed, [m34(r), rand_tensor(r, &[2, 4], -1.0, 1.0)], |t, v| t.concat_rows(&[v[0], v[1]])),
        case!("concat_cols", seed, [m34(r), rand_tensor(r, &[3, 2], -1.0, 1.0)], |t, v| t.concat_cols(&[v[0], v[1]])),
        case!("slice_rows", seed, [m34(r)], |t, v| t.slice_rows(v[0], 1, 2)),
        case!("slice_cols", seed, [m34(r)], |t, v| t.slice_cols(v[0], 1, 2)),
        case!("reshape", seed, [m34(r)], |t, v| t.reshape(v[0], &[2, 6])),
        case!("relu", seed, [m34(r)], |t, v| Ok::<_, lame_core::LameError>(t.relu(v[0]))),
        case!("gelu", seed, [m34(r)], |t, v| Ok::<_, lame_core::LameError>(t.gelu(v[0]))),
        case!("sigmoid", seed, [m34(r)], |t, v| Ok::<_, lame_core::LameError>(t.sigmoid(v[0]))),
        case!("log", seed, [rand_tensor(r, &[3, 4], 0.2, 3.0)], |t, v| Ok::<_, lame_core::LameError>(t.log(v[0]))),
        case!("exp", seed, [m34(r)], |t, v| Ok::<_, lame_core::LameError>(t.exp(v[0]))),
        case!("sum", seed, [m34(r)], |t, v| Ok::<_, lame_core::LameError>(t.sum(v[0]))),
        case!("mean", seed, [m34(r)], |t, v| Ok::<_, lame_core::LameError>(t.mean(v[0]))),
        case!("embedding", seed, [rand_tensor(r, &[5, 3], -1.0, 1.0)], |t, v| t.embedding(v[0], &ids)),
        case!("dropout", seed, [m34(r)], |t, v| t.dropout(v[0], 0.3, true)),
        case!("softmax_rows", seed, [m34(r)], |t, v| t.softmax_rows(v[0])),
        case!("log_softmax_rows", seed, [m34(r)], |t, v| t.log_softmax_rows(v[0])),
        case!(
            "layer_norm",
            seed,
            [m34(r), rand_tensor(r, &[4], 0.5, 1.5), rand_tensor(r, &[4], -0.5, 0.5)],
            |t, v| t.layer_norm(v[0], v[1], v[2], 1e-12)
        ),
        case!("pick", seed, [rand_tensor(r, &[5], -1.0, 1.0)], |t, v| t.pick(v[0], 3)),
        case!("bce_with_logits", seed, [rand_tensor(r, &[4], -2.0, 2.0)], |t, v| t.bce_with_logits(v[0], &targets)),
    ]
}

pub const OP_NAMES: usize = 28;

/// Desk-scale model config for a corpus.
pub fn desk_config(vocab: &Vocab, corpus: &Corpus) -> ModelConfig {
    let mut c = ModelConfig::desk_scale(vocab.len(), corpus.labels.len(), corpus.task);
    c.init_std = 0.1;
    c
}

/// Rates used by the synthetic training runs: a randomly initialized
/// encoder does not learn at the pretrained-encoder rates.
pub fn synthetic_train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        lr_encoder_max: 1e-3,
        lr_label_attention_max: 1e-3,
        lr_head_constant: 1e-3,
        seed,
        ..Default::default()
    }
}

pub struct Prepared {
    pub synthetic: SyntheticCorpus,
    pub vocab: Vocab,
    pub data: PreparedData,
    pub split: Split,
    pub config: ModelConfig,
}

pub fn prepare(spec: &SyntheticSpec, split_seed: u64) -> Prepared {
    let synthetic = make_synthetic_corpus(spec);
    let corpus = &synthetic.corpus;
    let texts = corpus
        .instances
        .iter()
        .map(|i| i.text.as_str())
        .chain(corpus.labels.iter().map(|l| l.description.as_str()));
    let vocab = build_vocab(texts, 400, 1).unwrap();
    let config = desk_config(&vocab, corpus);
    let data = PreparedData::from_corpus(corpus, &vocab, config.max_seq_len);
    let split = split(corpus.len(), (7.0, 1.0, 2.0), split_seed).unwrap();
    Prepared {
        synthetic,
        vocab,
        data,
        split,
        config,
    }
}

pub fn multi_class_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_labels: 5,
        docs_per_label: 40,
        seed,
        ..Default::default()
    }
}

pub fn multi_label_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_labels: 10,
        docs_per_label: 40,
        multi_label: true,
        seed,
        ..Default::default()
    }
}
