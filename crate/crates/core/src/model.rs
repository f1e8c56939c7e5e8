//! The full classifier: encoder, label matrix, label attention blocks, head.

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TaskMode};
use crate::encoder::{build_label_matrix, encode, EncodedDocument, EncoderParams, LabelMatrix};
use crate::error::{LameError, Result};
use crate::heads::{classify, HeadParams, Prediction};
use crate::label_attention::{run_label_attention, AttentionRecord, LabelAttentionBlockParams};
use crate::params::{Graph, Initializer, ParamGroup, ParamStore};
use crate::tensor::{Tensor, Var};
use crate::tokenizer::TokenizedText;

#[derive(Clone, Debug)]
pub struct LameModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub blocks: Vec<LabelAttentionBlockParams>,
    pub head: HeadParams,
    frozen_encoder: bool,
}

/// Graph outputs for one document.
#[derive(Clone, Debug)]
pub struct DocumentOutput {
    pub encoded: EncodedDocument,
    pub output: Var,
    pub prediction: Prediction,
    pub records: Vec<AttentionRecord>,
}

/// Plain-number prediction for one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionValues {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl PredictionValues {
    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    /// Labels with probability at least `threshold`.
    pub fn above(&self, threshold: f64) -> Vec<bool> {
        self.probabilities.iter().map(|&p| p >= threshold).collect()
    }

    /// Predicted label indices: the argmax for multi-class, every label at or
    /// above `threshold` for multi-label.
    pub fn decided(&self, task: TaskMode, threshold: f64) -> Vec<usize> {
        match task {
            TaskMode::MultiClass => vec![self.argmax()],
            TaskMode::MultiLabel => (0..self.probabilities.len())
                .filter(|&i| self.probabilities[i] >= threshold)
                .collect(),
        }
    }
}

impl LameModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed, config.init_std);
        let encoder = EncoderParams::register(&mut store, &config, &mut init);
        let blocks = (0..config.label_attention_blocks)
            .map(|i| LabelAttentionBlockParams::register(&mut store, i, &config, &mut init))
            .collect();
        let head = HeadParams::register(&mut store, &config, &mut init);
        Ok(LameModel {
            config,
            store,
            encoder,
            blocks,
            head,
            frozen_encoder: false,
        })
    }

    pub fn set_frozen_encoder(&mut self, frozen: bool) {
        self.frozen_encoder = frozen;
    }

    pub fn frozen_encoder(&self) -> bool {
        self.frozen_encoder
    }

    /// Groups updated during training.
    pub fn trainable_groups(&self) -> Vec<ParamGroup> {
        ParamGroup::ALL
            .into_iter()
            .filter(|g| !(self.frozen_encoder && *g == ParamGroup::Encoder))
            .collect()
    }

    pub fn label_matrix(&self, g: &mut Graph, descriptions: &[TokenizedText], label_order: &[String]) -> Result<LabelMatrix> {
        build_label_matrix(g, descriptions, label_order, &self.encoder, &self.config)
    }

    /// Encode, attend with `u`, classify.
    pub fn forward_document(&self, g: &mut Graph, u: Var, tokens: &TokenizedText) -> Result<DocumentOutput> {
        let encoded = encode(g, tokens, &self.encoder, &self.config)?;
        let (output, records) = run_label_attention(g, u, encoded.h, &self.blocks, &self.config)?;
        let prediction = classify(g, output, &self.head, self.config.task)?;
        Ok(DocumentOutput {
            encoded,
            output,
            prediction,
            records,
        })
    }

    /// Eval-mode label matrix as plain values.
    pub fn label_matrix_values(&self, descriptions: &[TokenizedText]) -> Result<Tensor> {
        let order: Vec<String> = (0..descriptions.len()).map(|i| i.to_string()).collect();
        let mut g = Graph::inference(&self.store);
        let lm = self.label_matrix(&mut g, descriptions, &order)?;
        Ok(g.value(lm.u).clone())
    }

    /// Eval-mode prediction and attention records for one document given a
    /// precomputed label matrix.
    pub fn predict_with_label_matrix(&self, u: &Tensor, tokens: &TokenizedText) -> Result<(PredictionValues, Vec<AttentionRecord>)> {
        let mut g = Graph::inference(&self.store);
        let uv = g.tape.constant(u.clone());
        let out = self.forward_document(&mut g, uv, tokens)?;
        let values = PredictionValues {
            logits: g.value(out.prediction.logits).data().to_vec(),
            probabilities: g.value(out.prediction.probabilities).data().to_vec(),
        };
        Ok((values, out.records))
    }

    pub fn predict(&self, docs: &[TokenizedText], descriptions: &[TokenizedText]) -> Result<Vec<PredictionValues>> {
        let u = self.label_matrix_values(descriptions)?;
        docs.iter()
            .map(|d| self.predict_with_label_matrix(&u, d).map(|(p, _)| p))
            .collect()
    }

    /// Like [`LameModel::predict`] with documents spread over `jobs` threads;
    /// output order follows `docs`.
    pub fn predict_parallel(&self, docs: &[TokenizedText], descriptions: &[TokenizedText], jobs: usize) -> Result<Vec<PredictionValues>> {
        use rayon::prelude::*;
        if jobs <= 1 {
            return self.predict(docs, descriptions);
        }
        let u = self.label_matrix_values(descriptions)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| LameError::config(format!("thread pool: {e}")))?;
        pool.install(|| {
            docs.par_iter()
                .map(|d| self.predict_with_label_matrix(&u, d).map(|(p, _)| p))
                .collect()
        })
    }
}
