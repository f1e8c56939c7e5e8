//! Attention explanations: which words a predicted label attended to.
//!
//! Word shading uses quantile buckets over the words of one label: the top
//! `top_k` words get level 1 to 4 by the share of that label's words whose
//! weight they reach (level 4 at or above the 90th percentile, 3 at the 75th,
//! 2 at the 50th, 1 below). Every other word has level 0. Levels depend only
//! on weight ranks, so renderings of different runs are comparable.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::checkpoint::config_hash;
use crate::data::LabelInfo;
use crate::error::{LameError, Result};
use crate::label_attention::{explanation_scores, ExplanationStrategy};
use crate::model::LameModel;
use crate::tensor::Tensor;
use crate::tokenizer::{id_strings, merge_subwords_with_spans, tokenize, Vocab};

pub const MAX_LEVEL: u8 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenWeight {
    pub token: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordWeight {
    /// Merged lowercase word as the tokenizer saw it.
    pub word: String,
    pub weight: f64,
    /// Character range in the original text.
    pub span: (usize, usize),
    pub level: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelExplanation {
    pub label_id: String,
    pub name: String,
    pub probability: f64,
    /// Attention over every position, [CLS] and [SEP] included; sums to 1.
    pub tokens: Vec<TokenWeight>,
    pub words: Vec<WordWeight>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub document_id: String,
    pub text: String,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub strategy: String,
    pub top_k: usize,
    pub labels: Vec<LabelExplanation>,
}

impl Explanation {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("serializable explanation") + "\n"
    }
}

/// Shading levels for one label's word weights.
pub fn quantile_levels(weights: &[f64], top_k: usize) -> Vec<u8> {
    let n = weights.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut levels = vec![0u8; n];
    for &i in order.iter().take(top_k) {
        let reached = weights.iter().filter(|&&w| w <= weights[i]).count() as f64 / n as f64;
        levels[i] = match reached {
            r if r >= 0.9 => 4,
            r if r >= 0.75 => 3,
            r if r >= 0.5 => 2,
            _ => 1,
        };
    }
    levels
}

/// A loaded model ready to explain documents against a fixed label set.
pub struct Explainer<'a> {
    model: &'a LameModel,
    vocab: &'a Vocab,
    labels: &'a [LabelInfo],
    label_matrix: Tensor,
    config_hash: String,
    checkpoint_hash: String,
    pub threshold: f64,
    pub strategy: ExplanationStrategy,
}

impl<'a> Explainer<'a> {
    pub fn new(model: &'a LameModel, vocab: &'a Vocab, labels: &'a [LabelInfo], checkpoint_hash: impl Into<String>) -> Result<Self> {
        let descriptions: Vec<_> = labels
            .iter()
            .map(|l| tokenize(&l.description, vocab, model.config.max_seq_len))
            .collect();
        Ok(Explainer {
            model,
            vocab,
            labels,
            label_matrix: model.label_matrix_values(&descriptions)?,
            config_hash: config_hash(&model.config),
            checkpoint_hash: checkpoint_hash.into(),
            threshold: 0.5,
            strategy: ExplanationStrategy::default(),
        })
    }

    /// Explains every predicted label of `text`.
    pub fn explain(&self, document_id: &str, text: &str, top_k: usize) -> Result<Explanation> {
        let tokens = tokenize(text, self.vocab, self.model.config.max_seq_len);
        if tokens.content_len() == 0 {
            return Err(LameError::input(format!("document {document_id:?} has no tokens")));
        }
        let (pred, records) = self.model.predict_with_label_matrix(&self.label_matrix, &tokens)?;
        let strings = id_strings(&tokens.ids, self.vocab);
        let content: Vec<usize> = (0..tokens.len()).filter(|&i| tokens.spans[i].is_some()).collect();
        let mut labels = Vec::new();
        for label in pred.decided(self.model.config.task, self.threshold) {
            let scores = explanation_scores(&records, label, self.strategy)?;
            let weights = scores.data();
            let token_weights = strings
                .iter()
                .zip(weights)
                .map(|(t, &w)| TokenWeight { token: t.clone(), weight: w })
                .collect();
            let piece_strs: Vec<&str> = content.iter().map(|&i| strings[i].as_str()).collect();
            let piece_w: Vec<f64> = content.iter().map(|&i| weights[i]).collect();
            let piece_spans: Vec<_> = content.iter().map(|&i| tokens.spans[i]).collect();
            let merged = merge_subwords_with_spans(&piece_strs, &piece_w, &piece_spans)?;
            let levels = quantile_levels(&merged.iter().map(|m| m.1).collect::<Vec<_>>(), top_k);
            let words = merged
                .into_iter()
                .zip(levels)
                .map(|((word, weight, span), level)| WordWeight {
                    word,
                    weight,
                    span: span.expect("content tokens carry spans"),
                    level,
                })
                .collect();
            labels.push(LabelExplanation {
                label_id: self.labels[label].id.clone(),
                name: self.labels[label].name.clone(),
                probability: pred.probabilities[label],
                tokens: token_weights,
                words,
            });
        }
        Ok(Explanation {
            document_id: document_id.to_string(),
            text: text.to_string(),
            config_hash: self.config_hash.clone(),
            checkpoint_hash: self.checkpoint_hash.clone(),
            strategy: self.strategy.as_str().to_string(),
            top_k,
            labels,
        })
    }

    /// Explains `(id, text)` pairs on `jobs` threads; output follows input order.
    pub fn explain_all(&self, docs: &[(String, String)], top_k: usize, jobs: usize) -> Result<Vec<Explanation>> {
        use rayon::prelude::*;
        if jobs <= 1 {
            return docs.iter().map(|(id, t)| self.explain(id, t, top_k)).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| LameError::config(format!("thread pool: {e}")))?;
        pool.install(|| docs.par_iter().map(|(id, t)| self.explain(id, t, top_k)).collect())
    }
}

/// Splits `text` into plain stretches and the words of `label`, in order.
fn segments<'l>(text: &str, label: &'l LabelExplanation) -> Vec<(String, Option<&'l WordWeight>)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut at = 0;
    for w in &label.words {
        let (a, b) = (w.span.0.min(chars.len()), w.span.1.min(chars.len()));
        if a < at {
            continue;
        }
        if a > at {
            out.push((chars[at..a].iter().collect(), None));
        }
        out.push((chars[a..b].iter().collect(), Some(w)));
        at = b;
    }
    if at < chars.len() {
        out.push((chars[at..].iter().collect(), None));
    }
    out
}

const ANSI_BG: [u8; 5] = [0, 224, 217, 210, 196];

/// Terminal rendering: one line per predicted label, shaded words.
pub fn render_terminal(e: &Explanation, color: bool) -> String {
    let mut s = String::new();
    writeln!(s, "{}", e.document_id).unwrap();
    for label in &e.labels {
        write!(s, "  {} ({}) p={:.3}: ", label.label_id, label.name, label.probability).unwrap();
        for (piece, w) in segments(&e.text, label) {
            match (w.map_or(0, |w| w.level), color) {
                (0, _) => s.push_str(&piece),
                (l, true) => write!(s, "\x1b[48;5;{}m\x1b[30m{piece}\x1b[0m", ANSI_BG[l as usize]).unwrap(),
                (l, false) => write!(s, "[{piece}]{l}").unwrap(),
            }
        }
        s.push('\n');
    }
    s
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone HTML page with one paragraph per (document, predicted label).
pub fn render_html(explanations: &[Explanation]) -> String {
    let mut s = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>attention explanations</title>\n\
         <style>body{font-family:serif;max-width:50em;margin:2em auto}\
         .w1{background:rgba(220,40,40,.2)}.w2{background:rgba(220,40,40,.4)}\
         .w3{background:rgba(220,40,40,.6)}.w4{background:rgba(220,40,40,.85)}\
         h3{font-family:sans-serif;font-size:1em}</style></head><body>\n",
    );
    for e in explanations {
        for label in &e.labels {
            writeln!(
                s,
                "<h3>{} &mdash; {} ({}) p={:.3}</h3>",
                html_escape(&e.document_id),
                html_escape(&label.label_id),
                html_escape(&label.name),
                label.probability
            )
            .unwrap();
            s.push_str("<p>");
            for (piece, w) in segments(&e.text, label) {
                match w {
                    Some(w) if w.level > 0 => write!(
                        s,
                        "<span class=\"w{}\" title=\"{:.4}\">{}</span>",
                        w.level,
                        w.weight,
                        html_escape(&piece)
                    )
                    .unwrap(),
                    _ => s.push_str(&html_escape(&piece)),
                }
            }
            s.push_str("</p>\n");
        }
    }
    s.push_str("</body></html>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, TaskMode};

    fn vocab() -> Vocab {
        let toks = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "fever", "cough", "abs", "##cess", "the", "of"];
        Vocab::from_tokens(toks.map(String::from).to_vec()).unwrap()
    }

    fn labels() -> Vec<LabelInfo> {
        ["fever of the", "cough", "abscess"]
            .iter()
            .enumerate()
            .map(|(i, d)| LabelInfo {
                id: format!("L{i}"),
                name: format!("n{i}"),
                description: d.to_string(),
            })
            .collect()
    }

    fn model(task: TaskMode) -> LameModel {
        let mut c = ModelConfig::desk_scale(10, 3, task);
        c.hidden = 8;
        c.encoder_heads = 2;
        c.label_heads = 2;
        c.max_seq_len = 16;
        LameModel::new(c, 5).unwrap()
    }

    #[test]
    fn levels_follow_ranks() {
        let w = [0.1, 0.5, 0.05, 0.2, 0.15];
        assert_eq!(quantile_levels(&w, 0), vec![0; 5]);
        assert_eq!(quantile_levels(&w, 1), vec![0, 4, 0, 0, 0]);
        assert_eq!(quantile_levels(&w, 5), vec![1, 4, 1, 3, 2]);
        assert!(quantile_levels(&w, 9).iter().all(|&l| l <= MAX_LEVEL));
    }

    #[test]
    fn records_are_distributions_with_spans() {
        let m = model(TaskMode::MultiClass);
        let v = vocab();
        let l = labels();
        let ex = Explainer::new(&m, &v, &l, "ck").unwrap();
        let text = "The  Abscess of\tfever";
        let e = ex.explain("d1", text, 2).unwrap();
        assert_eq!(e.labels.len(), 1);
        assert_eq!(e.strategy, "last_block_mean_heads");
        let lab = &e.labels[0];
        let total: f64 = lab.tokens.iter().map(|t| t.weight).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(lab.tokens.len(), 7);
        let words: Vec<&str> = lab.words.iter().map(|w| w.word.as_str()).collect();
        assert_eq!(words, vec!["the", "abscess", "of", "fever"]);
        let chars: Vec<char> = text.chars().collect();
        let surface: Vec<String> = lab.words.iter().map(|w| chars[w.span.0..w.span.1].iter().collect()).collect();
        assert_eq!(surface, vec!["The", "Abscess", "of", "fever"]);
        assert_eq!(lab.words.iter().filter(|w| w.level > 0).count(), 2);
        assert_eq!(e.config_hash, config_hash(&m.config));

        let none = ex.explain("d1", text, 0).unwrap();
        assert!(none.labels[0].words.iter().all(|w| w.level == 0));
        assert!(!render_terminal(&none, true).contains("\x1b["));
        assert!(matches!(ex.explain("d2", "  \t ", 3), Err(LameError::Input(_))));
    }

    #[test]
    fn renderings_keep_the_text() {
        let m = model(TaskMode::MultiLabel);
        let v = vocab();
        let l = labels();
        let mut ex = Explainer::new(&m, &v, &l, "ck").unwrap();
        ex.threshold = 0.0;
        let e = ex.explain("doc<1>", "fever & cough", 1).unwrap();
        assert_eq!(e.labels.len(), 3);
        let plain = render_terminal(&e, false);
        assert_eq!(plain.lines().count(), 4);
        assert!(plain.contains("]4"));
        let html = render_html(std::slice::from_ref(&e));
        assert!(html.contains("doc&lt;1&gt;"));
        assert!(html.contains("&amp;"));
        assert_eq!(html.matches("class=\"w4\"").count(), 3);
        let parsed: Explanation = serde_json::from_str(e.to_json_line().trim()).unwrap();
        assert_eq!(parsed, e);
    }

    #[test]
    fn parallel_matches_serial() {
        let m = model(TaskMode::MultiClass);
        let v = vocab();
        let l = labels();
        let ex = Explainer::new(&m, &v, &l, "ck").unwrap();
        let docs: Vec<(String, String)> = (0..7).map(|i| (format!("d{i}"), "fever of the cough ".repeat(i + 1))).collect();
        assert_eq!(ex.explain_all(&docs, 3, 1).unwrap(), ex.explain_all(&docs, 3, 3).unwrap());
    }
}
