//! Python bindings: `import lame`.

use std::path::PathBuf;

use lame_core::checkpoint::{config_hash, load_checkpoint, save_checkpoint};
use lame_core::data::{load_corpus, split, Corpus as CoreCorpus, CorpusFormat, Gold, LabelInfo};
use lame_core::explain::Explainer;
use lame_core::heads::SoftCounts;
use lame_core::synthetic::{make_synthetic_corpus, SyntheticSpec};
use lame_core::tokenizer::{build_vocab, id_strings, tokenize as core_tokenize, Vocab as CoreVocab};
use lame_core::training::{evaluate, freeze_encoder, train, LossKind, PreparedData, TrainConfig};
use lame_core::{metrics, training, LameError, LameModel, ModelConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: LameError) -> PyErr {
    match e {
        LameError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(module = "lame", skip_from_py_object)]
#[derive(Clone)]
pub struct Vocab {
    inner: CoreVocab,
}

#[pymethods]
impl Vocab {
    /// Builds a WordPiece vocabulary of at most `size` entries from `texts`.
    #[staticmethod]
    #[pyo3(signature = (texts, size, min_frequency = 1))]
    fn build(texts: Vec<String>, size: usize, min_frequency: usize) -> PyResult<Self> {
        let inner = build_vocab(texts.iter().map(String::as_str), size, min_frequency).map_err(err)?;
        Ok(Vocab { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Vocab {
            inner: CoreVocab::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Token ids and token strings of `text`, with `[CLS]` and `[SEP]`.
#[pyfunction]
#[pyo3(signature = (text, vocab, max_len = 128))]
fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> (Vec<usize>, Vec<String>) {
    let t = core_tokenize(text, &vocab.inner, max_len);
    let strings = id_strings(&t.ids, &vocab.inner);
    (t.ids, strings)
}

#[pyclass(module = "lame", skip_from_py_object)]
#[derive(Clone)]
pub struct Corpus {
    inner: CoreCorpus,
    keywords: Option<Vec<Vec<String>>>,
}

#[pymethods]
impl Corpus {
    /// Loads a corpus file and its label descriptions; `format` is
    /// "hoc" (multi-label) or "disease5" (multi-class).
    #[staticmethod]
    fn load(corpus: PathBuf, descriptions: PathBuf, format: &str) -> PyResult<Self> {
        let format: CorpusFormat = format.parse().map_err(err)?;
        Ok(Corpus {
            inner: load_corpus(&corpus, format, &descriptions).map_err(err)?,
            keywords: None,
        })
    }

    fn write(&self, corpus: PathBuf, descriptions: PathBuf) -> PyResult<()> {
        self.inner.write(&corpus, &descriptions).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn multi_label(&self) -> bool {
        self.inner.task == lame_core::TaskMode::MultiLabel
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.instances.iter().map(|i| i.id.clone()).collect()
    }

    #[getter]
    fn texts(&self) -> Vec<String> {
        self.inner.instances.iter().map(|i| i.text.clone()).collect()
    }

    /// `(id, name, description)` per label, in model order.
    #[getter]
    fn labels(&self) -> Vec<(String, String, String)> {
        self.inner
            .labels
            .iter()
            .map(|l| (l.id.clone(), l.name.clone(), l.description.clone()))
            .collect()
    }

    /// Gold label indices per document.
    #[getter]
    fn golds(&self) -> Vec<Vec<usize>> {
        self.inner
            .instances
            .iter()
            .map(|i| match &i.gold {
                Gold::MultiClass(c) => vec![*c],
                Gold::MultiLabel(flags) => (0..flags.len()).filter(|&k| flags[k]).collect(),
            })
            .collect()
    }

    /// Planted keywords per label for synthetic corpora.
    #[getter]
    fn keywords(&self) -> Option<Vec<Vec<String>>> {
        self.keywords.clone()
    }
}

#[pyfunction]
#[pyo3(signature = (num_labels = 5, docs_per_label = 40, multi_label = false, keywords_per_label = 1, noise_words = 60, seed = 0))]
fn synthetic_corpus(
    num_labels: usize,
    docs_per_label: usize,
    multi_label: bool,
    keywords_per_label: usize,
    noise_words: usize,
    seed: u64,
) -> PyResult<Corpus> {
    if [num_labels, docs_per_label, keywords_per_label, noise_words].contains(&0) {
        return Err(PyValueError::new_err("synthetic corpus counts must be at least 1"));
    }
    let s = make_synthetic_corpus(&SyntheticSpec {
        num_labels,
        docs_per_label,
        multi_label,
        keywords_per_label,
        vocab_noise_size: noise_words,
        seed,
        ..Default::default()
    });
    Ok(Corpus {
        inner: s.corpus,
        keywords: Some(s.keywords),
    })
}

#[pyclass(module = "lame")]
pub struct Model {
    model: LameModel,
    vocab: CoreVocab,
    labels: Vec<LabelInfo>,
}

impl Model {
    fn prepared(&self, corpus: &Corpus) -> PyResult<PreparedData> {
        let ids: Vec<&str> = corpus.inner.labels.iter().map(|l| l.id.as_str()).collect();
        let ours: Vec<&str> = self.labels.iter().map(|l| l.id.as_str()).collect();
        if ids != ours {
            return Err(PyValueError::new_err(format!("corpus labels {ids:?} differ from model labels {ours:?}")));
        }
        Ok(PreparedData::from_corpus(&corpus.inner, &self.vocab, self.model.config.max_seq_len))
    }
}

#[pymethods]
impl Model {
    /// A fresh model for the labels of `corpus`. `config` is TOML with any
    /// model fields to override, e.g. `"hidden = 32\ninit_std = 0.1"`.
    #[new]
    #[pyo3(signature = (corpus, vocab, seed = 0, config = None))]
    fn new(corpus: &Corpus, vocab: &Vocab, seed: u64, config: Option<&str>) -> PyResult<Self> {
        let mut c: ModelConfig = toml::from_str(config.unwrap_or("")).map_err(|e| PyValueError::new_err(e.to_string()))?;
        c.vocab_size = vocab.inner.len();
        c.num_labels = corpus.inner.labels.len();
        c.task = corpus.inner.task;
        Ok(Model {
            model: LameModel::new(c, seed).map_err(err)?,
            vocab: vocab.inner.clone(),
            labels: corpus.inner.labels.clone(),
        })
    }

    /// Trains on a seeded train/dev/test split of `corpus`, keeps the weights
    /// with the best dev score, and returns the per-epoch log.
    #[pyo3(signature = (
        corpus, epochs = 30, batch_size = 42, lr_encoder = 5e-5, lr_label_attention = 4e-2, lr_head = 1e-3,
        loss = None, seed = 0, split_ratio = (7.0, 1.0, 2.0), freeze = false
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        corpus: &Corpus,
        epochs: usize,
        batch_size: usize,
        lr_encoder: f64,
        lr_label_attention: f64,
        lr_head: f64,
        loss: Option<&str>,
        seed: u64,
        split_ratio: (f64, f64, f64),
        freeze: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let data = self.prepared(corpus)?;
        let cfg = TrainConfig {
            epochs,
            batch_size,
            lr_encoder_max: lr_encoder,
            lr_label_attention_max: lr_label_attention,
            lr_head_constant: lr_head,
            loss: loss.map(str::parse::<LossKind>).transpose().map_err(err)?,
            seed,
            ..Default::default()
        };
        let sp = split(corpus.inner.len(), split_ratio, seed).map_err(err)?;
        if freeze {
            freeze_encoder(&mut self.model);
        }
        let out = train(&mut self.model, &data, &sp, &cfg, |_| {}).map_err(err)?;
        self.model.store.copy_values_from(&out.best).map_err(err)?;

        let d = PyDict::new(py);
        d.set_item("best_epoch", out.report.best_epoch)?;
        d.set_item("best_dev_score", out.report.best_dev_score)?;
        let losses: Vec<f64> = out.report.epochs.iter().map(|e| e.train_loss).collect();
        let dev: Vec<Option<f64>> = out.report.epochs.iter().map(|e| e.dev.as_ref().map(|m| m.score())).collect();
        d.set_item("train_loss", losses)?;
        d.set_item("dev_score", dev)?;
        let mut scores = Vec::new();
        for (name, idx) in [("train", &sp.train), ("test", &sp.test)] {
            if !idx.is_empty() {
                scores.push((name, evaluate(&self.model, &data, idx, cfg.threshold, 1).map_err(err)?.0.score()));
            }
        }
        for (name, s) in scores {
            d.set_item(format!("{name}_score"), s)?;
        }
        d.set_item("report_jsonl", out.report.to_jsonl())?;
        Ok(d)
    }

    /// Label probabilities for each text.
    fn predict(&self, texts: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
        let max_len = self.model.config.max_seq_len;
        let docs: Vec<_> = texts.iter().map(|t| core_tokenize(t, &self.vocab, max_len)).collect();
        let descs: Vec<_> = self.labels.iter().map(|l| core_tokenize(&l.description, &self.vocab, max_len)).collect();
        let preds = self.model.predict(&docs, &descs).map_err(err)?;
        Ok(preds.into_iter().map(|p| p.probabilities).collect())
    }

    /// One explanation record as a JSON string.
    #[pyo3(signature = (text, top_k = 5, document_id = "doc"))]
    fn explain(&self, text: &str, top_k: usize, document_id: &str) -> PyResult<String> {
        let e = Explainer::new(&self.model, &self.vocab, &self.labels, "").map_err(err)?;
        Ok(e.explain(document_id, text, top_k).map_err(err)?.to_json_line().trim_end().to_string())
    }

    /// Writes a checkpoint and returns its SHA-256.
    fn save(&self, path: PathBuf) -> PyResult<String> {
        save_checkpoint(&path, &self.model, &self.vocab.hash(), &self.labels).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf, vocab: &Vocab) -> PyResult<Self> {
        let ck = load_checkpoint(&path).map_err(err)?;
        ck.check_vocab(&vocab.inner).map_err(err)?;
        Ok(Model {
            model: ck.model,
            vocab: vocab.inner.clone(),
            labels: ck.labels,
        })
    }

    fn config_hash(&self) -> String {
        config_hash(&self.model.config)
    }

    fn num_parameters(&self) -> usize {
        self.model.store.numel()
    }
}

/// Micro precision, recall and F1 over boolean label matrices.
#[pyfunction]
fn micro_prf(preds: Vec<Vec<bool>>, golds: Vec<Vec<bool>>) -> PyResult<(f64, f64, f64)> {
    let p = metrics::micro_prf(&preds, &golds).map_err(err)?;
    Ok((p.precision, p.recall, p.f1))
}

#[pyfunction]
fn accuracy(preds: Vec<usize>, golds: Vec<usize>) -> PyResult<f64> {
    metrics::accuracy(&preds, &golds).map_err(err)
}

/// Slanted triangular learning rate at `step` of `total_steps`.
#[pyfunction]
#[pyo3(signature = (step, total_steps, lr_max, cut_frac = 0.1, ratio = 32.0))]
fn stlr(step: usize, total_steps: usize, lr_max: f64, cut_frac: f64, ratio: f64) -> PyResult<f64> {
    training::stlr(step, total_steps, lr_max, cut_frac, ratio).map_err(err)
}

/// `1 - (F_pos + F_neg) / 2` from soft counts over a probability matrix.
#[pyfunction]
#[pyo3(signature = (probabilities, golds, eps = 1e-8))]
fn f_measure_loss(probabilities: Vec<Vec<f64>>, golds: Vec<Vec<f64>>, eps: f64) -> PyResult<f64> {
    Ok(SoftCounts::from_probabilities(&probabilities, &golds).map_err(err)?.f_measure_loss(eps))
}

#[pymodule]
fn lame(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vocab>()?;
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(micro_prf, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(stlr, m)?)?;
    m.add_function(wrap_pyfunction!(f_measure_loss, m)?)?;
    Ok(())
}
