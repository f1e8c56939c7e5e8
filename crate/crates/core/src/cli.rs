//! The `lame` command line.
//!
//! Every command accepts `--config <file.toml>` holding a [`RunConfig`];
//! flags given on the command line override the file.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{config_hash, load_checkpoint, save_checkpoint, sha256_hex, LoadedCheckpoint};
use crate::config::ModelConfig;
use crate::data::{load_corpus, split, Corpus, CorpusFormat, Split};
use crate::error::{LameError, Result};
use crate::explain::{render_html, render_terminal, Explainer};
use crate::model::LameModel;
use crate::synthetic::{make_synthetic_corpus, SyntheticSpec};
use crate::tokenizer::{build_vocab, tokenize, Vocab};
use crate::training::{evaluate, train, EvalMetrics, LossKind, PreparedData, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub format: Option<CorpusFormat>,
    /// train:dev:test proportions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            format: None,
            split: [7.0, 1.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub descriptions: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Everything one run needs, in file form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub freeze_encoder: bool,
    pub jobs: usize,
    pub vocab_size_target: usize,
    pub vocab_min_frequency: usize,
    pub data: DataConfig,
    pub paths: PathsConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            freeze_encoder: false,
            jobs: 1,
            vocab_size_target: 1000,
            vocab_min_frequency: 1,
            data: DataConfig::default(),
            paths: PathsConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LameError::config(format!("run config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LameError::config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LameError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| LameError::config(format!("{}: {e}", path.display())))
    }

    fn format(&self) -> Result<CorpusFormat> {
        self.data
            .format
            .ok_or_else(|| LameError::config("corpus format not given (use --format hoc|disease5)"))
    }

    fn split_ratio(&self) -> (f64, f64, f64) {
        let [a, b, c] = self.data.split;
        (a, b, c)
    }
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| LameError::config(format!("missing --{flag}")))
}

fn need_existing<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    let p = need(p, flag)?;
    if !p.exists() {
        return Err(LameError::input(format!("--{flag} {} does not exist", p.display())));
    }
    Ok(p)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| LameError::io(path, e))
}

#[derive(Parser, Debug)]
#[command(name = "lame", version, about = "Label attention over a transformer encoder")]
pub struct Cli {
    /// Run configuration file (TOML); flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling and splitting.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn a subword vocabulary from a corpus and its label descriptions.
    BuildVocab(BuildVocabArgs),
    /// Train a model; writes best and final checkpoints and a training log.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a corpus.
    Eval(EvalArgs),
    /// Predict labels for raw documents.
    Predict(PredictArgs),
    /// Show which words drove each predicted label.
    Explain(ExplainArgs),
    /// Write a planted-keyword corpus and its descriptions.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
    /// Corpus layout: hoc (multi-label) or disease5 (multi-class).
    #[arg(long)]
    pub format: Option<CorpusFormat>,
}

impl DataArgs {
    fn apply(&self, rc: &mut RunConfig) {
        if let Some(p) = &self.corpus {
            rc.paths.corpus = Some(p.clone());
        }
        if let Some(p) = &self.descriptions {
            rc.paths.descriptions = Some(p.clone());
        }
        if let Some(f) = self.format {
            rc.data.format = Some(f);
        }
    }
}

#[derive(Args, Debug)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Target vocabulary size, specials included.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub min_frequency: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// train:dev:test proportions, e.g. 7,1,2.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub split: Option<Vec<f64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// cross_entropy, bce or f_measure.
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub lr_encoder: Option<f64>,
    #[arg(long)]
    pub lr_label_attention: Option<f64>,
    #[arg(long)]
    pub lr_head: Option<f64>,
    /// Train only the label attention and head on top of a fixed encoder.
    #[arg(long)]
    pub freeze_encoder: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Which part of the split to score: train, dev, test or all.
    #[arg(long, default_value = "test")]
    pub on: String,
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub split: Option<Vec<f64>>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Metrics as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-document predictions as JSON lines.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InputArgs {
    /// A single document.
    #[arg(long, conflicts_with = "input")]
    pub text: Option<String>,
    /// One document per line, optionally `id<TAB>text`.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

impl InputArgs {
    fn documents(&self) -> Result<Vec<(String, String)>> {
        if let Some(t) = &self.text {
            return Ok(vec![("text".to_string(), t.clone())]);
        }
        let path = self
            .input
            .as_deref()
            .ok_or_else(|| LameError::config("give --text or --input"))?;
        let text = std::fs::read_to_string(path).map_err(|e| LameError::io(path, e))?;
        let docs: Vec<_> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|(i, l)| match l.split_once('\t') {
                Some((id, body)) => (id.to_string(), body.to_string()),
                None => (format!("line-{}", i + 1), l.to_string()),
            })
            .collect();
        if docs.is_empty() {
            return Err(LameError::input(format!("{} holds no documents", path.display())));
        }
        Ok(docs)
    }
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Words highlighted per label; 0 writes the records without highlights.
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Explanation records as JSON lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Standalone HTML rendering.
    #[arg(long)]
    pub html: Option<PathBuf>,
    /// Mark highlights with brackets instead of terminal colours.
    #[arg(long)]
    pub no_color: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub labels: usize,
    #[arg(long, default_value_t = 40)]
    pub docs_per_label: usize,
    #[arg(long, default_value_t = 60)]
    pub noise_words: usize,
    #[arg(long, default_value_t = 1)]
    pub keywords: usize,
    #[arg(long)]
    pub multi_label: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut rc = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        rc.seed = s;
    }
    match cli.command {
        Command::BuildVocab(a) => cmd_build_vocab(rc, a),
        Command::Train(a) => cmd_train(rc, a),
        Command::Eval(a) => cmd_eval(rc, a),
        Command::Predict(a) => cmd_predict(rc, a),
        Command::Explain(a) => cmd_explain(rc, a),
        Command::Synth(a) => cmd_synth(rc, a),
    }
}

fn load_data(rc: &RunConfig) -> Result<Corpus> {
    let corpus = need_existing(&rc.paths.corpus, "corpus")?;
    let descriptions = need_existing(&rc.paths.descriptions, "descriptions")?;
    load_corpus(corpus, rc.format()?, descriptions)
}

fn load_vocab(rc: &RunConfig) -> Result<Vocab> {
    Vocab::load(need_existing(&rc.paths.vocab, "vocab")?)
}

fn load_model(rc: &RunConfig) -> Result<(LoadedCheckpoint, Vocab)> {
    let ck = load_checkpoint(need_existing(&rc.paths.checkpoint, "checkpoint")?)?;
    let vocab = load_vocab(rc)?;
    ck.check_vocab(&vocab)?;
    Ok((ck, vocab))
}

fn apply_split(rc: &mut RunConfig, ratio: &Option<Vec<f64>>) {
    if let Some(r) = ratio {
        rc.data.split = [r[0], r[1], r[2]];
    }
}

fn cmd_build_vocab(mut rc: RunConfig, a: BuildVocabArgs) -> Result<()> {
    a.data.apply(&mut rc);
    let corpus = load_data(&rc)?;
    let size = a.size.unwrap_or(rc.vocab_size_target);
    let min_freq = a.min_frequency.unwrap_or(rc.vocab_min_frequency);
    let texts = corpus
        .instances
        .iter()
        .map(|i| i.text.as_str())
        .chain(corpus.labels.iter().map(|l| l.description.as_str()));
    let vocab = build_vocab(texts, size, min_freq)?;
    vocab.save(&a.out)?;
    println!("vocabulary size {} written to {}", vocab.len(), a.out.display());
    Ok(())
}

/// Summary written next to the checkpoints of a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub vocab_hash: String,
    pub best_checkpoint_hash: String,
    pub final_checkpoint_hash: String,
    pub best_epoch: Option<usize>,
    pub best_dev_score: Option<f64>,
    pub total_steps: usize,
    pub loss: LossKind,
    pub frozen_encoder: bool,
    pub split: Split,
}

fn cmd_train(mut rc: RunConfig, a: TrainArgs) -> Result<()> {
    a.data.apply(&mut rc);
    apply_split(&mut rc, &a.split);
    if let Some(p) = &a.vocab {
        rc.paths.vocab = Some(p.clone());
    }
    if let Some(p) = &a.out_dir {
        rc.paths.out_dir = Some(p.clone());
    }
    let t = &mut rc.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.loss {
        t.loss = Some(v);
    }
    if let Some(v) = a.lr_encoder {
        t.lr_encoder_max = v;
    }
    if let Some(v) = a.lr_label_attention {
        t.lr_label_attention_max = v;
    }
    if let Some(v) = a.lr_head {
        t.lr_head_constant = v;
    }
    if a.freeze_encoder {
        rc.freeze_encoder = true;
    }
    if let Some(j) = a.jobs {
        rc.jobs = j;
    }
    rc.train.seed = rc.seed;

    let corpus = load_data(&rc)?;
    let vocab = load_vocab(&rc)?;
    rc.train.validate()?;
    rc.train.resolved_loss(corpus.task)?;
    let out_dir = need(&rc.paths.out_dir, "out-dir")?.to_path_buf();
    std::fs::create_dir_all(&out_dir).map_err(|e| LameError::io(&out_dir, e))?;

    rc.model.vocab_size = vocab.len();
    rc.model.num_labels = corpus.labels.len();
    rc.model.task = corpus.task;
    let mut model = LameModel::new(rc.model.clone(), rc.seed)?;
    if rc.freeze_encoder {
        crate::training::freeze_encoder(&mut model);
    }
    let data = PreparedData::from_corpus(&corpus, &vocab, rc.model.max_seq_len);
    let sp = split(corpus.len(), rc.split_ratio(), rc.seed)?;
    println!(
        "training on {} documents ({} dev, {} test), {} labels, vocabulary {}",
        sp.train.len(),
        sp.dev.len(),
        sp.test.len(),
        corpus.labels.len(),
        vocab.len()
    );

    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::fs::File::create(&log_path).map_err(|e| LameError::io(&log_path, e))?;
    let mut log_err = None;
    let outcome = train(&mut model, &data, &sp, &rc.train, |r| {
        let dev = match r.dev {
            Some(m) => format!("{:.4}", m.score()),
            None => "-".into(),
        };
        println!("epoch {:>3}  step {:>5}  loss {:.6}  dev {}", r.epoch, r.step, r.train_loss, dev);
        let line = serde_json::to_string(r).expect("serializable record") + "\n";
        if let Err(e) = log.write_all(line.as_bytes()) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(LameError::io(&log_path, e));
    }

    let vocab_hash = vocab.hash();
    let final_hash = save_checkpoint(&out_dir.join("final.ckpt"), &model, &vocab_hash, &corpus.labels)?;
    let mut best_model = model.clone();
    best_model.store.copy_values_from(&outcome.best)?;
    let best_hash = save_checkpoint(&out_dir.join("best.ckpt"), &best_model, &vocab_hash, &corpus.labels)?;

    rc.paths.checkpoint = Some(out_dir.join("best.ckpt"));
    write_file(&out_dir.join("run.toml"), rc.to_toml()?)?;
    let summary = TrainSummary {
        config_hash: config_hash(&rc.model),
        vocab_hash,
        best_checkpoint_hash: best_hash,
        final_checkpoint_hash: final_hash,
        best_epoch: outcome.report.best_epoch,
        best_dev_score: outcome.report.best_dev_score,
        total_steps: outcome.report.total_steps,
        loss: outcome.report.loss,
        frozen_encoder: rc.freeze_encoder,
        split: sp,
    };
    write_file(
        &out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializable summary") + "\n",
    )?;
    match (summary.best_epoch, summary.best_dev_score) {
        (Some(e), Some(s)) => println!("best dev score {s:.4} at epoch {e}"),
        _ => println!("no dev split; best checkpoint is the final one"),
    }
    println!("checkpoints written to {}", out_dir.display());
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub document_id: String,
    pub predicted: Vec<String>,
    pub probabilities: Vec<f64>,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub threshold: f64,
    pub metrics: EvalMetrics,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

fn prediction_records(
    ck: &LoadedCheckpoint,
    ids: &[String],
    preds: &[crate::model::PredictionValues],
    threshold: f64,
) -> Vec<PredictionRecord> {
    let chash = config_hash(&ck.model.config);
    ids.iter()
        .zip(preds)
        .map(|(id, p)| PredictionRecord {
            document_id: id.clone(),
            predicted: p
                .decided(ck.model.config.task, threshold)
                .into_iter()
                .map(|l| ck.labels[l].id.clone())
                .collect(),
            probabilities: p.probabilities.clone(),
            config_hash: chash.clone(),
            checkpoint_hash: ck.hash.clone(),
        })
        .collect()
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|r| serde_json::to_string(r).expect("serializable record") + "\n")
        .collect()
}

fn cmd_eval(mut rc: RunConfig, a: EvalArgs) -> Result<()> {
    a.data.apply(&mut rc);
    apply_split(&mut rc, &a.split);
    if let Some(p) = &a.vocab {
        rc.paths.vocab = Some(p.clone());
    }
    if let Some(p) = &a.checkpoint {
        rc.paths.checkpoint = Some(p.clone());
    }
    let threshold = a.threshold.unwrap_or(rc.train.threshold);
    let jobs = a.jobs.unwrap_or(rc.jobs);
    let (ck, vocab) = load_model(&rc)?;
    let corpus = load_data(&rc)?;
    ck.check_labels(&corpus.labels)?;
    if corpus.task != ck.model.config.task {
        return Err(LameError::compat(format!(
            "checkpoint is a {:?} model, the corpus is {:?}",
            ck.model.config.task, corpus.task
        )));
    }
    let sp = split(corpus.len(), rc.split_ratio(), rc.seed)?;
    let indices = match a.on.as_str() {
        "train" => sp.train,
        "dev" => sp.dev,
        "test" => sp.test,
        "all" => (0..corpus.len()).collect(),
        other => return Err(LameError::config(format!("--on {other:?}: expected train, dev, test or all"))),
    };
    let data = PreparedData::from_corpus(&corpus, &vocab, ck.model.config.max_seq_len);
    let (metrics, preds) = evaluate(&ck.model, &data, &indices, threshold, jobs)?;
    match (metrics.accuracy, metrics.micro) {
        (Some(acc), _) => println!("{} documents  accuracy {acc:.4}", metrics.count),
        (_, Some(m)) => println!(
            "{} documents  micro precision {:.4}  recall {:.4}  f1 {:.4}",
            metrics.count, m.precision, m.recall, m.f1
        ),
        _ => {}
    }
    let report = EvalReport {
        split: a.on.clone(),
        threshold,
        metrics,
        config_hash: config_hash(&ck.model.config),
        checkpoint_hash: ck.hash.clone(),
    };
    if let Some(p) = &a.out {
        write_file(p, serde_json::to_string_pretty(&report).expect("serializable report") + "\n")?;
    }
    if let Some(p) = &a.predictions {
        let ids: Vec<String> = indices.iter().map(|&i| data.ids[i].clone()).collect();
        write_file(p, jsonl(&prediction_records(&ck, &ids, &preds, threshold)))?;
    }
    Ok(())
}

fn cmd_predict(mut rc: RunConfig, a: PredictArgs) -> Result<()> {
    if let Some(p) = &a.vocab {
        rc.paths.vocab = Some(p.clone());
    }
    if let Some(p) = &a.checkpoint {
        rc.paths.checkpoint = Some(p.clone());
    }
    let threshold = a.threshold.unwrap_or(rc.train.threshold);
    let jobs = a.jobs.unwrap_or(rc.jobs);
    let (ck, vocab) = load_model(&rc)?;
    let docs = a.input.documents()?;
    let max_len = ck.model.config.max_seq_len;
    let toks: Vec<_> = docs.iter().map(|(_, t)| tokenize(t, &vocab, max_len)).collect();
    if let Some(i) = toks.iter().position(|t| t.content_len() == 0) {
        return Err(LameError::input(format!("document {:?} has no tokens", docs[i].0)));
    }
    let descs: Vec<_> = ck.labels.iter().map(|l| tokenize(&l.description, &vocab, max_len)).collect();
    let preds = ck.model.predict_parallel(&toks, &descs, jobs)?;
    let ids: Vec<String> = docs.into_iter().map(|(id, _)| id).collect();
    let out = jsonl(&prediction_records(&ck, &ids, &preds, threshold));
    match &a.out {
        Some(p) => write_file(p, out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn cmd_explain(mut rc: RunConfig, a: ExplainArgs) -> Result<()> {
    if let Some(p) = &a.vocab {
        rc.paths.vocab = Some(p.clone());
    }
    if let Some(p) = &a.checkpoint {
        rc.paths.checkpoint = Some(p.clone());
    }
    let jobs = a.jobs.unwrap_or(rc.jobs);
    let (ck, vocab) = load_model(&rc)?;
    let docs = a.input.documents()?;
    let mut explainer = Explainer::new(&ck.model, &vocab, &ck.labels, ck.hash.clone())?;
    explainer.threshold = a.threshold.unwrap_or(rc.train.threshold);
    let explanations = explainer.explain_all(&docs, a.top_k, jobs)?;
    if a.top_k > 0 {
        for e in &explanations {
            print!("{}", render_terminal(e, !a.no_color));
        }
    }
    let records = explanations.iter().map(|e| e.to_json_line()).collect::<String>();
    match &a.out {
        Some(p) => write_file(p, records)?,
        None if a.top_k == 0 => print!("{records}"),
        None => {}
    }
    if let Some(p) = &a.html {
        write_file(p, render_html(&explanations))?;
    }
    Ok(())
}

fn cmd_synth(rc: RunConfig, a: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_labels: a.labels,
        docs_per_label: a.docs_per_label,
        vocab_noise_size: a.noise_words,
        keywords_per_label: a.keywords,
        multi_label: a.multi_label,
        seed: rc.seed,
        ..Default::default()
    };
    if [spec.num_labels, spec.docs_per_label, spec.vocab_noise_size, spec.keywords_per_label].contains(&0) {
        return Err(LameError::config("synthetic corpus counts must be at least 1"));
    }
    let s = make_synthetic_corpus(&spec);
    std::fs::create_dir_all(&a.out_dir).map_err(|e| LameError::io(&a.out_dir, e))?;
    s.corpus
        .write(&a.out_dir.join("corpus.tsv"), &a.out_dir.join("descriptions.tsv"))?;
    let keywords = serde_json::to_string_pretty(&s.keywords).expect("serializable keywords") + "\n";
    write_file(&a.out_dir.join("keywords.json"), &keywords)?;
    println!(
        "{} documents, {} labels, format {} written to {} (keywords sha256 {})",
        s.corpus.len(),
        s.corpus.labels.len(),
        s.corpus.format(),
        a.out_dir.display(),
        &sha256_hex(keywords.as_bytes())[..12]
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trips() {
        let mut rc = RunConfig::default();
        rc.seed = 7;
        rc.data.format = Some(CorpusFormat::Hoc);
        rc.paths.corpus = Some("c.tsv".into());
        rc.model.init_std = 0.1;
        rc.train.loss = Some(LossKind::Bce);
        rc.train.lr_label_attention_max = 0.04;
        rc.train.weight_decay = 1.0 / 3.0;
        let text = rc.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), rc);
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(LameError::Config(_))));
        assert!(RunConfig::from_toml("[model]\nhidden = \"wide\"").is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
