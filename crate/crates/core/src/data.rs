//! Corpus files, label descriptions and deterministic splits.
//!
//! Corpus files are UTF-8, tab separated, one instance per line; blank lines
//! and lines starting with `#` are skipped.
//!
//! * multi-label (`hoc`): `id <TAB> text <TAB> label_id,label_id,...` (label field may be empty)
//! * multi-class (`disease5`): `class_index <TAB> text`, the index counting
//!   from 0 in description-file order
//! * descriptions: `label_id <TAB> name <TAB> description`

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TaskMode;
use crate::error::{LameError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInfo {
    pub id: String,
    pub name: String,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    MultiLabel(Vec<bool>),
    MultiClass(usize),
}

impl Gold {
    /// 0/1 vector over `labels` entries.
    pub fn to_vector(&self, labels: usize) -> Vec<f64> {
        match self {
            Gold::MultiLabel(v) => v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            Gold::MultiClass(c) => (0..labels).map(|i| if i == *c { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn to_flags(&self, labels: usize) -> Vec<bool> {
        self.to_vector(labels).into_iter().map(|v| v == 1.0).collect()
    }

    pub fn class(&self) -> Option<usize> {
        match self {
            Gold::MultiClass(c) => Some(*c),
            Gold::MultiLabel(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub text: String,
    pub gold: Gold,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub instances: Vec<Instance>,
    pub labels: Vec<LabelInfo>,
    pub task: TaskMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// Multi-label rows: id, text, comma-separated label ids.
    Hoc,
    /// Multi-class rows: class index, text.
    Disease5,
}

impl CorpusFormat {
    pub fn task(self) -> TaskMode {
        match self {
            CorpusFormat::Hoc => TaskMode::MultiLabel,
            CorpusFormat::Disease5 => TaskMode::MultiClass,
        }
    }

    pub fn for_task(task: TaskMode) -> Self {
        match task {
            TaskMode::MultiLabel => CorpusFormat::Hoc,
            TaskMode::MultiClass => CorpusFormat::Disease5,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = LameError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hoc" | "hoc_style" => Ok(CorpusFormat::Hoc),
            "disease5" | "disease5_style" => Ok(CorpusFormat::Disease5),
            other => Err(LameError::config(format!("unknown corpus format {other:?} (expected hoc or disease5)"))),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Hoc => "hoc",
            CorpusFormat::Disease5 => "disease5",
        })
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| LameError::io(path, e))
}

fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn parse_descriptions(text: &str, path: &Path) -> Result<Vec<LabelInfo>> {
    let err = |line: usize, message: String| LameError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut labels: Vec<LabelInfo> = Vec::new();
    let mut seen = HashSet::new();
    for (line, row) in records(text) {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(line, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let (id, name, description) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if id.is_empty() || description.is_empty() {
            return Err(err(line, "label id and description must be non-empty".into()));
        }
        if !seen.insert(id.to_owned()) {
            return Err(err(line, format!("duplicate label id {id:?}")));
        }
        labels.push(LabelInfo {
            id: id.to_owned(),
            name: name.to_owned(),
            description: description.to_owned(),
        });
    }
    if labels.is_empty() {
        return Err(LameError::input(format!("{}: no label descriptions", path.display())));
    }
    Ok(labels)
}

pub fn load_descriptions(path: &Path) -> Result<Vec<LabelInfo>> {
    parse_descriptions(&read(path)?, path)
}

pub fn parse_corpus(text: &str, path: &Path, format: CorpusFormat, labels: Vec<LabelInfo>) -> Result<Corpus> {
    let err = |line: usize, message: String| LameError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut instances = Vec::new();
    let mut ids = HashSet::new();
    for (line, row) in records(text) {
        let fields: Vec<&str> = row.split('\t').collect();
        let instance = match format {
            CorpusFormat::Hoc => {
                if !(2..=3).contains(&fields.len()) {
                    return Err(err(line, format!("expected id, text and labels, found {} fields", fields.len())));
                }
                let id = fields[0].trim().to_owned();
                if id.is_empty() {
                    return Err(err(line, "empty instance id".into()));
                }
                if !ids.insert(id.clone()) {
                    return Err(err(line, format!("duplicate instance id {id:?}")));
                }
                let mut gold = vec![false; labels.len()];
                for lid in fields.get(2).copied().unwrap_or("").split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let idx = labels
                        .iter()
                        .position(|l| l.id == lid)
                        .ok_or_else(|| err(line, format!("unknown label id {lid:?}")))?;
                    gold[idx] = true;
                }
                Instance {
                    id,
                    text: fields[1].to_owned(),
                    gold: Gold::MultiLabel(gold),
                }
            }
            CorpusFormat::Disease5 => {
                if fields.len() != 2 {
                    return Err(err(line, format!("expected class index and text, found {} fields", fields.len())));
                }
                let class: usize = fields[0]
                    .trim()
                    .parse()
                    .map_err(|_| err(line, format!("bad class index {:?}", fields[0])))?;
                if class >= labels.len() {
                    return Err(err(line, format!("unknown label id {class} ({} labels)", labels.len())));
                }
                Instance {
                    id: format!("doc-{}", instances.len()),
                    text: fields[1].to_owned(),
                    gold: Gold::MultiClass(class),
                }
            }
        };
        instances.push(instance);
    }
    Ok(Corpus {
        instances,
        labels,
        task: format.task(),
    })
}

pub fn load_corpus(path: &Path, format: CorpusFormat, descriptions_path: &Path) -> Result<Corpus> {
    let labels = load_descriptions(descriptions_path)?;
    parse_corpus(&read(path)?, path, format, labels)
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn format(&self) -> CorpusFormat {
        CorpusFormat::for_task(self.task)
    }

    pub fn label_ids(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.id.clone()).collect()
    }

    /// File form of the instances.
    pub fn to_corpus_string(&self) -> String {
        let mut s = String::new();
        for inst in &self.instances {
            match &inst.gold {
                Gold::MultiLabel(flags) => {
                    let ids: Vec<&str> = flags
                        .iter()
                        .zip(&self.labels)
                        .filter(|(f, _)| **f)
                        .map(|(_, l)| l.id.as_str())
                        .collect();
                    s.push_str(&format!("{}\t{}\t{}\n", inst.id, inst.text, ids.join(",")));
                }
                Gold::MultiClass(c) => s.push_str(&format!("{c}\t{}\n", inst.text)),
            }
        }
        s
    }

    pub fn to_descriptions_string(&self) -> String {
        self.labels
            .iter()
            .map(|l| format!("{}\t{}\t{}\n", l.id, l.name, l.description))
            .collect()
    }

    pub fn write(&self, corpus_path: &Path, descriptions_path: &Path) -> Result<()> {
        std::fs::write(corpus_path, self.to_corpus_string()).map_err(|e| LameError::io(corpus_path, e))?;
        std::fs::write(descriptions_path, self.to_descriptions_string()).map_err(|e| LameError::io(descriptions_path, e))
    }
}

/// Disjoint index lists over a corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`, cut at `floor(a n / (a+b+c))` and
/// `floor((a+b) n / (a+b+c))`.
pub fn split(n: usize, ratio: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (a, b, c) = ratio;
    if n < 3 {
        return Err(LameError::input(format!("cannot split {n} instances into three sets")));
    }
    if [a, b, c].iter().any(|v| !v.is_finite() || *v < 0.0) || a + b + c <= 0.0 {
        return Err(LameError::config(format!("invalid split ratio {a}:{b}:{c}")));
    }
    let total = a + b + c;
    let cut1 = ((a * n as f64) / total).floor() as usize;
    let cut2 = (((a + b) * n as f64) / total).floor().min(n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Split {
        train: order[..cut1].to_vec(),
        dev: order[cut1..cut2].to_vec(),
        test: order[cut2..].to_vec(),
    })
}
