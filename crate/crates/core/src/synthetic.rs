//! Planted-keyword corpora for end-to-end checks.
//!
//! Every label owns a few invented keyword tokens that appear in its
//! description. Documents are strings of noise words with one keyword planted
//! for each gold label, so a keyword lookup classifies the corpus perfectly.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TaskMode;
use crate::data::{Corpus, Gold, Instance, LabelInfo};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_labels: usize,
    pub docs_per_label: usize,
    pub vocab_noise_size: usize,
    pub keywords_per_label: usize,
    pub multi_label: bool,
    pub seed: u64,
    /// Noise words per document, inclusive range.
    pub doc_len: (usize, usize),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_labels: 5,
            docs_per_label: 40,
            vocab_noise_size: 60,
            keywords_per_label: 1,
            multi_label: false,
            seed: 0,
            doc_len: (8, 14),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Keywords of each label, in label order.
    pub keywords: Vec<Vec<String>>,
}

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect()
}

fn fresh_words(rng: &mut ChaCha8Rng, count: usize, syllables: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w = pseudo_word(rng, syllables);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub fn make_synthetic_corpus(spec: &SyntheticSpec) -> SyntheticCorpus {
    let num_labels = spec.num_labels.max(1);
    let docs_per_label = spec.docs_per_label.max(1);
    let per_label = spec.keywords_per_label.max(1);
    let (min_len, max_len) = (spec.doc_len.0.max(1), spec.doc_len.1.max(spec.doc_len.0.max(1)));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken = HashSet::new();

    let keywords: Vec<Vec<String>> = (0..num_labels)
        .map(|_| fresh_words(&mut rng, per_label, 3, &mut taken))
        .collect();
    let noise = fresh_words(&mut rng, spec.vocab_noise_size.max(1), 2, &mut taken);

    let labels = keywords
        .iter()
        .enumerate()
        .map(|(i, kws)| LabelInfo {
            id: format!("L{i}"),
            name: format!("topic {i}"),
            description: format!("texts about {}", kws.join(" and ")),
        })
        .collect();

    let mut instances = Vec::with_capacity(num_labels * docs_per_label);
    for primary in 0..num_labels {
        for _ in 0..docs_per_label {
            let mut gold_set = vec![primary];
            if spec.multi_label && num_labels > 1 {
                let extra = rng.random_range(0..=2usize.min(num_labels - 1));
                let mut others: Vec<usize> = (0..num_labels).filter(|&l| l != primary).collect();
                others.shuffle(&mut rng);
                gold_set.extend(others.into_iter().take(extra));
            }
            let len = rng.random_range(min_len..=max_len);
            let mut words: Vec<String> = (0..len).map(|_| noise.choose(&mut rng).unwrap().clone()).collect();
            for &l in &gold_set {
                let kw = keywords[l].choose(&mut rng).unwrap().clone();
                let pos = rng.random_range(0..=words.len());
                words.insert(pos, kw);
            }
            let gold = if spec.multi_label {
                let mut flags = vec![false; num_labels];
                gold_set.iter().for_each(|&l| flags[l] = true);
                Gold::MultiLabel(flags)
            } else {
                Gold::MultiClass(primary)
            };
            instances.push(Instance {
                id: format!("syn-{}", instances.len()),
                text: words.join(" "),
                gold,
            });
        }
    }
    instances.shuffle(&mut rng);

    SyntheticCorpus {
        corpus: Corpus {
            instances,
            labels,
            task: if spec.multi_label { TaskMode::MultiLabel } else { TaskMode::MultiClass },
        },
        keywords,
    }
}
