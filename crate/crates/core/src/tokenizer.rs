//! WordPiece-shaped subword vocabulary and greedy longest-match tokenization.
//!
//! Vocabularies are learned by frequency-greedy pair merging over the words of a
//! corpus. Word-initial pieces are stored bare, continuation pieces carry the
//! `##` prefix.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LameError, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const CONTINUATION: &str = "##";
const SPECIALS: [&str; 4] = [PAD, UNK, CLS, SEP];

/// Words longer than this many characters become `[UNK]` without matching.
const MAX_WORD_CHARS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

/// Token ids of one text, bracketed by `[CLS]` and `[SEP]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub ids: Vec<usize>,
    /// Character span `(start, end)` into the original text, one per id;
    /// `None` for special tokens.
    pub spans: Vec<Option<(usize, usize)>>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids other than `[CLS]`/`[SEP]`/`[PAD]`.
    pub fn content_len(&self) -> usize {
        self.spans.iter().filter(|s| s.is_some()).count()
    }
}

impl Vocab {
    /// Builds a vocabulary from an explicit token list. The first four entries
    /// must be the special tokens in their reserved order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..4].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(LameError::input(format!(
                "vocabulary must start with {PAD}, {UNK}, {CLS}, {SEP}"
            )));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(LameError::input(format!("empty token at id {id}")));
            }
            if token_to_id.insert(tok.clone(), id).is_some() {
                return Err(LameError::input(format!("duplicate token {tok:?} at id {id}")));
            }
        }
        Ok(Vocab { tokens, token_to_id })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, line number = id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        Vocab::from_tokens(text.lines().map(str::to_owned).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LameError::io(path, e))?;
        Vocab::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| LameError::io(path, e))
    }

    /// SHA-256 of the file form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }

    /// Greedy longest-match segmentation of one lowercased word into piece ids.
    /// Returns `None` when some position has no matching piece.
    fn segment(&self, chars: &[char]) -> Option<Vec<(usize, usize, usize)>> {
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut buf = String::new();
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                buf.clear();
                if start > 0 {
                    buf.push_str(CONTINUATION);
                }
                buf.extend(&chars[start..end]);
                if let Some(id) = self.id(&buf) {
                    found = Some((id, end));
                    break;
                }
            }
            let (id, end) = found?;
            pieces.push((id, start, end));
            start = end;
        }
        Some(pieces)
    }
}

/// Lowercased words with their character spans in the original text.
fn words_with_spans(text: &str) -> Vec<(Vec<char>, usize, usize)> {
    let mut words = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let mut pos = 0;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if let Some((start, w)) = current.take() {
                words.push((start, pos, w));
            }
        } else {
            current.get_or_insert_with(|| (pos, String::new())).1.push(ch);
        }
        pos += 1;
    }
    if let Some((start, w)) = current {
        words.push((start, pos, w));
    }
    words
        .into_iter()
        .map(|(s, e, w)| (w.to_lowercase().chars().collect(), s, e))
        .collect()
}

/// Tokenizes `text` into `[CLS] pieces... [SEP]`, truncated to `max_len` ids
/// with the trailing `[SEP]` kept.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> TokenizedText {
    assert!(max_len >= 3, "max_len must leave room for [CLS], a token and [SEP]");
    let mut ids = vec![CLS_ID];
    let mut spans = vec![None];
    let budget = max_len - 2;
    'words: for (chars, start, end) in words_with_spans(text) {
        // Lowercasing can change character counts; spans then fall back to the word.
        let exact = chars.len() == end - start;
        let pieces = if chars.len() > MAX_WORD_CHARS {
            None
        } else {
            vocab.segment(&chars)
        };
        match pieces {
            Some(pieces) => {
                for (id, s, e) in pieces {
                    if ids.len() - 1 >= budget {
                        break 'words;
                    }
                    ids.push(id);
                    spans.push(Some(if exact { (start + s, start + e) } else { (start, end) }));
                }
            }
            None => {
                if ids.len() - 1 >= budget {
                    break;
                }
                ids.push(UNK_ID);
                spans.push(Some((start, end)));
            }
        }
    }
    ids.push(SEP_ID);
    spans.push(None);
    TokenizedText { ids, spans }
}

/// Learns a vocabulary of at most `target_size` tokens: the four specials, the
/// characters seen at least `min_frequency` times (most frequent first), then
/// merged pieces from repeatedly joining the most frequent adjacent pair.
pub fn build_vocab<'a, I>(corpus: I, target_size: usize, min_frequency: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    if target_size <= SPECIALS.len() {
        return Err(LameError::config(format!(
            "target vocabulary size {target_size} leaves no room beyond the 4 special tokens"
        )));
    }
    let mut word_counts: BTreeMap<Vec<char>, usize> = BTreeMap::new();
    let mut docs = 0;
    for doc in corpus {
        docs += 1;
        for (chars, _, _) in words_with_spans(doc) {
            if chars.len() <= MAX_WORD_CHARS {
                *word_counts.entry(chars).or_default() += 1;
            }
        }
    }
    if docs == 0 {
        return Err(LameError::input("cannot build a vocabulary from an empty corpus"));
    }

    let piece = |chars: &[char], initial: bool| -> String {
        let mut s = String::new();
        if !initial {
            s.push_str(CONTINUATION);
        }
        s.extend(chars);
        s
    };

    let mut char_counts: BTreeMap<String, usize> = BTreeMap::new();
    for (word, &count) in &word_counts {
        for (i, c) in word.iter().enumerate() {
            *char_counts.entry(piece(&[*c], i == 0)).or_default() += count;
        }
    }
    let mut chars: Vec<(String, usize)> = char_counts
        .into_iter()
        .filter(|(_, c)| *c >= min_frequency.max(1))
        .collect();
    chars.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let mut known: HashMap<String, ()> = HashMap::new();
    for (tok, _) in chars {
        if tokens.len() >= target_size {
            break;
        }
        known.insert(tok.clone(), ());
        tokens.push(tok);
    }

    // Each word as a sequence of pieces; words containing an unknown character
    // take no part in merging.
    let mut words: Vec<(Vec<String>, usize)> = word_counts
        .iter()
        .filter_map(|(w, &count)| {
            let pieces: Vec<String> = w.iter().enumerate().map(|(i, c)| piece(&[*c], i == 0)).collect();
            pieces.iter().all(|p| known.contains_key(p)).then_some((pieces, count))
        })
        .collect();

    while tokens.len() < target_size {
        let mut pair_counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (pieces, count) in &words {
            for w in pieces.windows(2) {
                *pair_counts.entry((w[0].as_str(), w[1].as_str())).or_default() += count;
            }
        }
        let best = pair_counts
            .into_iter()
            .filter(|((a, b), _)| !known.contains_key(&merge_pieces(a, b)))
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((a, b), count)) = best else { break };
        if count < min_frequency.max(1) {
            break;
        }
        let (a, b) = (a.to_owned(), b.to_owned());
        let merged = merge_pieces(&a, &b);
        for (pieces, _) in &mut words {
            let mut i = 0;
            while i + 1 < pieces.len() {
                if pieces[i] == a && pieces[i + 1] == b {
                    pieces[i] = merged.clone();
                    pieces.remove(i + 1);
                }
                i += 1;
            }
        }
        known.insert(merged.clone(), ());
        tokens.push(merged);
    }
    Vocab::from_tokens(tokens)
}

fn merge_pieces(a: &str, b: &str) -> String {
    let mut s = a.to_owned();
    s.push_str(b.strip_prefix(CONTINUATION).unwrap_or(b));
    s
}

/// Joins continuation pieces into their head word; the merged weight is the
/// maximum of its pieces. A continuation piece with no head is kept as-is.
pub fn merge_subwords(tokens: &[&str], weights: &[f64]) -> Result<Vec<(String, f64)>> {
    let spans = vec![None; tokens.len()];
    Ok(merge_subwords_with_spans(tokens, weights, &spans)?
        .into_iter()
        .map(|(w, weight, _)| (w, weight))
        .collect())
}

/// [`merge_subwords`] that also unions the character spans of merged pieces.
pub fn merge_subwords_with_spans(
    tokens: &[&str],
    weights: &[f64],
    spans: &[Option<(usize, usize)>],
) -> Result<Vec<(String, f64, Option<(usize, usize)>)>> {
    if tokens.len() != weights.len() || tokens.len() != spans.len() {
        return Err(LameError::contract(format!(
            "merge_subwords: {} tokens, {} weights, {} spans",
            tokens.len(),
            weights.len(),
            spans.len()
        )));
    }
    let mut out: Vec<(String, f64, Option<(usize, usize)>)> = Vec::new();
    for ((tok, &w), &span) in tokens.iter().zip(weights).zip(spans) {
        match (tok.strip_prefix(CONTINUATION), out.last_mut()) {
            (Some(rest), Some(last)) if !rest.is_empty() => {
                last.0.push_str(rest);
                last.1 = last.1.max(w);
                last.2 = match (last.2, span) {
                    (Some((s, _)), Some((_, e))) => Some((s, e)),
                    (a, b) => a.or(b),
                };
            }
            _ => out.push((tok.to_string(), w, span)),
        }
    }
    Ok(out)
}

/// Renders ids back to token strings, e.g. for explanations.
pub fn id_strings(ids: &[usize], vocab: &Vocab) -> Vec<String> {
    ids.iter()
        .map(|&id| vocab.token(id).unwrap_or(UNK).to_owned())
        .collect()
}

/// Human-readable dump of a tokenization, `token@start..end` per piece.
pub fn describe(t: &TokenizedText, vocab: &Vocab) -> String {
    let mut s = String::new();
    for (id, span) in t.ids.iter().zip(&t.spans) {
        let tok = vocab.token(*id).unwrap_or(UNK);
        match span {
            Some((a, b)) => write!(s, "{tok}@{a}..{b} ").unwrap(),
            None => write!(s, "{tok} ").unwrap(),
        }
    }
    s.trim_end().to_owned()
}
