//! Per-word sense counts and the dense sense id space.
//!
//! A lexicon file lists how many senses each word has, one `token<TAB>K`
//! per line (`#` starts a comment line). Words missing from the lexicon
//! are monosemic. [`SenseInventory`] lays the senses of all vocabulary
//! words out as one contiguous id range, in word id order, so sense id
//! blocks can index matrix rows directly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Vocab;
use crate::error::{Error, Result};

/// Parsed lexicon: token to sense count, plus parse statistics.
#[derive(Debug, Clone, Default)]
pub struct SenseCounts {
    pub counts: HashMap<String, u32>,
    /// Lines whose token repeated an earlier entry (last entry wins).
    pub duplicate_lines: u64,
}

/// Reads a lexicon file. Blank lines and lines starting with `#` are
/// skipped; duplicate tokens keep the last entry and are counted in
/// [`SenseCounts::duplicate_lines`].
pub fn load_sense_counts(path: impl AsRef<Path>) -> Result<SenseCounts> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = SenseCounts::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let (token, k) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected token<TAB>sense-count"))?;
        let k: i64 = k
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("non-integer sense count {k:?}")))?;
        if k <= 0 {
            return Err(Error::parse(
                path,
                lineno,
                format!("sense count must be >= 1, got {k}"),
            ));
        }
        if out.counts.insert(token.to_string(), k as u32).is_some() {
            out.duplicate_lines += 1;
        }
    }
    Ok(out)
}

/// Maps every vocabulary word to a contiguous block of sense ids.
///
/// Blocks are assigned in word id order and cover `0..total_senses`
/// exactly. Labels are `token#k` with 1-based `k` for polysemic words;
/// a monosemic word's single sense is labeled with the bare token, which
/// keeps saved vectors drop-in compatible with plain word-vector tools.
#[derive(Debug, Clone)]
pub struct SenseInventory {
    first_sense: Vec<u32>,
    k: Vec<u32>,
    labels: Vec<String>,
    label_index: HashMap<String, u32>,
    word_of: Vec<u32>,
    lexicon_only_words: u64,
}

/// Builds the inventory. Every vocab word gets `K = min(counts[word] or 1,
/// max_k)` senses (`K` floors at 1). Lexicon entries for words outside the
/// vocabulary are skipped and counted.
pub fn build_sense_inventory(
    vocab: &Vocab,
    counts: &HashMap<String, u32>,
    max_k: u32,
) -> SenseInventory {
    assert!(max_k >= 1, "max_k must be >= 1");
    let n = vocab.len();
    let mut first_sense = Vec::with_capacity(n);
    let mut k = Vec::with_capacity(n);
    let mut labels = Vec::new();
    let mut word_of = Vec::new();
    let mut next = 0u32;
    for word in 0..n as u32 {
        let token = vocab.token(word);
        let kw = counts.get(token).copied().unwrap_or(1).clamp(1, max_k);
        first_sense.push(next);
        k.push(kw);
        if kw == 1 {
            labels.push(token.to_string());
            word_of.push(word);
        } else {
            for i in 1..=kw {
                labels.push(format!("{token}#{i}"));
                word_of.push(word);
            }
        }
        next += kw;
    }
    let label_index = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i as u32))
        .collect();
    let lexicon_only_words = counts
        .keys()
        .filter(|t| vocab.id(t).is_none())
        .count() as u64;
    SenseInventory {
        first_sense,
        k,
        labels,
        label_index,
        word_of,
        lexicon_only_words,
    }
}

impl SenseInventory {
    pub fn word_count(&self) -> usize {
        self.k.len()
    }

    pub fn total_senses(&self) -> usize {
        self.labels.len()
    }

    /// Number of senses of `word`.
    pub fn k(&self, word: u32) -> u32 {
        self.k[word as usize]
    }

    pub fn first_sense(&self, word: u32) -> u32 {
        self.first_sense[word as usize]
    }

    /// Sense id block of `word`.
    pub fn senses(&self, word: u32) -> std::ops::Range<u32> {
        let first = self.first_sense[word as usize];
        first..first + self.k[word as usize]
    }

    pub fn is_monosemic(&self, word: u32) -> bool {
        self.k[word as usize] == 1
    }

    pub fn label(&self, sense: u32) -> &str {
        &self.labels[sense as usize]
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    pub fn sense_by_label(&self, label: &str) -> Option<u32> {
        self.label_index.get(label).copied()
    }

    pub fn word_of(&self, sense: u32) -> u32 {
        self.word_of[sense as usize]
    }

    /// Largest per-word sense count in the inventory.
    pub fn max_k(&self) -> u32 {
        self.k.iter().copied().max().unwrap_or(1)
    }

    /// Lexicon entries that named no vocabulary word.
    pub fn lexicon_only_words(&self) -> u64 {
        self.lexicon_only_words
    }

    /// Writes per-word sense counts in the lexicon file format, one line
    /// per vocab word in id order. Reloading and rebuilding against the
    /// same vocab reproduces this inventory.
    pub fn write_counts(&self, vocab: &Vocab, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for word in 0..self.word_count() as u32 {
            w.write_all(format!("{}\t{}\n", vocab.token(word), self.k(word)).as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Splits a sense label into its token and optional 1-based sense index.
/// `"a#2"` parses to `("a", Some(2))`; labels without a positive-integer
/// suffix (including bare monosemic labels) return `None` for the index.
pub fn parse_label(label: &str) -> (&str, Option<u32>) {
    if let Some((token, idx)) = label.rsplit_once('#') {
        if !token.is_empty() {
            if let Ok(k) = idx.parse::<u32>() {
                if k >= 1 {
                    return (token, Some(k));
                }
            }
        }
    }
    (label, None)
}
