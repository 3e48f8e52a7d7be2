//! Corpus ingestion: vocabulary construction and context-window streaming.
//!
//! Corpus files are UTF-8 plain text with whitespace-separated tokens and
//! one sentence per line. Tokens are compared byte-exactly; the expected
//! shape is a lemma form with a concatenated part-of-speech tag, e.g.
//! `dricka-verb`, but any whitespace-free string works.
//!
//! Out-of-vocabulary tokens are removed from a sentence *before* windowing
//! (word2vec convention), so remaining words close ranks around the gap.

use std::cmp::Reverse;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Header line of the vocabulary file format, followed by the total
/// retained token count.
pub const VOCAB_MAGIC: &str = "SENSEGRAM-VOCAB v1";

/// A single corpus token: non-empty and whitespace-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token(String);

impl Token {
    pub fn new(s: impl Into<String>) -> Result<Self> {
        let s = s.into();
        if s.is_empty() || s.chars().any(char::is_whitespace) {
            return Err(Error::InvalidConfig(format!("invalid token {s:?}")));
        }
        Ok(Token(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Word-form vocabulary with dense ids assigned in descending count order,
/// ties broken lexicographically.
#[derive(Debug, Clone)]
pub struct Vocab {
    entries: Vec<(String, u64)>,
    index: HashMap<String, u32>,
    total_tokens: u64,
}

impl Vocab {
    fn from_counts(counts: HashMap<String, u64>, min_count: u64, saw_any: bool) -> Result<Self> {
        if !saw_any {
            return Err(Error::EmptyCorpus);
        }
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptyVocab { min_count });
        }
        entries.sort_by(|a, b| (Reverse(a.1), &a.0).cmp(&(Reverse(b.1), &b.0)));
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i as u32))
            .collect();
        let total_tokens = entries.iter().map(|(_, c)| c).sum();
        Ok(Vocab {
            entries,
            index,
            total_tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.entries[id as usize].0
    }

    pub fn count(&self, id: u32) -> u64 {
        self.entries[id as usize].1
    }

    /// Sum of retained counts.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Relative corpus frequency of `id`.
    pub fn frequency(&self, id: u32) -> f64 {
        self.count(id) as f64 / self.total_tokens as f64
    }

    /// `(token, count)` pairs in id order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|(t, c)| (t.as_str(), *c))
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>, s: String| -> Result<()> {
            w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
        };
        write(&mut w, format!("{VOCAB_MAGIC} total={}\n", self.total_tokens))?;
        for (token, count) in &self.entries {
            write(&mut w, format!("{token}\t{count}\n"))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();

        let header = match lines.next() {
            Some((_, Ok(line))) => line,
            Some((_, Err(e))) => return Err(Error::io(path, e)),
            None => return Err(Error::parse(path, 1, "missing header")),
        };
        let total: u64 = header
            .strip_prefix(VOCAB_MAGIC)
            .and_then(|rest| rest.trim().strip_prefix("total="))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::parse(path, 1, format!("bad header {header:?}")))?;

        let mut entries: Vec<(String, u64)> = Vec::new();
        let mut index = HashMap::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (token, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno, "expected token<TAB>count"))?;
            let count: u64 = count
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad count {count:?}")))?;
            if let Some(&(ref prev, prev_count)) = entries.last() {
                if (Reverse(prev_count), prev.as_str()) > (Reverse(count), token) {
                    return Err(Error::parse(
                        path,
                        lineno,
                        "entries out of order (descending count, lexicographic ties)",
                    ));
                }
            }
            if index.insert(token.to_string(), entries.len() as u32).is_some() {
                return Err(Error::parse(path, lineno, format!("duplicate token {token:?}")));
            }
            entries.push((token.to_string(), count));
        }
        if entries.is_empty() {
            return Err(Error::parse(path, 1, "no vocabulary entries"));
        }
        let sum: u64 = entries.iter().map(|(_, c)| c).sum();
        if sum != total {
            return Err(Error::parse(
                path,
                1,
                format!("header total={total} but counts sum to {sum}"),
            ));
        }
        Ok(Vocab {
            entries,
            index,
            total_tokens: total,
        })
    }
}

/// Counts tokens and assigns ids. Tokens occurring fewer than `min_count`
/// times are dropped.
pub fn build_vocab<I, S>(tokens: I, min_count: u64) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut saw_any = false;
    for token in tokens {
        let token = token.as_ref();
        if token.is_empty() {
            continue;
        }
        saw_any = true;
        match counts.get_mut(token) {
            Some(c) => *c += 1,
            None => {
                counts.insert(token.to_string(), 1);
            }
        }
    }
    Vocab::from_counts(counts, min_count, saw_any)
}

/// Builds a vocabulary by streaming a corpus file.
pub fn build_vocab_from_path(path: impl AsRef<Path>, min_count: u64) -> Result<Vocab> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::with_capacity(1 << 16, file);
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut saw_any = false;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        let line = String::from_utf8_lossy(&buf);
        for token in line.split_ascii_whitespace() {
            saw_any = true;
            match counts.get_mut(token) {
                Some(c) => *c += 1,
                None => {
                    counts.insert(token.to_string(), 1);
                }
            }
        }
    }
    Vocab::from_counts(counts, min_count, saw_any)
}

/// One training example: a target occurrence and its in-window context ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowExample {
    pub target: u32,
    pub context: Vec<u32>,
}

/// Per-target window radius. With `dynamic` set the radius is drawn
/// uniformly from `1..=window` (one draw per target position, made before
/// the context is inspected); otherwise the full window is used.
#[inline]
pub fn window_radius(window: u32, dynamic: bool, rng: &mut SplitMix64) -> u32 {
    if dynamic {
        rng.next_range(1, window as u64) as u32
    } else {
        window
    }
}

/// Sweeps a sentence of word ids, invoking `f(rng, position, target,
/// context)` once per target whose effective window holds at least one
/// context id. The generator is lent back to the callback so callers can
/// interleave their own draws with the radius draws.
///
/// The context slice excludes the target position itself (a repeated word
/// type elsewhere in the window is kept) and is only valid for the duration
/// of the call. Callers handle sentence boundaries: one call per sentence.
pub struct Windower {
    window: u32,
    dynamic: bool,
    ctx: Vec<u32>,
}

impl Windower {
    pub fn new(window: u32, dynamic: bool) -> Self {
        assert!(window >= 1, "window must be >= 1");
        Windower {
            window,
            dynamic,
            ctx: Vec::with_capacity(2 * window as usize),
        }
    }

    pub fn for_each<F>(&mut self, ids: &[u32], rng: &mut SplitMix64, mut f: F)
    where
        F: FnMut(&mut SplitMix64, usize, u32, &[u32]),
    {
        for pos in 0..ids.len() {
            let radius = window_radius(self.window, self.dynamic, rng) as usize;
            let start = pos.saturating_sub(radius);
            let stop = (pos + radius + 1).min(ids.len());
            if stop - start <= 1 {
                continue;
            }
            self.ctx.clear();
            self.ctx.extend_from_slice(&ids[start..pos]);
            self.ctx.extend_from_slice(&ids[pos + 1..stop]);
            f(rng, pos, ids[pos], &self.ctx);
        }
    }
}

/// Streams `WindowExample`s over a token sequence treated as one sentence.
/// Out-of-vocabulary tokens are dropped before windowing.
pub fn iter_windows<S: AsRef<str>>(
    corpus: &[S],
    vocab: &Vocab,
    window: u32,
    dynamic: bool,
    rng: &mut SplitMix64,
) -> Vec<WindowExample> {
    let ids: Vec<u32> = corpus
        .iter()
        .filter_map(|t| vocab.id(t.as_ref()))
        .collect();
    let mut out = Vec::new();
    let mut windower = Windower::new(window, dynamic);
    windower.for_each(&ids, rng, |_, _, target, ctx| {
        out.push(WindowExample {
            target,
            context: ctx.to_vec(),
        });
    });
    out
}

/// Frequent-word subsampling. Disabled at `t = 0`; otherwise an occurrence
/// of word `w` survives with probability `min(1, sqrt(t / f(w)))`.
///
/// When enabled, `keep` consumes exactly one draw per call regardless of
/// the word, which keeps replay deterministic.
#[derive(Debug, Clone)]
pub struct SubsampleTable {
    keep: Vec<f64>,
}

impl SubsampleTable {
    pub fn new(vocab: &Vocab, threshold: f64) -> Self {
        assert!(threshold >= 0.0, "subsample threshold must be >= 0");
        if threshold == 0.0 {
            return SubsampleTable { keep: Vec::new() };
        }
        let keep = (0..vocab.len() as u32)
            .map(|id| (threshold / vocab.frequency(id)).sqrt().min(1.0))
            .collect();
        SubsampleTable { keep }
    }

    pub fn enabled(&self) -> bool {
        !self.keep.is_empty()
    }

    #[inline]
    pub fn keep(&self, id: u32, rng: &mut SplitMix64) -> bool {
        if self.keep.is_empty() {
            return true;
        }
        rng.next_f64() < self.keep[id as usize]
    }
}

/// Filters a token stream through `SubsampleTable`. Out-of-vocabulary
/// tokens pass through untouched (windowing drops them later).
pub fn subsample_filter<'a, I, S>(
    stream: I,
    vocab: &'a Vocab,
    threshold: f64,
    rng: &'a mut SplitMix64,
) -> impl Iterator<Item = S> + 'a
where
    I: IntoIterator<Item = S> + 'a,
    S: AsRef<str>,
{
    let table = SubsampleTable::new(vocab, threshold);
    stream.into_iter().filter(move |token| {
        if !table.enabled() {
            return true;
        }
        match vocab.id(token.as_ref()) {
            Some(id) => table.keep(id, rng),
            None => true,
        }
    })
}
