//! Synthetic topic corpora with planted polysemy, and sense-discrimination
//! scoring against the planted ground truth.
//!
//! Each sentence draws one topic, then draws its tokens from that topic's
//! Zipfian vocabulary block. Blocks are disjoint, so topic context is
//! unambiguous. A pseudoword merges one source token from each of several
//! topics under a single new surface form; every pseudoword occurrence is
//! logged with its true topic, which makes sense assignments measurable.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::lexicon::SenseInventory;
use crate::model::{EmbeddingMatrices, VectorSet};
use crate::query::nearest_neighbors;
use crate::rng::SplitMix64;
use crate::sense::{context_sum_into, select_sense};

/// One topic's vocabulary block: `types` tokens ranked by a Zipf law with
/// the given exponent; `weight` is the topic's prior share of sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub types: usize,
    pub exponent: f64,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

/// A planted polysemic token: occurrences of each source (a rank within a
/// topic's block) are rewritten to `token`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudowordSpec {
    pub token: String,
    pub sources: Vec<SourceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub topic: usize,
    pub rank: usize,
}

/// Full description of a synthetic corpus; serializable as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub topics: Vec<TopicSpec>,
    /// Target corpus length; generation stops at the first sentence
    /// boundary at or past this count.
    pub corpus_tokens: u64,
    /// Sentence length drawn uniformly from this inclusive range.
    pub sentence_tokens: SentenceLen,
    #[serde(default)]
    pub pseudowords: Vec<PseudowordSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceLen {
    pub min: usize,
    pub max: usize,
}

/// Deterministic name of the `rank`-th token of topic `topic`.
pub fn block_token(topic: usize, rank: usize) -> String {
    format!("t{topic}w{rank}")
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.topics.is_empty() {
            return bad("at least one topic required".into());
        }
        for (i, t) in self.topics.iter().enumerate() {
            if t.types == 0 {
                return bad(format!("topic {i} has no types"));
            }
            if !(t.weight > 0.0) {
                return bad(format!("topic {i} weight must be > 0"));
            }
            if !(t.exponent >= 0.0) {
                return bad(format!("topic {i} exponent must be >= 0"));
            }
        }
        if self.corpus_tokens == 0 {
            return bad("corpus_tokens must be >= 1".into());
        }
        if self.sentence_tokens.min < 1 || self.sentence_tokens.min > self.sentence_tokens.max {
            return bad("sentence_tokens must satisfy 1 <= min <= max".into());
        }
        if !self.pseudowords.is_empty() && self.topics.len() < 2 {
            return bad("pseudowords need at least 2 topics".into());
        }
        let mut names: std::collections::HashSet<&str> = std::collections::HashSet::new();
        for pw in &self.pseudowords {
            if pw.token.is_empty() || pw.token.chars().any(char::is_whitespace) {
                return bad(format!("bad pseudoword token {:?}", pw.token));
            }
            if !names.insert(&pw.token) {
                return bad(format!("duplicate pseudoword token {:?}", pw.token));
            }
            if pw.sources.len() < 2 {
                return bad(format!("pseudoword {:?} needs >= 2 sources", pw.token));
            }
            let mut topics_seen = std::collections::HashSet::new();
            for s in &pw.sources {
                if s.topic >= self.topics.len() {
                    return bad(format!("pseudoword {:?}: topic {} out of range", pw.token, s.topic));
                }
                if s.rank >= self.topics[s.topic].types {
                    return bad(format!("pseudoword {:?}: rank {} out of range", pw.token, s.rank));
                }
                if !topics_seen.insert(s.topic) {
                    return bad(format!("pseudoword {:?}: sources must come from distinct topics", pw.token));
                }
            }
        }
        Ok(())
    }

    /// Token → topic index for every block token. Pseudowords are absent
    /// (they belong to several topics at once).
    pub fn topic_membership(&self) -> HashMap<String, u32> {
        let mut map = HashMap::new();
        for (i, t) in self.topics.iter().enumerate() {
            for r in 0..t.types {
                map.insert(block_token(i, r), i as u32);
            }
        }
        map
    }

    /// Sense-count lexicon entries implied by the pseudoword plan: each
    /// pseudoword gets one sense per source topic.
    pub fn lexicon_counts(&self) -> HashMap<String, u32> {
        self.pseudowords
            .iter()
            .map(|pw| (pw.token.clone(), pw.sources.len() as u32))
            .collect()
    }
}

/// Planted occurrences: `(token position, true topic)`, positions indexing
/// the whitespace-token stream of the corpus, strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub records: Vec<(u64, u32)>,
}

impl GroundTruth {
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (pos, topic) in &self.records {
            writeln!(w, "{pos}\t{topic}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (pos, topic) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno, "expected position<TAB>topic"))?;
            let pos: u64 = pos
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad position {pos:?}")))?;
            let topic: u32 = topic
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad topic {topic:?}")))?;
            if let Some(&(prev, _)) = records.last() {
                if pos <= prev {
                    return Err(Error::parse(path, lineno, "positions must be strictly increasing"));
                }
            }
            records.push((pos, topic));
        }
        Ok(GroundTruth { records })
    }
}

struct ZipfBlock {
    tokens: Vec<String>,
    cumulative: Vec<f64>,
}

impl ZipfBlock {
    fn new(topic: usize, spec: &TopicSpec) -> Self {
        let weights: Vec<f64> = (0..spec.types)
            .map(|r| 1.0 / ((r + 1) as f64).powf(spec.exponent))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        ZipfBlock {
            tokens: (0..spec.types).map(|r| block_token(topic, r)).collect(),
            cumulative,
        }
    }

    fn sample(&self, rng: &mut SplitMix64) -> usize {
        let u = rng.next_f64();
        self.cumulative.partition_point(|&c| c <= u).min(self.tokens.len() - 1)
    }
}

/// Streams the generated corpus one sentence at a time:
/// `sink(topic, tokens)`. Returns the planted-occurrence log.
pub fn generate_sentences<F>(spec: &SynthSpec, mut sink: F) -> Result<GroundTruth>
where
    F: FnMut(u32, &[&str]) -> Result<()>,
{
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let blocks: Vec<ZipfBlock> = spec
        .topics
        .iter()
        .enumerate()
        .map(|(i, t)| ZipfBlock::new(i, t))
        .collect();
    // (topic, rank) → pseudoword token
    let rewrite: HashMap<(usize, usize), &str> = spec
        .pseudowords
        .iter()
        .flat_map(|pw| {
            pw.sources
                .iter()
                .map(move |s| ((s.topic, s.rank), pw.token.as_str()))
        })
        .collect();
    let topic_cdf: Vec<f64> = {
        let total: f64 = spec.topics.iter().map(|t| t.weight).sum();
        let mut acc = 0.0;
        spec.topics
            .iter()
            .map(|t| {
                acc += t.weight / total;
                acc
            })
            .collect()
    };

    let mut truth = GroundTruth::default();
    let mut emitted = 0u64;
    let mut sentence: Vec<&str> = Vec::new();
    while emitted < spec.corpus_tokens {
        let u = rng.next_f64();
        let topic = topic_cdf.partition_point(|&c| c <= u).min(spec.topics.len() - 1);
        let len = rng.next_range(
            spec.sentence_tokens.min as u64,
            spec.sentence_tokens.max as u64,
        ) as usize;
        sentence.clear();
        for slot in 0..len {
            let rank = blocks[topic].sample(&mut rng);
            match rewrite.get(&(topic, rank)) {
                Some(pw) => {
                    truth.records.push((emitted + slot as u64, topic as u32));
                    sentence.push(pw);
                }
                None => sentence.push(&blocks[topic].tokens[rank]),
            }
        }
        sink(topic as u32, &sentence)?;
        emitted += len as u64;
    }
    Ok(truth)
}

/// Generates in memory. Intended for small corpora (tests, examples).
pub fn generate_corpus(spec: &SynthSpec) -> Result<(Vec<String>, GroundTruth)> {
    let mut tokens = Vec::new();
    let truth = generate_sentences(spec, |_, sentence| {
        tokens.extend(sentence.iter().map(|t| t.to_string()));
        Ok(())
    })?;
    Ok((tokens, truth))
}

/// Writes the corpus as one sentence per line and returns the truth log.
pub fn write_corpus_file(spec: &SynthSpec, path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 16, file);
    let truth = generate_sentences(spec, |_, sentence| {
        let mut line = String::with_capacity(sentence.len() * 8);
        for (i, t) in sentence.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(t);
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
    })?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(truth)
}

/// Contingency table and matching for one pseudoword.
#[derive(Debug, Clone, Serialize)]
pub struct PseudowordPurity {
    pub token: String,
    /// `counts[sense_rank][topic]`: occurrences assigned to that sense
    /// whose true topic is `topic`.
    pub counts: Vec<Vec<u64>>,
    /// Best one-to-one matching: sense rank → matched topic (None when
    /// there are more senses than topics).
    pub matching: Vec<Option<u32>>,
    pub occurrences: u64,
    pub agreements: u64,
}

/// Corpus-level purity result.
#[derive(Debug, Clone, Serialize)]
pub struct PurityScore {
    /// Agreements under the best matching, over all scored occurrences.
    pub purity: f64,
    pub occurrences: u64,
    pub per_pseudoword: Vec<PseudowordPurity>,
}

/// Best injective assignment of senses to topics by exhaustive search
/// (intended for small K; the benchmark uses K <= 4).
fn best_matching(counts: &[Vec<u64>]) -> (Vec<Option<u32>>, u64) {
    let k = counts.len();
    let t = counts.first().map_or(0, Vec::len);
    let mut best = vec![None; k];
    let mut best_score = 0u64;
    // depth-first over injective sense→topic maps; senses may stay
    // unmatched only when k > t
    fn recurse(
        counts: &[Vec<u64>],
        sense: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<Option<u32>>,
        score: u64,
        best: &mut Vec<Option<u32>>,
        best_score: &mut u64,
    ) {
        let k = counts.len();
        let t = used.len();
        if sense == k {
            if score >= *best_score {
                *best_score = score;
                best.clone_from(current);
            }
            return;
        }
        let remaining_senses = k - sense;
        let free_topics = used.iter().filter(|u| !**u).count();
        for topic in 0..t {
            if used[topic] {
                continue;
            }
            used[topic] = true;
            current[sense] = Some(topic as u32);
            recurse(counts, sense + 1, used, current, score + counts[sense][topic], best, best_score);
            used[topic] = false;
            current[sense] = None;
        }
        if k > t && remaining_senses > free_topics {
            // more senses than topics: this sense can go unmatched
            current[sense] = None;
            recurse(counts, sense + 1, used, current, score, best, best_score);
        }
    }
    let mut used = vec![false; t];
    let mut current = vec![None; k];
    recurse(counts, 0, &mut used, &mut current, 0, &mut best, &mut best_score);
    (best, best_score)
}

/// Re-runs sense selection over every planted occurrence with the frozen
/// model and scores agreement with the planted topics under the best
/// sense↔topic matching.
///
/// Contexts are rebuilt the way training sees them: out-of-vocabulary
/// tokens are dropped before windowing, with a fixed radius of `window`.
/// Occurrences whose context is empty are skipped. Subsampling is not
/// applied (every occurrence is scored).
pub fn score_purity(
    vocab: &Vocab,
    inventory: &SenseInventory,
    matrices: &EmbeddingMatrices,
    corpus_path: impl AsRef<Path>,
    truth: &GroundTruth,
    window: u32,
) -> Result<PurityScore> {
    let path = corpus_path.as_ref();
    if truth.records.is_empty() {
        return Err(Error::NoOccurrences);
    }
    let truth_map: HashMap<u64, u32> = truth.records.iter().copied().collect();
    let topic_count = truth
        .records
        .iter()
        .map(|&(_, t)| t as usize + 1)
        .max()
        .unwrap();

    // per-word contingency tables, keyed by word id
    let mut tables: HashMap<u32, Vec<Vec<u64>>> = HashMap::new();
    let mut rng = SplitMix64::new(0);
    let mut ctx_sum = vec![0.0f64; matrices.dim];
    let mut scores = Vec::new();

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::with_capacity(1 << 16, file);
    let mut line = Vec::new();
    let mut position = 0u64;
    let mut contracted: Vec<(u64, u32)> = Vec::new();
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        let text = String::from_utf8_lossy(&line);
        contracted.clear();
        for token in text.split_ascii_whitespace() {
            if let Some(id) = vocab.id(token) {
                contracted.push((position, id));
            }
            position += 1;
        }
        for (j, &(pos, word)) in contracted.iter().enumerate() {
            let Some(&topic) = truth_map.get(&pos) else {
                continue;
            };
            let w = window as usize;
            let start = j.saturating_sub(w);
            let stop = (j + w + 1).min(contracted.len());
            let context: Vec<u32> = contracted[start..j]
                .iter()
                .chain(&contracted[j + 1..stop])
                .map(|&(_, id)| id)
                .collect();
            if context.is_empty() {
                continue;
            }
            context_sum_into(&context, matrices, &mut ctx_sum)?;
            let (sense, _) = select_sense(&ctx_sum, word, inventory, matrices, &mut rng, &mut scores);
            let rank = (sense - inventory.first_sense(word)) as usize;
            let table = tables
                .entry(word)
                .or_insert_with(|| vec![vec![0u64; topic_count]; inventory.k(word) as usize]);
            table[rank][topic as usize] += 1;
        }
    }
    if tables.is_empty() {
        return Err(Error::NoOccurrences);
    }

    let mut words: Vec<u32> = tables.keys().copied().collect();
    words.sort_unstable();
    let mut per_pseudoword = Vec::new();
    let mut agreements = 0u64;
    let mut occurrences = 0u64;
    for word in words {
        let counts = tables.remove(&word).unwrap();
        let total: u64 = counts.iter().flatten().sum();
        let (matching, score) = best_matching(&counts);
        agreements += score;
        occurrences += total;
        per_pseudoword.push(PseudowordPurity {
            token: vocab.token(word).to_string(),
            counts,
            matching,
            occurrences: total,
            agreements: score,
        });
    }
    Ok(PurityScore {
        purity: agreements as f64 / occurrences as f64,
        occurrences,
        per_pseudoword,
    })
}

/// For each sense of `pseudoword`, the fraction of its top-`k` neighbors
/// that belong to the sense's matched topic block. `matching` comes from
/// [`score_purity`]; senses without a matched topic score 0. `k` is
/// clamped to the number of foreign senses available.
pub fn score_neighbor_coherence(
    vectors: &VectorSet,
    vocab: &Vocab,
    inventory: &SenseInventory,
    pseudoword: &str,
    k: usize,
    matching: &[Option<u32>],
    topics: &HashMap<String, u32>,
) -> Result<Vec<f64>> {
    let word = vocab.id(pseudoword).ok_or_else(|| Error::UnknownLabel {
        label: pseudoword.to_string(),
        suggestions: Vec::new(),
    })?;
    let senses = inventory.senses(word);
    let k_eff = k.min(vectors.len().saturating_sub(senses.len()));
    let mut precisions = Vec::new();
    for (rank, sense) in senses.enumerate() {
        let Some(Some(topic)) = matching.get(rank) else {
            precisions.push(0.0);
            continue;
        };
        let label = inventory.label(sense);
        let result = nearest_neighbors(label, k_eff, vectors, false)?;
        if result.neighbors.is_empty() {
            precisions.push(0.0);
            continue;
        }
        let hits = result
            .neighbors
            .iter()
            .filter(|(l, _)| {
                let (token, _) = crate::lexicon::parse_label(l);
                topics.get(token) == Some(topic)
            })
            .count();
        precisions.push(hits as f64 / result.neighbors.len() as f64);
    }
    Ok(precisions)
}
