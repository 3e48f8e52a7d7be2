//! The training loop: sense selection plus skip-gram negative sampling.
//!
//! For every target occurrence the worker gathers the context window,
//! picks the most probable sense from the current model (hard
//! assignment), and runs one negative-sampling update per context word
//! against that sense row. Parallelism is lock-relaxed: workers share the
//! matrices and update them without synchronization, so only single-worker
//! runs are bit-reproducible.
//!
//! Reproducibility contract for `workers = 1`, relied on by tests that
//! replay the loop: the worker draws from `SplitMix64::stream(seed, 0)`
//! and consumes, per line, (a) one draw per in-vocab token when
//! subsampling is enabled, then per target position (b) one radius draw
//! when the window is dynamic, (c) tie-break draws only on exact score
//! ties, and (d) two draws per negative-sample attempt. The learning rate
//! for a line is set from the global token count *before* that line's
//! tokens are added.

use std::fs::File;
use std::io::{BufRead, BufReader, Seek, SeekFrom};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering::Relaxed};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{SubsampleTable, Vocab, Windower};
use crate::error::{Error, Result};
use crate::lexicon::SenseInventory;
use crate::model::{init_model, EmbeddingMatrices};
use crate::rng::SplitMix64;
use crate::sense::{context_sum_into, select_sense};

/// All training knobs. Window and dimension defaults follow the common
/// large-corpus setup (window 10, 200 dimensions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Maximum one-sided context window.
    pub window: u32,
    /// Embedding dimension.
    pub dim: usize,
    /// Initial learning rate.
    pub alpha: f64,
    /// Learning-rate floor for the linear decay.
    pub min_alpha: f64,
    /// Negative samples per (target, context) pair.
    pub negatives: u32,
    pub epochs: u32,
    /// Vocabulary pruning threshold (recorded here; applied at vocab build).
    pub min_count: u64,
    /// Frequent-word subsampling threshold; 0 disables.
    pub subsample: f64,
    pub workers: u32,
    pub seed: u64,
    /// Cap on per-word sense counts taken from the lexicon.
    pub max_k: u32,
    /// Draw each position's window radius uniformly from `1..=window`.
    pub dynamic_window: bool,
    /// Record flag: the caller supplied an all-monosemic inventory to get
    /// the plain skip-gram comparator. The trainer itself just trains
    /// whatever inventory it is given.
    pub baseline: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window: 10,
            dim: 200,
            alpha: 0.025,
            min_alpha: 0.025 * 1e-4,
            negatives: 5,
            epochs: 1,
            min_count: 5,
            subsample: 0.0,
            workers: 1,
            seed: 42,
            max_k: 8,
            dynamic_window: true,
            baseline: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.window < 1 {
            return bad("window must be >= 1");
        }
        if self.dim < 1 {
            return bad("dim must be >= 1");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be > 0");
        }
        if !(self.min_alpha >= 0.0 && self.min_alpha <= self.alpha) {
            return bad("min_alpha must be in [0, alpha]");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.workers < 1 {
            return bad("workers must be >= 1");
        }
        if self.max_k < 1 {
            return bad("max_k must be >= 1");
        }
        if !(self.subsample >= 0.0) {
            return bad("subsample must be >= 0");
        }
        Ok(())
    }
}

/// Linear decay: `max(min_alpha, alpha * (1 - progress))`.
pub fn lr_schedule(progress: f64, config: &TrainConfig) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    (config.alpha * (1.0 - p)).max(config.min_alpha)
}

/// Unigram noise distribution with `P(word) ∝ count^power`, sampled by
/// the alias method, so sample probabilities are exact (no quantization
/// table). Each draw consumes exactly two generator outputs.
#[derive(Debug, Clone)]
pub struct NoiseTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

/// Builds the noise distribution over the whole vocabulary.
pub fn build_noise_table(vocab: &Vocab, power: f64) -> NoiseTable {
    let n = vocab.len();
    assert!(n > 0, "noise table over empty vocab");
    let weights: Vec<f64> = (0..n as u32)
        .map(|id| (vocab.count(id) as f64).powf(power))
        .collect();
    let total: f64 = weights.iter().sum();

    // Vose alias construction; stacks are filled in id order so the
    // resulting table is deterministic.
    let mut prob: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
    let mut alias = vec![0u32; n];
    let mut small: Vec<u32> = Vec::new();
    let mut large: Vec<u32> = Vec::new();
    for (i, &p) in prob.iter().enumerate() {
        if p < 1.0 {
            small.push(i as u32);
        } else {
            large.push(i as u32);
        }
    }
    while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
        small.pop();
        alias[s as usize] = l;
        prob[l as usize] -= 1.0 - prob[s as usize];
        if prob[l as usize] < 1.0 {
            large.pop();
            small.push(l);
        }
    }
    // leftovers are 1.0 within rounding
    for &i in small.iter().chain(large.iter()) {
        prob[i as usize] = 1.0;
    }
    NoiseTable { prob, alias }
}

impl NoiseTable {
    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    #[inline]
    pub fn sample(&self, rng: &mut SplitMix64) -> u32 {
        let i = rng.next_below(self.prob.len() as u64) as usize;
        if rng.next_f64() < self.prob[i] {
            i as u32
        } else {
            self.alias[i]
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `-ln sigmoid(x)`, stable for large |x|.
#[inline]
fn neg_log_sigmoid(x: f64) -> f64 {
    if x < 0.0 {
        -x + x.exp().ln_1p()
    } else {
        (-x).exp().ln_1p()
    }
}

/// Reusable buffers for [`sgns_step`].
#[derive(Debug, Default)]
pub struct StepScratch {
    negatives: Vec<u32>,
    grad: Vec<f64>,
}

impl StepScratch {
    pub fn new() -> Self {
        StepScratch::default()
    }
}

/// One negative-sampling update for a (sense, context word) pair with the
/// negatives fixed by the caller. Returns the local loss
/// `-ln σ(v_c·v_s) - Σ ln σ(-v_c'·v_s)` evaluated before the update.
///
/// Update order matters: each context row's contribution to the sense
/// gradient is read *before* that row is moved, and the sense row is
/// written once at the end, after all pairs.
pub fn sgns_step_fixed(
    sense_id: u32,
    context_id: u32,
    negatives: &[u32],
    alpha: f64,
    matrices: &EmbeddingMatrices,
    grad: &mut Vec<f64>,
) -> f64 {
    let s = sense_id as usize;
    let ctx = &matrices.context;
    let sense = &matrices.sense;
    grad.clear();
    grad.resize(matrices.dim, 0.0);

    let dot = ctx.dot_row_with(context_id as usize, sense, s);
    let mut loss = neg_log_sigmoid(dot);
    let g = alpha * (1.0 - sigmoid(dot));
    ctx.accumulate_scaled_into(context_id as usize, g, grad);
    ctx.add_scaled_row(context_id as usize, g as f32, sense, s);

    for &neg in negatives {
        let dot = ctx.dot_row_with(neg as usize, sense, s);
        loss += neg_log_sigmoid(-dot);
        let g = -alpha * sigmoid(dot);
        ctx.accumulate_scaled_into(neg as usize, g, grad);
        ctx.add_scaled_row(neg as usize, g as f32, sense, s);
    }

    sense.add_f64_row(s, grad);
    loss
}

/// [`sgns_step_fixed`] with negatives drawn from the noise table. A draw
/// colliding with `context_id` is retried up to 8 times, then skipped.
#[allow(clippy::too_many_arguments)]
pub fn sgns_step(
    sense_id: u32,
    context_id: u32,
    noise: &NoiseTable,
    alpha: f64,
    n_neg: u32,
    matrices: &EmbeddingMatrices,
    rng: &mut SplitMix64,
    scratch: &mut StepScratch,
) -> f64 {
    scratch.negatives.clear();
    for _ in 0..n_neg {
        for _attempt in 0..8 {
            let c = noise.sample(rng);
            if c != context_id {
                scratch.negatives.push(c);
                break;
            }
        }
    }
    sgns_step_fixed(
        sense_id,
        context_id,
        &scratch.negatives,
        alpha,
        matrices,
        &mut scratch.grad,
    )
}

/// Counters collected during training. `sense_occurrences` has one slot
/// per sense id; `sense_updates_per_k` buckets selections by the sense's
/// rank within its word.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    /// In-vocab tokens scanned (before subsampling); drives the LR decay.
    pub tokens_seen: u64,
    /// Target occurrences trained (non-empty context).
    pub targets_trained: u64,
    /// (target, context word) pairs updated.
    pub pairs_trained: u64,
    pub tie_breaks: u64,
    pub loss_sum: f64,
    pub loss_pairs: u64,
    pub sense_occurrences: Vec<u64>,
    pub sense_updates_per_k: Vec<u64>,
    pub wall_seconds: f64,
}

impl TrainStats {
    fn sized(senses: usize, max_k: usize) -> Self {
        TrainStats {
            sense_occurrences: vec![0; senses],
            sense_updates_per_k: vec![0; max_k],
            ..TrainStats::default()
        }
    }

    fn merge(&mut self, other: &TrainStats) {
        self.tokens_seen += other.tokens_seen;
        self.targets_trained += other.targets_trained;
        self.pairs_trained += other.pairs_trained;
        self.tie_breaks += other.tie_breaks;
        self.loss_sum += other.loss_sum;
        self.loss_pairs += other.loss_pairs;
        for (a, b) in self.sense_occurrences.iter_mut().zip(&other.sense_occurrences) {
            *a += b;
        }
        for (a, b) in self
            .sense_updates_per_k
            .iter_mut()
            .zip(&other.sense_updates_per_k)
        {
            *a += b;
        }
    }

    pub fn mean_loss(&self) -> f64 {
        if self.loss_pairs == 0 {
            0.0
        } else {
            self.loss_sum / self.loss_pairs as f64
        }
    }
}

/// Live view passed to a progress callback roughly four times a second.
#[derive(Debug, Clone, Copy)]
pub struct ProgressReport {
    pub tokens_seen: u64,
    pub total_tokens: u64,
    pub alpha: f64,
    pub mean_loss: f64,
    pub tokens_per_sec: f64,
}

struct Shared<'a> {
    vocab: &'a Vocab,
    inventory: &'a SenseInventory,
    matrices: &'a EmbeddingMatrices,
    noise: &'a NoiseTable,
    subsample: &'a SubsampleTable,
    config: &'a TrainConfig,
    /// `epochs * total_tokens`, the LR decay denominator.
    denom: f64,
    tokens: AtomicU64,
    abort: AtomicBool,
    loss_sum_bits: AtomicU64,
    loss_pairs: AtomicU64,
}

fn atomic_f64_add(cell: &AtomicU64, v: f64) {
    let mut cur = cell.load(Relaxed);
    loop {
        let next = (f64::from_bits(cur) + v).to_bits();
        match cell.compare_exchange_weak(cur, next, Relaxed, Relaxed) {
            Ok(_) => return,
            Err(now) => cur = now,
        }
    }
}

/// Line-aligned byte ranges, one per worker. A line that straddles a
/// boundary belongs to the worker whose range it starts in.
fn shard_offsets(path: &Path, workers: u32, len: u64) -> Result<Vec<(u64, u64)>> {
    let mut starts = vec![0u64];
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    for w in 1..workers {
        let nominal = len * w as u64 / workers as u64;
        file.seek(SeekFrom::Start(nominal))
            .map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(&mut file);
        let mut skipped = Vec::new();
        let n = reader
            .read_until(b'\n', &mut skipped)
            .map_err(|e| Error::io(path, e))?;
        let start = (nominal + n as u64).min(len);
        // monotone by construction: same rule applied to increasing offsets
        starts.push(start.max(*starts.last().unwrap()));
    }
    starts.push(len);
    Ok(starts.windows(2).map(|w| (w[0], w[1])).collect())
}

fn run_worker(
    shared: &Shared<'_>,
    path: &Path,
    range: (u64, u64),
    worker_index: u32,
) -> Result<TrainStats> {
    let config = shared.config;
    let inventory = shared.inventory;
    let matrices = shared.matrices;
    let mut rng = SplitMix64::stream(config.seed, worker_index as u64);
    let mut stats = TrainStats::sized(
        inventory.total_senses(),
        inventory.max_k() as usize,
    );
    let mut windower = Windower::new(config.window, config.dynamic_window);
    let mut scratch = StepScratch::new();
    let mut ctx_sum = vec![0.0f64; config.dim];
    let mut scores: Vec<f64> = Vec::new();
    let mut ids: Vec<u32> = Vec::new();
    let mut line = Vec::new();

    for _epoch in 0..config.epochs {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::with_capacity(1 << 16, file);
        reader
            .seek(SeekFrom::Start(range.0))
            .map_err(|e| Error::io(path, e))?;
        let shard_len = range.1 - range.0;
        let mut consumed = 0u64;

        while consumed < shard_len {
            line.clear();
            let n = reader
                .read_until(b'\n', &mut line)
                .map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            consumed += n as u64;
            if shared.abort.load(Relaxed) {
                return Ok(stats);
            }

            ids.clear();
            let mut in_vocab = 0u64;
            let text = String::from_utf8_lossy(&line);
            for token in text.split_ascii_whitespace() {
                if let Some(id) = shared.vocab.id(token) {
                    in_vocab += 1;
                    if shared.subsample.keep(id, &mut rng) {
                        ids.push(id);
                    }
                }
            }
            if in_vocab == 0 {
                continue;
            }
            let before = shared.tokens.fetch_add(in_vocab, Relaxed);
            stats.tokens_seen += in_vocab;
            let alpha = lr_schedule(before as f64 / shared.denom, config);
            if ids.is_empty() {
                continue;
            }

            let mut line_loss = 0.0f64;
            let mut line_pairs = 0u64;
            let mut failed: Option<Error> = None;
            windower.for_each(&ids, &mut rng, |rng, _pos, target, ctx| {
                if failed.is_some() {
                    return;
                }
                let first = inventory.first_sense(target);
                let (sense, tied) = if inventory.k(target) == 1 {
                    (first, false)
                } else {
                    context_sum_into(ctx, matrices, &mut ctx_sum)
                        .expect("window context is non-empty");
                    select_sense(&ctx_sum, target, inventory, matrices, rng, &mut scores)
                };
                stats.targets_trained += 1;
                stats.tie_breaks += tied as u64;
                stats.sense_occurrences[sense as usize] += 1;
                stats.sense_updates_per_k[(sense - first) as usize] += 1;
                for &c in ctx {
                    let loss = sgns_step(
                        sense,
                        c,
                        shared.noise,
                        alpha,
                        config.negatives,
                        matrices,
                        rng,
                        &mut scratch,
                    );
                    if !loss.is_finite() {
                        failed = Some(Error::NonFiniteLoss {
                            words: shared.tokens.load(Relaxed),
                        });
                        return;
                    }
                    stats.loss_sum += loss;
                    stats.loss_pairs += 1;
                    line_loss += loss;
                    line_pairs += 1;
                }
                stats.pairs_trained += ctx.len() as u64;
            });
            if let Some(e) = failed {
                shared.abort.store(true, Relaxed);
                return Err(e);
            }
            if line_pairs > 0 {
                atomic_f64_add(&shared.loss_sum_bits, line_loss);
                shared.loss_pairs.fetch_add(line_pairs, Relaxed);
            }
        }
    }
    Ok(stats)
}

/// Trains a fresh model over `corpus_path`. Initialization, worker RNG
/// streams, and the update schedule are all derived from `config.seed`;
/// with `workers = 1` the result is bit-reproducible.
pub fn train(
    corpus_path: impl AsRef<Path>,
    vocab: &Vocab,
    inventory: &SenseInventory,
    config: &TrainConfig,
) -> Result<(EmbeddingMatrices, TrainStats)> {
    train_with_progress(corpus_path, vocab, inventory, config, None)
}

/// [`train`] with an optional progress callback, invoked periodically
/// from a monitor thread (reads only; does not perturb determinism).
pub fn train_with_progress(
    corpus_path: impl AsRef<Path>,
    vocab: &Vocab,
    inventory: &SenseInventory,
    config: &TrainConfig,
    progress: Option<&(dyn Fn(ProgressReport) + Sync)>,
) -> Result<(EmbeddingMatrices, TrainStats)> {
    let path = corpus_path.as_ref();
    config.validate()?;
    assert_eq!(vocab.len(), inventory.word_count());
    let started = Instant::now();

    let len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    let shards = shard_offsets(path, config.workers, len)?;
    let matrices = init_model(vocab, inventory, config.dim, config.seed);
    let noise = build_noise_table(vocab, 0.75);
    let subsample = SubsampleTable::new(vocab, config.subsample);
    let total_tokens = vocab.total_tokens();
    let shared = Shared {
        vocab,
        inventory,
        matrices: &matrices,
        noise: &noise,
        subsample: &subsample,
        config,
        denom: (config.epochs as f64 * total_tokens as f64).max(1.0),
        tokens: AtomicU64::new(0),
        abort: AtomicBool::new(false),
        loss_sum_bits: AtomicU64::new(0f64.to_bits()),
        loss_pairs: AtomicU64::new(0),
    };
    let done = AtomicBool::new(false);

    let results: Vec<Result<TrainStats>> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards
            .iter()
            .enumerate()
            .map(|(w, &range)| {
                let shared = &shared;
                scope.spawn(move || run_worker(shared, path, range, w as u32))
            })
            .collect();
        if let Some(report) = progress {
            let shared = &shared;
            let done = &done;
            scope.spawn(move || {
                let mut last_tokens = 0u64;
                let mut last_t = Instant::now();
                while !done.load(Relaxed) {
                    std::thread::sleep(std::time::Duration::from_millis(250));
                    let tokens = shared.tokens.load(Relaxed);
                    let now = Instant::now();
                    let dt = now.duration_since(last_t).as_secs_f64();
                    let rate = (tokens - last_tokens) as f64 / dt.max(1e-9);
                    last_tokens = tokens;
                    last_t = now;
                    let pairs = shared.loss_pairs.load(Relaxed);
                    let loss_sum = f64::from_bits(shared.loss_sum_bits.load(Relaxed));
                    report(ProgressReport {
                        tokens_seen: tokens,
                        total_tokens: config.epochs as u64 * total_tokens,
                        alpha: lr_schedule(tokens as f64 / shared.denom, config),
                        mean_loss: if pairs == 0 { 0.0 } else { loss_sum / pairs as f64 },
                        tokens_per_sec: rate,
                    });
                }
            });
        }
        let results = handles.into_iter().map(|h| h.join().unwrap()).collect();
        done.store(true, Relaxed);
        results
    });

    let mut stats = TrainStats::sized(inventory.total_senses(), inventory.max_k() as usize);
    for r in results {
        stats.merge(&r?);
    }
    stats.wall_seconds = started.elapsed().as_secs_f64();

    if let Some(row) = matrices.sense.find_non_finite() {
        return Err(Error::NonFinite {
            row,
            label: inventory.label(row as u32).to_string(),
        });
    }
    if let Some(row) = matrices.context.find_non_finite() {
        return Err(Error::NonFinite {
            row,
            label: vocab.token(row as u32).to_string(),
        });
    }
    Ok((matrices, stats))
}
