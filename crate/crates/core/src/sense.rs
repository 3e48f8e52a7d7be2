//! Sense posteriors and hard assignment.
//!
//! For an occurrence of word `w` with context words `c_1..c_n`, the score
//! of sense `s_k` is `(v_{c_1} + ... + v_{c_n}) . v_{s_k}`. Treating the
//! partition function as constant across senses turns the posterior into
//! a plain softmax over these scores; that approximation is the training
//! path. The exact posterior, which weighs each sense by its partition
//! function over the whole vocabulary, is kept as a reference for small
//! models only.

use crate::error::{Error, Result};
use crate::lexicon::SenseInventory;
use crate::model::EmbeddingMatrices;
use crate::rng::SplitMix64;

/// Posterior over the senses of one word occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorResult {
    /// One probability per sense, in sense-index order; sums to 1.
    pub probs: Vec<f64>,
    /// Argmax index in `0..K`. Exact score ties are broken uniformly at
    /// random where the caller supplies a generator, else toward the
    /// lowest index.
    pub selected: usize,
    /// Whether `selected` came from a random tie-break.
    pub tie_broken: bool,
}

/// Elementwise 64-bit sum of the context rows.
pub fn context_sum(context_ids: &[u32], matrices: &EmbeddingMatrices) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; matrices.dim];
    context_sum_into(context_ids, matrices, &mut acc)?;
    Ok(acc)
}

/// [`context_sum`] into a caller-owned buffer (hot path, no allocation).
pub fn context_sum_into(
    context_ids: &[u32],
    matrices: &EmbeddingMatrices,
    acc: &mut [f64],
) -> Result<()> {
    if context_ids.is_empty() {
        return Err(Error::NoContext);
    }
    acc.fill(0.0);
    for &c in context_ids {
        matrices.context.add_row_into(c as usize, acc);
    }
    Ok(())
}

/// Fills `scores` with `ctx_sum . v_{s_k}` for each sense of `word` and
/// returns the argmax as a global sense id. Ties (bitwise-equal scores)
/// are broken uniformly at random; the generator is consumed only when a
/// tie actually occurs, so tie-free runs are reproducible regardless of
/// tie-break draws elsewhere.
pub fn select_sense(
    ctx_sum: &[f64],
    word: u32,
    inventory: &SenseInventory,
    matrices: &EmbeddingMatrices,
    rng: &mut SplitMix64,
    scores: &mut Vec<f64>,
) -> (u32, bool) {
    let first = inventory.first_sense(word);
    let k = inventory.k(word) as usize;
    scores.clear();
    if k == 1 {
        // single sense: no scoring, no draws
        scores.push(0.0);
        return (first, false);
    }
    for i in 0..k {
        scores.push(matrices.sense.dot_row_f64(first as usize + i, ctx_sum));
    }
    let (idx, tied) = argmax_with_ties(scores, rng);
    (first + idx as u32, tied)
}

fn argmax_with_ties(scores: &[f64], rng: &mut SplitMix64) -> (usize, bool) {
    let mut best = 0usize;
    let mut ties = 1u64;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
            ties = 1;
        } else if scores[i] == scores[best] {
            ties += 1;
        }
    }
    if ties == 1 {
        return (best, false);
    }
    // pick the j-th tied index, j uniform in 0..ties
    let j = rng.next_below(ties);
    let mut seen = 0u64;
    for (i, &s) in scores.iter().enumerate() {
        if s == scores[best] {
            if seen == j {
                return (i, true);
            }
            seen += 1;
        }
    }
    unreachable!("tied index must exist");
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Constant-partition-function posterior: a softmax over the context-sum
/// scores, computed with max subtraction. The selection matches
/// [`select_sense`] draw for draw.
pub fn posterior_approx(
    ctx_sum: &[f64],
    word: u32,
    inventory: &SenseInventory,
    matrices: &EmbeddingMatrices,
    rng: &mut SplitMix64,
) -> PosteriorResult {
    let mut scores = Vec::new();
    let (sense, tie_broken) = select_sense(ctx_sum, word, inventory, matrices, rng, &mut scores);
    if scores.len() == 1 {
        return PosteriorResult {
            probs: vec![1.0],
            selected: 0,
            tie_broken,
        };
    }
    softmax_in_place(&mut scores);
    PosteriorResult {
        probs: scores,
        selected: (sense - inventory.first_sense(word)) as usize,
        tie_broken,
    }
}

/// Exact posterior with explicit per-sense partition functions:
/// `p(s_k) ∝ exp(ctx_sum . v_{s_k}) * Z(s_k)^{-n}` where
/// `Z(s) = Σ_j exp(v_{c_j} . v_s)` sums over the whole vocabulary.
/// All arithmetic in log space. Cost is `O(K |V| D)` per call; this is a
/// reference path for small models, never used in training. Ties break
/// toward the lowest index.
pub fn posterior_exact(
    context_ids: &[u32],
    word: u32,
    inventory: &SenseInventory,
    matrices: &EmbeddingMatrices,
) -> Result<PosteriorResult> {
    let ctx_sum = context_sum(context_ids, matrices)?;
    let n = context_ids.len() as f64;
    let first = inventory.first_sense(word) as usize;
    let k = inventory.k(word) as usize;
    let vocab_rows = matrices.context.rows();

    let mut log_p: Vec<f64> = (0..k)
        .map(|i| {
            let sense_row = first + i;
            let score = matrices.sense.dot_row_f64(sense_row, &ctx_sum);
            let mut dots = Vec::with_capacity(vocab_rows);
            for j in 0..vocab_rows {
                dots.push(matrices.context.dot_row_with(j, &matrices.sense, sense_row));
            }
            let max = dots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + dots.iter().map(|d| (d - max).exp()).sum::<f64>().ln();
            score - n * log_z
        })
        .collect();
    softmax_in_place(&mut log_p);

    let selected = log_p
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    // max_by returns the last maximum; prefer the first for documented
    // lowest-index tie behavior
    let selected = log_p
        .iter()
        .position(|&p| p == log_p[selected])
        .unwrap();
    Ok(PosteriorResult {
        probs: log_p,
        selected,
        tie_broken: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use crate::lexicon::build_sense_inventory;
    use crate::model::HogwildMatrix;
    use std::collections::HashMap;

    fn model_from(context: Vec<Vec<f32>>, sense: Vec<Vec<f32>>) -> EmbeddingMatrices {
        let dim = context.first().map_or(sense[0].len(), Vec::len);
        EmbeddingMatrices {
            dim,
            context: HogwildMatrix::from_vec(
                context.len(),
                dim,
                context.into_iter().flatten().collect(),
            ),
            sense: HogwildMatrix::from_vec(
                sense.len(),
                dim,
                sense.into_iter().flatten().collect(),
            ),
        }
    }

    fn inventory_k(words: &[&str], ks: &[u32]) -> (crate::corpus::Vocab, SenseInventory) {
        let vocab = build_vocab(words, 1).unwrap();
        let counts: HashMap<String, u32> = words
            .iter()
            .zip(ks)
            .map(|(w, k)| (w.to_string(), *k))
            .collect();
        let inv = build_sense_inventory(&vocab, &counts, 8);
        (vocab, inv)
    }

    #[test]
    fn context_sum_singleton_and_doubling() {
        let m = model_from(vec![vec![1.0, -2.0, 0.5]], vec![vec![0.0; 3]]);
        assert_eq!(context_sum(&[0], &m).unwrap(), vec![1.0, -2.0, 0.5]);
        assert_eq!(context_sum(&[0, 0], &m).unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn context_sum_empty_errors() {
        let m = model_from(vec![vec![0.0]], vec![vec![0.0]]);
        assert!(matches!(context_sum(&[], &m), Err(Error::NoContext)));
    }

    // 10 random vectors against a per-dimension loop oracle; the oracle
    // adds in the same index order, so f64 results must be bit-equal.
    #[test]
    fn context_sum_matches_loop_oracle_exactly() {
        let mut rng = SplitMix64::new(17);
        let dim = 6;
        let rows: Vec<Vec<f32>> = (0..10)
            .map(|_| (0..dim).map(|_| (rng.next_f64() - 0.5) as f32).collect())
            .collect();
        let m = model_from(rows.clone(), vec![vec![0.0; dim]]);
        let ids: Vec<u32> = (0..10).collect();
        let got = context_sum(&ids, &m).unwrap();
        for d in 0..dim {
            let mut acc = 0.0f64;
            for row in &rows {
                acc += row[d] as f64;
            }
            assert_eq!(got[d], acc, "dim {d}");
        }
    }

    #[test]
    fn single_sense_word_is_certain_and_draws_nothing() {
        let (vocab, inv) = inventory_k(&["a", "b"], &[1, 2]);
        let m = model_from(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.3, 0.1], vec![0.2, 0.2], vec![0.1, 0.4]],
        );
        let mut rng = SplitMix64::new(5);
        let expect_next = rng.clone().next_u64();
        let r = posterior_approx(&[1.0, 1.0], vocab.id("a").unwrap(), &inv, &m, &mut rng);
        assert_eq!(r.probs, vec![1.0]);
        assert_eq!(r.selected, 0);
        assert!(!r.tie_broken);
        assert_eq!(rng.next_u64(), expect_next);
    }

    #[test]
    fn orthogonal_context_gives_uniform_posterior() {
        let (vocab, inv) = inventory_k(&["w"], &[3]);
        // ctx_sum = (1,0,0); all senses orthogonal to it
        let m = model_from(
            vec![vec![1.0, 0.0, 0.0]],
            vec![
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![0.0, -1.0, 1.0],
            ],
        );
        let mut rng = SplitMix64::new(2);
        let r = posterior_approx(&[1.0, 0.0, 0.0], vocab.id("w").unwrap(), &inv, &m, &mut rng);
        for p in &r.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12, "{:?}", r.probs);
        }
        assert!(r.tie_broken);
    }

    // Hand-evaluated two-sense softmax: scores 1 and 0.
    #[test]
    fn posterior_matches_hand_softmax() {
        let (vocab, inv) = inventory_k(&["w"], &[2]);
        let m = model_from(
            vec![vec![1.0, 0.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        let mut rng = SplitMix64::new(0);
        let r = posterior_approx(&[1.0, 0.0], vocab.id("w").unwrap(), &inv, &m, &mut rng);
        let e = std::f64::consts::E;
        assert!((r.probs[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((r.probs[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((r.probs[0] - 0.7310585786300049).abs() < 1e-12);
        assert_eq!(r.selected, 0);
        let total: f64 = r.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    // Shifting every sense vector by c*u with ctx_sum.u = 1 adds the same
    // constant to every score; probabilities must not move.
    #[test]
    fn posterior_is_shift_invariant() {
        let (vocab, inv) = inventory_k(&["w"], &[3]);
        let ctx = [0.5, -1.5, 2.0];
        let norm2: f64 = ctx.iter().map(|v| v * v).sum();
        let u: Vec<f64> = ctx.iter().map(|v| v / norm2).collect();
        let senses: Vec<Vec<f32>> = vec![
            vec![0.4, 0.2, -0.3],
            vec![-0.1, 0.7, 0.2],
            vec![0.0, -0.5, 0.6],
        ];
        let shifted: Vec<Vec<f32>> = senses
            .iter()
            .map(|s| {
                s.iter()
                    .zip(&u)
                    .map(|(v, ui)| (*v as f64 + 5.0 * ui) as f32)
                    .collect()
            })
            .collect();
        let word = vocab.id("w").unwrap();
        let m1 = model_from(vec![vec![0.0; 3]], senses);
        let m2 = model_from(vec![vec![0.0; 3]], shifted);
        let mut rng = SplitMix64::new(1);
        let a = posterior_approx(&ctx, word, &inv, &m1, &mut rng);
        let b = posterior_approx(&ctx, word, &inv, &m2, &mut rng);
        for (x, y) in a.probs.iter().zip(&b.probs) {
            // f32 rounding of the shifted vectors costs precision; the
            // softmax shift itself is exact
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
        assert_eq!(a.selected, b.selected);
    }

    #[test]
    fn softmax_shift_is_invariant_to_1e9() {
        let scores = [1.25, -0.75, 3.5, 0.0];
        let mut a: Vec<f64> = scores.to_vec();
        let mut b: Vec<f64> = scores.iter().map(|s| s + 123.456).collect();
        softmax_in_place(&mut a);
        softmax_in_place(&mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scaling_context_keeps_unique_argmax() {
        let (vocab, inv) = inventory_k(&["w"], &[4]);
        let mut rng = SplitMix64::new(33);
        for _ in 0..50 {
            let senses: Vec<Vec<f32>> = (0..4)
                .map(|_| (0..3).map(|_| (rng.next_f64() - 0.5) as f32).collect())
                .collect();
            let m = model_from(vec![vec![0.0; 3]], senses);
            let ctx: Vec<f64> = (0..3).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let scaled: Vec<f64> = ctx.iter().map(|v| v * 7.5).collect();
            let word = vocab.id("w").unwrap();
            let mut r1 = SplitMix64::new(0);
            let mut r2 = SplitMix64::new(0);
            let a = posterior_approx(&ctx, word, &inv, &m, &mut r1);
            let b = posterior_approx(&scaled, word, &inv, &m, &mut r2);
            if !a.tie_broken {
                assert_eq!(a.selected, b.selected);
            }
        }
    }

    #[test]
    fn tie_breaks_are_uniform_chi_squared() {
        let (vocab, inv) = inventory_k(&["w"], &[4]);
        // all-zero sense vectors: every score 0, four-way tie
        let m = model_from(vec![vec![1.0, 0.0]], vec![vec![0.0; 2]; 4]);
        let word = vocab.id("w").unwrap();
        let mut rng = SplitMix64::new(314);
        let mut counts = [0u64; 4];
        let n = 10_000;
        for _ in 0..n {
            let r = posterior_approx(&[1.0, 0.0], word, &inv, &m, &mut rng);
            assert!(r.tie_broken);
            counts[r.selected] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square critical value, 3 degrees of freedom, p = 0.001
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn exact_posterior_single_sense_is_certain() {
        let (vocab, inv) = inventory_k(&["w"], &[1]);
        let m = model_from(vec![vec![0.2, 0.1]], vec![vec![0.3, -0.1]]);
        let r = posterior_exact(&[0], vocab.id("w").unwrap(), &inv, &m).unwrap();
        assert_eq!(r.probs, vec![1.0]);
    }

    // Context rows are all sign vectors of {-s,+s}^dim, so each sense's
    // partition function factorizes into a product of cosh terms that
    // depends only on the multiset of |coordinates|. Senses that permute
    // the same coordinates then have equal partition functions, and the
    // exact posterior must collapse to the constant-Z softmax.
    #[test]
    fn exact_equals_approx_when_partition_functions_match() {
        let dim = 4;
        let scale = 0.3f32;
        let mut context_rows = Vec::new();
        for mask in 0..16u32 {
            context_rows.push(
                (0..dim)
                    .map(|d| if mask >> d & 1 == 1 { scale } else { -scale })
                    .collect::<Vec<f32>>(),
            );
        }
        let senses = vec![
            vec![0.5, -0.2, 0.1, 0.0],
            vec![0.1, 0.5, 0.0, -0.2],
            vec![-0.2, 0.0, 0.5, 0.1],
        ];
        let words: Vec<String> = (0..16).map(|i| format!("c{i:02}")).collect();
        let mut all = words.clone();
        all.push("w".to_string());
        let refs: Vec<&str> = all.iter().map(String::as_str).collect();
        let vocab = build_vocab(&refs, 1).unwrap();
        let counts = HashMap::from([("w".to_string(), 3u32)]);
        let inv = build_sense_inventory(&vocab, &counts, 8);

        // context matrix must line up with vocab ids; senses of "w" come
        // after the 16 monosemic context words in id order
        let mut ctx_matrix = vec![vec![0.0f32; dim]; vocab.len()];
        for (i, row) in context_rows.iter().enumerate() {
            ctx_matrix[vocab.id(&format!("c{i:02}")).unwrap() as usize] = row.clone();
        }
        let w = vocab.id("w").unwrap();
        let mut sense_matrix = vec![vec![0.0f32; dim]; inv.total_senses()];
        for (i, s) in senses.iter().enumerate() {
            sense_matrix[inv.first_sense(w) as usize + i] = s.clone();
        }
        let m = model_from(ctx_matrix, sense_matrix);

        let context_ids: Vec<u32> = ["c03", "c07", "c12"]
            .iter()
            .map(|t| vocab.id(t).unwrap())
            .collect();
        let exact = posterior_exact(&context_ids, w, &inv, &m).unwrap();
        let ctx = context_sum(&context_ids, &m).unwrap();
        let mut rng = SplitMix64::new(0);
        let approx = posterior_approx(&ctx, w, &inv, &m, &mut rng);
        for (x, y) in exact.probs.iter().zip(&approx.probs) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        assert!((exact.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    // Brute-force evaluation of the exact posterior over a 20-word model:
    // direct exponentials, no log space, independent code path.
    #[test]
    fn exact_matches_brute_force_oracle() {
        let mut rng = SplitMix64::new(4242);
        let dim = 4;
        let vocab_size = 20;
        let words: Vec<String> = (0..vocab_size).map(|i| format!("v{i:02}")).collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let vocab = build_vocab(&refs, 1).unwrap();
        let target = vocab.id("v00").unwrap();
        let counts = HashMap::from([("v00".to_string(), 3u32)]);
        let inv = build_sense_inventory(&vocab, &counts, 8);

        for _trial in 0..20 {
            let ctx_rows: Vec<Vec<f32>> = (0..vocab_size)
                .map(|_| (0..dim).map(|_| (rng.next_f64() - 0.5) as f32).collect())
                .collect();
            let sense_rows: Vec<Vec<f32>> = (0..inv.total_senses())
                .map(|_| (0..dim).map(|_| (rng.next_f64() - 0.5) as f32).collect())
                .collect();
            let m = model_from(ctx_rows.clone(), sense_rows.clone());
            let context_ids: Vec<u32> =
                (0..3).map(|_| rng.next_below(vocab_size as u64) as u32).collect();

            let got = posterior_exact(&context_ids, target, &inv, &m).unwrap();

            // oracle: p_k ∝ exp(sum_ctx . s_k) * Z_k^{-n}
            let n = context_ids.len() as f64;
            let first = inv.first_sense(target) as usize;
            let mut weights = Vec::new();
            for k in 0..inv.k(target) as usize {
                let s = &sense_rows[first + k];
                let mut score = 0.0f64;
                for d in 0..dim {
                    let c: f64 = context_ids
                        .iter()
                        .map(|&c| ctx_rows[c as usize][d] as f64)
                        .sum();
                    score += c * s[d] as f64;
                }
                let z: f64 = ctx_rows
                    .iter()
                    .map(|row| {
                        row.iter()
                            .zip(s)
                            .map(|(a, b)| *a as f64 * *b as f64)
                            .sum::<f64>()
                            .exp()
                    })
                    .sum();
                weights.push(score.exp() * z.powf(-n));
            }
            let total: f64 = weights.iter().sum();
            for (x, w) in got.probs.iter().zip(&weights) {
                assert!((x - w / total).abs() < 1e-9, "{x} vs {}", w / total);
            }
        }
    }
}
