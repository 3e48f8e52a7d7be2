//! Nearest-neighbor inspection and 2D projection of sense vectors.
//!
//! Neighbor search is an exact full scan under cosine similarity. The
//! projection is classical (Torgerson) multidimensional scaling: square
//! the pairwise distances, double-center, and place points along the top
//! two eigenvectors scaled by the square roots of their eigenvalues.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lexicon::parse_label;
use crate::model::VectorSet;
use crate::rng::SplitMix64;

/// Ranked neighbors of one query label.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborResult {
    pub query: String,
    /// `(label, cosine similarity)`, descending; ties ordered by label.
    pub neighbors: Vec<(String, f64)>,
}

/// 2D coordinates from classical MDS.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub points: Vec<(String, f64, f64)>,
    /// How many of the top-2 eigenvalues were positive; coordinates for
    /// the rest are zero (the input had less than 2 dimensions of spread).
    pub positive_eigenvalues: usize,
}

/// Distance used to build the MDS input matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMetric {
    Euclidean,
    /// `1 - cosine(a, b)`.
    Cosine,
}

/// Cosine similarity with 64-bit accumulation.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// The closest labels to `query` by edit distance, for error messages.
pub fn closest_labels(query: &str, vectors: &VectorSet, n: usize) -> Vec<String> {
    let mut scored: Vec<(usize, &str)> = vectors
        .labels()
        .map(|l| (levenshtein(query, l), l))
        .collect();
    scored.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    scored.into_iter().take(n).map(|(_, l)| l.to_string()).collect()
}

fn unknown_label(label: &str, vectors: &VectorSet) -> Error {
    Error::UnknownLabel {
        label: label.to_string(),
        suggestions: closest_labels(label, vectors, 3),
    }
}

/// Top-`k` labels by cosine similarity to `label`, full scan. With
/// `include_own_senses` unset, other senses of the same word are skipped.
/// Candidate rows with zero norm are skipped (they have no direction).
pub fn nearest_neighbors(
    label: &str,
    k: usize,
    vectors: &VectorSet,
    include_own_senses: bool,
) -> Result<NeighborResult> {
    let row = vectors.find(label).ok_or_else(|| unknown_label(label, vectors))?;
    let query_vec = vectors.row(row);
    let (query_word, _) = parse_label(label);

    let mut scored: Vec<(String, f64)> = Vec::new();
    for i in 0..vectors.len() {
        if i == row {
            continue;
        }
        let candidate = vectors.label(i);
        if !include_own_senses && parse_label(candidate).0 == query_word {
            continue;
        }
        match cosine(query_vec, vectors.row(i)) {
            Ok(sim) => scored.push((candidate.to_string(), sim)),
            Err(Error::ZeroVector) => continue,
            Err(e) => return Err(e),
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(NeighborResult {
        query: label.to_string(),
        neighbors: scored,
    })
}

/// Classical MDS of the selected labels into 2 coordinates.
///
/// Squared pairwise distances are double-centered into the Gram matrix
/// `B`; its top-2 eigenpairs come from shifted subspace iteration with
/// Rayleigh-Ritz extraction. Coordinates are `eigenvector * sqrt(lambda)`
/// with each column's sign fixed so its first nonzero coordinate is
/// positive. Eigenvalues that are not positive contribute zero
/// coordinates (reported in `positive_eigenvalues`).
pub fn project_2d(
    labels: &[String],
    vectors: &VectorSet,
    metric: DistanceMetric,
) -> Result<Projection2D> {
    let n = labels.len();
    if !(2..=1000).contains(&n) {
        return Err(Error::InvalidConfig(format!(
            "projection needs 2..=1000 labels, got {n}"
        )));
    }
    let rows: Vec<&[f32]> = labels
        .iter()
        .map(|l| {
            vectors
                .find(l)
                .map(|i| vectors.row(i))
                .ok_or_else(|| unknown_label(l, vectors))
        })
        .collect::<Result<_>>()?;

    // squared distance matrix
    let mut d2 = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d2ij = match metric {
                DistanceMetric::Euclidean => rows[i]
                    .iter()
                    .zip(rows[j])
                    .map(|(a, b)| {
                        let d = *a as f64 - *b as f64;
                        d * d
                    })
                    .sum::<f64>(),
                DistanceMetric::Cosine => {
                    let d = 1.0 - cosine(rows[i], rows[j])?;
                    d * d
                }
            };
            d2[i * n + j] = d2ij;
            d2[j * n + i] = d2ij;
        }
    }

    let b = double_center(&d2, n);
    let (pairs, positive) = top2_eigenpairs(&b, n);

    let mut coords = vec![[0.0f64; 2]; n];
    for (c, (lambda, vec)) in pairs.iter().enumerate() {
        if *lambda <= 0.0 {
            continue;
        }
        let scale = lambda.sqrt();
        for i in 0..n {
            coords[i][c] = vec[i] * scale;
        }
        // sign convention: first nonzero entry of the column positive
        if let Some(first) = (0..n).find(|&i| coords[i][c] != 0.0) {
            if coords[first][c] < 0.0 {
                for point in coords.iter_mut() {
                    point[c] = -point[c];
                }
            }
        }
    }

    Ok(Projection2D {
        points: labels
            .iter()
            .zip(&coords)
            .map(|(l, c)| (l.clone(), c[0], c[1]))
            .collect(),
        positive_eigenvalues: positive,
    })
}

/// `B = -1/2 J D2 J` with `J = I - 11^T/n`.
fn double_center(d2: &[f64], n: usize) -> Vec<f64> {
    let mut row_mean = vec![0.0f64; n];
    for i in 0..n {
        row_mean[i] = d2[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64;
    }
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut b = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = -0.5 * (d2[i * n + j] - row_mean[i] - row_mean[j] + grand);
        }
    }
    b
}

fn matvec(b: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..n {
        out[i] = b[i * n..(i + 1) * n]
            .iter()
            .zip(v)
            .map(|(x, y)| x * y)
            .sum();
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Turns `v` into a unit vector orthogonal to unit `u`. A single
/// Gram-Schmidt pass on a nearly-parallel `v` cancels catastrophically and
/// the normalized residual can point anywhere, so dependence is detected
/// by the norm drop and `v` is re-drawn at random; a second pass cleans up
/// the survivor.
fn orthonormalize_against(v: &mut [f64], u: &[f64], rng: &mut SplitMix64) {
    loop {
        let pre = dot(v, v).sqrt();
        if pre > 0.0 {
            let d = dot(v, u);
            for (x, y) in v.iter_mut().zip(u) {
                *x -= d * y;
            }
            if normalize(v) > 1e-8 * pre {
                let d = dot(v, u);
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= d * y;
                }
                normalize(v);
                return;
            }
        }
        for x in v.iter_mut() {
            *x = rng.next_f64() - 0.5;
        }
    }
}

/// Top-2 eigenpairs of symmetric `b` (algebraically largest), via
/// subspace iteration on `b + sigma I` (Gershgorin shift keeps the
/// iterated operator positive semidefinite so the algebraically largest
/// eigenvalues dominate). Returns pairs sorted by eigenvalue descending
/// plus the count of positive eigenvalues among them.
fn top2_eigenpairs(b: &[f64], n: usize) -> ([(f64, Vec<f64>); 2], usize) {
    // shift: sigma >= -lambda_min by Gershgorin discs
    let mut sigma = 0.0f64;
    let mut scale = 1e-300f64;
    for i in 0..n {
        let mut radius = 0.0;
        for j in 0..n {
            if j != i {
                radius += b[i * n + j].abs();
            }
        }
        sigma = sigma.max(radius - b[i * n + i]);
        scale = scale.max(b[i * n + i].abs() + radius);
    }
    sigma = sigma.max(0.0);

    let mut rng = SplitMix64::new(0x4D44_53);
    let mut v0: Vec<f64> = (0..n).map(|_| rng.next_f64() - 0.5).collect();
    let mut v1: Vec<f64> = (0..n).map(|_| rng.next_f64() - 0.5).collect();
    normalize(&mut v0);
    orthonormalize_against(&mut v1, &v0, &mut rng);

    let mut t0 = vec![0.0f64; n];
    let mut t1 = vec![0.0f64; n];
    let mut w0 = vec![0.0f64; n];
    let mut w1 = vec![0.0f64; n];
    let mut l0 = 0.0f64;
    let mut l1 = 0.0f64;
    let tol = 1e-12 * scale;

    for _iter in 0..10_000 {
        // power step on b + sigma I
        matvec(b, n, &v0, &mut t0);
        matvec(b, n, &v1, &mut t1);
        for i in 0..n {
            t0[i] += sigma * v0[i];
            t1[i] += sigma * v1[i];
        }
        if normalize(&mut t0) == 0.0 {
            // b is (numerically) zero
            break;
        }
        orthonormalize_against(&mut t1, &t0, &mut rng);
        std::mem::swap(&mut v0, &mut t0);
        std::mem::swap(&mut v1, &mut t1);

        // Rayleigh-Ritz on the 2D subspace, against b itself
        matvec(b, n, &v0, &mut t0);
        matvec(b, n, &v1, &mut t1);
        let t00 = dot(&v0, &t0);
        let t01 = dot(&v0, &t1);
        let t11 = dot(&v1, &t1);
        let s = ((t00 - t11).powi(2) + 4.0 * t01 * t01).sqrt();
        l0 = (t00 + t11 + s) / 2.0;
        l1 = (t00 + t11 - s) / 2.0;
        // eigenvector of [[t00,t01],[t01,t11]] for l0
        let (c, sn) = if t01.abs() > 1e-300 {
            let r = (l0 - t00) / t01;
            let norm = (1.0 + r * r).sqrt();
            (1.0 / norm, r / norm)
        } else if t00 >= t11 {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        for i in 0..n {
            w0[i] = c * v0[i] + sn * v1[i];
            w1[i] = -sn * v0[i] + c * v1[i];
        }

        // residuals of both Ritz pairs
        matvec(b, n, &w0, &mut t0);
        matvec(b, n, &w1, &mut t1);
        let r0: f64 = (0..n).map(|i| (t0[i] - l0 * w0[i]).powi(2)).sum::<f64>().sqrt();
        let r1: f64 = (0..n).map(|i| (t1[i] - l1 * w1[i]).powi(2)).sum::<f64>().sqrt();
        if r0 <= tol && r1 <= tol {
            break;
        }
        v0.copy_from_slice(&w0);
        v1.copy_from_slice(&w1);
    }

    let positive = usize::from(l0 > 0.0) + usize::from(l1 > 0.0);
    ([(l0, w0), (l1, w1)], positive)
}

/// Writes `label<TAB>x<TAB>y` lines.
pub fn write_projection_tsv(projection: &Projection2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (label, x, y) in &projection.points {
        writeln!(w, "{label}\t{x}\t{y}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders a labeled scatter plot of the projection.
pub fn write_projection_svg(projection: &Projection2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (width, height, margin) = (800.0, 600.0, 60.0);
    let xs: Vec<f64> = projection.points.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = projection.points.iter().map(|p| p.2).collect();
    let bound = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        }
    };
    let (x_lo, x_hi) = bound(&xs);
    let (y_lo, y_hi) = bound(&ys);
    let sx = (width - 2.0 * margin) / (x_hi - x_lo);
    let sy = (height - 2.0 * margin) / (y_hi - y_lo);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (label, x, y) in &projection.points {
        let px = margin + (x - x_lo) * sx;
        // SVG y grows downward
        let py = height - margin - (y - y_lo) * sy;
        svg.push_str(&format!(
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"steelblue\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" font-family=\"sans-serif\">{}</text>\n",
            px + 5.0,
            py - 5.0,
            xml_escape(label)
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
