//! Embedding storage and persistence.
//!
//! Two matrices back the model: `context` holds one row per vocabulary
//! word (the prediction side), `sense` one row per sense id. During
//! training both are shared across workers and updated without locks;
//! torn reads under concurrent writes are tolerated as gradient noise.
//! Outside training the matrices are immutable.
//!
//! On disk, vector files use the word2vec convention: a `"<rows> <dim>"`
//! header line, then one row per line as `label value...` (text) or
//! `label` + space + `dim` little-endian 32-bit floats + newline (binary).
//! A checkpoint is a directory holding the JSON header, the vocabulary,
//! per-word sense counts, and both matrices in binary form.

use std::cell::UnsafeCell;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::lexicon::{build_sense_inventory, load_sense_counts, SenseInventory};
use crate::rng::SplitMix64;
use crate::trainer::TrainConfig;

/// Version tag written to checkpoint headers.
pub const MODEL_MAGIC: &str = "SENSEGRAM-MODEL v1";

/// Dense row-major f32 matrix shared across training workers.
///
/// All element access goes through methods; no `&mut` to the buffer ever
/// escapes. Concurrent unsynchronized updates are part of the training
/// contract (lock-relaxed SGD): workers may observe half-applied rows,
/// which the algorithm absorbs as noise. Do not hold a slice from
/// [`HogwildMatrix::row`] across concurrent writes.
pub struct HogwildMatrix {
    data: UnsafeCell<Box<[f32]>>,
    rows: usize,
    dim: usize,
}

unsafe impl Sync for HogwildMatrix {}

impl HogwildMatrix {
    pub fn zeroed(rows: usize, dim: usize) -> Self {
        assert!(dim >= 1);
        HogwildMatrix {
            data: UnsafeCell::new(vec![0.0; rows * dim].into_boxed_slice()),
            rows,
            dim,
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * dim);
        HogwildMatrix {
            data: UnsafeCell::new(data.into_boxed_slice()),
            rows,
            dim,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn row_ptr(&self, r: usize) -> *mut f32 {
        debug_assert!(r < self.rows);
        unsafe { (*self.data.get()).as_mut_ptr().add(r * self.dim) }
    }

    /// Read-only view of a row. Valid only while no concurrent writer is
    /// running (anywhere outside the training inner loop).
    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        unsafe { std::slice::from_raw_parts(self.row_ptr(r), self.dim) }
    }

    /// Whole buffer; same aliasing caveat as [`HogwildMatrix::row`].
    pub fn as_slice(&self) -> &[f32] {
        unsafe { std::slice::from_raw_parts((*self.data.get()).as_ptr(), self.rows * self.dim) }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        debug_assert!(c < self.dim);
        unsafe { *self.row_ptr(r).add(c) }
    }

    #[inline]
    pub fn set(&self, r: usize, c: usize, v: f32) {
        debug_assert!(c < self.dim);
        unsafe { *self.row_ptr(r).add(c) = v }
    }

    pub fn set_row(&self, r: usize, values: &[f32]) {
        assert_eq!(values.len(), self.dim);
        let p = self.row_ptr(r);
        unsafe {
            std::ptr::copy_nonoverlapping(values.as_ptr(), p, self.dim);
        }
    }

    /// Dot product of `self[r]` and `other[ro]`, accumulated in 64-bit.
    #[inline]
    pub fn dot_row_with(&self, r: usize, other: &HogwildMatrix, ro: usize) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let a = self.row_ptr(r);
        let b = other.row_ptr(ro);
        let mut acc = 0.0f64;
        for i in 0..self.dim {
            unsafe {
                acc += *a.add(i) as f64 * *b.add(i) as f64;
            }
        }
        acc
    }

    /// Dot product of `self[r]` with a 64-bit vector (context sums).
    #[inline]
    pub fn dot_row_f64(&self, r: usize, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim);
        let a = self.row_ptr(r);
        let mut acc = 0.0f64;
        for (i, vi) in v.iter().enumerate() {
            unsafe {
                acc += *a.add(i) as f64 * vi;
            }
        }
        acc
    }

    /// `acc += self[r]`, in 64-bit.
    #[inline]
    pub fn add_row_into(&self, r: usize, acc: &mut [f64]) {
        debug_assert_eq!(acc.len(), self.dim);
        let a = self.row_ptr(r);
        for (i, slot) in acc.iter_mut().enumerate() {
            unsafe {
                *slot += *a.add(i) as f64;
            }
        }
    }

    /// `acc += g * self[r]`, in 64-bit. Reads the row as it currently
    /// stands (the caller wants pre-update values; call before mutating).
    #[inline]
    pub fn accumulate_scaled_into(&self, r: usize, g: f64, acc: &mut [f64]) {
        debug_assert_eq!(acc.len(), self.dim);
        let a = self.row_ptr(r);
        for (i, slot) in acc.iter_mut().enumerate() {
            unsafe {
                *slot += g * *a.add(i) as f64;
            }
        }
    }

    /// `self[r] += g * src[src_row]`.
    #[inline]
    pub fn add_scaled_row(&self, r: usize, g: f32, src: &HogwildMatrix, src_row: usize) {
        debug_assert_eq!(self.dim, src.dim);
        let dst = self.row_ptr(r);
        let s = src.row_ptr(src_row);
        for i in 0..self.dim {
            unsafe {
                *dst.add(i) += g * *s.add(i);
            }
        }
    }

    /// `self[r] += delta`, rounding each element to f32 once.
    #[inline]
    pub fn add_f64_row(&self, r: usize, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.dim);
        let dst = self.row_ptr(r);
        for (i, d) in delta.iter().enumerate() {
            unsafe {
                *dst.add(i) = (*dst.add(i) as f64 + d) as f32;
            }
        }
    }

    /// First row containing a NaN or infinity, if any.
    pub fn find_non_finite(&self) -> Option<usize> {
        (0..self.rows).find(|&r| self.row(r).iter().any(|v| !v.is_finite()))
    }
}

impl Clone for HogwildMatrix {
    fn clone(&self) -> Self {
        HogwildMatrix::from_vec(self.rows, self.dim, self.as_slice().to_vec())
    }
}

impl std::fmt::Debug for HogwildMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "HogwildMatrix({}x{})", self.rows, self.dim)
    }
}

/// The model parameters: per-word context vectors and per-sense vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrices {
    pub dim: usize,
    pub context: HogwildMatrix,
    pub sense: HogwildMatrix,
}

/// Fresh matrices: sense rows i.i.d. uniform in `[-0.5/dim, +0.5/dim]`
/// from a stream derived from `seed`, context rows all zero. Random sense
/// rows make posterior scores differ across senses from the first update
/// on; zero context rows make the first posterior per occurrence uniform.
pub fn init_model(
    vocab: &Vocab,
    inventory: &SenseInventory,
    dim: usize,
    seed: u64,
) -> EmbeddingMatrices {
    assert!(dim >= 1, "dim must be >= 1");
    let mut rng = SplitMix64::stream(seed, u64::MAX);
    let senses = inventory.total_senses();
    let mut data = Vec::with_capacity(senses * dim);
    for _ in 0..senses * dim {
        data.push(((rng.next_f64() - 0.5) / dim as f64) as f32);
    }
    EmbeddingMatrices {
        dim,
        context: HogwildMatrix::zeroed(vocab.len(), dim),
        sense: HogwildMatrix::from_vec(senses, dim, data),
    }
}

/// On-disk vector encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorFormat {
    Text,
    Binary,
}

impl std::str::FromStr for VectorFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(VectorFormat::Text),
            "binary" => Ok(VectorFormat::Binary),
            other => Err(Error::InvalidConfig(format!(
                "unknown vector format {other:?} (expected text or binary)"
            ))),
        }
    }
}

impl std::fmt::Display for VectorFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VectorFormat::Text => "text",
            VectorFormat::Binary => "binary",
        })
    }
}

/// Writes labeled rows of `matrix` in the word2vec layout. Labels must
/// match the row count and contain no whitespace.
pub fn write_vectors<'a, I>(
    path: impl AsRef<Path>,
    format: VectorFormat,
    labels: I,
    matrix: &HogwildMatrix,
) -> Result<()>
where
    I: IntoIterator<Item = &'a str>,
{
    let path = path.as_ref();
    let labels: Vec<&str> = labels.into_iter().collect();
    assert_eq!(labels.len(), matrix.rows(), "label count != row count");
    if let Some(r) = matrix.find_non_finite() {
        return Err(Error::NonFinite {
            row: r,
            label: labels[r].to_string(),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(w, "{} {}\n", matrix.rows(), matrix.dim()).map_err(io)?;
    let mut line = String::new();
    for (r, label) in labels.iter().enumerate() {
        match format {
            VectorFormat::Text => {
                line.clear();
                line.push_str(label);
                for v in matrix.row(r) {
                    line.push(' ');
                    // f32 Display prints the shortest decimal that parses
                    // back to the same bits.
                    line.push_str(&format!("{v}"));
                }
                line.push('\n');
                w.write_all(line.as_bytes()).map_err(io)?;
            }
            VectorFormat::Binary => {
                w.write_all(label.as_bytes()).map_err(io)?;
                w.write_all(b" ").map_err(io)?;
                for v in matrix.row(r) {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
                w.write_all(b"\n").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Saves the sense vectors of a trained model.
pub fn save_vectors(
    matrices: &EmbeddingMatrices,
    inventory: &SenseInventory,
    path: impl AsRef<Path>,
    format: VectorFormat,
) -> Result<()> {
    write_vectors(path, format, inventory.labels(), &matrices.sense)
}

/// Labeled vectors loaded from disk, with label lookup.
#[derive(Debug, Clone)]
pub struct VectorSet {
    labels: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl VectorSet {
    pub fn from_parts(labels: Vec<String>, dim: usize, data: Vec<f32>) -> Self {
        assert_eq!(labels.len() * dim, data.len());
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        VectorSet {
            labels,
            dim,
            data,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn find(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }
}

/// Loads a vector file, auto-detecting text vs binary. A strict text parse
/// is attempted first (whole file UTF-8, every row exactly `dim` decimal
/// values); on failure the binary layout is tried.
pub fn load_vectors(path: impl AsRef<Path>) -> Result<VectorSet> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;

    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::parse(path, 1, "header is not UTF-8"))?;
    let (rows, dim) = header
        .split_once(' ')
        .and_then(|(r, d)| Some((r.parse::<usize>().ok()?, d.parse::<usize>().ok()?)))
        .ok_or_else(|| Error::parse(path, 1, format!("bad header {header:?}")))?;
    if dim == 0 {
        return Err(Error::parse(path, 1, "dimension must be >= 1"));
    }
    let body = &bytes[header_end + 1..];

    let set = match parse_text_body(path, body, rows, dim) {
        Ok(set) => set,
        Err(_) => parse_binary_body(path, body, rows, dim)?,
    };
    for (i, row) in (0..set.len()).map(|i| (i, set.row(i))) {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i,
                label: set.label(i).to_string(),
            });
        }
    }
    Ok(set)
}

fn parse_text_body(path: &Path, body: &[u8], rows: usize, dim: usize) -> Result<VectorSet> {
    let text = std::str::from_utf8(body).map_err(|_| Error::parse(path, 2, "not UTF-8"))?;
    let mut labels = Vec::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * dim);
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 2;
        let mut fields = line.split_ascii_whitespace();
        let label = fields
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "empty row"))?;
        let mut n = 0;
        for field in fields {
            let v: f32 = field
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad value {field:?}")))?;
            data.push(v);
            n += 1;
        }
        if n != dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{dim} values per row"),
                found: format!("{n} on line {lineno}"),
            });
        }
        labels.push(label.to_string());
    }
    if labels.len() != rows {
        return Err(Error::ShapeMismatch {
            expected: format!("{rows} rows"),
            found: format!("{}", labels.len()),
        });
    }
    Ok(VectorSet::from_parts(labels, dim, data))
}

fn parse_binary_body(path: &Path, body: &[u8], rows: usize, dim: usize) -> Result<VectorSet> {
    let mut labels = Vec::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * dim);
    let mut at = 0usize;
    for r in 0..rows {
        let sp = body[at..]
            .iter()
            .position(|&b| b == b' ')
            .ok_or_else(|| Error::ShapeMismatch {
                expected: format!("{rows} rows"),
                found: format!("{r}"),
            })?;
        let label = std::str::from_utf8(&body[at..at + sp])
            .map_err(|_| Error::parse(path, r + 2, "label is not UTF-8"))?;
        at += sp + 1;
        let need = dim * 4;
        if body.len() < at + need + 1 {
            return Err(Error::ShapeMismatch {
                expected: format!("{rows} rows of {dim} values"),
                found: format!("{r} complete rows"),
            });
        }
        for c in 0..dim {
            let b = &body[at + c * 4..at + c * 4 + 4];
            data.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        }
        at += need;
        if body[at] != b'\n' {
            return Err(Error::parse(path, r + 2, "missing row terminator"));
        }
        at += 1;
        labels.push(label.to_string());
    }
    if at != body.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{rows} rows"),
            found: "trailing bytes".to_string(),
        });
    }
    Ok(VectorSet::from_parts(labels, dim, data))
}

/// Checkpoint metadata. Serializes to JSON with a fixed field order, so a
/// load/save cycle reproduces the file byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub version: String,
    pub dim: usize,
    pub vocab_size: usize,
    pub sense_count: usize,
    pub seed: u64,
    pub config: TrainConfig,
}

impl ModelHeader {
    pub fn new(config: &TrainConfig, vocab: &Vocab, inventory: &SenseInventory) -> Self {
        ModelHeader {
            version: MODEL_MAGIC.to_string(),
            dim: config.dim,
            vocab_size: vocab.len(),
            sense_count: inventory.total_senses(),
            seed: config.seed,
            config: config.clone(),
        }
    }
}

/// A trained model restored from disk.
#[derive(Debug)]
pub struct Checkpoint {
    pub header: ModelHeader,
    pub vocab: Vocab,
    pub inventory: SenseInventory,
    pub matrices: EmbeddingMatrices,
}

impl Checkpoint {
    /// Sense vectors as a queryable set (copies the matrix).
    pub fn sense_vector_set(&self) -> VectorSet {
        VectorSet::from_parts(
            self.inventory.labels().map(str::to_string).collect(),
            self.matrices.dim,
            self.matrices.sense.as_slice().to_vec(),
        )
    }
}

/// Writes a checkpoint directory: `header.json`, `vocab.txt`,
/// `sense_counts.tsv`, `context.bin`, `sense.bin`.
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    header: &ModelHeader,
    vocab: &Vocab,
    inventory: &SenseInventory,
    matrices: &EmbeddingMatrices,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header_path = dir.join("header.json");
    let json = serde_json::to_string_pretty(header)?;
    std::fs::write(&header_path, json + "\n").map_err(|e| Error::io(&header_path, e))?;
    vocab.write_to(dir.join("vocab.txt"))?;
    inventory.write_counts(vocab, dir.join("sense_counts.tsv"))?;
    write_vectors(
        dir.join("context.bin"),
        VectorFormat::Binary,
        vocab.entries().map(|(t, _)| t),
        &matrices.context,
    )?;
    write_vectors(
        dir.join("sense.bin"),
        VectorFormat::Binary,
        inventory.labels(),
        &matrices.sense,
    )?;
    Ok(())
}

/// Restores a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let header_path = dir.join("header.json");
    let text = std::fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: ModelHeader = serde_json::from_str(&text)?;
    if header.version != MODEL_MAGIC {
        return Err(Error::parse(
            &header_path,
            1,
            format!("unsupported version {:?}", header.version),
        ));
    }

    let vocab = Vocab::read_from(dir.join("vocab.txt"))?;
    let counts = load_sense_counts(dir.join("sense_counts.tsv"))?;
    let inventory = build_sense_inventory(&vocab, &counts.counts, header.config.max_k);

    let expect = |name: &str, got: (usize, usize), want: (usize, usize)| -> Result<()> {
        if got != want {
            return Err(Error::ShapeMismatch {
                expected: format!("{name}: {} x {}", want.0, want.1),
                found: format!("{} x {}", got.0, got.1),
            });
        }
        Ok(())
    };
    expect(
        "vocab/senses",
        (vocab.len(), inventory.total_senses()),
        (header.vocab_size, header.sense_count),
    )?;

    let context = load_vectors(dir.join("context.bin"))?;
    expect(
        "context.bin",
        (context.len(), context.dim()),
        (header.vocab_size, header.dim),
    )?;
    let sense = load_vectors(dir.join("sense.bin"))?;
    expect(
        "sense.bin",
        (sense.len(), sense.dim()),
        (header.sense_count, header.dim),
    )?;
    for (i, label) in sense.labels().enumerate() {
        if label != inventory.label(i as u32) {
            return Err(Error::ShapeMismatch {
                expected: format!("sense label {:?} at row {i}", inventory.label(i as u32)),
                found: label.to_string(),
            });
        }
    }

    let dim = header.dim;
    let matrices = EmbeddingMatrices {
        dim,
        context: HogwildMatrix::from_vec(context.len(), dim, {
            let mut v = Vec::with_capacity(context.len() * dim);
            (0..context.len()).for_each(|i| v.extend_from_slice(context.row(i)));
            v
        }),
        sense: HogwildMatrix::from_vec(sense.len(), dim, {
            let mut v = Vec::with_capacity(sense.len() * dim);
            (0..sense.len()).for_each(|i| v.extend_from_slice(sense.row(i)));
            v
        }),
    };
    Ok(Checkpoint {
        header,
        vocab,
        inventory,
        matrices,
    })
}
