//! Label embeddings and deep slice embeddings.
//!
//! A [`LabelEmbedding`] maps each label of the dataset alphabet to a vector:
//! either trained with skip-gram negative sampling on the corpus of slice
//! encodings (each encoding is one sentence, each label one word), or the
//! one-hot identity.
//!
//! From slice encodings and a label embedding, [`build_embedding_table`]
//! produces per-hop node vectors with a decayed recurrence:
//!
//! ```text
//! raw[h](v) = sum of g(u) over tokens u in the (v, h) slice
//! x[0] = raw[0],   x[h] = alpha * x[h-1] + raw[h]   for h >= 1
//! ```
//!
//! A slice embedding depends on its tokens only through their counts, so the
//! module also exposes per-hop label histograms; the recurrence applied in
//! histogram space followed by multiplication with the embedding matrix gives
//! the same vectors, which the alignment stage exploits.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::mat::{dot, RowMatrix};
use crate::slicer::SliceTable;
use crate::{Error, Result};

/// Which label-embedding backend produced a set of vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    /// Skip-gram with negative sampling, trained on slice encodings.
    #[serde(rename = "word2vec", alias = "skipgram")]
    Word2Vec,
    /// Identity rows; dimension equals the alphabet size.
    #[serde(rename = "onehot")]
    OneHot,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Word2Vec => "word2vec",
            Backend::OneHot => "onehot",
        })
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Backend> {
        match s {
            "word2vec" | "skipgram" => Ok(Backend::Word2Vec),
            "onehot" | "one_hot" => Ok(Backend::OneHot),
            other => Err(Error::InvalidConfig(format!(
                "unknown backend `{other}` (expected word2vec or onehot)"
            ))),
        }
    }
}

/// Per-label embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbedding {
    vectors: RowMatrix,
    backend: Backend,
}

impl LabelEmbedding {
    /// Wraps an `alphabet x d` matrix whose row `l` embeds label `l`.
    pub fn new(vectors: RowMatrix, backend: Backend) -> LabelEmbedding {
        LabelEmbedding { vectors, backend }
    }

    pub fn vector(&self, label: u32) -> &[f64] {
        self.vectors.row(label as usize)
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn alphabet(&self) -> usize {
        self.vectors.rows()
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn matrix(&self) -> &RowMatrix {
        &self.vectors
    }
}

/// Identity embedding: label `l` maps to the `l`-th standard basis vector of
/// dimension `alphabet_size`.
pub fn one_hot_embedding(alphabet_size: usize) -> LabelEmbedding {
    assert!(alphabet_size >= 1, "alphabet must be non-empty");
    let mut m = RowMatrix::zeros(alphabet_size, alphabet_size);
    for i in 0..alphabet_size {
        m.set(i, i, 1.0);
    }
    LabelEmbedding::new(m, Backend::OneHot)
}

/// Skip-gram training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipGramParams {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f64,
}

impl Default for SkipGramParams {
    fn default() -> Self {
        SkipGramParams {
            dim: 32,
            window: 5,
            epochs: 5,
            negatives: 5,
            learning_rate: 0.025,
        }
    }
}

/// Trains skip-gram with negative sampling on a corpus of token sequences.
///
/// Implementation notes, all deterministic under `seed`:
/// * input vectors start uniform in `[-0.5/d, 0.5/d)`, output vectors at zero;
/// * sentence order is reshuffled every epoch;
/// * each center position draws a reduced window radius uniformly from
///   `1..=window`;
/// * negatives are drawn from the unigram distribution raised to 0.75; a draw
///   that hits the positive target is skipped;
/// * the learning rate decays linearly with processed tokens down to a floor
///   of `1e-4` times its initial value;
/// * updates are applied pair by pair (no batching).
///
/// Empty sequences are ignored. Labels that never occur still get their
/// (untrained) initial vector, so every label of the alphabet is covered.
pub fn train_skipgram<'a, I>(
    corpus: I,
    alphabet: usize,
    params: &SkipGramParams,
    seed: u64,
) -> Result<LabelEmbedding>
where
    I: IntoIterator<Item = &'a [u32]>,
{
    if params.dim == 0 || params.window == 0 {
        return Err(Error::InvalidConfig(
            "skip-gram dimension and window must be at least 1".into(),
        ));
    }
    let sentences: Vec<&[u32]> = corpus.into_iter().filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(Error::InvalidData("skip-gram corpus is empty".into()));
    }

    let mut counts = vec![0u64; alphabet];
    let mut total_words = 0usize;
    for s in &sentences {
        for &t in *s {
            let Some(c) = counts.get_mut(t as usize) else {
                return Err(Error::InvalidData(format!(
                    "token {t} is outside the alphabet of size {alphabet}"
                )));
            };
            *c += 1;
            total_words += 1;
        }
    }

    // Cumulative unigram^0.75 table for negative sampling.
    let mut noise_cdf = Vec::with_capacity(alphabet);
    let mut acc = 0.0;
    for &c in &counts {
        acc += (c as f64).powf(0.75);
        noise_cdf.push(acc);
    }
    let noise_total = acc;

    let d = params.dim;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut w_in: Vec<f64> = (0..alphabet * d)
        .map(|_| (rng.random::<f64>() - 0.5) / d as f64)
        .collect();
    let mut w_out = vec![0.0f64; alphabet * d];

    let lr0 = params.learning_rate;
    let lr_floor = lr0 * 1e-4;
    let total_steps = (params.epochs * total_words) as f64;
    let mut processed = 0usize;
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    let mut accum = vec![0.0f64; d];

    for _ in 0..params.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for &si in &order {
            let s = sentences[si];
            let lr = (lr0 * (1.0 - processed as f64 / total_steps)).max(lr_floor);
            for (i, &center) in s.iter().enumerate() {
                let radius = rng.random_range(1..=params.window);
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(s.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let positive = s[j] as usize;
                    let input = &mut w_in[center as usize * d..(center as usize + 1) * d];
                    accum.fill(0.0);
                    for k in 0..=params.negatives {
                        let (target, label) = if k == 0 {
                            (positive, 1.0)
                        } else {
                            let r = rng.random::<f64>() * noise_total;
                            let t = noise_cdf.partition_point(|&c| c <= r);
                            if t == positive {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let out = &mut w_out[target * d..(target + 1) * d];
                        let z = dot(input, out);
                        let grad = lr * (label - 1.0 / (1.0 + (-z).exp()));
                        for (a, (o, x)) in accum.iter_mut().zip(out.iter_mut().zip(input.iter())) {
                            *a += grad * *o;
                            *o += grad * x;
                        }
                    }
                    for (x, a) in input.iter_mut().zip(&accum) {
                        *x += a;
                    }
                }
            }
            processed += s.len();
        }
    }

    Ok(LabelEmbedding::new(
        RowMatrix::from_vec(w_in, alphabet, d),
        Backend::Word2Vec,
    ))
}

/// Per-hop label histograms of every slice: `hist(row, h)[l]` counts how
/// often label `l` occurs in that node's hop-`h` encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct HistTable {
    counts: Vec<f64>,
    rows: usize,
    hops: usize,
    alphabet: usize,
}

impl HistTable {
    pub fn hist(&self, row: usize, hop: usize) -> &[f64] {
        let start = (row * self.hops + hop) * self.alphabet;
        &self.counts[start..start + self.alphabet]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of hop levels (`H + 1`).
    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }
}

/// Counts labels per `(node, hop)` slice. Fails if any token falls outside
/// the alphabet.
pub fn slice_histograms(table: &SliceTable, alphabet: usize) -> Result<HistTable> {
    let rows = table.num_rows();
    let hops = table.spec().max_hop + 1;
    let mut counts = vec![0.0f64; rows * hops * alphabet];
    for row in 0..rows {
        for hop in 0..hops {
            let base = (row * hops + hop) * alphabet;
            for &t in table.tokens_at(row, hop) {
                if t as usize >= alphabet {
                    return Err(Error::InvalidData(format!(
                        "token {t} is outside the alphabet of size {alphabet}"
                    )));
                }
                counts[base + t as usize] += 1.0;
            }
        }
    }
    Ok(HistTable {
        counts,
        rows,
        hops,
        alphabet,
    })
}

/// Applies the decayed recurrence in label-histogram space:
/// `w[0] = hist[0]`, `w[h] = alpha * w[h-1] + hist[h]`. Returns one
/// `rows x alphabet` matrix per hop.
pub fn deep_histograms(hist: &HistTable, alpha: f64) -> Vec<RowMatrix> {
    let (rows, hops, l) = (hist.rows(), hist.hops(), hist.alphabet());
    let mut out: Vec<RowMatrix> = Vec::with_capacity(hops);
    for h in 0..hops {
        let mut m = RowMatrix::zeros(rows, l);
        for row in 0..rows {
            let dst = m.row_mut(row);
            dst.copy_from_slice(hist.hist(row, h));
            if h > 0 {
                let prev = out[h - 1].row(row);
                for (d, p) in dst.iter_mut().zip(prev) {
                    *d += alpha * p;
                }
            }
        }
        out.push(m);
    }
    out
}

/// Deep slice embeddings: one `rows x d` matrix per hop `0..=H`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    hops: Vec<RowMatrix>,
    alpha: f64,
}

impl EmbeddingTable {
    /// Embeddings at one hop; rows follow the slice table's node order.
    pub fn hop(&self, h: usize) -> &RowMatrix {
        &self.hops[h]
    }

    /// Number of hop levels (`H + 1`).
    pub fn num_hops(&self) -> usize {
        self.hops.len()
    }

    pub fn num_rows(&self) -> usize {
        self.hops[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.hops[0].cols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Sum of `g(u)` over the tokens of each slice, per hop, with no recurrence.
/// Empty slices produce zero rows.
pub fn raw_embeddings(table: &SliceTable, g: &LabelEmbedding) -> Result<Vec<RowMatrix>> {
    let hist = slice_histograms(table, g.alphabet())?;
    let d = g.dim();
    let mut out = Vec::with_capacity(hist.hops());
    for h in 0..hist.hops() {
        let mut m = RowMatrix::zeros(hist.rows(), d);
        for row in 0..hist.rows() {
            let counts = hist.hist(row, h);
            let dst = m.row_mut(row);
            for (l, &c) in counts.iter().enumerate() {
                if c != 0.0 {
                    for (x, e) in dst.iter_mut().zip(g.vector(l as u32)) {
                        *x += c * e;
                    }
                }
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// Builds the per-hop deep embeddings `x[h] = alpha * x[h-1] + raw[h]`.
pub fn build_embedding_table(
    table: &SliceTable,
    g: &LabelEmbedding,
    alpha: f64,
) -> Result<EmbeddingTable> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let mut hops = raw_embeddings(table, g)?;
    for h in 1..hops.len() {
        let (prev, cur) = hops.split_at_mut(h);
        let prev = prev[h - 1].as_slice();
        for (x, p) in cur[0].as_mut_slice().iter_mut().zip(prev) {
            *x += alpha * p;
        }
    }
    Ok(EmbeddingTable { hops, alpha })
}

/// Cache identity of a stored embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCacheKey {
    pub dataset: String,
    pub width: usize,
    pub max_hop: usize,
    pub alpha: f64,
    pub backend: Backend,
    pub seed: u64,
}

/// Writes an embedding table as a flat binary cache: a JSON header line with
/// the key and shape, then row-major little-endian `f64` values hop by hop.
pub fn write_embedding_cache(
    path: &Path,
    key: &EmbeddingCacheKey,
    table: &EmbeddingTable,
) -> Result<()> {
    #[derive(Serialize)]
    struct Header<'a> {
        key: &'a EmbeddingCacheKey,
        hops: usize,
        rows: usize,
        dim: usize,
    }
    let header = serde_json::to_string(&Header {
        key,
        hops: table.num_hops(),
        rows: table.num_rows(),
        dim: table.dim(),
    })?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut write = |bytes: &[u8]| file.write_all(bytes).map_err(|e| Error::io(path, e));
    write(header.as_bytes())?;
    write(b"\n")?;
    for h in 0..table.num_hops() {
        for &v in table.hop(h).as_slice() {
            write(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a cache written by [`write_embedding_cache`], verifying that its key
/// matches `expected`.
pub fn read_embedding_cache(path: &Path, expected: &EmbeddingCacheKey) -> Result<EmbeddingTable> {
    #[derive(Deserialize)]
    struct Header {
        key: EmbeddingCacheKey,
        hops: usize,
        rows: usize,
        dim: usize,
    }
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MetadataMismatch(format!("{}: missing header", path.display())))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])?;
    if header.key != *expected {
        return Err(Error::MetadataMismatch(format!(
            "{}: cached key {:?} does not match requested {:?}",
            path.display(),
            header.key,
            expected
        )));
    }
    let body = &bytes[newline + 1..];
    let per_hop = header.rows * header.dim;
    if body.len() != header.hops * per_hop * 8 {
        return Err(Error::MetadataMismatch(format!(
            "{}: payload size does not match header shape",
            path.display()
        )));
    }
    let mut hops = Vec::with_capacity(header.hops);
    for h in 0..header.hops {
        let mut data = Vec::with_capacity(per_hop);
        for i in 0..per_hop {
            let start = (h * per_hop + i) * 8;
            data.push(f64::from_le_bytes(
                body[start..start + 8].try_into().unwrap(),
            ));
        }
        hops.push(RowMatrix::from_vec(data, header.rows, header.dim));
    }
    Ok(EmbeddingTable {
        hops,
        alpha: expected.alpha,
    })
}
