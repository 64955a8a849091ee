//! Gram assembly: per-hop alignment kernels, the hierarchical sum, cosine
//! normalization, and the end-to-end pipeline driver.
//!
//! A per-hop Gram entry is the inner product of two graphs' mean alignment
//! feature vectors (the kernel mean embedding of the graphs' slice sets).
//! Per-hop matrices are summed elementwise across hops and the sum is
//! cosine-normalized once; per-hop matrices are never normalized
//! individually.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alignment::{build_feature_map, AlignmentFeatureMap, HopPoints};
use crate::config::KernelParams;
use crate::embedder::{
    deep_histograms, one_hot_embedding, slice_histograms, train_skipgram, Backend, SkipGramParams,
};
use crate::exec::par_map_indices;
use crate::graph::Dataset;
use crate::mat::{dot, RowMatrix};
use crate::slicer::{encode_dataset, SliceSpec};
use crate::{Error, Result};

/// Where a Gram matrix sits in the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramStage {
    /// Mean-embedding kernel of a single hop.
    PerHop,
    /// Elementwise sum over the selected hops.
    Summed,
    /// Cosine-normalized sum; unit diagonal.
    Normalized,
}

impl fmt::Display for GramStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GramStage::PerHop => "per_hop",
            GramStage::Summed => "summed",
            GramStage::Normalized => "normalized",
        })
    }
}

/// Identity of a computed Gram: which dataset and which parameters. Required
/// for export so cached matrices can be validated before reuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMeta {
    pub dataset: String,
    pub num_graphs: usize,
    pub params: KernelParams,
}

impl GramMeta {
    /// The cache identity hash of this matrix's provenance.
    pub fn hash_hex(&self) -> String {
        self.params.hash_hex(&self.dataset)
    }
}

/// A symmetric `n x n` kernel matrix over graphs, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    values: Vec<f64>,
    stage: GramStage,
    meta: Option<GramMeta>,
}

impl GramMatrix {
    pub fn new(n: usize, values: Vec<f64>, stage: GramStage) -> Result<GramMatrix> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} values cannot fill a {n}x{n} Gram",
                values.len()
            )));
        }
        Ok(GramMatrix {
            n,
            values,
            stage,
            meta: None,
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stage(&self) -> GramStage {
        self.stage
    }

    pub fn meta(&self) -> Option<&GramMeta> {
        self.meta.as_ref()
    }

    pub fn set_meta(&mut self, meta: Option<GramMeta>) {
        self.meta = meta;
    }

    /// Largest absolute asymmetry `|K[i,j] - K[j,i]|`; zero for every matrix
    /// this module produces.
    pub fn symmetry_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Mean-embedding Gram of one hop: `K[i,j] = <m_i, m_j>` where `m_g` is the
/// average alignment feature vector of graph `g`'s slices.
///
/// Rather than materializing feature vectors, the inner products are
/// accumulated cluster by cluster: a cluster holding `c_i` slices of graph
/// `i` and `c_j` of graph `j` contributes `scale^2 * c_i * c_j / (n_i *
/// n_j)` to `K[i,j]`. Noise slices occupy no cluster and contribute nothing.
///
/// A graph with no rows in `row_graphs` gets a zero mean vector (zero row
/// and column) and a warning; the normal pipeline never produces this, since
/// every node of every graph owns a row at every hop.
pub fn dgak_gram(
    map: &AlignmentFeatureMap,
    row_graphs: &[usize],
    num_graphs: usize,
) -> Result<(GramMatrix, Vec<String>)> {
    if row_graphs.len() != map.num_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} graph ids for {} feature rows",
            row_graphs.len(),
            map.num_rows()
        )));
    }
    if let Some(&bad) = row_graphs.iter().find(|&&g| g >= num_graphs) {
        return Err(Error::InvalidData(format!(
            "row assigned to graph {bad}, but only {num_graphs} graphs exist"
        )));
    }
    let n = num_graphs;
    let mut rows_per_graph = vec![0usize; n];
    for &g in row_graphs {
        rows_per_graph[g] += 1;
    }
    let warnings: Vec<String> = rows_per_graph
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c == 0)
        .map(|(g, _)| format!("graph {g} has no slice rows; its kernel row is zero"))
        .collect();

    // One pass per block; blocks are independent and summed in block order
    // afterwards, so the result is identical for any thread count.
    let per_block: Vec<Vec<f64>> = par_map_indices(map.num_blocks(), |bi| {
        let block = map.block(bi);
        let mut lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); block.num_clusters()];
        for (row, &g) in row_graphs.iter().enumerate() {
            if let Some(c) = block.cluster(row) {
                let list = &mut lists[c as usize];
                match list.last_mut() {
                    Some((lg, cnt)) if *lg == g => *cnt += 1.0,
                    _ => list.push((g, 1.0)),
                }
            }
        }
        let mut k = vec![0.0f64; n * n];
        for list in &mut lists {
            // Merge-by-last above already collapsed sorted input; arbitrary
            // row orders still need a canonical per-graph tally.
            list.sort_by_key(|&(g, _)| g);
            list.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
            // `wa * wb` is bitwise symmetric in the two graphs, which keeps
            // the matrix exactly symmetric and makes graph reorderings
            // permute it without rounding drift.
            let weights: Vec<(usize, f64)> = list
                .iter()
                .map(|&(g, c)| (g, c / rows_per_graph[g] as f64))
                .collect();
            for (i, &(ga, wa)) in weights.iter().enumerate() {
                for &(gb, wb) in &weights[i..] {
                    let v = wa * wb;
                    k[ga * n + gb] += v;
                    if ga != gb {
                        k[gb * n + ga] += v;
                    }
                }
            }
        }
        k
    });

    // The feature scale 1/sqrt(runs) enters the kernel only as its square,
    // so divide the block sum by the run count once instead of scaling each
    // term: cluster-pure runs then contribute exactly 1.0 to the diagonal.
    let runs = map.num_blocks() as f64;
    let mut values = vec![0.0f64; n * n];
    for k in per_block {
        for (acc, v) in values.iter_mut().zip(k) {
            *acc += v;
        }
    }
    for v in values.iter_mut() {
        *v /= runs;
    }
    Ok((GramMatrix::new(n, values, GramStage::PerHop)?, warnings))
}

/// Elementwise sum of per-hop Grams: the hierarchical kernel before
/// normalization.
pub fn dhgak_gram(per_hop: &[GramMatrix]) -> Result<GramMatrix> {
    let Some(first) = per_hop.first() else {
        return Err(Error::InvalidData("no per-hop Grams to sum".into()));
    };
    let n = first.num_graphs();
    if let Some(bad) = per_hop.iter().find(|k| k.num_graphs() != n) {
        return Err(Error::DimensionMismatch(format!(
            "cannot sum {n}-graph and {}-graph Grams",
            bad.num_graphs()
        )));
    }
    let mut values = vec![0.0f64; n * n];
    for k in per_hop {
        for (acc, &v) in values.iter_mut().zip(k.values()) {
            *acc += v;
        }
    }
    GramMatrix::new(n, values, GramStage::Summed)
}

/// Cosine normalization `K[i,j] / sqrt(K[i,i] * K[j,j])`. The diagonal of
/// the result is exactly 1. A non-positive diagonal entry (a graph whose
/// slices were noise in every run of every hop) is an error.
pub fn normalize_gram(k: &GramMatrix) -> Result<GramMatrix> {
    let n = k.num_graphs();
    let mut inv_root = vec![0.0f64; n];
    for i in 0..n {
        let d = k.get(i, i);
        if d <= 0.0 {
            return Err(Error::DegenerateDiagonal { index: i, value: d });
        }
        inv_root[i] = 1.0 / d.sqrt();
    }
    let mut values = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] = k.get(i, j) * inv_root[i] * inv_root[j];
        }
        values[i * n + i] = 1.0;
    }
    let mut out = GramMatrix::new(n, values, GramStage::Normalized)?;
    out.set_meta(k.meta().cloned());
    Ok(out)
}

/// Wall-clock seconds spent in each pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub slicing: f64,
    pub embedding: f64,
    pub alignment: f64,
    pub gram: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.slicing + self.embedding + self.alignment + self.gram
    }
}

/// Everything the pipeline produces for one (dataset, params) pair.
#[derive(Debug, Clone)]
pub struct DhgakOutput {
    /// One Gram per selected hop, in hop order.
    pub per_hop: Vec<GramMatrix>,
    /// Elementwise sum of `per_hop`.
    pub summed: GramMatrix,
    /// Cosine-normalized `summed`; the matrix fed to the classifier.
    pub normalized: GramMatrix,
    pub timings: StageTimings,
    pub warnings: Vec<String>,
}

/// Runs the full pipeline: slice extraction, label embedding, per-hop
/// clustering and feature maps, per-hop Grams, hierarchical sum,
/// normalization.
///
/// Deterministic for a given (dataset, params) pair regardless of thread
/// count: all randomness derives from `params.seed`, parallel stages
/// preserve index order, and floating-point accumulation orders are fixed.
pub fn compute_dhgak(ds: &Dataset, params: &KernelParams) -> Result<DhgakOutput> {
    params.validate()?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let table = encode_dataset(
        ds,
        SliceSpec {
            width: params.width,
            max_hop: params.max_hop,
        },
    );
    timings.slicing = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let alphabet = ds.label_alphabet();
    let embedding = match params.backend {
        Backend::OneHot => one_hot_embedding(alphabet),
        Backend::Word2Vec => train_skipgram(
            table.sentences(),
            alphabet,
            &SkipGramParams {
                dim: params.dim,
                window: params.window,
                ..SkipGramParams::default()
            },
            params.seed,
        )?,
    };
    // Clustering runs on label-histogram coordinates under the Gram metric
    // E E^T of the embedding vectors; distances equal embedding-space
    // distances without ever materializing per-slice embeddings. One-hot
    // embeddings have the identity metric, so plain Euclidean suffices.
    let hist = slice_histograms(&table, alphabet)?;
    let deep = deep_histograms(&hist, params.alpha);
    let metric = match params.backend {
        Backend::OneHot => None,
        Backend::Word2Vec => Some(embedding_gram(embedding.matrix())),
    };
    timings.embedding = t.elapsed().as_secs_f64();

    let meta = GramMeta {
        dataset: ds.name().to_string(),
        num_graphs: ds.num_graphs(),
        params: params.clone(),
    };
    let clustering = params.clustering();
    let first_hop = if params.include_hop_zero { 0 } else { 1 };
    let mut warnings = Vec::new();
    let mut per_hop = Vec::with_capacity(params.max_hop + 1 - first_hop);
    for hop in first_hop..=params.max_hop {
        let t = Instant::now();
        let points = HopPoints {
            coords: &deep[hop],
            metric: metric.as_ref(),
        };
        let map = build_feature_map(
            &points,
            table.row_graphs(),
            ds.num_graphs(),
            &clustering,
            hop,
        )?;
        warnings.extend(map.warnings().map(|w| format!("hop {hop}: {w}")));
        timings.alignment += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let (mut k, w) = dgak_gram(&map, table.row_graphs(), ds.num_graphs())?;
        warnings.extend(w.into_iter().map(|w| format!("hop {hop}: {w}")));
        k.set_meta(Some(meta.clone()));
        per_hop.push(k);
        timings.gram += t.elapsed().as_secs_f64();
    }

    let t = Instant::now();
    let mut summed = dhgak_gram(&per_hop)?;
    summed.set_meta(Some(meta.clone()));
    let mut normalized = normalize_gram(&summed)?;
    normalized.set_meta(Some(meta));
    timings.gram += t.elapsed().as_secs_f64();

    Ok(DhgakOutput {
        per_hop,
        summed,
        normalized,
        timings,
        warnings,
    })
}

/// Pairwise inner products of the embedding's label vectors (`E E^T`).
pub(crate) fn embedding_gram(e: &RowMatrix) -> RowMatrix {
    let l = e.rows();
    let mut g = RowMatrix::zeros(l, l);
    for a in 0..l {
        for b in a..l {
            let v = dot(e.row(a), e.row(b));
            g.set(a, b, v);
            g.set(b, a, v);
        }
    }
    g
}

const GRAM_FILE: &str = "gram.csv";
const META_FILE: &str = "meta.json";

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dataset: String,
    num_graphs: usize,
    stage: GramStage,
    /// Identity hash of (dataset, params); checked on import.
    hash: String,
    params: KernelParams,
}

/// Writes `gram.csv` (one row per line, comma-separated, full-precision) and
/// `meta.json` into `dir`. Requires metadata: an anonymous Gram cannot be
/// validated on re-import. Returns the CSV path.
///
/// The CSV rendering uses the shortest decimal that round-trips each `f64`,
/// so equal matrices always serialize to byte-identical files.
pub fn save_gram(dir: &Path, gram: &GramMatrix) -> Result<PathBuf> {
    let Some(meta) = gram.meta() else {
        return Err(Error::InvalidData(
            "cannot export a Gram without metadata".into(),
        ));
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let csv_path = dir.join(GRAM_FILE);
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut out = BufWriter::new(file);
    let write_err = |e| Error::io(&csv_path, e);
    for i in 0..gram.num_graphs() {
        for (j, v) in gram.row(i).iter().enumerate() {
            if j > 0 {
                out.write_all(b",").map_err(write_err)?;
            }
            write!(out, "{v}").map_err(write_err)?;
        }
        out.write_all(b"\n").map_err(write_err)?;
    }
    out.flush().map_err(write_err)?;

    let sidecar = Sidecar {
        dataset: meta.dataset.clone(),
        num_graphs: meta.num_graphs,
        stage: gram.stage(),
        hash: meta.hash_hex(),
        params: meta.params.clone(),
    };
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    Ok(csv_path)
}

/// Loads a Gram exported by [`save_gram`], verifying that the sidecar's
/// stored hash matches a recomputation from its own fields (corruption or
/// hand-edits fail loudly) and that the matrix dimensions agree.
pub fn load_gram(dir: &Path) -> Result<GramMatrix> {
    let meta_path = dir.join(META_FILE);
    let json = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&json)?;
    let meta = GramMeta {
        dataset: sidecar.dataset,
        num_graphs: sidecar.num_graphs,
        params: sidecar.params,
    };
    let expected = meta.hash_hex();
    if sidecar.hash != expected {
        return Err(Error::MetadataMismatch(format!(
            "{} stores hash {}, but its fields hash to {expected}",
            meta_path.display(),
            sidecar.hash
        )));
    }

    let csv_path = dir.join(GRAM_FILE);
    let text = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let n = meta.num_graphs;
    let mut values = Vec::with_capacity(n * n);
    let mut lines = 0usize;
    for (ln, line) in text.lines().enumerate() {
        lines += 1;
        let mut fields = 0usize;
        for field in line.split(',') {
            fields += 1;
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                file: csv_path.display().to_string(),
                line: ln + 1,
                msg: format!("invalid number `{}`", field.trim()),
            })?;
            values.push(v);
        }
        if fields != n {
            return Err(Error::Parse {
                file: csv_path.display().to_string(),
                line: ln + 1,
                msg: format!("expected {n} columns, found {fields}"),
            });
        }
    }
    if lines != n {
        return Err(Error::MetadataMismatch(format!(
            "{} has {lines} rows but metadata promises {n}",
            csv_path.display()
        )));
    }
    let mut gram = GramMatrix::new(n, values, sidecar.stage)?;
    gram.set_meta(Some(meta));
    Ok(gram)
}

/// Loads a cached Gram only if its identity matches `expected` exactly;
/// any difference in dataset, graph count, or parameters is a
/// [`Error::MetadataMismatch`].
pub fn load_gram_expecting(dir: &Path, expected: &GramMeta) -> Result<GramMatrix> {
    let gram = load_gram(dir)?;
    let meta = gram.meta().expect("load_gram always attaches metadata");
    if meta != expected {
        return Err(Error::MetadataMismatch(format!(
            "cached Gram in {} was computed for ({}, hash {}), expected ({}, hash {})",
            dir.display(),
            meta.dataset,
            meta.hash_hex(),
            expected.dataset,
            expected.hash_hex()
        )));
    }
    Ok(gram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{Assignment, ClusterMethod};
    use crate::synth::{random_dataset, SynthParams};

    fn bits(k: &GramMatrix) -> Vec<u64> {
        k.values().iter().map(|v| v.to_bits()).collect()
    }

    fn small_params() -> KernelParams {
        KernelParams {
            width: 1,
            max_hop: 2,
            alpha: 0.5,
            cluster_factor: 0.5,
            t_runs: 2,
            seed: 9,
            backend: Backend::OneHot,
            methods: vec![ClusterMethod::KMeans],
            ..KernelParams::default()
        }
    }

    fn small_dataset() -> crate::graph::Dataset {
        random_dataset(
            "synth",
            &SynthParams {
                num_graphs: 8,
                min_nodes: 4,
                max_nodes: 9,
                num_labels: 3,
                seed: 21,
                ..SynthParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn oracle_clustering_yields_identity_grams() {
        let ds = small_dataset();
        let params = KernelParams {
            methods: vec![ClusterMethod::OracleByGraph],
            t_runs: 1,
            ..small_params()
        };
        let out = compute_dhgak(&ds, &params).unwrap();
        let n = ds.num_graphs();
        assert_eq!(out.per_hop.len(), 3);
        for k in &out.per_hop {
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_eq!(k.get(i, j), want, "per-hop ({i},{j})");
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 3.0 } else { 0.0 };
                assert_eq!(out.summed.get(i, j), want);
                assert_eq!(out.normalized.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn normalize_matches_hand_computation() {
        let k = GramMatrix::new(2, vec![4.0, 2.0, 2.0, 4.0], GramStage::Summed).unwrap();
        let n = normalize_gram(&k).unwrap();
        assert_eq!(n.values(), &[1.0, 0.5, 0.5, 1.0]);
        assert_eq!(n.stage(), GramStage::Normalized);

        let id = GramMatrix::new(
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            GramStage::Summed,
        )
        .unwrap();
        assert_eq!(normalize_gram(&id).unwrap().values(), id.values());
    }

    #[test]
    fn normalize_rejects_nonpositive_diagonal() {
        let k = GramMatrix::new(2, vec![0.0, 0.0, 0.0, 1.0], GramStage::Summed).unwrap();
        match normalize_gram(&k) {
            Err(Error::DegenerateDiagonal { index, value }) => {
                assert_eq!(index, 0);
                assert_eq!(value, 0.0);
            }
            other => panic!("expected DegenerateDiagonal, got {other:?}"),
        }
    }

    #[test]
    fn sum_rejects_mismatched_shapes() {
        let a = GramMatrix::new(2, vec![1.0; 4], GramStage::PerHop).unwrap();
        let b = GramMatrix::new(3, vec![1.0; 9], GramStage::PerHop).unwrap();
        assert!(dhgak_gram(&[a.clone(), b]).is_err());
        assert!(dhgak_gram(&[]).is_err());
        let s = dhgak_gram(&[a.clone(), a]).unwrap();
        assert_eq!(s.values(), &[2.0; 4]);
    }

    #[test]
    fn single_cluster_gram_is_all_ones() {
        // Five rows over three graphs, all in one cluster: every mean vector
        // is the same unit indicator, so every inner product is exactly 1.
        let a = Assignment::new(vec![Some(0); 5], 1).unwrap();
        let map = AlignmentFeatureMap::from_blocks(vec![a]).unwrap();
        let (k, warn) = dgak_gram(&map, &[0, 0, 1, 2, 2], 3).unwrap();
        assert_eq!(k.values(), &[1.0; 9]);
        assert!(warn.is_empty());
    }

    #[test]
    fn gram_matches_dense_mean_embeddings() {
        let ds = small_dataset();
        let out = compute_dhgak(&ds, &small_params()).unwrap();

        // Recompute hop 1 densely: average feature rows per graph, then take
        // inner products.
        let table = encode_dataset(
            &ds,
            SliceSpec {
                width: 1,
                max_hop: 2,
            },
        );
        let hist = slice_histograms(&table, ds.label_alphabet()).unwrap();
        let deep = deep_histograms(&hist, 0.5);
        let points = HopPoints::euclidean(&deep[1]);
        let map = build_feature_map(
            &points,
            table.row_graphs(),
            ds.num_graphs(),
            &small_params().clustering(),
            1,
        )
        .unwrap();
        let n = ds.num_graphs();
        let width = map.width();
        let mut means = vec![vec![0.0f64; width]; n];
        let mut counts = vec![0usize; n];
        for (row, &g) in table.row_graphs().iter().enumerate() {
            counts[g] += 1;
            for (acc, v) in means[g].iter_mut().zip(map.dense_row(row)) {
                *acc += v;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            for v in m.iter_mut() {
                *v /= c as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                let want = dot(&means[i], &means[j]);
                let got = out.per_hop[1].get(i, j);
                assert!(
                    (want - got).abs() <= 1e-12,
                    "({i},{j}): dense {want} vs sparse {got}"
                );
            }
        }
    }

    #[test]
    fn zero_row_graph_warns_and_zeroes() {
        let a = Assignment::new(vec![Some(0), Some(1), Some(0)], 2).unwrap();
        let map = AlignmentFeatureMap::from_blocks(vec![a]).unwrap();
        // Graph 1 owns no rows.
        let (k, warn) = dgak_gram(&map, &[0, 0, 2], 3).unwrap();
        assert_eq!(warn.len(), 1);
        assert!(warn[0].contains("graph 1"));
        for j in 0..3 {
            assert_eq!(k.get(1, j), 0.0);
            assert_eq!(k.get(j, 1), 0.0);
        }
        assert!(k.get(0, 0) > 0.0);
    }

    #[test]
    fn duplicated_graph_gets_identical_rows() {
        let base = small_dataset();
        let mut graphs: Vec<_> = base.graphs().to_vec();
        let mut classes = base.classes().to_vec();
        graphs.insert(1, graphs[0].clone());
        classes.insert(1, classes[0]);
        let ds = crate::graph::Dataset::new("dup", graphs, classes).unwrap();

        let out = compute_dhgak(&ds, &small_params()).unwrap();
        for k in out.per_hop.iter().chain([&out.summed, &out.normalized]) {
            let n = k.num_graphs();
            for j in 0..n {
                let (a, b) = (k.get(0, j), k.get(1, j));
                let (a, b) = if j == 0 { (a, k.get(1, 1)) } else { (a, b) };
                assert_eq!(a.to_bits(), b.to_bits(), "stage {:?} col {j}", k.stage());
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let ds = small_dataset();
        let params = KernelParams {
            backend: Backend::Word2Vec,
            dim: 8,
            ..small_params()
        };
        let a = compute_dhgak(&ds, &params).unwrap();
        let b = compute_dhgak(&ds, &params).unwrap();
        assert_eq!(bits(&a.normalized), bits(&b.normalized));
        assert_eq!(bits(&a.summed), bits(&b.summed));
        for (x, y) in a.per_hop.iter().zip(&b.per_hop) {
            assert_eq!(bits(x), bits(y));
        }

        let other = KernelParams {
            seed: params.seed + 1,
            ..params
        };
        let c = compute_dhgak(&ds, &other).unwrap();
        assert_ne!(bits(&a.normalized), bits(&c.normalized));
    }

    #[test]
    fn permuting_graphs_permutes_the_gram() {
        let ds = small_dataset();
        let n = ds.num_graphs();
        let perm: Vec<usize> = (0..n).rev().collect();
        let graphs: Vec<_> = perm.iter().map(|&i| ds.graphs()[i].clone()).collect();
        let classes: Vec<_> = perm.iter().map(|&i| ds.classes()[i]).collect();
        let shuffled = crate::graph::Dataset::new("synth", graphs, classes).unwrap();

        let params = small_params();
        let orig = compute_dhgak(&ds, &params).unwrap();
        let perm_out = compute_dhgak(&shuffled, &params).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(
                    perm_out.normalized.get(i, j).to_bits(),
                    orig.normalized.get(perm[i], perm[j]).to_bits(),
                    "({i},{j})"
                );
            }
        }
    }

    #[test]
    fn excluding_hop_zero_drops_its_summand() {
        let ds = small_dataset();
        let with = compute_dhgak(&ds, &small_params()).unwrap();
        let without = compute_dhgak(
            &ds,
            &KernelParams {
                include_hop_zero: false,
                ..small_params()
            },
        )
        .unwrap();
        assert_eq!(with.per_hop.len(), 3);
        assert_eq!(without.per_hop.len(), 2);
        // Hops 1 and 2 are seeded by hop index, so they agree bitwise.
        assert_eq!(bits(&with.per_hop[1]), bits(&without.per_hop[0]));
        assert_eq!(bits(&with.per_hop[2]), bits(&without.per_hop[1]));
        let n = ds.num_graphs();
        for i in 0..n {
            for j in 0..n {
                let diff =
                    with.summed.get(i, j) - without.summed.get(i, j) - with.per_hop[0].get(i, j);
                assert!(diff.abs() <= 1e-15, "({i},{j}): {diff}");
            }
        }
    }

    #[test]
    fn export_import_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let params = small_params();
        let out = compute_dhgak(&ds, &params).unwrap();
        save_gram(dir.path(), &out.normalized).unwrap();

        let back = load_gram(dir.path()).unwrap();
        assert_eq!(bits(&back), bits(&out.normalized));
        assert_eq!(back.stage(), GramStage::Normalized);
        assert_eq!(back.meta(), out.normalized.meta());

        let meta = out.normalized.meta().unwrap().clone();
        assert!(load_gram_expecting(dir.path(), &meta).is_ok());
        let mut wrong = meta.clone();
        wrong.params.seed += 1;
        match load_gram_expecting(dir.path(), &wrong) {
            Err(Error::MetadataMismatch(_)) => {}
            other => panic!("expected MetadataMismatch, got {other:?}"),
        }
    }

    #[test]
    fn tampered_sidecar_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let out = compute_dhgak(&ds, &small_params()).unwrap();
        save_gram(dir.path(), &out.summed).unwrap();

        let meta_path = dir.path().join("meta.json");
        let json = std::fs::read_to_string(&meta_path).unwrap();
        let tampered = json.replace("\"seed\": 9", "\"seed\": 10");
        assert_ne!(json, tampered);
        std::fs::write(&meta_path, tampered).unwrap();
        match load_gram(dir.path()) {
            Err(Error::MetadataMismatch(_)) => {}
            other => panic!("expected MetadataMismatch, got {other:?}"),
        }
    }

    #[test]
    fn anonymous_gram_cannot_be_exported() {
        let dir = tempfile::tempdir().unwrap();
        let k = GramMatrix::new(1, vec![1.0], GramStage::Summed).unwrap();
        assert!(save_gram(dir.path(), &k).is_err());
    }
}
