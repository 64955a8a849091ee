//! Clustering-based alignment feature maps.
//!
//! For one hop, the slice embeddings of *all* graphs are clustered jointly by
//! each configured method, `T` times each with derived sub-seeds. Every run
//! contributes one indicator block to the feature map: a slice's block has a
//! single entry `1/sqrt(T * |methods|)` in the column of its cluster (or an
//! all-zero block if the method marked it noise). Two slices are "aligned"
//! when a run co-assigns them, and the inner product of two feature rows is
//! exactly the fraction of runs that align them.
//!
//! Clustering can run either directly on embedding coordinates or on latent
//! coordinates paired with a Gram metric (see [`HopPoints`]): distances are
//! then computed in the latent space, which is how the pipeline clusters
//! label-histogram coordinates without materializing embedding products.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::exec::par_map_indices;
use crate::mat::{dot, RowMatrix};
use crate::{Error, Result};

/// One clustering method of the set Ψ.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ClusterMethod {
    /// k-means with `k = max(2, round(num_graphs * cluster_factor))`.
    #[default]
    #[serde(rename = "kmeans")]
    KMeans,
    /// Density clustering; `eps = None` derives the radius per run as the
    /// median 4-NN distance over a sample of at most 1000 points.
    #[serde(rename = "dbscan")]
    Dbscan { eps: Option<f64>, min_pts: usize },
    /// Assigns every slice to its owning graph (the theoretical oracle Ψ_o).
    #[serde(rename = "oracle")]
    OracleByGraph,
}

pub const DBSCAN_DEFAULT_MIN_PTS: usize = 4;

/// The clustering set Ψ plus experiment count and seeding.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringConfig {
    pub methods: Vec<ClusterMethod>,
    /// Number of repeated experiments `T` per method.
    pub t_runs: usize,
    /// Scales the dataset size into the k-means cluster count.
    pub cluster_factor: f64,
    pub seed: u64,
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("clustering set is empty".into()));
        }
        if self.t_runs == 0 {
            return Err(Error::InvalidConfig("T must be at least 1".into()));
        }
        if self.cluster_factor.is_nan() || self.cluster_factor <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "cluster factor must be positive, got {}",
                self.cluster_factor
            )));
        }
        for m in &self.methods {
            if let ClusterMethod::Dbscan { eps, min_pts } = m {
                if let Some(e) = eps {
                    if e.is_nan() || *e <= 0.0 {
                        return Err(Error::InvalidConfig(format!(
                            "dbscan eps must be positive, got {e}"
                        )));
                    }
                }
                if *min_pts == 0 {
                    return Err(Error::InvalidConfig(
                        "dbscan min_pts must be at least 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Cluster count for k-means runs: `max(2, round(num_graphs * factor))`.
    pub fn kmeans_k(&self, num_graphs: usize) -> usize {
        ((num_graphs as f64 * self.cluster_factor).round() as usize).max(2)
    }
}

/// Derives the seed of one clustering run from the master seed, hop, method
/// position, and repetition index (first eight bytes of a SHA-256 digest).
pub fn sub_seed(master: u64, hop: usize, method_index: usize, run: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((hop as u64).to_le_bytes());
    hasher.update((method_index as u64).to_le_bytes());
    hasher.update((run as u64).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Point set for clustering: row coordinates plus an optional Gram metric.
///
/// With `metric: None`, distances are Euclidean on `coords`. With
/// `metric: Some(G)` (a `q x q` positive semi-definite matrix), the distance
/// between rows `w1, w2` is `sqrt((w1-w2)^T G (w1-w2))` — the Euclidean
/// distance of the embedded points `E w` when `G = E^T E`.
#[derive(Debug, Clone, Copy)]
pub struct HopPoints<'a> {
    pub coords: &'a RowMatrix,
    pub metric: Option<&'a RowMatrix>,
}

impl<'a> HopPoints<'a> {
    pub fn euclidean(coords: &'a RowMatrix) -> Self {
        HopPoints {
            coords,
            metric: None,
        }
    }

    pub fn num_points(&self) -> usize {
        self.coords.rows()
    }

    fn validate(&self) -> Result<()> {
        if let Some(g) = self.metric {
            if g.rows() != self.coords.cols() || g.cols() != self.coords.cols() {
                return Err(Error::DimensionMismatch(format!(
                    "metric is {}x{} but coordinates have dimension {}",
                    g.rows(),
                    g.cols(),
                    self.coords.cols()
                )));
            }
        }
        Ok(())
    }

    /// `G v` (or a copy of `v` for the Euclidean case).
    fn apply_metric(&self, v: &[f64]) -> Vec<f64> {
        match self.metric {
            None => v.to_vec(),
            Some(g) => (0..g.rows()).map(|i| dot(g.row(i), v)).collect(),
        }
    }

    /// Quadratic form `v^T G v` of every row.
    fn row_norms(&self) -> Vec<f64> {
        (0..self.coords.rows())
            .map(|i| {
                let r = self.coords.row(i);
                dot(r, &self.apply_metric(r))
            })
            .collect()
    }

    fn sq_dist(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.coords.row(i), self.coords.row(j));
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        dot(&d, &self.apply_metric(&d)).max(0.0)
    }
}

/// Result of one clustering run: per-point cluster ids (`None` = noise) out
/// of a fixed cluster count, plus any warnings the run produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    cluster_of: Vec<Option<u32>>,
    num_clusters: usize,
    warnings: Vec<String>,
}

impl Assignment {
    /// Builds an assignment from raw cluster ids, which must all be below
    /// `num_clusters`.
    pub fn new(cluster_of: Vec<Option<u32>>, num_clusters: usize) -> Result<Assignment> {
        if let Some(bad) = cluster_of
            .iter()
            .flatten()
            .find(|&&c| c as usize >= num_clusters)
        {
            return Err(Error::InvalidData(format!(
                "cluster id {bad} out of range for {num_clusters} clusters"
            )));
        }
        Ok(Assignment {
            cluster_of,
            num_clusters,
            warnings: Vec::new(),
        })
    }

    pub fn cluster(&self, point: usize) -> Option<u32> {
        self.cluster_of[point]
    }

    pub fn num_points(&self) -> usize {
        self.cluster_of.len()
    }

    /// Width of this run's indicator block (clusters may be empty).
    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

/// k-means on a Euclidean point set. See [`kmeans_points`] for the general
/// metric-aware form and the algorithm contract.
pub fn kmeans(points: &RowMatrix, k: usize, seed: u64) -> Assignment {
    kmeans_points(&HopPoints::euclidean(points), k, seed)
}

/// k-means: k-means++ initialization, then Lloyd iterations until the
/// largest centroid movement drops below 1e-6 or 300 iterations elapse.
/// Empty clusters are re-seeded from the point farthest from its assigned
/// centroid (ties toward the lower point index). Deterministic given `seed`.
///
/// Duplicate points are collapsed to weighted uniques internally, which is
/// algebraically identical to clustering the multiset. If `k` exceeds the
/// point count it is clamped (with a warning on the returned assignment);
/// indistinguishable points beyond the number of distinct values leave the
/// surplus clusters empty.
pub fn kmeans_points(points: &HopPoints, k: usize, seed: u64) -> Assignment {
    assert!(k >= 1, "k must be at least 1");
    points.validate().expect("point set is consistent");
    let n = points.num_points();
    assert!(n >= 1, "cannot cluster zero points");

    let mut warnings = Vec::new();
    let k = if k > n {
        warnings.push(format!("k={k} exceeds {n} points; clamped to {n}"));
        n
    } else {
        k
    };

    // Collapse bitwise-identical rows into weighted uniques, ordered
    // lexicographically by value. The algorithm then depends only on the
    // point multiset, so permuting input rows permutes the assignment
    // identically (same seed, same clusters per distinct value).
    let q = points.coords.cols();
    let mut first: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut uniq_rows: Vec<usize> = Vec::new();
    let mut tmp_of_row: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let bits: Vec<u64> = points.coords.row(i).iter().map(|v| v.to_bits()).collect();
        let u = *first.entry(bits).or_insert_with(|| {
            uniq_rows.push(i);
            uniq_rows.len() - 1
        });
        tmp_of_row.push(u);
    }
    let nu = uniq_rows.len();
    let mut order: Vec<usize> = (0..nu).collect();
    order.sort_unstable_by(|&a, &b| {
        let (ra, rb) = (
            points.coords.row(uniq_rows[a]),
            points.coords.row(uniq_rows[b]),
        );
        ra.partial_cmp(rb).expect("coordinates are finite")
    });
    let mut canon = vec![0usize; nu];
    for (new_id, &old_id) in order.iter().enumerate() {
        canon[old_id] = new_id;
    }
    uniq_rows = order.iter().map(|&o| uniq_rows[o]).collect();
    let mut weight = vec![0.0f64; nu];
    let of_row: Vec<usize> = tmp_of_row
        .into_iter()
        .map(|u| {
            let c = canon[u];
            weight[c] += 1.0;
            c
        })
        .collect();
    let norms = points.row_norms();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sample_cdf = |rng: &mut ChaCha20Rng, masses: &[f64]| -> Option<usize> {
        let total: f64 = masses.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return None;
        }
        let r = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, &m) in masses.iter().enumerate() {
            acc += m;
            if r < acc {
                return Some(i);
            }
        }
        masses.iter().rposition(|&m| m > 0.0)
    };

    // k-means++ over uniques: first pick by weight, then by weight times the
    // squared distance to the nearest chosen centroid. Runs out of distinct
    // points -> remaining centroids duplicate the first unique and stay empty.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first_pick = sample_cdf(&mut rng, &weight).expect("weights are positive");
    centroids.push(points.coords.row(uniq_rows[first_pick]).to_vec());
    let gc0 = points.apply_metric(&centroids[0]);
    let cc0 = dot(&centroids[0], &gc0);
    let mut best_d2: Vec<f64> = (0..nu)
        .map(|u| {
            (norms[uniq_rows[u]] - 2.0 * dot(points.coords.row(uniq_rows[u]), &gc0) + cc0).max(0.0)
        })
        .collect();
    while centroids.len() < k {
        let masses: Vec<f64> = weight.iter().zip(&best_d2).map(|(w, d)| w * d).collect();
        let Some(pick) = sample_cdf(&mut rng, &masses) else {
            break;
        };
        let c = points.coords.row(uniq_rows[pick]).to_vec();
        let gc = points.apply_metric(&c);
        let cc = dot(&c, &gc);
        for u in 0..nu {
            let d2 = (norms[uniq_rows[u]] - 2.0 * dot(points.coords.row(uniq_rows[u]), &gc) + cc)
                .max(0.0);
            if d2 < best_d2[u] {
                best_d2[u] = d2;
            }
        }
        centroids.push(c);
    }
    while centroids.len() < k {
        centroids.push(points.coords.row(uniq_rows[0]).to_vec());
    }

    let mut assign: Vec<usize> = vec![0; nu];
    for _iter in 0..300 {
        // Assignment step (ties toward the lower cluster id).
        let gcs: Vec<(Vec<f64>, f64)> = centroids
            .iter()
            .map(|c| {
                let gc = points.apply_metric(c);
                let cc = dot(c, &gc);
                (gc, cc)
            })
            .collect();
        for u in 0..nu {
            let x = points.coords.row(uniq_rows[u]);
            let qx = norms[uniq_rows[u]];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, (gc, cc)) in gcs.iter().enumerate() {
                let d = (qx - 2.0 * dot(x, gc) + cc).max(0.0);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assign[u] = best;
        }

        // Re-seed empty clusters from the farthest point (by its current
        // centroid distance), one cluster at a time.
        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a] += 1;
        }
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far_u = None;
            let mut far_d = 0.0;
            for u in 0..nu {
                if counts[assign[u]] <= 1 {
                    continue; // moving it would empty another cluster
                }
                let (gc, cc) = &gcs[assign[u]];
                let d = (norms[uniq_rows[u]] - 2.0 * dot(points.coords.row(uniq_rows[u]), gc) + cc)
                    .max(0.0);
                if d > far_d {
                    far_d = d;
                    far_u = Some(u);
                }
            }
            if let Some(u) = far_u {
                centroids[c] = points.coords.row(uniq_rows[u]).to_vec();
                counts[assign[u]] -= 1;
                assign[u] = c;
                counts[c] += 1;
                reseeded = true;
            }
        }
        if reseeded {
            continue; // recompute assignments against the moved centroids
        }

        // Update step: weighted means; movement in the metric space.
        let mut sums = vec![0.0; k * q];
        let mut masses = vec![0.0; k];
        for u in 0..nu {
            let x = points.coords.row(uniq_rows[u]);
            let dst = &mut sums[assign[u] * q..(assign[u] + 1) * q];
            for (s, v) in dst.iter_mut().zip(x) {
                *s += weight[u] * v;
            }
            masses[assign[u]] += weight[u];
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            if masses[c] > 0.0 {
                let mean: Vec<f64> = sums[c * q..(c + 1) * q]
                    .iter()
                    .map(|s| s / masses[c])
                    .collect();
                let delta: Vec<f64> = mean.iter().zip(&centroids[c]).map(|(a, b)| a - b).collect();
                let d2 = dot(&delta, &points.apply_metric(&delta)).max(0.0);
                movement = movement.max(d2.sqrt());
                centroids[c] = mean;
            }
        }
        if movement < 1e-6 {
            break;
        }
    }

    Assignment {
        cluster_of: of_row.iter().map(|&u| Some(assign[u] as u32)).collect(),
        num_clusters: k,
        warnings,
    }
}

/// Density clustering with the classic core/border/noise semantics. A point
/// is core when at least `min_pts` points (itself included) lie within `eps`;
/// clusters grow from core points in index order, border points join the
/// first cluster that reaches them, and unreached non-core points become
/// noise (`None`).
pub fn dbscan(points: &HopPoints, eps: f64, min_pts: usize) -> Assignment {
    assert!(eps > 0.0, "eps must be positive");
    assert!(min_pts >= 1, "min_pts must be at least 1");
    points.validate().expect("point set is consistent");
    let n = points.num_points();
    let eps2 = eps * eps;

    let neighbors: Vec<Vec<usize>> = par_map_indices(n, |i| {
        (0..n).filter(|&j| points.sq_dist(i, j) <= eps2).collect()
    });
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut cluster: Vec<Option<u32>> = vec![None; n];
    let mut next = 0u32;
    for start in 0..n {
        if cluster[start].is_some() || !core[start] {
            continue;
        }
        let id = next;
        next += 1;
        cluster[start] = Some(id);
        let mut queue = vec![start];
        while let Some(p) = queue.pop() {
            for &nb in &neighbors[p] {
                if cluster[nb].is_none() {
                    cluster[nb] = Some(id);
                    if core[nb] {
                        queue.push(nb);
                    }
                }
            }
        }
    }

    Assignment {
        cluster_of: cluster,
        num_clusters: next as usize,
        warnings: Vec::new(),
    }
}

/// Radius heuristic for [`dbscan`]: the median distance to the `k`-th nearest
/// other point, over at most `max_sample` points sampled with `rng`. Falls
/// back to a tiny positive radius when the median degenerates to zero.
pub fn median_knn_eps(points: &HopPoints, k: usize, max_sample: usize, rng: &mut impl Rng) -> f64 {
    let n = points.num_points();
    let sample: Vec<usize> = if n <= max_sample {
        (0..n).collect()
    } else {
        // Partial Fisher-Yates over the index range.
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..max_sample {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        idx.truncate(max_sample);
        idx
    };
    let mut kth: Vec<f64> = sample
        .iter()
        .map(|&i| {
            let mut d2: Vec<f64> = sample
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| points.sq_dist(i, j))
                .collect();
            d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d2.get(k - 1).copied().unwrap_or(0.0).sqrt()
        })
        .collect();
    kth.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = kth.len();
    let median = if m == 0 {
        0.0
    } else if m % 2 == 1 {
        kth[m / 2]
    } else {
        0.5 * (kth[m / 2 - 1] + kth[m / 2])
    };
    if median > 0.0 {
        median
    } else {
        1e-12
    }
}

/// The oracle clustering: every slice joins the cluster of its owning graph,
/// so there are exactly `num_graphs` clusters.
pub fn oracle_clustering(row_graphs: &[usize], num_graphs: usize) -> Assignment {
    Assignment {
        cluster_of: row_graphs.iter().map(|&g| Some(g as u32)).collect(),
        num_clusters: num_graphs,
        warnings: Vec::new(),
    }
}

/// Concatenated indicator blocks of all `(method, run)` clustering
/// experiments at one hop, scaled by `1/sqrt(T * |methods|)`.
#[derive(Debug, Clone)]
pub struct AlignmentFeatureMap {
    blocks: Vec<Assignment>,
    scale: f64,
    rows: usize,
}

impl AlignmentFeatureMap {
    /// Assembles a feature map from pre-computed clustering runs. All blocks
    /// must cover the same number of points; the scale is `1/sqrt(runs)`.
    pub fn from_blocks(blocks: Vec<Assignment>) -> Result<AlignmentFeatureMap> {
        let Some(first) = blocks.first() else {
            return Err(Error::InvalidData(
                "feature map needs at least one block".into(),
            ));
        };
        let rows = first.num_points();
        if blocks.iter().any(|b| b.num_points() != rows) {
            return Err(Error::DimensionMismatch(
                "all blocks of a feature map must cover the same points".into(),
            ));
        }
        Ok(AlignmentFeatureMap {
            scale: 1.0 / (blocks.len() as f64).sqrt(),
            blocks,
            rows,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> &Assignment {
        &self.blocks[i]
    }

    /// The nonzero entry value `1/sqrt(T * |methods|)`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Total number of columns across all blocks.
    pub fn width(&self) -> usize {
        self.blocks.iter().map(|b| b.num_clusters()).sum()
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.blocks
            .iter()
            .flat_map(|b| b.warnings().iter().map(|s| s.as_str()))
    }

    /// Inner product of two feature rows: `scale^2` times the number of runs
    /// that co-assign the two slices (noise co-assigns with nothing).
    pub fn dak_value(&self, x: usize, y: usize) -> f64 {
        let mut co = 0usize;
        for b in &self.blocks {
            if let (Some(cx), Some(cy)) = (b.cluster(x), b.cluster(y)) {
                if cx == cy {
                    co += 1;
                }
            }
        }
        co as f64 * self.scale * self.scale
    }

    /// Materializes one feature row as a dense vector of length
    /// [`width`](Self::width).
    pub fn dense_row(&self, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        let mut offset = 0;
        for b in &self.blocks {
            if let Some(c) = b.cluster(row) {
                out[offset + c as usize] = self.scale;
            }
            offset += b.num_clusters();
        }
        out
    }

    /// Writes the nonzero entries as `row col value` triplets.
    pub fn export_triplets(&self, out: &mut impl Write) -> std::io::Result<()> {
        for row in 0..self.rows {
            let mut offset = 0;
            for b in &self.blocks {
                if let Some(c) = b.cluster(row) {
                    writeln!(out, "{} {} {}", row, offset + c as usize, self.scale)?;
                }
                offset += b.num_clusters();
            }
        }
        Ok(())
    }
}

/// Runs every `(method, run)` clustering experiment for `hop` and assembles
/// the feature map. Runs are independent and execute in parallel; blocks are
/// placed by `(method index, run index)` position, so the result does not
/// depend on completion order.
pub fn build_feature_map(
    points: &HopPoints,
    row_graphs: &[usize],
    num_graphs: usize,
    cfg: &ClusteringConfig,
    hop: usize,
) -> Result<AlignmentFeatureMap> {
    cfg.validate()?;
    points.validate()?;
    if row_graphs.len() != points.num_points() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows of graph ids for {} points",
            row_graphs.len(),
            points.num_points()
        )));
    }

    let runs = cfg.methods.len() * cfg.t_runs;
    let blocks: Vec<Assignment> = par_map_indices(runs, |i| {
        let (mi, t) = (i / cfg.t_runs, i % cfg.t_runs);
        let seed = sub_seed(cfg.seed, hop, mi, t);
        match &cfg.methods[mi] {
            ClusterMethod::KMeans => kmeans_points(points, cfg.kmeans_k(num_graphs), seed),
            ClusterMethod::Dbscan { eps, min_pts } => {
                let eps = eps.unwrap_or_else(|| {
                    let mut rng = ChaCha20Rng::seed_from_u64(seed);
                    median_knn_eps(points, DBSCAN_DEFAULT_MIN_PTS, 1000, &mut rng)
                });
                dbscan(points, eps, *min_pts)
            }
            ClusterMethod::OracleByGraph => oracle_clustering(row_graphs, num_graphs),
        }
    });

    Ok(AlignmentFeatureMap {
        blocks,
        scale: 1.0 / (runs as f64).sqrt(),
        rows: points.num_points(),
    })
}
