//! Helpers shared by the integration tests. The slice and centrality
//! reference implementations here are deliberately written from scratch
//! against the definitions, not by calling into the library's slicer.
#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use std::collections::VecDeque;
use std::path::PathBuf;

use dhgak::alignment::{build_feature_map, AlignmentFeatureMap, ClusteringConfig, HopPoints};
use dhgak::config::KernelParams;
use dhgak::embedder::{deep_histograms, slice_histograms};
use dhgak::graph::{load_tu, Dataset, Graph};
use dhgak::kernel::compute_dhgak;
use dhgak::mat::dot;
use dhgak::slicer::{encode_dataset, SliceSpec};

/// Dataset directory: `DHGAK_DATA_DIR` if set, else `data/` at the repo root.
pub fn data_root() -> PathBuf {
    match std::env::var_os("DHGAK_DATA_DIR") {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

pub fn load_mutag() -> Dataset {
    load_tu(&data_root(), "MUTAG").expect("MUTAG dataset under the data directory")
}

/// First `n` MUTAG graphs as a standalone dataset.
pub fn mutag_subset(n: usize) -> Dataset {
    let ds = load_mutag();
    Dataset::new(
        "MUTAG_subset",
        ds.graphs()[..n].to_vec(),
        ds.classes()[..n].to_vec(),
    )
    .unwrap()
}

/// Single-source shortest-path distances by plain queue BFS.
pub fn bfs_distances(g: &Graph, start: u32) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.num_nodes()];
    dist[start as usize] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v as usize].unwrap();
        for &u in g.neighbors(v) {
            if dist[u as usize].is_none() {
                dist[u as usize] = Some(d + 1);
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Canonical node order used by the encoder: score descending, then label
/// ascending, then index ascending.
fn sort_canonical(g: &Graph, scores: &[f64], nodes: &mut [u32]) {
    nodes.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(g.label(a).cmp(&g.label(b)))
            .then(a.cmp(&b))
    });
}

/// Reference slice encoding built from first principles: take the nodes at
/// distance exactly `h` from `v`, order them canonically, and for each one
/// append the labels of its distance-0, distance-1, ..., distance-`b` shells,
/// each shell ordered canonically.
pub fn reference_slice(g: &Graph, scores: &[f64], v: u32, h: usize, b: usize) -> Vec<u32> {
    let dist_v = bfs_distances(g, v);
    let mut frontier: Vec<u32> = (0..g.num_nodes() as u32)
        .filter(|&u| dist_v[u as usize] == Some(h))
        .collect();
    sort_canonical(g, scores, &mut frontier);

    let mut tokens = Vec::new();
    for &u in &frontier {
        let dist_u = bfs_distances(g, u);
        for r in 0..=b {
            let mut shell: Vec<u32> = (0..g.num_nodes() as u32)
                .filter(|&w| dist_u[w as usize] == Some(r))
                .collect();
            sort_canonical(g, scores, &mut shell);
            tokens.extend(shell.into_iter().map(|w| g.label(w)));
        }
    }
    tokens
}

/// Dominant eigenvector of the adjacency matrix from a dense symmetric
/// eigen-decomposition, sign-fixed to be non-negative and L2-normalized.
pub fn dense_dominant_eigenvector(g: &Graph) -> Vec<f64> {
    let n = g.num_nodes();
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    for v in 0..n {
        for &u in g.neighbors(v as u32) {
            a[(v, u as usize)] = 1.0;
        }
    }
    let eig = a.symmetric_eigen();
    let top = (0..n)
        .max_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap())
        .unwrap();
    let mut vec: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let lead = vec
        .iter()
        .cloned()
        .fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
    if lead < 0.0 {
        for x in &mut vec {
            *x = -*x;
        }
    }
    let norm = dot(&vec, &vec).sqrt();
    for x in &mut vec {
        *x /= norm;
    }
    vec
}

/// Smallest and largest eigenvalue of a symmetric matrix given row-major.
pub fn eigen_range(values: &[f64], n: usize) -> (f64, f64) {
    let m = nalgebra::DMatrix::from_row_slice(n, n, values);
    let eig = m.symmetric_eigen();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        min = min.min(l);
        max = max.max(l);
    }
    (min, max)
}

/// A symmetric PSD check with the relative floor `min >= -1e-8 * max`.
pub fn assert_psd(values: &[f64], n: usize, what: &str) {
    let (min, max) = eigen_range(values, n);
    assert!(
        min >= -1e-8 * max.max(f64::MIN_POSITIVE),
        "{what}: min eigenvalue {min:e} vs max {max:e}"
    );
}

/// Co-assignment count over clustering runs, scaled by 1/(number of runs):
/// the counting form of the alignment kernel.
pub fn counting_dak(map: &AlignmentFeatureMap, x: usize, y: usize) -> f64 {
    let mut co = 0usize;
    for b in 0..map.num_blocks() {
        let block = map.block(b);
        if let (Some(cx), Some(cy)) = (block.cluster(x), block.cluster(y)) {
            if cx == cy {
                co += 1;
            }
        }
    }
    co as f64 / map.num_blocks() as f64
}

/// The same kernel as an explicit inner product of materialized feature rows.
pub fn inner_product_dak(map: &AlignmentFeatureMap, x: usize, y: usize) -> f64 {
    dot(&map.dense_row(x), &map.dense_row(y))
}

/// Counts violations of alignment transitivity: within any one clustering
/// run, two points co-assigned with a common third must be co-assigned with
/// each other.
pub fn transitivity_violations(map: &AlignmentFeatureMap) -> usize {
    let mut violations = 0;
    for b in 0..map.num_blocks() {
        let block = map.block(b);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); block.num_clusters()];
        for p in 0..block.num_points() {
            if let Some(c) = block.cluster(p) {
                members[c as usize].push(p);
            }
        }
        for group in &members {
            for &x in group {
                for &z in group {
                    if block.cluster(x) != block.cluster(z) {
                        violations += 1;
                    }
                }
            }
        }
    }
    violations
}

/// Largest absolute difference, over hops and graph pairs, between the
/// mean-vector per-hop Gram and the brute-force double sum of pointwise
/// alignment-kernel values.
pub fn mean_vs_double_sum_max_diff(ds: &Dataset, params: &KernelParams) -> f64 {
    let n = ds.num_graphs();
    let spec = SliceSpec {
        width: params.width,
        max_hop: params.max_hop,
    };
    let table = encode_dataset(ds, spec);
    let hists = slice_histograms(&table, ds.label_alphabet()).unwrap();
    let weights = deep_histograms(&hists, params.alpha);
    let out = compute_dhgak(ds, params).unwrap();

    let rows_of: Vec<Vec<usize>> = (0..n)
        .map(|g| {
            (0..table.num_rows())
                .filter(|&r| table.graph_of_row(r) == g)
                .collect()
        })
        .collect();

    let mut worst = 0.0f64;
    for hop in 0..=params.max_hop {
        let points = HopPoints::euclidean(&weights[hop]);
        let map =
            build_feature_map(&points, table.row_graphs(), n, &params.clustering(), hop).unwrap();
        for a in 0..n {
            for b in 0..n {
                let mut sum = 0.0;
                for &x in &rows_of[a] {
                    for &y in &rows_of[b] {
                        sum += map.dak_value(x, y);
                    }
                }
                let brute = sum / (rows_of[a].len() * rows_of[b].len()) as f64;
                worst = worst.max((brute - out.per_hop[hop].get(a, b)).abs());
            }
        }
    }
    worst
}

/// Per-graph feature vectors under a given clustering set: per-hop mean of
/// the graph's feature rows, hops concatenated.
pub fn per_graph_features(
    ds: &Dataset,
    width: usize,
    max_hop: usize,
    alpha: f64,
    cfg: &ClusteringConfig,
) -> Vec<Vec<f64>> {
    let n = ds.num_graphs();
    let table = encode_dataset(ds, SliceSpec { width, max_hop });
    let hists = slice_histograms(&table, ds.label_alphabet()).unwrap();
    let weights = deep_histograms(&hists, alpha);

    let mut features: Vec<Vec<f64>> = vec![Vec::new(); n];
    for hop in 0..=max_hop {
        let points = HopPoints::euclidean(&weights[hop]);
        let map = build_feature_map(&points, table.row_graphs(), n, cfg, hop).unwrap();
        let mut sums: Vec<Vec<f64>> = vec![vec![0.0; map.width()]; n];
        let mut counts = vec![0usize; n];
        for row in 0..table.num_rows() {
            let g = table.graph_of_row(row);
            for (s, v) in sums[g].iter_mut().zip(map.dense_row(row)) {
                *s += v;
            }
            counts[g] += 1;
        }
        for g in 0..n {
            for s in &mut sums[g] {
                *s /= counts[g] as f64;
            }
            features[g].extend(&sums[g]);
        }
    }
    features
}

/// The explicit separating hyperplane for unit vectors: with
/// `c_i = 1 - sign(y_i) * beta`, the weight vector has coordinates
/// `w_i = prod_{j != i} c_j` and bias `-prod_j c_j`, and satisfies
/// `y_i * (w^T e_i + bias) > 0` for every i. Labels arrive as 0/1 and are
/// read as -1/+1.
pub fn unit_vector_hyperplane(labels: &[u32], beta: f64) -> (Vec<f64>, f64) {
    let c: Vec<f64> = labels
        .iter()
        .map(|&y| if y == 0 { 1.0 + beta } else { 1.0 - beta })
        .collect();
    let full: f64 = c.iter().product();
    let w: Vec<f64> = (0..c.len())
        .map(|i| {
            c.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v)
                .product()
        })
        .collect();
    (w, -full)
}
