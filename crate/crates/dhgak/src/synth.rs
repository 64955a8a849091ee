//! Seeded random graph generators for tests and benchmarks.

use rand::prelude::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::graph::{Dataset, Graph};
use crate::Result;

/// Erdős–Rényi graph: every unordered pair is an edge with probability
/// `edge_prob`; labels are uniform over `0..num_labels`. May be disconnected.
pub fn random_graph(n: usize, edge_prob: f64, num_labels: usize, rng: &mut impl Rng) -> Graph {
    let labels = random_labels(n, num_labels, rng);
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in (u + 1)..n as u32 {
            if rng.random::<f64>() < edge_prob {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(labels, &edges).expect("generated edges are valid")
}

/// Connected random graph: a random spanning tree (node `i` attaches to a
/// uniform earlier node) plus independent extra edges with probability
/// `extra_edge_prob`.
pub fn connected_graph(
    n: usize,
    extra_edge_prob: f64,
    num_labels: usize,
    rng: &mut impl Rng,
) -> Graph {
    let labels = random_labels(n, num_labels, rng);
    let mut edges = Vec::new();
    for v in 1..n as u32 {
        let u = rng.random_range(0..v);
        edges.push((u, v));
    }
    for u in 0..n as u32 {
        for v in (u + 1)..n as u32 {
            if rng.random::<f64>() < extra_edge_prob {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(labels, &edges).expect("generated edges are valid")
}

fn random_labels(n: usize, num_labels: usize, rng: &mut impl Rng) -> Vec<u32> {
    assert!(num_labels > 0, "need at least one label");
    (0..n)
        .map(|_| rng.random_range(0..num_labels as u32))
        .collect()
}

/// Parameters for [`random_dataset`].
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub num_graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Probability of each non-tree edge; graphs are always connected.
    pub extra_edge_prob: f64,
    pub num_labels: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            num_graphs: 20,
            min_nodes: 5,
            max_nodes: 15,
            extra_edge_prob: 0.1,
            num_labels: 3,
            num_classes: 2,
            seed: 0,
        }
    }
}

/// Generates a dataset of connected labeled graphs. Classes are dealt
/// round-robin and then shuffled, so every class is populated as long as
/// `num_graphs >= num_classes`.
pub fn random_dataset(name: &str, p: &SynthParams) -> Result<Dataset> {
    let mut rng = ChaCha20Rng::seed_from_u64(p.seed);
    let sizes: Vec<usize> = (0..p.num_graphs)
        .map(|_| rng.random_range(p.min_nodes..=p.max_nodes))
        .collect();
    let graphs: Vec<Graph> = sizes
        .iter()
        .map(|&n| connected_graph(n, p.extra_edge_prob, p.num_labels, &mut rng))
        .collect();
    let mut classes: Vec<u32> = (0..p.num_graphs)
        .map(|i| (i % p.num_classes) as u32)
        .collect();
    // Fisher-Yates shuffle with the same generator keeps everything seeded.
    for i in (1..classes.len()).rev() {
        let j = rng.random_range(0..=i);
        classes.swap(i, j);
    }
    Dataset::new(name, graphs, classes)
}

/// Uniformly samples a node, for tests that probe random nodes.
pub fn random_node(g: &Graph, rng: &mut impl Rng) -> u32 {
    let nodes: Vec<u32> = (0..g.num_nodes() as u32).collect();
    *nodes.choose(rng).expect("graph has nodes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn connected_graph_is_connected() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..20 {
            let g = connected_graph(12, 0.05, 3, &mut rng);
            // BFS from node 0 must reach everything.
            let mut seen = vec![false; g.num_nodes()];
            let mut stack = vec![0u32];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                for &u in g.neighbors(v) {
                    if !seen[u as usize] {
                        seen[u as usize] = true;
                        stack.push(u);
                    }
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn dataset_is_reproducible_and_dense() {
        let p = SynthParams::default();
        let a = random_dataset("synth", &p).unwrap();
        let b = random_dataset("synth", &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_classes(), 2);
        assert_eq!(a.num_graphs(), 20);
    }
}
