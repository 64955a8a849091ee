//! Neighborhood slice extraction and encoding.
//!
//! For a node `v`, hop `h`, and width `b`, the slice encoding is built from
//! two ingredients:
//!
//! * the hop-`h` frontier: nodes at exactly distance `h` from `v`,
//! * the width-`b` sequence of a node `u`: the concatenation, for `i = 0..=b`,
//!   of the nodes at exactly distance `i` from `u`, each distance layer sorted
//!   into the canonical centrality order.
//!
//! The encoding of `(v, h)` sorts the frontier canonically and concatenates
//! the width-`b` sequences of its members, mapped to node labels. Nodes may
//! repeat across blocks (they never repeat within one, since breadth-first
//! search visits each node once per root). An empty frontier — `h` beyond the
//! eccentricity of `v` — yields an empty encoding, which downstream stages
//! treat as a zero contribution.

use std::collections::VecDeque;

use crate::centrality::{eigenvector_centrality, CentralityRanking};
use crate::exec::par_map_slice;
use crate::graph::{Dataset, Graph};

/// Shape of a slice decomposition: width `b` and maximum hop `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceSpec {
    /// Neighborhood width `b`: how many BFS layers around each frontier node
    /// enter its block.
    pub width: usize,
    /// Maximum hop `H`: slices are encoded for hops `0..=H`.
    pub max_hop: usize,
}

/// Breadth-first distance layers around `v`, up to `depth`.
///
/// `layers[i]` holds the nodes at exactly distance `i`, in ascending node
/// order; the result is truncated once layers run empty, so its length is
/// `min(depth, ecc(v)) + 1`.
pub fn bfs_layers(g: &Graph, v: u32, depth: usize) -> Vec<Vec<u32>> {
    let n = g.num_nodes();
    let mut dist = vec![usize::MAX; n];
    dist[v as usize] = 0;
    let mut layers: Vec<Vec<u32>> = vec![vec![v]];
    let mut queue = VecDeque::from([v]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u as usize];
        if du == depth {
            continue;
        }
        for &w in g.neighbors(u) {
            if dist[w as usize] == usize::MAX {
                dist[w as usize] = du + 1;
                if layers.len() == du + 1 {
                    layers.push(Vec::new());
                }
                layers[du + 1].push(w);
                queue.push_back(w);
            }
        }
    }
    layers
}

/// Nodes at exactly distance `r` from `v`, in ascending node order.
pub fn bfs_leaves(g: &Graph, v: u32, r: usize) -> Vec<u32> {
    bfs_layers(g, v, r).into_iter().nth(r).unwrap_or_default()
}

/// Encodes the `(v, h)` slice of width `b` as a label-token sequence.
pub fn encode_slice(g: &Graph, rank: &CentralityRanking, v: u32, h: usize, b: usize) -> Vec<u32> {
    let mut frontier = bfs_leaves(g, v, h);
    rank.sort_nodes(g, &mut frontier);
    let mut tokens = Vec::new();
    for &u in &frontier {
        for mut layer in bfs_layers(g, u, b) {
            rank.sort_nodes(g, &mut layer);
            tokens.extend(layer.into_iter().map(|w| g.label(w)));
        }
    }
    tokens
}

/// All slice encodings of a dataset for one [`SliceSpec`].
///
/// Rows are nodes in graph-major order (graph 0's nodes, then graph 1's, and
/// so on); each row holds one token sequence per hop `0..=max_hop`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceTable {
    spec: SliceSpec,
    /// `tokens[row][hop]` — label tokens of that node's slice at that hop.
    tokens: Vec<Vec<Vec<u32>>>,
    /// Graph index of each row.
    row_graph: Vec<usize>,
    /// First row of each graph, plus a final total-rows sentinel.
    graph_offsets: Vec<usize>,
}

impl SliceTable {
    pub fn spec(&self) -> SliceSpec {
        self.spec
    }

    pub fn num_rows(&self) -> usize {
        self.tokens.len()
    }

    pub fn row_of(&self, graph: usize, node: u32) -> usize {
        self.graph_offsets[graph] + node as usize
    }

    pub fn graph_of_row(&self, row: usize) -> usize {
        self.row_graph[row]
    }

    /// Graph index of every row, in row order.
    pub fn row_graphs(&self) -> &[usize] {
        &self.row_graph
    }

    pub fn tokens(&self, graph: usize, node: u32, hop: usize) -> &[u32] {
        &self.tokens[self.row_of(graph, node)][hop]
    }

    pub fn tokens_at(&self, row: usize, hop: usize) -> &[u32] {
        &self.tokens[row][hop]
    }

    /// All token sequences in corpus order: by row, then by hop. Empty
    /// sequences are included; consumers that need non-empty sentences filter
    /// them out.
    pub fn sentences(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.tokens
            .iter()
            .flat_map(|hops| hops.iter().map(|t| t.as_slice()))
    }
}

/// Encodes every node of every graph at hops `0..=spec.max_hop`.
///
/// Work is split per graph (in parallel under the `parallel` feature); each
/// graph computes its centrality ranking once and caches per-node BFS layers
/// to depth `max(H, b)` so frontier and width lookups share one traversal.
pub fn encode_dataset(ds: &Dataset, spec: SliceSpec) -> SliceTable {
    let per_graph: Vec<Vec<Vec<Vec<u32>>>> = par_map_slice(ds.graphs(), |g| encode_graph(g, spec));

    let mut tokens = Vec::with_capacity(ds.total_nodes());
    let mut row_graph = Vec::with_capacity(ds.total_nodes());
    let mut graph_offsets = Vec::with_capacity(ds.num_graphs() + 1);
    graph_offsets.push(0);
    for (gi, rows) in per_graph.into_iter().enumerate() {
        for row in rows {
            tokens.push(row);
            row_graph.push(gi);
        }
        graph_offsets.push(tokens.len());
    }
    SliceTable {
        spec,
        tokens,
        row_graph,
        graph_offsets,
    }
}

fn encode_graph(g: &Graph, spec: SliceSpec) -> Vec<Vec<Vec<u32>>> {
    let n = g.num_nodes();
    let rank = eigenvector_centrality(g);
    let depth = spec.max_hop.max(spec.width);

    // Canonically sorted BFS layers per node, shared by frontier lookups
    // (layers up to H) and width sequences (layers up to b).
    let sorted_layers: Vec<Vec<Vec<u32>>> = (0..n as u32)
        .map(|v| {
            let mut layers = bfs_layers(g, v, depth);
            for layer in layers.iter_mut() {
                rank.sort_nodes(g, layer);
            }
            layers
        })
        .collect();

    // Width-b token block per node: concatenated sorted layers 0..=b.
    let blocks: Vec<Vec<u32>> = (0..n)
        .map(|u| {
            sorted_layers[u]
                .iter()
                .take(spec.width + 1)
                .flat_map(|layer| layer.iter().map(|&w| g.label(w)))
                .collect()
        })
        .collect();

    (0..n)
        .map(|v| {
            (0..=spec.max_hop)
                .map(|h| {
                    let Some(frontier) = sorted_layers[v].get(h) else {
                        return Vec::new();
                    };
                    frontier
                        .iter()
                        .flat_map(|&u| blocks[u as usize].iter().copied())
                        .collect()
                })
                .collect()
        })
        .collect()
}
