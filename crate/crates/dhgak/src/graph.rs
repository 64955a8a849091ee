//! Undirected node-labeled graphs and TU-format dataset IO.
//!
//! A TU dataset directory `<root>/<name>/` holds four text files:
//!
//! * `<name>_A.txt` — edge list, one `u, v` pair per line with 1-based global
//!   node ids (both directions are usually listed; duplicates are merged),
//! * `<name>_graph_indicator.txt` — line `i` gives the 1-based graph id of
//!   node `i`; ids must form contiguous non-decreasing blocks,
//! * `<name>_graph_labels.txt` — one class label per graph,
//! * `<name>_node_labels.txt` — one label per node (optional; when absent,
//!   node degrees are used as raw labels).
//!
//! Raw node and class labels are remapped to dense ids (`0..`) in order of
//! first appearance, so loading is stable under relabeling and a saved
//! dataset reloads to an identical value.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An undirected graph with dense node labels and sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<u32>>,
    labels: Vec<u32>,
}

impl Graph {
    /// Builds a graph from per-node labels and an undirected edge list.
    ///
    /// Edge endpoints must be in range, self-loops are rejected, and
    /// duplicate edges (in either orientation) are merged.
    pub fn from_edges(labels: Vec<u32>, edges: &[(u32, u32)]) -> Result<Graph> {
        let n = labels.len();
        let mut sets: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
        for &(u, v) in edges {
            if u as usize >= n || v as usize >= n {
                return Err(Error::InvalidData(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidData(format!("self-loop at node {u}")));
            }
            sets[u as usize].insert(v);
            sets[v as usize].insert(u);
        }
        let adj = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        Ok(Graph { adj, labels })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(|a| a.len()).sum::<usize>() / 2
    }

    /// Neighbors of `v` in ascending node order.
    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adj[v as usize]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.adj[v as usize].len()
    }

    pub fn label(&self, v: u32) -> u32 {
        self.labels[v as usize]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// A named collection of graphs with per-graph class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    name: String,
    graphs: Vec<Graph>,
    classes: Vec<u32>,
    num_classes: usize,
    alphabet: usize,
}

impl Dataset {
    /// Assembles a dataset from parts.
    ///
    /// Requires at least one graph, one class label per graph, no empty
    /// graphs, and dense class labels (every value in `0..=max` present).
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, classes: Vec<u32>) -> Result<Dataset> {
        if graphs.is_empty() {
            return Err(Error::InvalidData("dataset has no graphs".into()));
        }
        if graphs.len() != classes.len() {
            return Err(Error::InvalidData(format!(
                "{} graphs but {} class labels",
                graphs.len(),
                classes.len()
            )));
        }
        if let Some(i) = graphs.iter().position(|g| g.num_nodes() == 0) {
            return Err(Error::InvalidData(format!("graph {i} has no nodes")));
        }
        let num_classes = *classes.iter().max().unwrap() as usize + 1;
        let mut seen = vec![false; num_classes];
        for &c in &classes {
            seen[c as usize] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidData(format!(
                "class labels are not dense: class {c} is absent"
            )));
        }
        let alphabet = graphs
            .iter()
            .flat_map(|g| g.labels().iter())
            .max()
            .map_or(0, |&m| m as usize + 1);
        Ok(Dataset {
            name: name.into(),
            graphs,
            classes,
            num_classes,
            alphabet,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_graphs(&self) -> usize {
        self.graphs.len()
    }

    pub fn graph(&self, i: usize) -> &Graph {
        &self.graphs[i]
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    /// Dense class label of graph `i`.
    pub fn class(&self, i: usize) -> u32 {
        self.classes[i]
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Size of the dense node-label alphabet (`max label + 1`).
    pub fn label_alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn total_nodes(&self) -> usize {
        self.graphs.iter().map(|g| g.num_nodes()).sum()
    }
}

/// Remaps raw values to dense ids in order of first appearance.
fn densify(raw: &[i64]) -> Vec<u32> {
    let mut order: Vec<i64> = Vec::new();
    let mut out = Vec::with_capacity(raw.len());
    for &r in raw {
        let id = match order.iter().position(|&x| x == r) {
            Some(i) => i,
            None => {
                order.push(r);
                order.len() - 1
            }
        };
        out.push(id as u32);
    }
    out
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

/// Parses one integer per non-empty line.
fn parse_int_file(path: &Path) -> Result<Vec<i64>> {
    let file = path
        .file_name()
        .map_or_else(String::new, |f| f.to_string_lossy().into_owned());
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v = t
            .parse::<i64>()
            .map_err(|_| Error::parse(&file, i + 1, format!("expected an integer, got {t:?}")))?;
        out.push(v);
    }
    Ok(out)
}

/// Parses a comma-separated 1-based edge list.
fn parse_edge_file(path: &Path) -> Result<Vec<(usize, usize)>> {
    let file = path
        .file_name()
        .map_or_else(String::new, |f| f.to_string_lossy().into_owned());
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let mut parts = t.split(',');
        let err = |msg: String| Error::parse(&file, i + 1, msg);
        let a = parts.next().ok_or_else(|| err("empty line".into()))?.trim();
        let b = parts
            .next()
            .ok_or_else(|| err(format!("expected \"u, v\", got {t:?}")))?
            .trim();
        if parts.next().is_some() {
            return Err(err(format!("expected exactly two fields, got {t:?}")));
        }
        let u = a
            .parse::<usize>()
            .map_err(|_| err(format!("invalid node id {a:?}")))?;
        let v = b
            .parse::<usize>()
            .map_err(|_| err(format!("invalid node id {b:?}")))?;
        if u == 0 || v == 0 {
            return Err(err("node ids are 1-based; got 0".into()));
        }
        out.push((u, v));
    }
    Ok(out)
}

/// Loads the TU dataset `<root>/<name>/` into memory.
pub fn load_tu(root: &Path, name: &str) -> Result<Dataset> {
    let dir = root.join(name);
    if !dir.is_dir() {
        return Err(Error::InvalidData(format!(
            "dataset directory {} does not exist",
            dir.display()
        )));
    }
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let indicator = parse_int_file(&file("graph_indicator"))?;
    let total_nodes = indicator.len();
    if total_nodes == 0 {
        return Err(Error::InvalidData("graph indicator file is empty".into()));
    }

    // Graph ids must be 1-based contiguous non-decreasing blocks.
    let mut node_counts: Vec<usize> = Vec::new();
    for (i, &g) in indicator.iter().enumerate() {
        let expected_max = node_counts.len() as i64 + 1;
        if g == expected_max {
            node_counts.push(1);
        } else if g == expected_max - 1 && g >= 1 {
            *node_counts.last_mut().unwrap() += 1;
        } else {
            return Err(Error::parse(
                format!("{name}_graph_indicator.txt"),
                i + 1,
                format!("graph id {g} breaks the contiguous 1-based sequence"),
            ));
        }
    }
    let num_graphs = node_counts.len();

    // Global node id -> (graph, local id) via per-graph offsets.
    let mut offsets = Vec::with_capacity(num_graphs + 1);
    offsets.push(0usize);
    for &c in &node_counts {
        offsets.push(offsets.last().unwrap() + c);
    }
    let graph_of = |global0: usize| indicator[global0] as usize - 1;

    let raw_classes = parse_int_file(&file("graph_labels"))?;
    if raw_classes.len() != num_graphs {
        return Err(Error::InvalidData(format!(
            "{} graph labels for {} graphs",
            raw_classes.len(),
            num_graphs
        )));
    }

    let edges = parse_edge_file(&file("A"))?;
    let mut edge_sets: Vec<BTreeSet<(u32, u32)>> = vec![BTreeSet::new(); num_graphs];
    for (u, v) in edges {
        if u > total_nodes || v > total_nodes {
            return Err(Error::InvalidData(format!(
                "edge ({u}, {v}) references a node beyond {total_nodes}"
            )));
        }
        if u == v {
            return Err(Error::InvalidData(format!("self-loop at node {u}")));
        }
        let (gu, gv) = (graph_of(u - 1), graph_of(v - 1));
        if gu != gv {
            return Err(Error::InvalidData(format!(
                "edge ({u}, {v}) connects graph {} to graph {}",
                gu + 1,
                gv + 1
            )));
        }
        let lu = (u - 1 - offsets[gu]) as u32;
        let lv = (v - 1 - offsets[gu]) as u32;
        let (a, b) = if lu < lv { (lu, lv) } else { (lv, lu) };
        edge_sets[gu].insert((a, b));
    }

    // Node labels are optional; when the file is absent, use node degrees
    // (counted on the deduplicated adjacency) as raw labels.
    let labels_path = file("node_labels");
    let raw_labels: Vec<i64> = if labels_path.is_file() {
        let l = parse_int_file(&labels_path)?;
        if l.len() != total_nodes {
            return Err(Error::InvalidData(format!(
                "{} node labels for {} nodes",
                l.len(),
                total_nodes
            )));
        }
        l
    } else {
        let mut degrees = vec![0i64; total_nodes];
        for (g, set) in edge_sets.iter().enumerate() {
            for &(a, b) in set {
                degrees[offsets[g] + a as usize] += 1;
                degrees[offsets[g] + b as usize] += 1;
            }
        }
        degrees
    };

    let dense_labels = densify(&raw_labels);
    let dense_classes = densify(&raw_classes);

    let mut graphs = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        let labels = dense_labels[offsets[g]..offsets[g + 1]].to_vec();
        let edges: Vec<(u32, u32)> = edge_sets[g].iter().copied().collect();
        graphs.push(Graph::from_edges(labels, &edges)?);
    }

    Dataset::new(name, graphs, dense_classes)
}

/// Writes `ds` in TU format under `<root>/<ds.name()>/`.
///
/// Node ids are renumbered consecutively in graph order and every undirected
/// edge is listed in both orientations. Reloading the written files yields a
/// dataset equal to `ds`.
pub fn save_tu(ds: &Dataset, root: &Path) -> Result<()> {
    let dir = root.join(ds.name());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let write = |suffix: &str, content: &str| -> Result<()> {
        let path = dir.join(format!("{}_{suffix}.txt", ds.name()));
        fs::write(&path, content).map_err(|e| Error::io(&path, e))
    };

    let mut a = String::new();
    let mut indicator = String::new();
    let mut node_labels = String::new();
    let mut graph_labels = String::new();
    let mut offset = 1usize;
    for (gi, g) in ds.graphs().iter().enumerate() {
        let _ = writeln!(graph_labels, "{}", ds.class(gi));
        for v in 0..g.num_nodes() {
            let _ = writeln!(indicator, "{}", gi + 1);
            let _ = writeln!(node_labels, "{}", g.label(v as u32));
            for &w in g.neighbors(v as u32) {
                let _ = writeln!(a, "{}, {}", offset + v, offset + w as usize);
            }
        }
        offset += g.num_nodes();
    }
    write("A", &a)?;
    write("graph_indicator", &indicator)?;
    write("node_labels", &node_labels)?;
    write("graph_labels", &graph_labels)
}

/// Summary statistics for a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub num_graphs: usize,
    pub num_classes: usize,
    pub class_counts: Vec<usize>,
    pub node_label_alphabet: usize,
    pub total_nodes: usize,
    pub total_edges: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    pub min_nodes: usize,
    pub max_nodes: usize,
}

pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let n = ds.num_graphs();
    let mut class_counts = vec![0usize; ds.num_classes()];
    for &c in ds.classes() {
        class_counts[c as usize] += 1;
    }
    let total_nodes = ds.total_nodes();
    let total_edges: usize = ds.graphs().iter().map(|g| g.num_edges()).sum();
    DatasetStats {
        name: ds.name().to_string(),
        num_graphs: n,
        num_classes: ds.num_classes(),
        class_counts,
        node_label_alphabet: ds.label_alphabet(),
        total_nodes,
        total_edges,
        avg_nodes: total_nodes as f64 / n as f64,
        avg_edges: total_edges as f64 / n as f64,
        min_nodes: ds.graphs().iter().map(|g| g.num_nodes()).min().unwrap_or(0),
        max_nodes: ds.graphs().iter().map(|g| g.num_nodes()).max().unwrap_or(0),
    }
}
