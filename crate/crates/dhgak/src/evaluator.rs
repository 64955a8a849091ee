//! Kernel classification: a precomputed-kernel C-SVM trained by SMO,
//! stratified k-fold cross-validation with per-fold regularization tuning,
//! and the parameter grid search.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{build_feature_map, ClusterMethod, HopPoints};
use crate::config::KernelParams;
use crate::embedder::{
    deep_histograms, one_hot_embedding, slice_histograms, train_skipgram, Backend, SkipGramParams,
};
use crate::exec::par_map_indices;
use crate::graph::Dataset;
use crate::kernel::{dgak_gram, dhgak_gram, embedding_gram, normalize_gram, GramMatrix, GramMeta};
use crate::mat::RowMatrix;
use crate::slicer::{encode_dataset, SliceSpec};
use crate::{Error, Result};

/// Default KKT tolerance for the SMO solver.
pub const DEFAULT_SVM_TOL: f64 = 1e-3;

/// Regularization grid `{10^-3, 10^-2, ..., 10^4}`.
pub fn default_c_grid() -> Vec<f64> {
    (-3..=4).map(|e| 10f64.powi(e)).collect()
}

/// Ten cluster-factor values log-spaced from 0.1 to 2.0
/// (`0.1 * 20^(i/9)`, i = 0..9).
pub fn log_cluster_factors() -> Vec<f64> {
    (0..10).map(|i| 0.1 * 20f64.powf(i as f64 / 9.0)).collect()
}

/// A trained binary SVM over a precomputed kernel. Indices are positions in
/// the training sequence the model was fitted on, not dataset-global ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvmModel {
    /// Training positions with nonzero dual weight.
    pub support_indices: Vec<usize>,
    /// `alpha_i * y_i` for each support index.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    /// Regularization bound the model was trained with.
    pub c: f64,
    /// The one-vs-one class pair `(positive, negative)`.
    pub class_pair: (u32, u32),
    /// False when the iteration cap stopped the solver before reaching the
    /// KKT tolerance; the model is the best iterate found.
    pub converged: bool,
}

impl SvmModel {
    /// Decision value `sum_s coef_s * k(s) + bias`, where `k` maps a support
    /// vector's training position to its kernel value against the query.
    pub fn decision<F: Fn(usize) -> f64>(&self, k: F) -> f64 {
        self.support_indices
            .iter()
            .zip(&self.dual_coefs)
            .map(|(&s, &c)| c * k(s))
            .sum::<f64>()
            + self.bias
    }
}

const SMO_TAU: f64 = 1e-12;
const SMO_MAX_ITER: usize = 200_000;

/// Trains a binary C-SVM on a precomputed kernel by sequential minimal
/// optimization with maximal-violating-pair selection, stopping when the
/// KKT violation drops to `tol` (or flagging `converged = false` at the
/// iteration cap). Labels must be exactly +1.0 or -1.0.
pub fn svm_train(k: &RowMatrix, labels: &[f64], c: f64, tol: f64) -> Result<SvmModel> {
    let n = labels.len();
    if k.rows() != n || k.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} kernel for {n} labels",
            k.rows(),
            k.cols()
        )));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidData("SVM labels must be +1 or -1".into()));
    }
    if c <= 0.0 {
        return Err(Error::InvalidConfig(format!("C must be positive, got {c}")));
    }
    if n == 0 {
        return Err(Error::InvalidData("cannot train on zero points".into()));
    }

    // Dual problem: min 1/2 a'Qa - e'a, 0 <= a <= C, y'a = 0, with
    // Q_ij = y_i y_j K_ij. `grad` is Qa - e.
    let y = labels;
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let mut objective = 0.0f64;
    let mut converged = false;

    for _ in 0..SMO_MAX_ITER {
        // Maximal violating pair: i maximizes -y*grad over points that can
        // grow their alpha along +y (I_up), j maximizes y*grad over points
        // that can shrink it (I_low).
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax2 = f64::NEG_INFINITY;
        for t in 0..n {
            let in_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if in_up && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
            if in_low && y[t] * grad[t] > gmax2 {
                gmax2 = y[t] * grad[t];
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax + gmax2 <= tol {
            converged = true;
            break;
        }

        let (ki, kj) = (k.row(i), k.row(j));
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (ki[i] + kj[j] + 2.0 * ki[j]).max(SMO_TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else {
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            }
        } else {
            let quad = (ki[i] + kj[j] - 2.0 * ki[j]).max(SMO_TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        if di == 0.0 && dj == 0.0 {
            // The violating pair could not move (degenerate geometry at the
            // box boundary); treat the current iterate as final.
            converged = true;
            break;
        }
        // The pair update solves its two-variable subproblem exactly, so the
        // dual objective (here negated: we minimize) never increases.
        let (qii, qjj) = (ki[i], kj[j]);
        let qij = y[i] * y[j] * ki[j];
        let dobj = di * grad[i]
            + dj * grad[j]
            + 0.5 * (qii * di * di + 2.0 * qij * di * dj + qjj * dj * dj);
        debug_assert!(
            dobj <= 1e-7 * (1.0 + objective.abs()),
            "SMO objective increased by {dobj}"
        );
        objective += dobj;
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    // Bias from the KKT conditions: average y*grad over free support
    // vectors, or the midpoint of the feasible interval if none are free.
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum_free += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };

    let mut support_indices = Vec::new();
    let mut dual_coefs = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_indices.push(t);
            dual_coefs.push(alpha[t] * y[t]);
        }
    }
    Ok(SvmModel {
        support_indices,
        dual_coefs,
        bias: -rho,
        c,
        class_pair: (0, 1),
        converged,
    })
}

/// Cross-validation result: per-fold test accuracies (fractions in [0, 1]),
/// their mean and population standard deviation, and the per-fold choice of
/// C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub chosen_c: Vec<f64>,
    /// Effective outer fold count (reduced when a class is too small).
    pub folds: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
    /// Identity of the Gram the report was computed from, when available.
    pub meta: Option<GramMeta>,
}

fn derived_seed(master: u64, tag: u64, sub: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.to_le_bytes());
    h.update(sub.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is long enough"))
}

/// Assigns each point a fold, stratified by class: classes are processed in
/// label order, each class's members are shuffled, and members are dealt to
/// folds round-robin with a counter that runs on across classes (so fold
/// sizes differ by at most one globally, not per class). Returns the per
/// point fold id, the effective fold count, and any warnings.
pub(crate) fn stratified_folds(
    labels: &[u32],
    folds: usize,
    seed: u64,
) -> Result<(Vec<usize>, usize, Vec<String>)> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    let num_classes = labels.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let mut counts = vec![0usize; num_classes];
    for &c in labels {
        counts[c as usize] += 1;
    }
    let min_count = counts.iter().copied().min().unwrap_or(0);
    let mut warnings = Vec::new();
    let effective = folds.min(min_count);
    if effective < folds {
        warnings.push(format!(
            "smallest class has {min_count} members; using {effective} folds instead of {folds}"
        ));
    }
    if effective < 2 {
        return Err(Error::InvalidData(format!(
            "smallest class has only {min_count} member(s); stratified CV is impossible"
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; labels.len()];
    let mut counter = 0usize;
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] as usize == class)
            .collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = counter % effective;
            counter += 1;
        }
    }
    Ok((fold_of, effective, warnings))
}

/// All one-vs-one class pairs present in `labels`, in ascending order.
fn class_pairs(num_classes: usize) -> Vec<(u32, u32)> {
    let mut pairs = Vec::new();
    for a in 0..num_classes {
        for b in (a + 1)..num_classes {
            pairs.push((a as u32, b as u32));
        }
    }
    pairs
}

/// Trains one-vs-one models on `train` (global indices into `gram`) and
/// returns the voted class for each index in `test`.
fn ovo_predict(
    gram: &GramMatrix,
    labels: &[u32],
    train: &[usize],
    test: &[usize],
    num_classes: usize,
    c: f64,
) -> Result<Vec<u32>> {
    let mut models = Vec::new();
    for (a, b) in class_pairs(num_classes) {
        let idx: Vec<usize> = train
            .iter()
            .copied()
            .filter(|&g| labels[g] == a || labels[g] == b)
            .collect();
        if idx.iter().all(|&g| labels[g] != a) || idx.iter().all(|&g| labels[g] != b) {
            continue;
        }
        let m = idx.len();
        let mut sub = RowMatrix::zeros(m, m);
        for (p, &gp) in idx.iter().enumerate() {
            for (q, &gq) in idx.iter().enumerate() {
                sub.set(p, q, gram.get(gp, gq));
            }
        }
        let y: Vec<f64> = idx
            .iter()
            .map(|&g| if labels[g] == a { 1.0 } else { -1.0 })
            .collect();
        let mut model = svm_train(&sub, &y, c, DEFAULT_SVM_TOL)?;
        model.class_pair = (a, b);
        models.push((model, idx));
    }

    Ok(test
        .iter()
        .map(|&t| {
            let mut votes = vec![0usize; num_classes];
            for (model, idx) in &models {
                let f = model.decision(|s| gram.get(idx[s], t));
                let (a, b) = model.class_pair;
                let winner = if f > 0.0 { a } else { b };
                votes[winner as usize] += 1;
            }
            let mut best = 0u32;
            for c in 1..num_classes {
                if votes[c] > votes[best as usize] {
                    best = c as u32;
                }
            }
            best
        })
        .collect())
}

/// Resubstitution accuracy: trains one-vs-one on every graph at
/// regularization `c` and evaluates on the same set. A kernel that
/// separates the dataset (such as the by-graph oracle's identity) reaches
/// 1.0 here for large enough `c` even when it generalizes at chance.
pub fn training_accuracy(gram: &GramMatrix, labels: &[u32], c: f64) -> Result<f64> {
    let n = gram.num_graphs();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for a {n}-graph Gram",
            labels.len()
        )));
    }
    let num_classes = labels.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let all: Vec<usize> = (0..n).collect();
    let pred = ovo_predict(gram, labels, &all, &all, num_classes, c)?;
    Ok(pred.iter().zip(labels).filter(|&(&p, &y)| p == y).count() as f64 / n as f64)
}

/// Stratified k-fold cross-validation of a one-vs-one SVM on a precomputed
/// Gram. For each outer fold, C is selected from `c_grid` by stratified
/// 5-fold cross-validation within the training split (ties prefer the
/// smaller C); the tuned model's accuracy on the held-out fold is reported.
/// Deterministic given `(gram, labels, folds, c_grid, seed)`.
pub fn cross_validate(
    gram: &GramMatrix,
    labels: &[u32],
    folds: usize,
    c_grid: &[f64],
    seed: u64,
) -> Result<CvReport> {
    let n = gram.num_graphs();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for a {n}-graph Gram",
            labels.len()
        )));
    }
    if c_grid.is_empty() || c_grid.iter().any(|&c| c <= 0.0) {
        return Err(Error::InvalidConfig(
            "C grid must be non-empty and positive".into(),
        ));
    }
    let num_classes = labels.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let (fold_of, effective, mut warnings) = stratified_folds(labels, folds, seed)?;

    let fold_results: Vec<Result<(f64, f64, Vec<String>)>> = par_map_indices(effective, |f| {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let mut fold_warnings = Vec::new();

        // Inner stratified CV over the training split picks C.
        let train_labels: Vec<u32> = train.iter().map(|&i| labels[i]).collect();
        let inner_seed = derived_seed(seed, 1, f as u64);
        let chosen = match stratified_folds(&train_labels, 5, inner_seed) {
            Ok((inner_of, inner_eff, w)) => {
                fold_warnings.extend(w.into_iter().map(|w| format!("fold {f} (inner): {w}")));
                let mut best = (f64::NEG_INFINITY, c_grid[0]);
                for &c in c_grid {
                    let mut correct = 0usize;
                    let mut total = 0usize;
                    for g in 0..inner_eff {
                        let itrain: Vec<usize> = train
                            .iter()
                            .enumerate()
                            .filter(|&(p, _)| inner_of[p] != g)
                            .map(|(_, &i)| i)
                            .collect();
                        let ival: Vec<usize> = train
                            .iter()
                            .enumerate()
                            .filter(|&(p, _)| inner_of[p] == g)
                            .map(|(_, &i)| i)
                            .collect();
                        let pred = ovo_predict(gram, labels, &itrain, &ival, num_classes, c)?;
                        correct += pred
                            .iter()
                            .zip(&ival)
                            .filter(|&(&p, &i)| p == labels[i])
                            .count();
                        total += ival.len();
                    }
                    let acc = correct as f64 / total as f64;
                    if acc > best.0 {
                        best = (acc, c);
                    }
                }
                best.1
            }
            Err(_) => {
                fold_warnings.push(format!(
                    "fold {f}: training split too small for inner CV; defaulting to C={}",
                    c_grid[0]
                ));
                c_grid[0]
            }
        };

        let pred = ovo_predict(gram, labels, &train, &test, num_classes, chosen)?;
        let correct = pred
            .iter()
            .zip(&test)
            .filter(|&(&p, &i)| p == labels[i])
            .count();
        Ok((correct as f64 / test.len() as f64, chosen, fold_warnings))
    });

    let mut fold_accuracies = Vec::with_capacity(effective);
    let mut chosen_c = Vec::with_capacity(effective);
    for r in fold_results {
        let (acc, c, w) = r?;
        fold_accuracies.push(acc);
        chosen_c.push(c);
        warnings.extend(w);
    }
    let mean = fold_accuracies.iter().sum::<f64>() / effective as f64;
    let var = fold_accuracies
        .iter()
        .map(|&a| (a - mean) * (a - mean))
        .sum::<f64>()
        / effective as f64;
    Ok(CvReport {
        fold_accuracies,
        mean,
        std: var.sqrt(),
        chosen_c,
        folds: effective,
        seed,
        warnings,
        meta: gram.meta().cloned(),
    })
}

/// The parameter grid to sweep: the cross product of slice widths, hop
/// depths, decay factors, and cluster factors, with everything else fixed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub widths: Vec<usize>,
    pub max_hops: Vec<usize>,
    pub alphas: Vec<f64>,
    pub cluster_factors: Vec<f64>,
    pub t_runs: usize,
    pub backend: Backend,
    pub dim: usize,
    pub window: usize,
    pub folds: usize,
    pub c_grid: Vec<f64>,
}

impl GridSpec {
    /// The full published grid: b in {0,1,2}, H in {1,3,5,7,9}, alpha in
    /// {0, 0.2, ..., 1}, ten log-spaced cluster factors, T = 3.
    pub fn full(backend: Backend) -> GridSpec {
        GridSpec {
            widths: vec![0, 1, 2],
            max_hops: vec![1, 3, 5, 7, 9],
            alphas: (0..=5).map(|i| i as f64 * 0.2).collect(),
            cluster_factors: log_cluster_factors(),
            t_runs: 3,
            backend,
            dim: 32,
            window: 5,
            folds: 10,
            c_grid: default_c_grid(),
        }
    }

    pub fn num_points(&self) -> usize {
        self.widths.len() * self.max_hops.len() * self.alphas.len() * self.cluster_factors.len()
    }

    fn params(&self, width: usize, max_hop: usize, alpha: f64, cf: f64, seed: u64) -> KernelParams {
        KernelParams {
            width,
            max_hop,
            alpha,
            cluster_factor: cf,
            t_runs: self.t_runs,
            seed,
            backend: self.backend,
            dim: self.dim,
            window: self.window,
            methods: vec![ClusterMethod::KMeans],
            include_hop_zero: true,
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: KernelParams,
    pub report: CvReport,
    pub wall_time: f64,
}

/// A full sweep: every evaluated point plus the index of the best one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridOutcome {
    pub points: Vec<GridPoint>,
    pub best: usize,
    pub wall_time: f64,
}

impl GridOutcome {
    pub fn best_point(&self) -> &GridPoint {
        &self.points[self.best]
    }
}

/// Highest mean accuracy; ties prefer the lower standard deviation, then the
/// smaller hop depth, then the earlier grid position.
pub(crate) fn pick_best(points: &[GridPoint]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        let b = &points[best];
        let better = p.report.mean > b.report.mean
            || (p.report.mean == b.report.mean
                && (p.report.std < b.report.std
                    || (p.report.std == b.report.std && p.params.max_hop < b.params.max_hop)));
        if better {
            best = i;
        }
    }
    best
}

/// Sweeps the grid over `ds`, cross-validating every parameter combination.
///
/// Work shared across grid points: slices and the label embedding are
/// computed once per `(width, max_hop)`; decayed histograms once per
/// `(width, max_hop, alpha)`; and the hop-0 clustering once per
/// `(width, max_hop, cluster_factor)`, since hop-0 coordinates do not
/// depend on alpha. Every point's Gram is bit-identical to an independent
/// [`compute_dhgak`](crate::kernel::compute_dhgak) run with its parameters.
pub fn grid_search(ds: &Dataset, spec: &GridSpec, seed: u64) -> Result<GridOutcome> {
    if spec.num_points() == 0 {
        return Err(Error::InvalidConfig("empty parameter grid".into()));
    }
    let started = Instant::now();
    let labels = ds.classes();
    let alphabet = ds.label_alphabet();
    let mut points = Vec::with_capacity(spec.num_points());

    for &width in &spec.widths {
        for &max_hop in &spec.max_hops {
            let table = encode_dataset(ds, SliceSpec { width, max_hop });
            let embedding = match spec.backend {
                Backend::OneHot => one_hot_embedding(alphabet),
                Backend::Word2Vec => train_skipgram(
                    table.sentences(),
                    alphabet,
                    &SkipGramParams {
                        dim: spec.dim,
                        window: spec.window,
                        ..SkipGramParams::default()
                    },
                    seed,
                )?,
            };
            let metric = match spec.backend {
                Backend::OneHot => None,
                Backend::Word2Vec => Some(embedding_gram(embedding.matrix())),
            };
            let hist = slice_histograms(&table, alphabet)?;
            let deep_by_alpha: Vec<_> = spec
                .alphas
                .iter()
                .map(|&a| deep_histograms(&hist, a))
                .collect();

            for &cf in &spec.cluster_factors {
                // Hop 0 is alpha-independent: cluster it once per factor.
                let params0 = spec.params(width, max_hop, spec.alphas[0], cf, seed);
                let hop0_points = HopPoints {
                    coords: &deep_by_alpha[0][0],
                    metric: metric.as_ref(),
                };
                let map0 = build_feature_map(
                    &hop0_points,
                    table.row_graphs(),
                    ds.num_graphs(),
                    &params0.clustering(),
                    0,
                )?;
                let (hop0_gram, hop0_warn) = dgak_gram(&map0, table.row_graphs(), ds.num_graphs())?;
                drop(map0);

                let evaluated: Vec<Result<GridPoint>> = par_map_indices(spec.alphas.len(), |ai| {
                    let point_start = Instant::now();
                    let alpha = spec.alphas[ai];
                    let params = spec.params(width, max_hop, alpha, cf, seed);
                    let clustering = params.clustering();
                    let mut per_hop = vec![hop0_gram.clone()];
                    for hop in 1..=max_hop {
                        let pts = HopPoints {
                            coords: &deep_by_alpha[ai][hop],
                            metric: metric.as_ref(),
                        };
                        let map = build_feature_map(
                            &pts,
                            table.row_graphs(),
                            ds.num_graphs(),
                            &clustering,
                            hop,
                        )?;
                        let (g, _) = dgak_gram(&map, table.row_graphs(), ds.num_graphs())?;
                        per_hop.push(g);
                    }
                    let summed = dhgak_gram(&per_hop)?;
                    let mut normalized = normalize_gram(&summed)?;
                    normalized.set_meta(Some(GramMeta {
                        dataset: ds.name().to_string(),
                        num_graphs: ds.num_graphs(),
                        params: params.clone(),
                    }));
                    let mut report =
                        cross_validate(&normalized, labels, spec.folds, &spec.c_grid, seed)?;
                    report
                        .warnings
                        .extend(hop0_warn.iter().map(|w| format!("hop 0: {w}")));
                    Ok(GridPoint {
                        params,
                        report,
                        wall_time: point_start.elapsed().as_secs_f64(),
                    })
                });
                for p in evaluated {
                    points.push(p?);
                }
            }
        }
    }

    let best = pick_best(&points);
    Ok(GridOutcome {
        points,
        best,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{compute_dhgak, GramStage};
    use crate::synth::{random_dataset, SynthParams};

    fn identity_gram(n: usize) -> GramMatrix {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        GramMatrix::new(n, v, GramStage::Normalized).unwrap()
    }

    fn block_gram(labels: &[u32]) -> GramMatrix {
        let n = labels.len();
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                v[i * n + j] = if labels[i] == labels[j] { 1.0 } else { 0.0 };
            }
        }
        GramMatrix::new(n, v, GramStage::Normalized).unwrap()
    }

    #[test]
    fn two_separable_points() {
        let k = RowMatrix::from_vec(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let m = svm_train(&k, &[1.0, -1.0], 1.0, DEFAULT_SVM_TOL).unwrap();
        assert!(m.converged);
        assert_eq!(m.support_indices, vec![0, 1]);
        assert!(m.dual_coefs.iter().sum::<f64>().abs() <= 1e-6);
        assert!(m.dual_coefs.iter().all(|&c| c.abs() <= 1.0 + 1e-12));
        let f0 = m.decision(|s| k.get(s, 0));
        let f1 = m.decision(|s| k.get(s, 1));
        assert!(f0 > 0.0 && f1 < 0.0, "f0={f0} f1={f1}");
    }

    #[test]
    fn scaled_identity_separates_any_labeling() {
        let n = 7;
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 4.0;
        }
        let k = RowMatrix::from_vec(v, n, n);
        let y = [1.0, -1.0, -1.0, 1.0, -1.0, 1.0, 1.0];
        let m = svm_train(&k, &y, 1.0, DEFAULT_SVM_TOL).unwrap();
        for (i, &yi) in y.iter().enumerate() {
            let f = m.decision(|s| k.get(s, i));
            assert!(f * yi > 0.0, "point {i}: f={f} y={yi}");
        }
    }

    #[test]
    fn contradictory_duplicates_do_not_crash() {
        let k = RowMatrix::from_vec(vec![1.0; 4], 2, 2);
        let m = svm_train(&k, &[1.0, -1.0], 1.0, DEFAULT_SVM_TOL).unwrap();
        let correct = [(0, 1.0), (1, -1.0)]
            .iter()
            .filter(|&&(i, y): &&(usize, f64)| {
                let f = m.decision(|s| k.get(s, i));
                f * y > 0.0
            })
            .count();
        assert!(correct <= 1, "identical points with opposite labels");
        assert!(
            m.dual_coefs.iter().sum::<f64>().abs() <= 1e-6,
            "equality constraint violated"
        );
    }

    #[test]
    fn svm_validates_inputs() {
        let k = RowMatrix::from_vec(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        assert!(svm_train(&k, &[1.0, 2.0], 1.0, 1e-3).is_err());
        assert!(svm_train(&k, &[1.0], 1.0, 1e-3).is_err());
        assert!(svm_train(&k, &[1.0, -1.0], 0.0, 1e-3).is_err());
    }

    #[test]
    fn gram_and_c_rescaling_keeps_predictions() {
        // A separable 10-point problem from two shifted blobs in 1D,
        // linear kernel K(x,z) = x*z + 1.
        let xs: Vec<f64> = (0..10)
            .map(|i| if i < 5 { i as f64 } else { i as f64 + 10.0 })
            .collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 5 { -1.0 } else { 1.0 }).collect();
        let n = xs.len();
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                v[i * n + j] = xs[i] * xs[j] + 1.0;
            }
        }
        let k = RowMatrix::from_vec(v.clone(), n, n);
        let scale = 5.0;
        let ks = RowMatrix::from_vec(v.iter().map(|x| x * scale).collect(), n, n);

        let m1 = svm_train(&k, &y, 1.0, 1e-6).unwrap();
        let m2 = svm_train(&ks, &y, 1.0 / scale, 1e-6).unwrap();
        for i in 0..n {
            let f1 = m1.decision(|s| k.get(s, i));
            let f2 = m2.decision(|s| ks.get(s, i));
            assert_eq!(f1 > 0.0, f2 > 0.0, "point {i}: {f1} vs {f2}");
        }
    }

    #[test]
    fn separable_kernels_reach_full_training_accuracy() {
        let labels: Vec<u32> = (0..12).map(|i| (i % 2) as u32).collect();
        let acc = training_accuracy(&block_gram(&labels), &labels, 1.0).unwrap();
        assert_eq!(acc, 1.0);

        // The identity kernel separates any labeling at large C, while tiny
        // C collapses to the majority class.
        let unbalanced: Vec<u32> = (0..12).map(|i| u32::from(i >= 8)).collect();
        let g = identity_gram(12);
        assert_eq!(training_accuracy(&g, &unbalanced, 1e4).unwrap(), 1.0);
        assert!(training_accuracy(&g, &unbalanced, 1e-3).unwrap() < 1.0);
    }

    #[test]
    fn identity_gram_generalizes_at_chance() {
        let labels: Vec<u32> = (0..20).map(|i| (i % 2) as u32).collect();
        let report = cross_validate(&identity_gram(20), &labels, 10, &default_c_grid(), 3).unwrap();
        assert_eq!(report.folds, 10);
        assert!(
            report.mean > 0.3 && report.mean < 0.7,
            "identity kernel should be near chance, got {}",
            report.mean
        );
    }

    #[test]
    fn block_gram_classifies_perfectly() {
        let labels: Vec<u32> = (0..24).map(|i| (i % 3) as u32).collect();
        let report = cross_validate(&block_gram(&labels), &labels, 8, &[1.0], 5).unwrap();
        assert_eq!(report.mean, 1.0);
        assert_eq!(report.std, 0.0);
        assert!(report.fold_accuracies.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn fold_sizes_differ_by_at_most_one() {
        // Two classes shaped like the 188-graph benchmark: 125 + 63.
        let labels: Vec<u32> = (0..188).map(|i| u32::from(i >= 125)).collect();
        let (fold_of, eff, warnings) = stratified_folds(&labels, 10, 11).unwrap();
        assert_eq!(eff, 10);
        assert!(warnings.is_empty());
        let mut sizes = vec![0usize; 10];
        let mut per_class = vec![[0usize; 10]; 2];
        for (i, &f) in fold_of.iter().enumerate() {
            sizes[f] += 1;
            per_class[labels[i] as usize][f] += 1;
        }
        assert!(sizes.iter().all(|&s| s == 18 || s == 19), "{sizes:?}");
        for class in &per_class {
            let (lo, hi) = (class.iter().min().unwrap(), class.iter().max().unwrap());
            assert!(hi - lo <= 1, "stratification broken: {class:?}");
        }
    }

    #[test]
    fn small_class_reduces_folds_with_warning() {
        let labels = [0, 0, 0, 0, 0, 0, 1, 1, 2, 2];
        let report = cross_validate(&block_gram(&labels), &labels, 10, &[1.0], 0).unwrap();
        assert_eq!(report.folds, 2);
        assert!(!report.warnings.is_empty());
        assert_eq!(report.mean, 1.0);
    }

    #[test]
    fn cross_validate_is_deterministic() {
        let labels: Vec<u32> = (0..20).map(|i| (i % 2) as u32).collect();
        let g = block_gram(&labels);
        let a = cross_validate(&g, &labels, 5, &default_c_grid(), 9).unwrap();
        let b = cross_validate(&g, &labels, 5, &default_c_grid(), 9).unwrap();
        assert_eq!(a, b);
        let c = cross_validate(&g, &labels, 5, &default_c_grid(), 10).unwrap();
        assert_eq!(a.mean, c.mean);
        assert!(a.fold_accuracies == c.fold_accuracies || a.seed != c.seed);
    }

    #[test]
    fn report_moments_match_folds() {
        let labels: Vec<u32> = (0..30).map(|i| (i % 2) as u32).collect();
        let report = cross_validate(&identity_gram(30), &labels, 6, &[0.1, 1.0], 2).unwrap();
        let mean = report.fold_accuracies.iter().sum::<f64>() / report.folds as f64;
        let var = report
            .fold_accuracies
            .iter()
            .map(|&a| (a - mean) * (a - mean))
            .sum::<f64>()
            / report.folds as f64;
        assert!((report.mean - mean).abs() <= 1e-12);
        assert!((report.std - var.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn c_grid_and_cluster_factors_match_published_values() {
        let c = default_c_grid();
        assert_eq!(c.len(), 8);
        assert_eq!(c[0], 1e-3);
        assert_eq!(c[7], 1e4);

        let cf = log_cluster_factors();
        assert_eq!(cf.len(), 10);
        assert!((cf[0] - 0.1).abs() <= 1e-12);
        assert!((cf[1] - 0.1394953).abs() <= 1e-6, "{}", cf[1]);
        assert!((cf[9] - 2.0).abs() <= 1e-12);
        for w in cf.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn singleton_grid_matches_direct_pipeline() {
        let ds = random_dataset(
            "synth",
            &SynthParams {
                num_graphs: 10,
                min_nodes: 4,
                max_nodes: 8,
                num_labels: 3,
                seed: 5,
                ..SynthParams::default()
            },
        )
        .unwrap();
        let spec = GridSpec {
            widths: vec![1],
            max_hops: vec![2],
            alphas: vec![0.4],
            cluster_factors: vec![0.5],
            t_runs: 2,
            backend: Backend::OneHot,
            dim: 32,
            window: 5,
            folds: 5,
            c_grid: vec![0.1, 1.0],
        };
        let outcome = grid_search(&ds, &spec, 13).unwrap();
        assert_eq!(outcome.points.len(), 1);

        let params = outcome.points[0].params.clone();
        let direct = compute_dhgak(&ds, &params).unwrap();
        let report = cross_validate(&direct.normalized, ds.classes(), 5, &spec.c_grid, 13).unwrap();
        assert_eq!(
            outcome.points[0].report.fold_accuracies,
            report.fold_accuracies
        );
        assert_eq!(outcome.points[0].report.chosen_c, report.chosen_c);
        let grid_meta = outcome.points[0].report.meta.as_ref().unwrap();
        let direct_meta = direct.normalized.meta().unwrap();
        assert_eq!(grid_meta, direct_meta);
    }

    #[test]
    fn small_grid_evaluates_every_point_and_picks_best() {
        let ds = random_dataset(
            "synth",
            &SynthParams {
                num_graphs: 8,
                min_nodes: 4,
                max_nodes: 7,
                num_labels: 2,
                seed: 3,
                ..SynthParams::default()
            },
        )
        .unwrap();
        let spec = GridSpec {
            widths: vec![0, 1],
            max_hops: vec![1],
            alphas: vec![0.0, 1.0],
            cluster_factors: vec![0.5],
            t_runs: 1,
            backend: Backend::OneHot,
            dim: 32,
            window: 5,
            folds: 2,
            c_grid: vec![1.0],
        };
        let outcome = grid_search(&ds, &spec, 1).unwrap();
        assert_eq!(outcome.points.len(), spec.num_points());
        let best = outcome.best_point();
        assert!(outcome
            .points
            .iter()
            .all(|p| p.report.mean <= best.report.mean));
    }

    #[test]
    fn best_point_tie_breaking() {
        fn point(mean: f64, std: f64, max_hop: usize) -> GridPoint {
            GridPoint {
                params: KernelParams {
                    max_hop,
                    ..KernelParams::default()
                },
                report: CvReport {
                    fold_accuracies: vec![mean],
                    mean,
                    std,
                    chosen_c: vec![1.0],
                    folds: 1,
                    seed: 0,
                    warnings: Vec::new(),
                    meta: None,
                },
                wall_time: 0.0,
            }
        }
        // Higher mean wins.
        assert_eq!(pick_best(&[point(0.8, 0.0, 1), point(0.9, 0.5, 9)]), 1);
        // Equal mean: lower std wins.
        assert_eq!(pick_best(&[point(0.9, 0.5, 1), point(0.9, 0.1, 9)]), 1);
        // Equal mean and std: smaller H wins.
        assert_eq!(pick_best(&[point(0.9, 0.1, 7), point(0.9, 0.1, 3)]), 1);
        // Full tie: first listed wins.
        assert_eq!(pick_best(&[point(0.9, 0.1, 3), point(0.9, 0.1, 3)]), 0);
    }
}
