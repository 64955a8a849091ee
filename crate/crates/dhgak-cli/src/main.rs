//! Command-line driver for the graph alignment kernel pipeline: dataset
//! statistics, slice corpus dumps, kernel computation with on-disk caching,
//! SVM cross-validation, and the parameter grid sweep.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dhgak::config::{parse_methods, RunConfig};
use dhgak::embedder::Backend;
use dhgak::evaluator::{cross_validate, default_c_grid, grid_search, training_accuracy, GridSpec};
use dhgak::graph::{dataset_stats, load_tu, Dataset};
use dhgak::kernel::{
    compute_dhgak, load_gram_expecting, save_gram, GramMatrix, GramMeta, StageTimings,
};
use dhgak::slicer::{encode_dataset, SliceSpec};
use dhgak::{Error, Result};

const DATA_DIR_ENV: &str = "DHGAK_DATA_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "dhgak",
    version,
    about = "Deep hierarchical graph alignment kernels for graph classification"
)]
struct Cli {
    /// Cap the worker thread pool (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print summary statistics for a dataset.
    Stats(StatsArgs),
    /// Dump the slice token corpus for inspection.
    Encode(EncodeArgs),
    /// Compute the kernel matrix and cache it under the output directory.
    Kernel(PipelineArgs),
    /// Cross-validate an SVM on the kernel (cached or freshly computed).
    Evaluate(EvaluateArgs),
    /// Sweep the parameter grid and report the best configuration.
    Grid(GridArgs),
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Dataset name (a TU-format directory under the data root).
    #[arg(long)]
    dataset: String,
    /// Data root; overrides $DHGAK_DATA_DIR, which overrides ./data.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Emit JSON instead of the human summary.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    /// Dataset name (a TU-format directory under the data root).
    #[arg(long)]
    dataset: String,
    /// Data root; overrides $DHGAK_DATA_DIR, which overrides ./data.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Slice width b.
    #[arg(short = 'b', long, default_value_t = 1)]
    width: usize,
    /// Maximum hop H.
    #[arg(short = 'H', long, default_value_t = 3)]
    max_hop: usize,
    /// Write to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flags shared by `kernel` and `evaluate`: everything that identifies a
/// pipeline run. Explicit flags override the `--config` file, which
/// overrides the defaults.
#[derive(Args, Debug)]
struct PipelineArgs {
    /// Dataset name; required unless supplied by --config.
    #[arg(long)]
    dataset: Option<String>,
    /// Data root; overrides $DHGAK_DATA_DIR, which overrides the config.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Base configuration as a key=value file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Slice width b.
    #[arg(short = 'b', long)]
    width: Option<usize>,
    /// Maximum hop H.
    #[arg(short = 'H', long)]
    max_hop: Option<usize>,
    /// Deep-embedding decay factor in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// K-means cluster count as a fraction of the graph count.
    #[arg(long)]
    cluster_factor: Option<f64>,
    /// Clustering repetitions per method.
    #[arg(short = 'T', long)]
    t_runs: Option<usize>,
    /// Master seed for every stochastic stage.
    #[arg(long)]
    seed: Option<u64>,
    /// Label embedding backend: word2vec or onehot.
    #[arg(long)]
    backend: Option<Backend>,
    /// Embedding dimension (word2vec only).
    #[arg(long)]
    dim: Option<usize>,
    /// Skip-gram context window (word2vec only).
    #[arg(long)]
    window: Option<usize>,
    /// Clustering methods, e.g. kmeans, kmeans+dbscan, or oracle (debug).
    #[arg(long)]
    clustering: Option<String>,
    /// Exclude hop 0 from the hierarchical sum.
    #[arg(long)]
    no_hop_zero: bool,
    /// Root directory for cached artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Outer cross-validation folds.
    #[arg(long, default_value_t = 10)]
    folds: usize,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Dataset name (a TU-format directory under the data root).
    #[arg(long)]
    dataset: String,
    /// Data root; overrides $DHGAK_DATA_DIR, which overrides ./data.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Label embedding backend: word2vec or onehot.
    #[arg(long, default_value = "word2vec")]
    backend: Backend,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Outer cross-validation folds.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Clustering repetitions.
    #[arg(short = 'T', long, default_value_t = 3)]
    t_runs: usize,
    /// Embedding dimension (word2vec only).
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Skip-gram context window (word2vec only).
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Comma-separated slice widths (default 0,1,2).
    #[arg(long)]
    widths: Option<String>,
    /// Comma-separated hop depths (default 1,3,5,7,9).
    #[arg(long)]
    hops: Option<String>,
    /// Comma-separated decay factors (default 0,0.2,...,1).
    #[arg(long)]
    alphas: Option<String>,
    /// Comma-separated cluster factors (default: 10 log-spaced in 0.1..2).
    #[arg(long)]
    cluster_factors: Option<String>,
    /// Root directory for result files.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version print to stdout and exit cleanly; real flag
            // errors are user errors.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    #[cfg(feature = "parallel")]
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cli.jobs; // sequential build: there is no pool to size
    let result = match cli.command {
        Command::Stats(a) => cmd_stats(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Kernel(a) => cmd_kernel(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Grid(a) => cmd_grid(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for problems the user can fix (paths, flags, data, stale caches);
/// 2 for violated internal invariants.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::InvalidData(_)
        | Error::InvalidConfig(_)
        | Error::MetadataMismatch(_) => 1,
        Error::DimensionMismatch(_) | Error::DegenerateDiagonal { .. } | Error::Serialize(_) => 2,
    }
}

fn data_root(flag: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

fn load_dataset(name: &str, data_dir: &Option<PathBuf>) -> Result<Dataset> {
    let root = data_root(data_dir).unwrap_or_else(|| PathBuf::from("data"));
    load_tu(&root, name)
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let ds = load_dataset(&args.dataset, &args.data_dir)?;
    let stats = dataset_stats(&ds);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
        return Ok(());
    }
    println!(
        "{}: {} graphs, {} classes",
        stats.name, stats.num_graphs, stats.num_classes
    );
    let sizes: Vec<String> = stats.class_counts.iter().map(|c| c.to_string()).collect();
    println!("  class sizes: {}", sizes.join(", "));
    println!("  node label alphabet: {}", stats.node_label_alphabet);
    println!(
        "  nodes: total {}, avg {:.2}, min {}, max {}",
        stats.total_nodes, stats.avg_nodes, stats.min_nodes, stats.max_nodes
    );
    println!(
        "  edges: total {}, avg {:.2}",
        stats.total_edges, stats.avg_edges
    );
    Ok(())
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let ds = load_dataset(&args.dataset, &args.data_dir)?;
    let table = encode_dataset(
        &ds,
        SliceSpec {
            width: args.width,
            max_hop: args.max_hop,
        },
    );
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut buf = std::io::BufWriter::new(&mut out);
    let mut graph = usize::MAX;
    let mut node = 0usize;
    for row in 0..table.num_rows() {
        let g = table.row_graphs()[row];
        node = if g == graph { node + 1 } else { 0 };
        graph = g;
        for hop in 0..=args.max_hop {
            let tokens: Vec<String> = table
                .tokens_at(row, hop)
                .iter()
                .map(|t| t.to_string())
                .collect();
            writeln!(buf, "{g}\t{node}\t{hop}\t{}", tokens.join(" "))
                .map_err(|e| Error::io(args.out.as_deref().unwrap_or("stdout".as_ref()), e))?;
        }
    }
    Ok(())
}

impl PipelineArgs {
    fn build_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                RunConfig::from_kv_str(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if cfg.dataset.is_empty() {
            return Err(Error::InvalidConfig(
                "no dataset given; use --dataset or a --config file".into(),
            ));
        }
        if let Some(d) = data_root(&self.data_dir) {
            cfg.data_dir = d;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        let p = &mut cfg.params;
        if let Some(v) = self.width {
            p.width = v;
        }
        if let Some(v) = self.max_hop {
            p.max_hop = v;
        }
        if let Some(v) = self.alpha {
            p.alpha = v;
        }
        if let Some(v) = self.cluster_factor {
            p.cluster_factor = v;
        }
        if let Some(v) = self.t_runs {
            p.t_runs = v;
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
        if let Some(v) = self.backend {
            p.backend = v;
        }
        if let Some(v) = self.dim {
            p.dim = v;
        }
        if let Some(v) = self.window {
            p.window = v;
        }
        if let Some(m) = &self.clustering {
            p.methods = parse_methods(m)?;
        }
        if self.no_hop_zero {
            p.include_hop_zero = false;
        }
        cfg.params.validate()?;
        Ok(cfg)
    }
}

/// The cached or freshly computed normalized Gram for a run, with pipeline
/// timings and warnings when it was computed here.
fn acquire_gram(
    cfg: &RunConfig,
    ds: &Dataset,
) -> Result<(GramMatrix, StageTimings, Vec<String>, bool)> {
    let dir = cfg.cache_dir();
    let expected = GramMeta {
        dataset: cfg.dataset.clone(),
        num_graphs: ds.num_graphs(),
        params: cfg.params.clone(),
    };
    if dir.join("gram.csv").is_file() && dir.join("meta.json").is_file() {
        match load_gram_expecting(&dir, &expected) {
            Ok(g) => return Ok((g, StageTimings::default(), Vec::new(), true)),
            Err(e) => eprintln!(
                "warning: cache at {} is unusable ({e}); recomputing",
                dir.display()
            ),
        }
    }
    let out = compute_dhgak(ds, &cfg.params)?;
    save_gram(&dir, &out.normalized)?;
    let cfg_path = dir.join("config.txt");
    fs::write(&cfg_path, cfg.to_kv_string()).map_err(|e| Error::io(&cfg_path, e))?;
    Ok((out.normalized, out.timings, out.warnings, false))
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn cmd_kernel(args: PipelineArgs) -> Result<()> {
    let cfg = args.build_config()?;
    let ds = load_dataset(&cfg.dataset, &Some(cfg.data_dir.clone()))?;
    let (gram, timings, warnings, cached) = acquire_gram(&cfg, &ds)?;
    print_warnings(&warnings);
    println!(
        "{}: {} graphs, config {}",
        cfg.dataset,
        gram.num_graphs(),
        cfg.config_hash()
    );
    if cached {
        println!(
            "gram: {} (cached)",
            cfg.cache_dir().join("gram.csv").display()
        );
    } else {
        println!("gram: {}", cfg.cache_dir().join("gram.csv").display());
        println!(
            "stage seconds: slicing {:.2}, embedding {:.2}, alignment {:.2}, gram {:.2}",
            timings.slicing, timings.embedding, timings.alignment, timings.gram
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct WallTimes {
    slicing: f64,
    embedding: f64,
    alignment: f64,
    gram: f64,
    evaluate: f64,
}

#[derive(Serialize)]
struct EvaluateReport<'a> {
    config: &'a RunConfig,
    cached_gram: bool,
    folds: usize,
    per_fold_acc: &'a [f64],
    mean: f64,
    std: f64,
    chosen_c: &'a [f64],
    /// Resubstitution accuracy, maximized over the C grid.
    training_accuracy: f64,
    training_c: f64,
    warnings: Vec<String>,
    wall_times: WallTimes,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = args.pipeline.build_config()?;
    let ds = load_dataset(&cfg.dataset, &Some(cfg.data_dir.clone()))?;
    let (gram, timings, warnings, cached) = acquire_gram(&cfg, &ds)?;
    print_warnings(&warnings);

    let started = Instant::now();
    let report = cross_validate(
        &gram,
        ds.classes(),
        args.folds,
        &default_c_grid(),
        cfg.params.seed,
    )?;
    let mut train_acc = 0.0;
    let mut train_c = default_c_grid()[0];
    for &c in &default_c_grid() {
        let acc = training_accuracy(&gram, ds.classes(), c)?;
        if acc > train_acc {
            train_acc = acc;
            train_c = c;
        }
    }
    let evaluate_secs = started.elapsed().as_secs_f64();
    print_warnings(&report.warnings);

    let json = EvaluateReport {
        config: &cfg,
        cached_gram: cached,
        folds: report.folds,
        per_fold_acc: &report.fold_accuracies,
        mean: report.mean,
        std: report.std,
        chosen_c: &report.chosen_c,
        training_accuracy: train_acc,
        training_c: train_c,
        warnings: warnings.iter().chain(&report.warnings).cloned().collect(),
        wall_times: WallTimes {
            slicing: timings.slicing,
            embedding: timings.embedding,
            alignment: timings.alignment,
            gram: timings.gram,
            evaluate: evaluate_secs,
        },
    };
    let path = cfg.cache_dir().join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&json)?).map_err(|e| Error::io(&path, e))?;

    println!(
        "{}: accuracy {:.2}% +- {:.2} over {} folds",
        cfg.dataset,
        report.mean * 100.0,
        report.std * 100.0,
        report.folds
    );
    let cs: Vec<String> = report.chosen_c.iter().map(|c| c.to_string()).collect();
    println!("per-fold C: {}", cs.join(", "));
    println!(
        "training accuracy: {:.2}% (C={})",
        train_acc * 100.0,
        train_c
    );
    println!("report: {}", path.display());
    Ok(())
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>> {
    let values: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::InvalidConfig(format!("invalid {what} value `{t}`")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::InvalidConfig(format!("empty {what} list")));
    }
    Ok(values)
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    let ds = load_dataset(&args.dataset, &args.data_dir)?;
    let mut spec = GridSpec::full(args.backend);
    spec.t_runs = args.t_runs;
    spec.dim = args.dim;
    spec.window = args.window;
    spec.folds = args.folds;
    if let Some(s) = &args.widths {
        spec.widths = parse_list("width", s)?;
    }
    if let Some(s) = &args.hops {
        spec.max_hops = parse_list("hop", s)?;
    }
    if let Some(s) = &args.alphas {
        spec.alphas = parse_list("alpha", s)?;
    }
    if let Some(s) = &args.cluster_factors {
        spec.cluster_factors = parse_list("cluster factor", s)?;
    }
    println!(
        "{}: sweeping {} grid points ({} backend, seed {})",
        args.dataset,
        spec.num_points(),
        spec.backend,
        args.seed
    );

    let outcome = grid_search(&ds, &spec, args.seed)?;

    let dir = args.out_dir.join(&args.dataset);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let stem = format!("grid-{}-seed{}", spec.backend, args.seed);
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut csv = String::from("width,max_hop,alpha,cluster_factor,mean,std,wall_time_s\n");
    for p in &outcome.points {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{:.3}\n",
            p.params.width,
            p.params.max_hop,
            p.params.alpha,
            p.params.cluster_factor,
            p.report.mean,
            p.report.std,
            p.wall_time
        ));
    }
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let best = outcome.best_point();
    let best_path = dir.join(format!("{stem}-best.json"));
    fs::write(&best_path, serde_json::to_string_pretty(best)?)
        .map_err(|e| Error::io(&best_path, e))?;

    println!(
        "swept {} points in {:.1}s",
        outcome.points.len(),
        outcome.wall_time
    );
    println!(
        "best: b={} H={} alpha={} cf={:.4} -> {:.2}% +- {:.2}",
        best.params.width,
        best.params.max_hop,
        best.params.alpha,
        best.params.cluster_factor,
        best.report.mean * 100.0,
        best.report.std * 100.0
    );
    println!("results: {}", csv_path.display());
    println!("best config: {}", best_path.display());
    Ok(())
}
