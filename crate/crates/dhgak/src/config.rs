//! Run configuration: kernel parameters, plain-text serialization, cache keys.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{ClusterMethod, ClusteringConfig, DBSCAN_DEFAULT_MIN_PTS};
use crate::embedder::Backend;
use crate::{Error, Result};

/// Everything that determines the kernel matrix for a given dataset.
///
/// Two runs with equal `KernelParams` on the same dataset produce
/// byte-identical Grams, so this struct doubles as the cache identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Slice width b: neighborhood radius encoded around each slice member.
    pub width: usize,
    /// Largest hop H; slices are extracted for hops 0..=H.
    pub max_hop: usize,
    /// Decay factor for the deep embedding recurrence, in [0, 1].
    pub alpha: f64,
    /// K-means cluster count as a fraction of the number of graphs.
    pub cluster_factor: f64,
    /// Clustering repetitions per (hop, method).
    pub t_runs: usize,
    /// Master seed; every stochastic stage derives its own stream from it.
    pub seed: u64,
    /// Label embedding backend.
    pub backend: Backend,
    /// Embedding dimension (word2vec only; one-hot uses the alphabet size).
    pub dim: usize,
    /// Skip-gram context window (word2vec only).
    pub window: usize,
    /// Clustering methods whose feature maps are concatenated.
    pub methods: Vec<ClusterMethod>,
    /// Whether hop 0 contributes a summand to the final kernel.
    pub include_hop_zero: bool,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            width: 1,
            max_hop: 3,
            alpha: 0.6,
            cluster_factor: 1.0,
            t_runs: 3,
            seed: 0,
            backend: Backend::Word2Vec,
            dim: 32,
            window: 5,
            methods: vec![ClusterMethod::KMeans],
            include_hop_zero: true,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !self.include_hop_zero && self.max_hop == 0 {
            return Err(Error::InvalidConfig(
                "max_hop = 0 with hop zero excluded leaves no hops to sum".into(),
            ));
        }
        if self.backend == Backend::Word2Vec {
            if self.dim == 0 {
                return Err(Error::InvalidConfig("dim must be at least 1".into()));
            }
            if self.window == 0 {
                return Err(Error::InvalidConfig("window must be at least 1".into()));
            }
        }
        self.clustering().validate()
    }

    /// The clustering configuration induced by these parameters.
    pub fn clustering(&self) -> ClusteringConfig {
        ClusteringConfig {
            methods: self.methods.clone(),
            t_runs: self.t_runs,
            cluster_factor: self.cluster_factor,
            seed: self.seed,
        }
    }

    /// Key/value view in declaration order, used by the plain-text config
    /// format and the cache hash.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("width".into(), self.width.to_string()),
            ("max_hop".into(), self.max_hop.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("cluster_factor".into(), self.cluster_factor.to_string()),
            ("t_runs".into(), self.t_runs.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("backend".into(), self.backend.to_string()),
            ("dim".into(), self.dim.to_string()),
            ("window".into(), self.window.to_string()),
            ("methods".into(), methods_to_string(&self.methods)),
            ("include_hop_zero".into(), self.include_hop_zero.to_string()),
        ]
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "width" => self.width = parse_num(key, value)?,
            "max_hop" => self.max_hop = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "cluster_factor" => self.cluster_factor = parse_num(key, value)?,
            "t_runs" => self.t_runs = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "backend" => self.backend = parse_backend(value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "window" => self.window = parse_num(key, value)?,
            "methods" => self.methods = parse_methods(value)?,
            "include_hop_zero" => self.include_hop_zero = parse_num(key, value)?,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown config key `{other}`"
                )));
            }
        }
        Ok(())
    }

    /// Hex digest identifying (dataset, params); stable across runs and
    /// platforms because it hashes the canonical key/value rendering.
    pub fn hash_hex(&self, dataset: &str) -> String {
        let mut canon = format!("dataset={dataset}\n");
        for (k, v) in self.to_kv() {
            let _ = writeln!(canon, "{k}={v}");
        }
        let digest = Sha256::digest(canon.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A full run: which dataset to process, where to find it, where results go,
/// and the kernel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub params: KernelParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: String::new(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            params: KernelParams::default(),
        }
    }
}

impl RunConfig {
    /// Plain-text rendering: one `key=value` per line.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset={}", self.dataset);
        let _ = writeln!(out, "data_dir={}", self.data_dir.display());
        let _ = writeln!(out, "out_dir={}", self.out_dir.display());
        for (k, v) in self.params.to_kv() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Parses the `key=value` format; blank lines and `#` comments are
    /// ignored, unknown keys are an error.
    pub fn from_kv_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "expected key=value, got `{line}`"
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dataset" => cfg.dataset = value.to_string(),
                "data_dir" => cfg.data_dir = PathBuf::from(value),
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                _ => cfg.params.apply_kv(key, value)?,
            }
        }
        Ok(cfg)
    }

    /// Cache identity for this run. Paths are deliberately excluded: moving
    /// the data or output directories must not invalidate cached Grams.
    pub fn config_hash(&self) -> String {
        self.params.hash_hex(&self.dataset)
    }

    /// Directory holding all artifacts for this (dataset, params) pair.
    pub fn cache_dir(&self) -> PathBuf {
        self.out_dir.join(&self.dataset).join(self.config_hash())
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid value `{value}` for `{key}`")))
}

fn parse_backend(value: &str) -> Result<Backend> {
    value.parse()
}

/// Renders a method in the form [`parse_method`] accepts.
pub fn method_to_string(m: &ClusterMethod) -> String {
    match m {
        ClusterMethod::KMeans => "kmeans".into(),
        ClusterMethod::Dbscan { eps, min_pts } => {
            let mut args = Vec::new();
            if let Some(e) = eps {
                args.push(format!("eps={e}"));
            }
            if *min_pts != DBSCAN_DEFAULT_MIN_PTS {
                args.push(format!("min_pts={min_pts}"));
            }
            if args.is_empty() {
                "dbscan".into()
            } else {
                format!("dbscan({})", args.join(","))
            }
        }
        ClusterMethod::OracleByGraph => "oracle".into(),
    }
}

fn methods_to_string(methods: &[ClusterMethod]) -> String {
    methods
        .iter()
        .map(method_to_string)
        .collect::<Vec<_>>()
        .join("+")
}

/// Parses `kmeans`, `oracle`, `dbscan`, or `dbscan(eps=0.5,min_pts=4)`.
pub fn parse_method(text: &str) -> Result<ClusterMethod> {
    let text = text.trim();
    match text {
        "kmeans" => return Ok(ClusterMethod::KMeans),
        "dbscan" => {
            return Ok(ClusterMethod::Dbscan {
                eps: None,
                min_pts: DBSCAN_DEFAULT_MIN_PTS,
            })
        }
        "oracle" => return Ok(ClusterMethod::OracleByGraph),
        _ => {}
    }
    if let Some(args) = text
        .strip_prefix("dbscan(")
        .and_then(|rest| rest.strip_suffix(')'))
    {
        let mut eps = None;
        let mut min_pts = DBSCAN_DEFAULT_MIN_PTS;
        for part in args.split(',') {
            let Some((k, v)) = part.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "invalid dbscan argument `{part}`"
                )));
            };
            match k.trim() {
                "eps" => eps = Some(parse_num("eps", v.trim())?),
                "min_pts" => min_pts = parse_num("min_pts", v.trim())?,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown dbscan argument `{other}`"
                    )));
                }
            }
        }
        return Ok(ClusterMethod::Dbscan { eps, min_pts });
    }
    Err(Error::InvalidConfig(format!(
        "unknown clustering method `{text}`"
    )))
}

/// Parses a `+`-separated method list, e.g. `kmeans+dbscan`.
pub fn parse_methods(value: &str) -> Result<Vec<ClusterMethod>> {
    let methods: Vec<ClusterMethod> = value
        .split('+')
        .filter(|s| !s.trim().is_empty())
        .map(parse_method)
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("methods list is empty".into()));
    }
    Ok(methods)
}
