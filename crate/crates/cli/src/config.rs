//! Run configuration: defaults, then an optional INI file, then flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use kgforge::augment::SamplerConfig;
use kgforge::cluster::Linkage;
use kgforge::eval::RankMode;
use kgforge::factorize::NnmfConfig;
use kgforge::linkpred::{NormOrder, TrainConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterAlgo {
    Agglomerative,
    Dbscan,
}

impl FromStr for ClusterAlgo {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "agglomerative" => Ok(ClusterAlgo::Agglomerative),
            "dbscan" => Ok(ClusterAlgo::Dbscan),
            other => bail!("unknown clustering algorithm {other:?} (agglomerative, dbscan)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub algo: ClusterAlgo,
    /// `None` picks `max(2, round(sqrt(|E|)))`.
    pub n_clusters: Option<usize>,
    pub linkage: Linkage,
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            algo: ClusterAlgo::Agglomerative,
            n_clusters: None,
            linkage: Linkage::Ward,
            eps: 0.5,
            min_pts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// Replicate seeds; defaults to `[seed]`.
    pub seeds: Vec<u64>,
    pub nnmf: NnmfConfig,
    pub cluster: ClusterConfig,
    pub sampler: SamplerConfig,
    pub model: Variant,
    pub train: TrainConfig,
    pub eval_mode: RankMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            out: PathBuf::from("out"),
            seed: 0,
            seeds: Vec::new(),
            nnmf: NnmfConfig::default(),
            cluster: ClusterConfig::default(),
            sampler: SamplerConfig {
                target_count: 1000,
                ..SamplerConfig::default()
            },
            model: Variant::TransE,
            train: TrainConfig::default(),
            eval_mode: RankMode::Raw,
        }
    }
}

/// Every settable key, as `section.key`.
pub const KEYS: &[&str] = &[
    "run.dataset",
    "run.out",
    "run.seed",
    "run.seeds",
    "nnmf.rank",
    "nnmf.alpha",
    "nnmf.l1_mix",
    "nnmf.max_iters",
    "nnmf.rel_tol",
    "cluster.algo",
    "cluster.n_clusters",
    "cluster.linkage",
    "cluster.eps",
    "cluster.min_pts",
    "augment.num_aug",
    "augment.exclude_train",
    "augment.workers",
    "augment.max_attempts",
    "train.model",
    "train.epochs",
    "train.exponent_k",
    "train.dim",
    "train.batch_size",
    "train.lr",
    "train.margin",
    "train.negatives",
    "train.norm",
    "train.eval_every",
    "eval.mode",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow!("bad value {value:?} for {key}: {e}"))
}

fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse("run.seeds", s))
        .collect()
}

impl RunConfig {
    /// Sets one `section.key` from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "run.dataset" => self.dataset = Some(PathBuf::from(value.trim())),
            "run.out" => self.out = PathBuf::from(value.trim()),
            "run.seed" => self.seed = parse(key, value)?,
            "run.seeds" => self.seeds = parse_seeds(value)?,
            "nnmf.rank" => self.nnmf.rank = parse(key, value)?,
            "nnmf.alpha" => self.nnmf.alpha = parse(key, value)?,
            "nnmf.l1_mix" => self.nnmf.l1_mix = parse(key, value)?,
            "nnmf.max_iters" => self.nnmf.max_iters = parse(key, value)?,
            "nnmf.rel_tol" => self.nnmf.rel_tol = parse(key, value)?,
            "cluster.algo" => self.cluster.algo = parse(key, value)?,
            "cluster.n_clusters" => self.cluster.n_clusters = Some(parse(key, value)?),
            "cluster.linkage" => self.cluster.linkage = parse(key, value)?,
            "cluster.eps" => self.cluster.eps = parse(key, value)?,
            "cluster.min_pts" => self.cluster.min_pts = parse(key, value)?,
            "augment.num_aug" => self.sampler.target_count = parse(key, value)?,
            "augment.exclude_train" => self.sampler.exclude_train = parse(key, value)?,
            "augment.workers" => self.sampler.workers = parse(key, value)?,
            "augment.max_attempts" => self.sampler.max_attempts = Some(parse(key, value)?),
            "train.model" => self.model = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.exponent_k" => self.train.exponent_k = parse(key, value)?,
            "train.dim" => self.train.dim = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.lr" => self.train.learning_rate = parse(key, value)?,
            "train.margin" => self.train.margin = parse(key, value)?,
            "train.negatives" => self.train.negatives = parse(key, value)?,
            "train.norm" => self.train.norm = parse(key, value)?,
            "train.eval_every" => self.train.eval_every = Some(parse(key, value)?),
            "eval.mode" => self.eval_mode = parse(key, value)?,
            other => bail!("unknown configuration key {other:?}"),
        }
        Ok(())
    }

    /// Applies every entry of an INI file. Keys outside a section, unknown
    /// sections and unknown keys are errors.
    pub fn apply_ini(&mut self, path: &Path) -> Result<()> {
        let ini = ini::Ini::load_from_file(path).with_context(|| format!("reading config {}", path.display()))?;
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if props.iter().next().is_some() {
                    bail!("{}: keys must sit inside a [section]", path.display());
                }
                continue;
            };
            for (k, v) in props.iter() {
                let key = format!("{}.{}", section.trim(), k.trim());
                self.set(&key, v).with_context(|| format!("in config {}", path.display()))?;
            }
        }
        Ok(())
    }

    /// Defaults, then `ini` if given, then `overrides` in order.
    pub fn resolve(ini: Option<&Path>, overrides: &[(&'static str, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = ini {
            cfg.apply_ini(path)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.sync_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    fn sync_seeds(&mut self) {
        self.nnmf.seed = self.seed;
        self.sampler.seed = self.seed;
        self.train.seed = self.seed;
        if self.seeds.is_empty() {
            self.seeds = vec![self.seed];
        }
    }

    /// A copy whose every random stream derives from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.nnmf.seed = seed;
        c.sampler.seed = seed;
        c.train.seed = seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.nnmf.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        if self.cluster.n_clusters == Some(0) {
            bail!("n_clusters must be at least 1");
        }
        if !(self.cluster.eps > 0.0) {
            bail!("eps must be positive");
        }
        if self.cluster.min_pts == 0 {
            bail!("min_pts must be at least 1");
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            bail!("seed {dup} listed twice");
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| anyhow!("no dataset given; pass --dataset or set [run] dataset"))
    }

    /// Flat `key=value` rendering of the resolved configuration.
    pub fn render(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_else(|| "auto".into());
        let algo = match self.cluster.algo {
            ClusterAlgo::Agglomerative => "agglomerative",
            ClusterAlgo::Dbscan => "dbscan",
        };
        let linkage = match self.cluster.linkage {
            Linkage::Ward => "ward",
            Linkage::Average => "average",
        };
        let norm = match self.train.norm {
            NormOrder::L1 => "l1",
            NormOrder::L2 => "l2",
        };
        let lines = [
            format!("run.dataset={}", self.dataset.as_deref().map(|p| p.display().to_string()).unwrap_or_default()),
            format!("run.seeds={}", seeds.join(",")),
            format!("nnmf.rank={}", self.nnmf.rank),
            format!("nnmf.alpha={}", self.nnmf.alpha),
            format!("nnmf.l1_mix={}", self.nnmf.l1_mix),
            format!("nnmf.max_iters={}", self.nnmf.max_iters),
            format!("nnmf.rel_tol={}", self.nnmf.rel_tol),
            format!("cluster.algo={algo}"),
            format!("cluster.n_clusters={}", opt(self.cluster.n_clusters)),
            format!("cluster.linkage={linkage}"),
            format!("cluster.eps={}", self.cluster.eps),
            format!("cluster.min_pts={}", self.cluster.min_pts),
            format!("augment.num_aug={}", self.sampler.target_count),
            format!("augment.exclude_train={}", self.sampler.exclude_train),
            format!("augment.workers={}", self.sampler.workers),
            format!("augment.max_attempts={}", self.sampler.attempts()),
            format!("train.model={}", self.model.name()),
            format!("train.epochs={}", self.train.epochs),
            format!("train.exponent_k={}", self.train.exponent_k),
            format!("train.dim={}", self.train.dim),
            format!("train.batch_size={}", self.train.batch_size),
            format!("train.lr={}", self.train.learning_rate),
            format!("train.margin={}", self.train.margin),
            format!("train.negatives={}", self.train.negatives),
            format!("train.norm={norm}"),
            format!("eval.mode={}", self.eval_mode.name()),
        ];
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}
