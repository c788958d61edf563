use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kgforge::augment::AugmentedSet;
use kgforge::cluster::Linkage;
use kgforge::eval::{evaluate_ranks, write_ranks_csv, RankingMetrics};
use kgforge::graph::{graph_stats, Split};
use kgforge::linkpred::EmbeddingModel;
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ClusterAlgo, RunConfig};
use crate::pipeline::{self, Prepared};
use crate::report::{self, aggregate, render_table, write_atomic, write_jsonl, MetricsRecord, Scores, SweepRow};

#[derive(Parser, Debug)]
#[command(name = "kgforge", version, about = "Knowledge-graph augmentation by factorized co-occurrence sampling")]
pub struct Cli {
    /// INI file with [run], [nnmf], [cluster], [augment], [train] and [eval]
    /// sections. Command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load a dataset, write id dictionaries and statistics.
    Prepare(Flags),
    /// Factorize, cluster and sample an augmented triple set.
    Augment {
        #[command(flatten)]
        flags: Flags,
        /// Also write the NNMF factors.
        #[arg(long)]
        save_factors: bool,
    },
    /// Train a link predictor (optionally with an augmented set) and evaluate it.
    Train {
        #[command(flatten)]
        flags: Flags,
        /// Augmented triples produced by `augment`.
        #[arg(long, value_name = "FILE")]
        augmented: Option<PathBuf>,
    },
    /// Evaluate a saved model checkpoint.
    Evaluate {
        #[command(flatten)]
        flags: Flags,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Split to rank.
        #[arg(long, default_value = "test", value_parser = ["valid", "test"])]
        split: String,
        /// Also dump per-triple ranks to ranks.csv.
        #[arg(long)]
        ranks: bool,
    },
    /// Baseline and augmented training side by side for every seed.
    Pipeline(Flags),
    /// Vary one setting and record test metrics per value and seed.
    Sweep {
        #[command(flatten)]
        flags: Flags,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values. Clustering values: ward, average, dbscan.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    NumAug,
    ExponentK,
    ClusterAlgo,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::NumAug => "num-aug",
            Axis::ExponentK => "exponent-k",
            Axis::ClusterAlgo => "cluster-algo",
        }
    }
}

/// Flags shared by every command. Each one overrides the matching config key.
#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// Directory holding train.txt, valid.txt and test.txt.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated replicate seeds, e.g. 1,2,3.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long, value_parser = ["transe", "rotate"])]
    pub model: Option<String>,

    /// NNMF rank p.
    #[arg(long, help_heading = "Factorization")]
    pub rank: Option<usize>,
    /// Regularization strength.
    #[arg(long, help_heading = "Factorization")]
    pub alpha: Option<f64>,
    /// L1 share of the penalty, in [0, 1].
    #[arg(long, help_heading = "Factorization")]
    pub l1_mix: Option<f64>,
    #[arg(long, help_heading = "Factorization")]
    pub nnmf_iters: Option<usize>,
    #[arg(long, help_heading = "Factorization")]
    pub nnmf_tol: Option<f64>,

    #[arg(long, value_parser = ["agglomerative", "dbscan"], help_heading = "Clustering")]
    pub cluster_algo: Option<String>,
    /// Number of clusters N (default max(2, round(sqrt |E|))).
    #[arg(long, help_heading = "Clustering")]
    pub n_clusters: Option<usize>,
    #[arg(long, value_parser = ["ward", "average"], help_heading = "Clustering")]
    pub linkage: Option<String>,
    #[arg(long, help_heading = "Clustering")]
    pub eps: Option<f64>,
    #[arg(long, help_heading = "Clustering")]
    pub min_pts: Option<usize>,

    /// Number of triples to generate, L.
    #[arg(long, help_heading = "Augmentation")]
    pub num_aug: Option<usize>,
    /// Reject generated triples already present in train.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", help_heading = "Augmentation")]
    pub exclude_train: Option<bool>,
    /// Independent sampler streams.
    #[arg(long, help_heading = "Augmentation")]
    pub workers: Option<usize>,
    #[arg(long, help_heading = "Augmentation")]
    pub max_attempts: Option<usize>,

    #[arg(long, help_heading = "Training")]
    pub epochs: Option<usize>,
    /// Schedule exponent k.
    #[arg(long, help_heading = "Training")]
    pub exponent_k: Option<u32>,
    #[arg(long, help_heading = "Training")]
    pub dim: Option<usize>,
    #[arg(long, help_heading = "Training")]
    pub batch_size: Option<usize>,
    #[arg(long, help_heading = "Training")]
    pub lr: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub margin: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub negatives: Option<usize>,
    #[arg(long, value_parser = ["l1", "l2"], help_heading = "Training")]
    pub norm: Option<String>,
    /// Validation MRR every this many epochs.
    #[arg(long, help_heading = "Training")]
    pub eval_every: Option<usize>,

    #[arg(long, value_parser = ["raw", "filtered"])]
    pub eval_mode: Option<String>,
}

impl Flags {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        fn put<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
            if let Some(v) = v {
                out.push((key, v.to_string()));
            }
        }
        let mut o = Vec::new();
        put(&mut o, "run.dataset", &self.dataset.as_ref().map(|p| p.display().to_string()));
        put(&mut o, "run.out", &self.out.as_ref().map(|p| p.display().to_string()));
        put(&mut o, "run.seed", &self.seed);
        put(&mut o, "run.seeds", &self.seeds);
        put(&mut o, "train.model", &self.model);
        put(&mut o, "nnmf.rank", &self.rank);
        put(&mut o, "nnmf.alpha", &self.alpha);
        put(&mut o, "nnmf.l1_mix", &self.l1_mix);
        put(&mut o, "nnmf.max_iters", &self.nnmf_iters);
        put(&mut o, "nnmf.rel_tol", &self.nnmf_tol);
        put(&mut o, "cluster.algo", &self.cluster_algo);
        put(&mut o, "cluster.n_clusters", &self.n_clusters);
        put(&mut o, "cluster.linkage", &self.linkage);
        put(&mut o, "cluster.eps", &self.eps);
        put(&mut o, "cluster.min_pts", &self.min_pts);
        put(&mut o, "augment.num_aug", &self.num_aug);
        put(&mut o, "augment.exclude_train", &self.exclude_train);
        put(&mut o, "augment.workers", &self.workers);
        put(&mut o, "augment.max_attempts", &self.max_attempts);
        put(&mut o, "train.epochs", &self.epochs);
        put(&mut o, "train.exponent_k", &self.exponent_k);
        put(&mut o, "train.dim", &self.dim);
        put(&mut o, "train.batch_size", &self.batch_size);
        put(&mut o, "train.lr", &self.lr);
        put(&mut o, "train.margin", &self.margin);
        put(&mut o, "train.negatives", &self.negatives);
        put(&mut o, "train.norm", &self.norm);
        put(&mut o, "train.eval_every", &self.eval_every);
        put(&mut o, "eval.mode", &self.eval_mode);
        o
    }

    fn resolve(&self, config: Option<&Path>) -> Result<RunConfig> {
        RunConfig::resolve(config, &self.overrides())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Prepare(flags) => prepare(&flags.resolve(config)?),
        Command::Augment { flags, save_factors } => augment(&flags.resolve(config)?, *save_factors),
        Command::Train { flags, augmented } => train(&flags.resolve(config)?, augmented.as_deref()),
        Command::Evaluate {
            flags,
            checkpoint,
            split,
            ranks,
        } => evaluate(&flags.resolve(config)?, checkpoint, split, *ranks),
        Command::Pipeline(flags) => run_pipeline(&flags.resolve(config)?),
        Command::Sweep { flags, axis, values } => sweep(&flags.resolve(config)?, *axis, values),
    }
}

#[derive(Serialize)]
struct StatsRecord {
    dataset: String,
    entities: usize,
    relations: usize,
    train: usize,
    valid: usize,
    test: usize,
    total: usize,
    density: f64,
    unseen_in_train: usize,
    self_loops_dropped_train: usize,
    self_loops_dropped_valid: usize,
    self_loops_dropped_test: usize,
    train_duplicates_dropped: usize,
}

fn prepare(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.dataset()?;
    let p = Prepared::load(dir)?;
    let g = &p.graph;
    let st = graph_stats(g);
    let report = g.load_report();
    let rec = StatsRecord {
        dataset: dir.display().to_string(),
        entities: st.entities,
        relations: st.relations,
        train: st.train,
        valid: st.valid,
        test: st.test,
        total: st.total,
        density: st.density,
        unseen_in_train: st.unseen_in_train,
        self_loops_dropped_train: report.self_loops_in(Split::Train),
        self_loops_dropped_valid: report.self_loops_in(Split::Valid),
        self_loops_dropped_test: report.self_loops_in(Split::Test),
        train_duplicates_dropped: report.train_duplicates,
    };
    write_atomic(&cfg.out.join("entities.tsv"), |w| g.entities().write_tsv(w))?;
    write_atomic(&cfg.out.join("relations.tsv"), |w| g.relations().write_tsv(w))?;
    let json = serde_json::to_string(&rec)?;
    write_atomic(&cfg.out.join("stats.json"), |w| writeln!(w, "{json}"))?;
    println!("{json}");
    println!(
        "{:>10} {:>6} {:>10} {:>8} {:>8}\n{:>10} {:>6} {:>10} {:>8} {:>8}",
        "|E|", "|R|", "train", "valid", "test", rec.entities, rec.relations, rec.train, rec.valid, rec.test
    );
    println!(
        "dropped: {} self-loops (train {}, valid {}, test {}), {} duplicate train triples",
        rec.self_loops_dropped_train + rec.self_loops_dropped_valid + rec.self_loops_dropped_test,
        rec.self_loops_dropped_train,
        rec.self_loops_dropped_valid,
        rec.self_loops_dropped_test,
        rec.train_duplicates_dropped
    );
    Ok(())
}

fn write_augmented(dir: &Path, p: &Prepared, s: &AugmentedSet, cfg: &RunConfig, n_clusters: usize) -> Result<()> {
    write_atomic(&dir.join("augmented.txt"), |w| p.graph.write_triples(&s.triples, w))?;
    write_atomic(&dir.join("augmented.meta"), |w| s.write_metadata(&cfg.sampler, n_clusters, w))
}

fn augment(cfg: &RunConfig, save_factors: bool) -> Result<()> {
    let p = Prepared::load(cfg.dataset()?)?;
    let (f, partition, s) = pipeline::factorize_and_augment(&p, cfg)?;
    let out = &cfg.out;
    write_augmented(out, &p, &s, cfg, partition.n_clusters())?;
    write_atomic(&out.join("partition.tsv"), |w| partition.write_tsv(w))?;
    write_atomic(&out.join("nnmf_loss.csv"), |w| f.write_loss_csv(w))?;
    write_atomic(&out.join("config.txt"), |w| w.write_all(cfg.render().as_bytes()))?;
    if save_factors {
        write_atomic(&out.join("factors.txt"), |w| f.write_checkpoint(w))?;
    }
    println!(
        "generated {} triples from {} clusters into {}",
        s.len(),
        partition.n_clusters(),
        out.join("augmented.txt").display()
    );
    Ok(())
}

fn finish_metrics(out: &Path, mut runs: Vec<MetricsRecord>) -> Result<()> {
    let mut variants: Vec<String> = Vec::new();
    for r in &runs {
        if !variants.contains(&r.variant) {
            variants.push(r.variant.clone());
        }
    }
    let aggregates: Vec<MetricsRecord> = variants
        .iter()
        .filter_map(|v| {
            let group: Vec<MetricsRecord> = runs.iter().filter(|r| &r.variant == v).cloned().collect();
            if group.len() > 1 {
                aggregate(&group)
            } else {
                None
            }
        })
        .collect();
    runs.extend(aggregates);
    write_jsonl(&out.join("metrics.jsonl"), &runs)?;
    let table = render_table(&runs);
    write_atomic(&out.join("metrics.txt"), |w| w.write_all(table.as_bytes()))?;
    for r in &runs {
        println!("{}", r.to_json_line());
    }
    print!("{table}");
    Ok(())
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed{seed}"))
}

fn train(cfg: &RunConfig, augmented: Option<&Path>) -> Result<()> {
    let p = Prepared::load(cfg.dataset()?)?;
    let s = match augmented {
        Some(path) => {
            let triples = p.graph.resolve(path)?;
            info!("read {} augmented triples from {}", triples.len(), path.display());
            AugmentedSet {
                clusters: vec![0; triples.len()],
                triples,
                ..AugmentedSet::empty()
            }
        }
        None => AugmentedSet::empty(),
    };
    let results: Vec<pipeline::Trained> = cfg
        .seeds
        .par_iter()
        .map(|&seed| pipeline::train_and_evaluate(&p, &s, &cfg.with_seed(seed)))
        .collect::<Result<_>>()?;
    for (t, &seed) in results.iter().zip(&cfg.seeds) {
        let dir = seed_dir(&cfg.out, seed);
        write_atomic(&dir.join("model.ckpt"), |w| t.model.write_checkpoint(w))?;
        write_atomic(&dir.join("history.csv"), |w| t.history.write_csv(w))?;
    }
    write_atomic(&cfg.out.join("config.txt"), |w| w.write_all(cfg.render().as_bytes()))?;
    finish_metrics(&cfg.out, results.into_iter().map(|t| t.record).collect())
}

fn evaluate(cfg: &RunConfig, checkpoint: &Path, split: &str, dump_ranks: bool) -> Result<()> {
    let p = Prepared::load(cfg.dataset()?)?;
    let file = std::fs::File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
    let model = EmbeddingModel::read_checkpoint(std::io::BufReader::new(file))
        .with_context(|| format!("reading {}", checkpoint.display()))?;
    if model.n_entities() != p.graph.num_entities() || model.n_relations() != p.graph.num_relations() {
        bail!(
            "checkpoint covers {} entities and {} relations but the dataset has {} and {}",
            model.n_entities(),
            model.n_relations(),
            p.graph.num_entities(),
            p.graph.num_relations()
        );
    }
    let triples = if split == "valid" { p.graph.valid() } else { p.graph.test() };
    let ranks = evaluate_ranks(&model, triples, cfg.eval_mode, &p.graph);
    let flat: Vec<f64> = ranks.iter().flat_map(|&(h, t)| [h, t]).collect();
    let metrics = RankingMetrics::from_ranks(&flat)?;
    if dump_ranks {
        write_atomic(&cfg.out.join("ranks.csv"), |w| write_ranks_csv(triples, &ranks, w))?;
    }
    let rec = MetricsRecord {
        kind: "run".into(),
        variant: "checkpoint".into(),
        model: model.variant().name().into(),
        eval_mode: cfg.eval_mode.name().into(),
        seed: None,
        n_runs: 1,
        num_aug: 0,
        exponent_k: cfg.train.exponent_k,
        scores: Scores::from(&metrics),
        std: None,
    };
    finish_metrics(&cfg.out, vec![rec])
}

fn run_pipeline(cfg: &RunConfig) -> Result<()> {
    let p = Prepared::load(cfg.dataset()?)?;
    struct SeedRun {
        seed: u64,
        s: AugmentedSet,
        n_clusters: usize,
        baseline: pipeline::Trained,
        augmented: pipeline::Trained,
    }
    let runs: Vec<SeedRun> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<SeedRun> {
            let c = cfg.with_seed(seed);
            let (_, partition, s) = pipeline::factorize_and_augment(&p, &c)?;
            let baseline = pipeline::train_and_evaluate(&p, &AugmentedSet::empty(), &c)?;
            let augmented = pipeline::train_and_evaluate(&p, &s, &c)?;
            Ok(SeedRun {
                seed,
                s,
                n_clusters: partition.n_clusters(),
                baseline,
                augmented,
            })
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for r in &runs {
        let dir = seed_dir(&cfg.out, r.seed);
        write_augmented(&dir, &p, &r.s, &cfg.with_seed(r.seed), r.n_clusters)?;
        write_atomic(&dir.join("history_baseline.csv"), |w| r.baseline.history.write_csv(w))?;
        write_atomic(&dir.join("history_nnmfaug.csv"), |w| r.augmented.history.write_csv(w))?;
        records.push(r.baseline.record.clone());
    }
    records.extend(runs.iter().map(|r| r.augmented.record.clone()));
    write_atomic(&cfg.out.join("config.txt"), |w| w.write_all(cfg.render().as_bytes()))?;
    finish_metrics(&cfg.out, records)
}

/// One sweep point: the configuration change it stands for.
#[derive(Debug, Clone)]
enum Point {
    NumAug(usize),
    ExponentK(u32),
    Cluster(ClusterAlgo, Linkage),
}

fn parse_points(axis: Axis, values: &[String]) -> Result<Vec<Point>> {
    values
        .iter()
        .map(|v| {
            let v = v.trim();
            Ok(match axis {
                Axis::NumAug => Point::NumAug(v.parse().with_context(|| format!("bad --values entry {v:?}"))?),
                Axis::ExponentK => {
                    let k: u32 = v.parse().with_context(|| format!("bad --values entry {v:?}"))?;
                    if k == 0 {
                        bail!("exponent k must be at least 1");
                    }
                    Point::ExponentK(k)
                }
                Axis::ClusterAlgo => match v {
                    "ward" => Point::Cluster(ClusterAlgo::Agglomerative, Linkage::Ward),
                    "average" => Point::Cluster(ClusterAlgo::Agglomerative, Linkage::Average),
                    "dbscan" => Point::Cluster(ClusterAlgo::Dbscan, Linkage::Ward),
                    other => bail!("unknown clustering value {other:?} (ward, average, dbscan)"),
                },
            })
        })
        .collect()
}

fn sweep(cfg: &RunConfig, axis: Axis, values: &[String]) -> Result<()> {
    let points = parse_points(axis, values)?;
    let p = Prepared::load(cfg.dataset()?)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let base = cfg.with_seed(seed);
        let needs_factors = points.iter().any(|pt| !matches!(pt, Point::NumAug(0)));
        let factors = if needs_factors { Some(pipeline::factorize(&p, &base)?) } else { None };
        let shared_partition = match (axis, &factors) {
            (Axis::ClusterAlgo, _) | (_, None) => None,
            (_, Some(f)) => Some(pipeline::cluster(f, &base.cluster)?),
        };
        let shared_set = match (axis, &shared_partition) {
            (Axis::ExponentK, Some(part)) => Some(pipeline::augment(&p, part, &base)?),
            _ => None,
        };
        let scores: Vec<Scores> = points
            .par_iter()
            .map(|pt| -> Result<Scores> {
                let mut c = base.clone();
                let s = match pt {
                    Point::NumAug(0) => AugmentedSet::empty(),
                    Point::NumAug(l) => {
                        c.sampler.target_count = *l;
                        pipeline::augment(&p, shared_partition.as_ref().expect("partition computed"), &c)?
                    }
                    Point::ExponentK(k) => {
                        c.train.exponent_k = *k;
                        shared_set.clone().expect("set computed")
                    }
                    Point::Cluster(algo, linkage) => {
                        c.cluster.algo = *algo;
                        c.cluster.linkage = *linkage;
                        let part = pipeline::cluster(factors.as_ref().expect("factors computed"), &c.cluster)?;
                        pipeline::augment(&p, &part, &c)?
                    }
                };
                Ok(pipeline::train_and_evaluate(&p, &s, &c)?.record.scores)
            })
            .collect::<Result<_>>()?;
        for (v, sc) in values.iter().zip(&scores) {
            rows.push(SweepRow::new(axis.name(), v.trim(), seed, sc));
        }
    }
    let path = cfg.out.join("sweep.csv");
    report::write_sweep_csv(&path, &rows)?;
    write_atomic(&cfg.out.join("config.txt"), |w| w.write_all(cfg.render().as_bytes()))?;
    println!("{:<14} {:<10} {:>6} {:>8} {:>8} {:>10}", "axis", "value", "seed", "MRR", "H@10", "MR");
    for r in &rows {
        println!(
            "{:<14} {:<10} {:>6} {:>8.4} {:>8.2} {:>10.1}",
            r.axis, r.value, r.seed, r.mrr, r.h10, r.mr
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}
