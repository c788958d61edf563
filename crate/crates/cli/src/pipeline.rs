//! Pipeline stages shared by the commands.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use kgforge::augment::{generate, AugmentedSet};
use kgforge::cluster::{agglomerative, concat_factors, dbscan, default_n_clusters, Partition};
use kgforge::cooccur::{build_head_relation, build_tail_relation, SparseCountMatrix};
use kgforge::eval::evaluate;
use kgforge::factorize::{nnmf, FactorPair, FactoredAffinity};
use kgforge::graph::load_dataset_dir;
use kgforge::linkpred::{train, EmbeddingModel, TrainHistory};
use kgforge::KnowledgeGraph;
use log::info;

use crate::config::{ClusterAlgo, ClusterConfig, RunConfig};
use crate::report::{MetricsRecord, Scores};

/// A loaded graph with its head-relation and tail-relation counts.
pub struct Prepared {
    pub graph: KnowledgeGraph,
    pub a: SparseCountMatrix,
    pub b: SparseCountMatrix,
}

impl Prepared {
    pub fn new(graph: KnowledgeGraph) -> Self {
        let a = build_head_relation(&graph);
        let b = build_tail_relation(&graph);
        Prepared { graph, a, b }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let start = Instant::now();
        let graph = load_dataset_dir(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
        info!(
            "loaded {}: {} entities, {} relations, {} train triples in {:.2?}",
            dir.display(),
            graph.num_entities(),
            graph.num_relations(),
            graph.train().len(),
            start.elapsed()
        );
        Ok(Prepared::new(graph))
    }
}

/// Factorizes the affinity matrix `C = A·Bᵀ` without materializing it.
pub fn factorize(p: &Prepared, cfg: &RunConfig) -> Result<FactorPair> {
    let start = Instant::now();
    let op = FactoredAffinity::new(&p.a, &p.b)?;
    let mut nnmf_cfg = cfg.nnmf.clone();
    let n = p.graph.num_entities();
    if nnmf_cfg.rank > n {
        log::warn!("rank {} exceeds |E| = {n}; using {n}", nnmf_cfg.rank);
        nnmf_cfg.rank = n;
    }
    let f = nnmf(&op, &nnmf_cfg)?;
    info!(
        "nnmf rank {} ran {} iterations, objective {:.6e} -> {:.6e} in {:.2?}",
        f.rank(),
        f.iterations(),
        f.loss_trace[0],
        f.loss_trace.last().copied().unwrap_or(f64::NAN),
        start.elapsed()
    );
    Ok(f)
}

pub fn cluster(f: &FactorPair, cfg: &ClusterConfig) -> Result<Partition> {
    let start = Instant::now();
    let features = concat_factors(f);
    let n = features.n_entities();
    let partition = match cfg.algo {
        ClusterAlgo::Agglomerative => {
            let k = cfg.n_clusters.unwrap_or_else(|| default_n_clusters(n)).min(n);
            agglomerative(&features, k, cfg.linkage)?
        }
        ClusterAlgo::Dbscan => dbscan(&features, cfg.eps, cfg.min_pts)?,
    };
    let eligible = partition.sizes().iter().filter(|&&s| s >= 2).count();
    info!(
        "{} clusters ({} with two or more entities) in {:.2?}",
        partition.n_clusters(),
        eligible,
        start.elapsed()
    );
    Ok(partition)
}

pub fn augment(p: &Prepared, partition: &Partition, cfg: &RunConfig) -> Result<AugmentedSet> {
    if cfg.sampler.target_count == 0 {
        log::warn!("augmentation count is 0; the augmented set is empty");
        return Ok(AugmentedSet::empty());
    }
    let start = Instant::now();
    let s = generate(&p.graph, partition, &p.a, &p.b, &cfg.sampler)?;
    info!(
        "generated {} of {} triples ({} attempts) in {:.2?}",
        s.len(),
        cfg.sampler.target_count,
        s.stats.attempts,
        start.elapsed()
    );
    Ok(s)
}

/// The augmentation stage end to end: factorize, cluster, sample.
pub fn factorize_and_augment(p: &Prepared, cfg: &RunConfig) -> Result<(FactorPair, Partition, AugmentedSet)> {
    let f = factorize(p, cfg)?;
    let partition = cluster(&f, &cfg.cluster)?;
    let s = augment(p, &partition, cfg)?;
    Ok((f, partition, s))
}

pub struct Trained {
    pub model: EmbeddingModel,
    pub history: TrainHistory,
    pub record: MetricsRecord,
}

pub fn variant_label(s: &AugmentedSet) -> &'static str {
    if s.is_empty() {
        "baseline"
    } else {
        "nnmfaug"
    }
}

/// Trains on `train ∪ schedule(S)` and evaluates on the test split.
pub fn train_and_evaluate(p: &Prepared, s: &AugmentedSet, cfg: &RunConfig) -> Result<Trained> {
    let start = Instant::now();
    let (model, history) = train(&p.graph, s, &cfg.train, cfg.model)?;
    let metrics = evaluate(&model, p.graph.test(), cfg.eval_mode, &p.graph)?;
    info!(
        "{} {} seed {}: MRR {:.4}, Hits@10 {:.2} in {:.2?}",
        variant_label(s),
        cfg.model.name(),
        cfg.train.seed,
        metrics.mrr,
        metrics.hits[3],
        start.elapsed()
    );
    let record = MetricsRecord {
        kind: "run".into(),
        variant: variant_label(s).into(),
        model: cfg.model.name().into(),
        eval_mode: cfg.eval_mode.name().into(),
        seed: Some(cfg.train.seed),
        n_runs: 1,
        num_aug: s.len(),
        exponent_k: cfg.train.exponent_k,
        scores: Scores::from(&metrics),
        std: None,
    };
    Ok(Trained { model, history, record })
}
