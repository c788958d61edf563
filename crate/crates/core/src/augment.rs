//! Sampling new triples from `p(h,r,t) = p(cluster)·p(h,t | cluster)·p(r | h,t)`.
//!
//! Clusters are drawn uniformly among those with at least two entities, an
//! ordered pair of distinct entities uniformly within the cluster, and the
//! relation in proportion to `A[h][r]·B[t][r]`. Pairs whose weight vector is
//! all zero are rejected and redrawn.

use std::collections::HashSet;
use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::cluster::Partition;
use crate::cooccur::{relation_weights, SparseCountMatrix};
use crate::error::{KgError, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::rng::{stream_rng, sub_stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub target_count: usize,
    pub seed: u64,
    pub exclude_train: bool,
    /// Defaults to `100·target_count` when unset.
    pub max_attempts: Option<usize>,
    pub workers: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            target_count: 0,
            seed: 0,
            exclude_train: false,
            max_attempts: None,
            workers: 1,
        }
    }
}

impl SamplerConfig {
    pub fn attempts(&self) -> usize {
        self.max_attempts.unwrap_or(self.target_count.saturating_mul(100))
    }

    pub fn validate(&self) -> Result<()> {
        if self.attempts() < self.target_count {
            return Err(KgError::InvalidParam(format!(
                "max_attempts {} is below the target count {}",
                self.attempts(),
                self.target_count
            )));
        }
        if self.workers == 0 {
            return Err(KgError::InvalidParam("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Uniform draws over eligible clusters and over ordered pairs within one.
#[derive(Debug, Clone)]
pub struct ClusterSampler {
    members: Vec<Vec<EntityId>>,
    eligible: Vec<u32>,
}

impl ClusterSampler {
    pub fn new(partition: &Partition) -> Result<Self> {
        let members = partition.clusters();
        let eligible: Vec<u32> = members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.len() >= 2)
            .map(|(c, _)| c as u32)
            .collect();
        if eligible.is_empty() {
            return Err(KgError::NoEligibleCluster);
        }
        Ok(ClusterSampler { members, eligible })
    }

    pub fn eligible(&self) -> &[u32] {
        &self.eligible
    }

    pub fn members(&self, cluster: u32) -> &[EntityId] {
        &self.members[cluster as usize]
    }

    pub fn sample_cluster(&self, rng: &mut impl Rng) -> u32 {
        self.eligible[rng.gen_range(0..self.eligible.len())]
    }

    /// An ordered pair `(h, t)` with `h ≠ t`, uniform over the `m·(m−1)`
    /// ordered pairs of the cluster.
    pub fn sample_pair(&self, cluster: u32, rng: &mut impl Rng) -> Result<(EntityId, EntityId)> {
        let m = self
            .members
            .get(cluster as usize)
            .ok_or_else(|| KgError::InvalidParam(format!("no cluster {cluster}")))?;
        if m.len() < 2 {
            return Err(KgError::InvalidParam(format!(
                "cluster {cluster} has {} member(s); a pair needs two",
                m.len()
            )));
        }
        let i = rng.gen_range(0..m.len());
        let mut j = rng.gen_range(0..m.len() - 1);
        if j >= i {
            j += 1;
        }
        Ok((m[i], m[j]))
    }
}

/// Draws `r` with probability `A[h][r]·B[t][r] / Σ_s A[h][s]·B[t][s]`, or
/// `None` when the pair shares no relation. Sampling is exact integer
/// inversion over the unnormalized weights.
pub fn sample_relation(
    a: &SparseCountMatrix,
    b: &SparseCountMatrix,
    h: EntityId,
    t: EntityId,
    rng: &mut impl Rng,
) -> Option<RelationId> {
    let mut buf = Vec::new();
    sample_relation_with(a, b, h, t, rng, &mut buf)
}

fn sample_relation_with(
    a: &SparseCountMatrix,
    b: &SparseCountMatrix,
    h: EntityId,
    t: EntityId,
    rng: &mut impl Rng,
    buf: &mut Vec<(u32, u128)>,
) -> Option<RelationId> {
    debug_assert_ne!(h, t);
    relation_weights(a, b, h.index(), t.index(), buf);
    let total: u128 = buf.iter().map(|&(_, w)| w).sum();
    if total == 0 {
        return None;
    }
    let mut u = rng.gen_range(0..total);
    for &(r, w) in buf.iter() {
        if u < w {
            return Some(RelationId(r));
        }
        u -= w;
    }
    unreachable!("u < total")
}

/// Outcome of one pass through cluster → pair → relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Draw {
    Triple { triple: Triple, cluster: u32 },
    NoSupport,
}

/// The full factorized sampler over a fixed partition and count matrices.
pub struct TripleSampler<'a> {
    clusters: ClusterSampler,
    a: &'a SparseCountMatrix,
    b: &'a SparseCountMatrix,
}

impl<'a> TripleSampler<'a> {
    pub fn new(partition: &Partition, a: &'a SparseCountMatrix, b: &'a SparseCountMatrix) -> Result<Self> {
        if a.shape() != b.shape() || a.n_rows() != partition.n_entities() {
            return Err(KgError::Shape(format!(
                "A is {:?}, B is {:?}, partition covers {} entities",
                a.shape(),
                b.shape(),
                partition.n_entities()
            )));
        }
        Ok(TripleSampler {
            clusters: ClusterSampler::new(partition)?,
            a,
            b,
        })
    }

    pub fn clusters(&self) -> &ClusterSampler {
        &self.clusters
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Draw {
        let mut buf = Vec::new();
        self.draw_with(rng, &mut buf)
    }

    fn draw_with(&self, rng: &mut impl Rng, buf: &mut Vec<(u32, u128)>) -> Draw {
        let cluster = self.clusters.sample_cluster(rng);
        let (h, t) = self
            .clusters
            .sample_pair(cluster, rng)
            .expect("eligible clusters have two members");
        match sample_relation_with(self.a, self.b, h, t, rng, buf) {
            Some(relation) => Draw::Triple {
                triple: Triple { head: h, relation, tail: t },
                cluster,
            },
            None => Draw::NoSupport,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SamplerStats {
    pub attempts: usize,
    pub rejected_duplicate: usize,
    pub rejected_no_support: usize,
    pub rejected_in_train: usize,
}

impl SamplerStats {
    fn absorb(&mut self, other: &SamplerStats) {
        self.attempts += other.attempts;
        self.rejected_duplicate += other.rejected_duplicate;
        self.rejected_no_support += other.rejected_no_support;
        self.rejected_in_train += other.rejected_in_train;
    }
}

/// Generated triples in a fixed, shuffled order, each with the cluster it
/// was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSet {
    pub triples: Vec<Triple>,
    pub clusters: Vec<u32>,
    pub stats: SamplerStats,
}

impl AugmentedSet {
    pub fn empty() -> Self {
        AugmentedSet {
            triples: Vec::new(),
            clusters: Vec::new(),
            stats: SamplerStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// The first `n` triples, used by the training schedule.
    pub fn prefix(&self, n: usize) -> &[Triple] {
        &self.triples[..n.min(self.triples.len())]
    }

    /// Sidecar metadata as `key=value` lines.
    pub fn write_metadata(&self, cfg: &SamplerConfig, n_clusters: usize, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "seed={}", cfg.seed)?;
        writeln!(out, "target_count={}", cfg.target_count)?;
        writeln!(out, "generated={}", self.len())?;
        writeln!(out, "n_clusters={n_clusters}")?;
        writeln!(out, "exclude_train={}", cfg.exclude_train)?;
        writeln!(out, "workers={}", cfg.workers)?;
        writeln!(out, "attempts={}", self.stats.attempts)?;
        writeln!(out, "rejected_duplicate={}", self.stats.rejected_duplicate)?;
        writeln!(out, "rejected_no_support={}", self.stats.rejected_no_support)?;
        writeln!(out, "rejected_in_train={}", self.stats.rejected_in_train)?;
        Ok(())
    }
}

fn run_worker(
    sampler: &TripleSampler<'_>,
    g: &KnowledgeGraph,
    exclude_train: bool,
    target: usize,
    budget: usize,
    mut rng: impl Rng,
) -> (Vec<(Triple, u32)>, SamplerStats) {
    let mut seen = HashSet::with_capacity(target);
    let mut out = Vec::with_capacity(target);
    let mut stats = SamplerStats::default();
    let mut buf = Vec::new();
    while out.len() < target && stats.attempts < budget {
        stats.attempts += 1;
        match sampler.draw_with(&mut rng, &mut buf) {
            Draw::NoSupport => stats.rejected_no_support += 1,
            Draw::Triple { triple, cluster } => {
                if exclude_train && g.in_train(&triple) {
                    stats.rejected_in_train += 1;
                } else if !seen.insert(triple) {
                    stats.rejected_duplicate += 1;
                } else {
                    out.push((triple, cluster));
                }
            }
        }
    }
    (out, stats)
}

/// Generates up to `cfg.target_count` distinct triples.
///
/// With several workers each one owns an independent random stream and an
/// equal share of the target and attempt budget; their outputs are merged in
/// worker order, deduplicated, and shuffled once with the master seed.
pub fn generate(
    g: &KnowledgeGraph,
    partition: &Partition,
    a: &SparseCountMatrix,
    b: &SparseCountMatrix,
    cfg: &SamplerConfig,
) -> Result<AugmentedSet> {
    cfg.validate()?;
    if cfg.target_count == 0 {
        return Ok(AugmentedSet::empty());
    }
    let sampler = TripleSampler::new(partition, a, b)?;
    let w = cfg.workers.min(cfg.target_count);
    let share = |total: usize, i: usize| total / w + usize::from(i < total % w);
    let parts: Vec<(Vec<(Triple, u32)>, SamplerStats)> = (0..w)
        .into_par_iter()
        .map(|i| {
            let rng = sub_stream_rng(cfg.seed, Stream::Sampler, i as u64);
            run_worker(
                &sampler,
                g,
                cfg.exclude_train,
                share(cfg.target_count, i),
                share(cfg.attempts(), i),
                rng,
            )
        })
        .collect();

    let mut stats = SamplerStats::default();
    let mut seen = HashSet::new();
    let mut merged = Vec::with_capacity(cfg.target_count);
    for (triples, s) in parts {
        stats.absorb(&s);
        for (t, c) in triples {
            if seen.insert(t) {
                merged.push((t, c));
            } else {
                stats.rejected_duplicate += 1;
            }
        }
    }
    if merged.is_empty() {
        return Err(KgError::SamplerExhausted { attempts: stats.attempts });
    }
    if merged.len() < cfg.target_count {
        warn!(
            "sampler produced {} of {} requested triples after {} attempts",
            merged.len(),
            cfg.target_count,
            stats.attempts
        );
    }
    merged.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle));
    let (triples, clusters) = merged.into_iter().unzip();
    Ok(AugmentedSet {
        triples,
        clusters,
        stats,
    })
}
