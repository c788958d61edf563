//! Entity feature construction and disjoint partitions of entities.
//!
//! Agglomerative clustering uses the nearest-neighbour chain algorithm. Ward
//! linkage runs on cluster centroids computed on the fly, so memory stays
//! linear in the number of entities; average linkage keeps a full distance
//! matrix and is meant for smaller graphs.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{KgError, Result};
use crate::factorize::FactorPair;
use crate::graph::EntityId;
use crate::linalg::{squared_euclidean, Dense};

/// Row `i` holds entity `i`'s head-role factor followed by its tail-role factor.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityFeatures(pub Dense);

impl EntityFeatures {
    pub fn n_entities(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }
}

/// `W′ = [W1 | W2ᵀ]`.
pub fn concat_factors(f: &FactorPair) -> EntityFeatures {
    EntityFeatures(f.w1.hcat(&f.w2t).expect("factor row counts agree"))
}

/// Assignment of every entity to exactly one of `n_clusters` non-empty
/// clusters. Cluster ids are numbered by first appearance in entity order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<u32>,
    n_clusters: usize,
}

impl Partition {
    /// Canonicalizes arbitrary labels into dense ids `0..N`.
    pub fn from_labels<L: Eq + std::hash::Hash + Copy>(labels: &[L]) -> Self {
        let mut remap: HashMap<L, u32> = HashMap::new();
        let assignment = labels
            .iter()
            .map(|l| {
                let next = remap.len() as u32;
                *remap.entry(*l).or_insert(next)
            })
            .collect();
        Partition {
            assignment,
            n_clusters: remap.len(),
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn n_entities(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn cluster_of(&self, e: EntityId) -> u32 {
        self.assignment[e.index()]
    }

    /// Members of each cluster, ascending.
    pub fn clusters(&self) -> Vec<Vec<EntityId>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (e, &c) in self.assignment.iter().enumerate() {
            out[c as usize].push(EntityId::from(e));
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_clusters];
        for &c in &self.assignment {
            s[c as usize] += 1;
        }
        s
    }

    /// `entity_id<TAB>cluster_id` per line.
    pub fn write_tsv(&self, mut out: impl Write) -> std::io::Result<()> {
        for (e, c) in self.assignment.iter().enumerate() {
            writeln!(out, "{e}\t{c}")?;
        }
        Ok(())
    }

    /// Parses the `entity_id<TAB>cluster_id` format.
    pub fn read_tsv(text: &str) -> Result<Self> {
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || KgError::Format {
                what: "partition file",
                detail: format!("line {}: {line:?}", i + 1),
            };
            let (e, c) = line.split_once('\t').ok_or_else(bad)?;
            let e: usize = e.trim().parse().map_err(|_| bad())?;
            let c: u32 = c.trim().parse().map_err(|_| bad())?;
            if e != labels.len() {
                return Err(bad());
            }
            labels.push(c);
        }
        Ok(Partition::from_labels(&labels))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Linkage {
    #[default]
    Ward,
    Average,
}

impl std::str::FromStr for Linkage {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ward" => Ok(Linkage::Ward),
            "average" => Ok(Linkage::Average),
            other => Err(KgError::InvalidParam(format!("unknown linkage {other:?}"))),
        }
    }
}

/// `max(2, round(sqrt(n)))`, capped at `n`.
pub fn default_n_clusters(n_entities: usize) -> usize {
    ((n_entities as f64).sqrt().round() as usize).max(2).min(n_entities.max(1))
}

/// One merge of the dendrogram: the clusters represented by entities `a`
/// and `b` join at `height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

/// Cluster dissimilarities that can be updated after a merge. A merged
/// cluster keeps the smaller of its two slot ids.
trait LinkageState: Sync {
    fn dist(&self, i: usize, j: usize) -> f64;
    fn merge(&mut self, keep: usize, gone: usize, active: &[usize]);
}

struct WardState {
    centroids: Dense,
    sizes: Vec<f64>,
}

impl LinkageState for WardState {
    /// `n_i·n_j/(n_i+n_j)·‖c_i − c_j‖²`, the increase in within-cluster
    /// sum of squares caused by merging `i` and `j`.
    fn dist(&self, i: usize, j: usize) -> f64 {
        let (ni, nj) = (self.sizes[i], self.sizes[j]);
        ni * nj / (ni + nj) * squared_euclidean(self.centroids.row(i), self.centroids.row(j))
    }

    fn merge(&mut self, keep: usize, gone: usize, _active: &[usize]) {
        let (nk, ng) = (self.sizes[keep], self.sizes[gone]);
        let total = nk + ng;
        let gone_row = self.centroids.row(gone).to_vec();
        for (c, g) in self.centroids.row_mut(keep).iter_mut().zip(gone_row) {
            *c = (nk * *c + ng * g) / total;
        }
        self.sizes[keep] = total;
    }
}

struct AverageState {
    n: usize,
    dist: Vec<f64>,
    sizes: Vec<f64>,
}

impl LinkageState for AverageState {
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    fn merge(&mut self, keep: usize, gone: usize, active: &[usize]) {
        let (nk, ng) = (self.sizes[keep], self.sizes[gone]);
        for &k in active {
            if k == keep || k == gone {
                continue;
            }
            let d = (nk * self.dist[keep * self.n + k] + ng * self.dist[gone * self.n + k]) / (nk + ng);
            self.dist[keep * self.n + k] = d;
            self.dist[k * self.n + keep] = d;
        }
        self.sizes[keep] = nk + ng;
    }
}

const PAR_SEARCH: usize = 2048;

/// Nearest active neighbour of `a`. Ties go to `prev` (the previous chain
/// element) when it attains the minimum, otherwise to the smallest id.
fn nearest(state: &impl LinkageState, a: usize, prev: Option<usize>, active: &[usize]) -> usize {
    let better = |x: (f64, usize), y: (f64, usize)| if y.0 < x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x };
    let scan = |ids: &[usize]| {
        ids.iter()
            .filter(|&&k| k != a)
            .map(|&k| (state.dist(a, k), k))
            .fold((f64::INFINITY, usize::MAX), better)
    };
    let best = if active.len() >= PAR_SEARCH {
        active
            .par_chunks(512)
            .map(scan)
            .reduce(|| (f64::INFINITY, usize::MAX), better)
    } else {
        scan(active)
    };
    match prev {
        Some(p) if state.dist(a, p) <= best.0 => p,
        _ => best.1,
    }
}

fn nn_chain(n: usize, state: &mut impl LinkageState) -> Vec<Merge> {
    let mut active: Vec<usize> = (0..n).collect();
    let mut chain: Vec<usize> = Vec::new();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while active.len() > 1 {
        if chain.is_empty() {
            chain.push(active[0]);
        }
        let a = *chain.last().expect("non-empty chain");
        let prev = chain.len().checked_sub(2).map(|i| chain[i]);
        let b = nearest(state, a, prev, &active);
        if Some(b) == prev {
            chain.pop();
            chain.pop();
            let height = state.dist(a, b);
            let (keep, gone) = (a.min(b), a.max(b));
            let pos = active.binary_search(&gone).expect("gone is active");
            active.remove(pos);
            state.merge(keep, gone, &active);
            merges.push(Merge { a: keep, b: gone, height });
        } else {
            chain.push(b);
        }
    }
    merges
}

/// Full dendrogram of `features` under `linkage`, in merge order of the
/// chain algorithm (not sorted by height).
pub fn dendrogram(features: &EntityFeatures, linkage: Linkage) -> Vec<Merge> {
    let n = features.n_entities();
    match linkage {
        Linkage::Ward => {
            let mut state = WardState {
                centroids: features.0.clone(),
                sizes: vec![1.0; n],
            };
            nn_chain(n, &mut state)
        }
        Linkage::Average => {
            let mut dist = vec![0.0; n * n];
            dist.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
                for (j, d) in row.iter_mut().enumerate() {
                    *d = squared_euclidean(features.row(i), features.row(j)).sqrt();
                }
            });
            let mut state = AverageState {
                n,
                dist,
                sizes: vec![1.0; n],
            };
            nn_chain(n, &mut state)
        }
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Cuts a dendrogram to `n_clusters` by applying its `n − n_clusters`
/// lowest merges.
pub fn cut_dendrogram(n: usize, merges: &[Merge], n_clusters: usize) -> Partition {
    let mut order: Vec<&Merge> = merges.iter().collect();
    order.sort_by(|x, y| x.height.total_cmp(&y.height));
    let mut parent: Vec<usize> = (0..n).collect();
    for m in order.into_iter().take(n.saturating_sub(n_clusters)) {
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        parent[hi] = lo;
    }
    let labels: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    Partition::from_labels(&labels)
}

/// Hierarchical clustering of entity features into exactly `n_clusters`
/// clusters.
pub fn agglomerative(features: &EntityFeatures, n_clusters: usize, linkage: Linkage) -> Result<Partition> {
    let n = features.n_entities();
    if n_clusters == 0 || n_clusters > n {
        return Err(KgError::InvalidParam(format!(
            "number of clusters must lie in 1..={n}, got {n_clusters}"
        )));
    }
    let merges = dendrogram(features, linkage);
    Ok(cut_dendrogram(n, &merges, n_clusters))
}

/// Density-based clustering. Points within `eps` (Euclidean, inclusive) are
/// neighbours; a point with at least `min_pts` neighbours, itself included,
/// is a core point. Noise points become singleton clusters.
pub fn dbscan(features: &EntityFeatures, eps: f64, min_pts: usize) -> Result<Partition> {
    if !(eps > 0.0) {
        return Err(KgError::InvalidParam(format!("eps must be > 0, got {eps}")));
    }
    if min_pts == 0 {
        return Err(KgError::InvalidParam("min_pts must be at least 1".into()));
    }
    let n = features.n_entities();
    let eps_sq = eps * eps;
    let neighbours = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| squared_euclidean(features.row(i), features.row(j)) <= eps_sq)
            .collect()
    };
    let is_core: Vec<bool> = (0..n)
        .into_par_iter()
        .map(|i| neighbours(i).len() >= min_pts)
        .collect();

    const UNVISITED: usize = usize::MAX;
    let mut label = vec![UNVISITED; n];
    let mut next_cluster = 0usize;
    for start in 0..n {
        if label[start] != UNVISITED || !is_core[start] {
            continue;
        }
        let cid = next_cluster;
        next_cluster += 1;
        label[start] = cid;
        let mut frontier = vec![start];
        while let Some(p) = frontier.pop() {
            for q in neighbours(p) {
                if label[q] != UNVISITED {
                    continue;
                }
                label[q] = cid;
                if is_core[q] {
                    frontier.push(q);
                }
            }
        }
    }
    for l in label.iter_mut() {
        if *l == UNVISITED {
            *l = next_cluster;
            next_cluster += 1;
        }
    }
    Ok(Partition::from_labels(&label))
}
