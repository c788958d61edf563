//! Entity ranking evaluation: MRR, MR and Hits@{1,3,5,10}.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{KgError, Result};
use crate::graph::{EntityId, KnowledgeGraph, Triple};
use crate::linkpred::EmbeddingModel;

pub const HITS_AT: [usize; 4] = [1, 3, 5, 10];

/// Anything that scores triples; higher means more plausible.
pub trait TripleScorer: Sync {
    fn n_entities(&self) -> usize;
    fn score(&self, h: usize, r: usize, t: usize) -> f64;
}

impl TripleScorer for EmbeddingModel {
    fn n_entities(&self) -> usize {
        EmbeddingModel::n_entities(self)
    }

    fn score(&self, h: usize, r: usize, t: usize) -> f64 {
        EmbeddingModel::score(self, h, r, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankMode {
    #[default]
    Raw,
    Filtered,
}

impl std::str::FromStr for RankMode {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(RankMode::Raw),
            "filtered" => Ok(RankMode::Filtered),
            other => Err(KgError::InvalidParam(format!("unknown eval mode {other:?}"))),
        }
    }
}

impl RankMode {
    pub fn name(self) -> &'static str {
        match self {
            RankMode::Raw => "raw",
            RankMode::Filtered => "filtered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Head,
    Tail,
}

/// Ranks true triples against their corruptions.
pub struct Ranker {
    mode: RankMode,
    known: HashSet<Triple>,
}

impl Ranker {
    /// In filtered mode every triple of train ∪ valid ∪ test counts as known.
    pub fn new(g: &KnowledgeGraph, mode: RankMode) -> Self {
        let known = match mode {
            RankMode::Raw => HashSet::new(),
            RankMode::Filtered => g
                .train()
                .iter()
                .chain(g.valid())
                .chain(g.test())
                .copied()
                .collect(),
        };
        Ranker { mode, known }
    }

    /// Rank of `triple` among all completions of `side`.
    ///
    /// Candidates are every entity except the one fixed on the other side
    /// (which would form a self-loop). Ties count as the mean position of
    /// the tied block: `1 + #greater + #tied/2`. In filtered mode corrupted
    /// candidates that are known triples are skipped.
    pub fn rank(&self, scorer: &impl TripleScorer, triple: &Triple, side: Side) -> f64 {
        let (h, r, t) = (triple.head.index(), triple.relation.index(), triple.tail.index());
        let truth = scorer.score(h, r, t);
        let (fixed, target) = match side {
            Side::Head => (t, h),
            Side::Tail => (h, t),
        };
        let mut greater = 0usize;
        let mut tied = 0usize;
        for c in 0..scorer.n_entities() {
            if c == fixed || c == target {
                continue;
            }
            let candidate = match side {
                Side::Head => Triple { head: EntityId::from(c), ..*triple },
                Side::Tail => Triple { tail: EntityId::from(c), ..*triple },
            };
            if self.mode == RankMode::Filtered && self.known.contains(&candidate) {
                continue;
            }
            let s = match side {
                Side::Head => scorer.score(c, r, t),
                Side::Tail => scorer.score(h, r, c),
            };
            if s > truth {
                greater += 1;
            } else if s == truth {
                tied += 1;
            }
        }
        1.0 + greater as f64 + tied as f64 / 2.0
    }
}

pub fn rank_triple(
    scorer: &impl TripleScorer,
    triple: &Triple,
    side: Side,
    mode: RankMode,
    g: &KnowledgeGraph,
) -> f64 {
    Ranker::new(g, mode).rank(scorer, triple, side)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingMetrics {
    pub mrr: f64,
    pub mr: f64,
    /// Percentages aligned with [`HITS_AT`].
    pub hits: [f64; 4],
    pub n_ranks: usize,
}

impl RankingMetrics {
    pub fn from_ranks(ranks: &[f64]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(KgError::EmptyTestSet);
        }
        let n = ranks.len() as f64;
        let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n;
        let mr = ranks.iter().sum::<f64>() / n;
        let mut hits = [0.0; 4];
        for (slot, &k) in hits.iter_mut().zip(&HITS_AT) {
            *slot = 100.0 * ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / n;
        }
        Ok(RankingMetrics {
            mrr,
            mr,
            hits,
            n_ranks: ranks.len(),
        })
    }

    pub fn hits_at(&self, k: usize) -> Option<f64> {
        HITS_AT.iter().position(|&x| x == k).map(|i| self.hits[i])
    }

    pub fn write_table(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{:>8} {:>8} {:>8} {:>8} {:>8} {:>10}", "H@1", "H@3", "H@5", "H@10", "MRR", "MR")?;
        writeln!(
            out,
            "{:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.4} {:>10.1}",
            self.hits[0], self.hits[1], self.hits[2], self.hits[3], self.mrr, self.mr
        )
    }
}

/// Head-side then tail-side rank for every test triple, in input order.
pub fn evaluate_ranks(
    scorer: &impl TripleScorer,
    test: &[Triple],
    mode: RankMode,
    g: &KnowledgeGraph,
) -> Vec<(f64, f64)> {
    let ranker = Ranker::new(g, mode);
    test.par_iter()
        .map(|t| (ranker.rank(scorer, t, Side::Head), ranker.rank(scorer, t, Side::Tail)))
        .collect()
}

/// Ranks both sides of every test triple and averages.
pub fn evaluate(
    scorer: &impl TripleScorer,
    test: &[Triple],
    mode: RankMode,
    g: &KnowledgeGraph,
) -> Result<RankingMetrics> {
    if test.is_empty() {
        return Err(KgError::EmptyTestSet);
    }
    let ranks: Vec<f64> = evaluate_ranks(scorer, test, mode, g)
        .into_iter()
        .flat_map(|(h, t)| [h, t])
        .collect();
    RankingMetrics::from_ranks(&ranks)
}

/// Per-triple ranks as CSV `head,relation,tail,head_rank,tail_rank`.
pub fn write_ranks_csv(test: &[Triple], ranks: &[(f64, f64)], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "head,relation,tail,head_rank,tail_rank")?;
    for (t, (hr, tr)) in test.iter().zip(ranks) {
        writeln!(out, "{},{},{},{hr},{tr}", t.head.0, t.relation.0, t.tail.0)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(usize);

    impl TripleScorer for Constant {
        fn n_entities(&self) -> usize {
            self.0
        }
        fn score(&self, _: usize, _: usize, _: usize) -> f64 {
            1.0
        }
    }

    struct Favours(usize, usize);

    impl TripleScorer for Favours {
        fn n_entities(&self) -> usize {
            self.0
        }
        fn score(&self, h: usize, _: usize, t: usize) -> f64 {
            if h == self.1 || t == self.1 {
                10.0
            } else {
                -(h as f64) - t as f64
            }
        }
    }

    fn graph(n: usize) -> KnowledgeGraph {
        KnowledgeGraph::from_ids(n, 1, vec![Triple::new(0, 0, 1)], vec![], vec![Triple::new(0, 0, 1)]).unwrap()
    }

    #[test]
    fn full_tie_block_averages() {
        let g = graph(6);
        let t = Triple::new(0, 0, 1);
        // 5 candidates excluding the self-loop, all tied
        assert_eq!(rank_triple(&Constant(6), &t, Side::Tail, RankMode::Raw, &g), 3.0);
        assert_eq!(rank_triple(&Constant(6), &t, Side::Head, RankMode::Raw, &g), 3.0);
    }

    #[test]
    fn strict_winner_is_rank_one() {
        let g = graph(5);
        let t = Triple::new(0, 0, 3);
        assert_eq!(rank_triple(&Favours(5, 3), &t, Side::Tail, RankMode::Raw, &g), 1.0);
    }

    #[test]
    fn two_ranks_arithmetic() {
        let m = RankingMetrics::from_ranks(&[1.0, 4.0]).unwrap();
        assert_eq!(m.mrr, 0.625);
        assert_eq!(m.mr, 2.5);
        assert_eq!(m.hits, [50.0, 50.0, 100.0, 100.0]);
        assert_eq!(m.hits_at(10), Some(100.0));
        assert!(RankingMetrics::from_ranks(&[]).is_err());
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let g = graph(3);
        assert!(matches!(evaluate(&Constant(3), &[], RankMode::Raw, &g), Err(KgError::EmptyTestSet)));
    }

    #[test]
    fn mode_names_parse() {
        assert_eq!("filtered".parse::<RankMode>().unwrap(), RankMode::Filtered);
        assert!("both".parse::<RankMode>().is_err());
    }
}
