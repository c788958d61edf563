//! Acceptance checks, one PASS/FAIL line each. Exits nonzero if any fails.
//!
//! Dataset checks read `$KGFORGE_DATA_DIR/{DL50a,WN18RR}/{train,valid,test}.txt`
//! (default `<workspace>/data`).

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use kgforge::augment::{AugmentedSet, Draw, TripleSampler};
use kgforge::cluster::{agglomerative, EntityFeatures, Linkage, Partition};
use kgforge::cooccur::{build_head_relation, build_tail_relation, SparseCountMatrix};
use kgforge::eval::{evaluate, evaluate_ranks, RankMode, TripleScorer};
use kgforge::factorize::{nnmf_observed, NnmfConfig};
use kgforge::linalg::Dense;
use kgforge::linkpred::{schedule_size, train, EmbeddingModel, NormOrder, ScoreGrad, TrainConfig, Variant};
use kgforge::{EntityId, KnowledgeGraph, Triple};
use kgforge_cli::config::RunConfig;
use kgforge_cli::pipeline::{self, Prepared};
use kgforge_cli::report::{read_jsonl, read_sweep_csv};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_kgforge")
}

fn run_cli(args: &[&str], threads: Option<&str>) -> Result<(), String> {
    let mut cmd = Command::new(bin());
    cmd.args(args).env("RUST_LOG", "warn");
    if let Some(t) = threads {
        cmd.env("KGFORGE_THREADS", t);
    }
    let out = cmd.output().map_err(|e| format!("spawning kgforge: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "kgforge {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(())
}

fn data_root() -> PathBuf {
    std::env::var_os("KGFORGE_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
            root.canonicalize().unwrap_or(root).join("data")
        })
}

fn dataset_dir(name: &str) -> Result<PathBuf, String> {
    let dir = data_root().join(name);
    for f in ["train.txt", "valid.txt", "test.txt"] {
        if !dir.join(f).is_file() {
            return Err(format!("{} not found; the {name} files are required", dir.join(f).display()));
        }
    }
    Ok(dir)
}

// 1 ---------------------------------------------------------------------

fn dataset_fidelity() -> Outcome {
    let expected = [("DL50a", [2705u64, 20, 6000, 770, 1249]), ("WN18RR", [40943, 11, 86835, 3034, 3134])];
    let mut notes = Vec::new();
    for (name, want) in expected {
        let dir = dataset_dir(name)?;
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let start = Instant::now();
        run_cli(&["prepare", "--dataset", dir.to_str().unwrap(), "--out", out.path().to_str().unwrap()], None)?;
        let took = start.elapsed();
        let text = std::fs::read_to_string(out.path().join("stats.json")).map_err(|e| e.to_string())?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let n = |k: &str| v[k].as_u64().unwrap_or(u64::MAX);
        // loaded counts plus reported drops must equal the published split sizes
        let got = [
            n("entities"),
            n("relations"),
            n("train") + n("self_loops_dropped_train") + n("train_duplicates_dropped"),
            n("valid") + n("self_loops_dropped_valid"),
            n("test") + n("self_loops_dropped_test"),
        ];
        ensure!(got == want, "{name}: got {got:?}, expected {want:?}");
        ensure!(took < Duration::from_secs(30), "{name}: prepare took {took:.1?}");
        let dropped = n("self_loops_dropped_train") + n("self_loops_dropped_valid") + n("self_loops_dropped_test");
        notes.push(format!("{name} ok in {took:.1?} ({dropped} self-loops, {} duplicates dropped)", n("train_duplicates_dropped")));
    }
    Ok(notes.join("; "))
}

// 2 ---------------------------------------------------------------------

fn nnmf_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u: Vec<Vec<u64>> = (0..50).map(|_| (0..5).map(|_| rng.gen_range(0..=4)).collect()).collect();
    let v: Vec<Vec<u64>> = (0..5).map(|_| (0..50).map(|_| rng.gen_range(0..=4)).collect()).collect();
    let m: Vec<Vec<u64>> = (0..50)
        .map(|i| (0..50).map(|j| (0..5).map(|k| u[i][k] * v[k][j]).sum()).collect())
        .collect();
    let sparse = SparseCountMatrix::from_dense(&m).map_err(|e| e.to_string())?;
    let cfg = NnmfConfig {
        rank: 5,
        alpha: 0.0,
        l1_mix: 0.5,
        max_iters: 500,
        rel_tol: 1e-12,
        seed: 0,
    };
    let mut negative = false;
    let f = nnmf_observed(&sparse, &cfg, |_, w1, h| negative |= w1.min() < 0.0 || h.min() < 0.0)
        .map_err(|e| e.to_string())?;
    let approx = f.reconstruct();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..50 {
        for j in 0..50 {
            num += (m[i][j] as f64 - approx.get(i, j)).powi(2);
            den += (m[i][j] as f64).powi(2);
        }
    }
    let err = (num / den).sqrt();
    let worst_rise = f
        .loss_trace
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0].abs().max(1.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let took = start.elapsed();
    ensure!(!negative, "a factor entry went negative");
    ensure!(f.iterations() <= 500, "{} iterations", f.iterations());
    ensure!(err <= 0.05, "relative error {err:.4} > 0.05");
    ensure!(worst_rise <= 1e-9, "objective rose by {worst_rise:.3e} (relative)");
    ensure!(took < Duration::from_secs(10), "took {took:.1?}");
    Ok(format!(
        "relative error {err:.2e} after {} iterations, max relative rise {worst_rise:.1e}, {took:.2?}",
        f.iterations()
    ))
}

// 3 ---------------------------------------------------------------------

/// Greedy Ward agglomeration on a full Lance-Williams matrix.
fn naive_ward(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = points.len();
    let mut d: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| 0.5 * points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .collect()
        })
        .collect();
    let mut size = vec![1.0; n];
    let mut alive = vec![true; n];
    let mut label: Vec<usize> = (0..n).collect();
    for _ in 0..n - k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            for j in i + 1..n {
                if alive[i] && alive[j] && d[i][j] < best.0 {
                    best = (d[i][j], i, j);
                }
            }
        }
        let (dij, i, j) = best;
        for x in 0..n {
            if alive[x] && x != i && x != j {
                let nx = size[x];
                let v = ((nx + size[i]) * d[x][i] + (nx + size[j]) * d[x][j] - nx * dij) / (nx + size[i] + size[j]);
                d[x][i] = v;
                d[i][x] = v;
            }
        }
        alive[j] = false;
        size[i] += size[j];
        label.iter_mut().filter(|l| **l == j).for_each(|l| *l = i);
    }
    label
}

fn same_partition(a: &[usize], b: &[u32]) -> bool {
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter().zip(b).all(|(x, y)| *fwd.entry(*x).or_insert(*y) == *y && *back.entry(*y).or_insert(*x) == *x)
}

fn clustering_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut largest = 0;
    for case in 0..50 {
        let n = rng.gen_range(2..=200);
        let dim = rng.gen_range(1..=10);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let k = rng.gen_range(1..=n);
        let feats = EntityFeatures(Dense::from_fn(n, dim, |i, j| points[i][j]));
        let got = agglomerative(&feats, k, Linkage::Ward).map_err(|e| e.to_string())?;
        ensure!(
            same_partition(&naive_ward(&points, k), got.assignment()),
            "instance {case} (n={n}, k={k}) differs from the reference"
        );
        largest = largest.max(n);
    }
    Ok(format!("50/50 instances match (largest |E| = {largest})"))
}

// 4 ---------------------------------------------------------------------

fn sampler_distribution() -> Outcome {
    let start = Instant::now();
    let train = vec![
        Triple::new(0, 0, 3),
        Triple::new(0, 1, 4),
        Triple::new(1, 0, 2),
        Triple::new(2, 2, 5),
        Triple::new(3, 1, 0),
        Triple::new(4, 2, 1),
        Triple::new(5, 0, 4),
        Triple::new(6, 1, 7),
        Triple::new(7, 2, 6),
        Triple::new(1, 1, 5),
        Triple::new(2, 0, 1),
    ];
    let g = KnowledgeGraph::from_ids(9, 3, train, vec![], vec![]).map_err(|e| e.to_string())?;
    let partition = Partition::from_labels(&[0, 0, 0, 1, 1, 1, 2, 2, 3]);
    let a = build_head_relation(&g);
    let b = build_tail_relation(&g);

    // analytic: uniform eligible cluster × uniform ordered pair × A[h][r]·B[t][r],
    // renormalized over pairs with support
    let clusters: Vec<Vec<EntityId>> = partition.clusters().into_iter().filter(|c| c.len() >= 2).collect();
    let mut law: HashMap<Triple, f64> = HashMap::new();
    for c in &clusters {
        let m = c.len() as f64;
        for &h in c {
            for &t in c {
                if h == t {
                    continue;
                }
                let w: Vec<f64> = (0..3).map(|r| (a.get(h.index(), r) * b.get(t.index(), r)) as f64).collect();
                let total: f64 = w.iter().sum();
                for (r, wr) in w.iter().enumerate() {
                    if *wr > 0.0 {
                        *law.entry(Triple::new(h.index(), r, t.index())).or_default() +=
                            wr / total / (m * (m - 1.0)) / clusters.len() as f64;
                    }
                }
            }
        }
    }
    let z: f64 = law.values().sum();
    law.values_mut().for_each(|p| *p /= z);

    let sampler = TripleSampler::new(&partition, &a, &b).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let mut counts: HashMap<Triple, usize> = HashMap::new();
    let mut accepted = 0;
    while accepted < n {
        if let Draw::Triple { triple, .. } = sampler.draw(&mut rng) {
            *counts.entry(triple).or_default() += 1;
            accepted += 1;
        }
    }
    let keys: HashSet<&Triple> = law.keys().chain(counts.keys()).collect();
    let tv = 0.5
        * keys
            .iter()
            .map(|k| (law.get(*k).copied().unwrap_or(0.0) - counts.get(*k).copied().unwrap_or(0) as f64 / n as f64).abs())
            .sum::<f64>();
    let took = start.elapsed();
    ensure!(tv <= 0.02, "total variation {tv:.4} > 0.02");
    ensure!(took < Duration::from_secs(30), "took {took:.1?}");
    Ok(format!("TV {tv:.4} over {n} draws on a {}-triple support, {took:.2?}", law.len()))
}

// 5 ---------------------------------------------------------------------

fn schedule() -> Outcome {
    let mut checked = 0;
    for big_e in [1usize, 2, 3, 5, 10, 17, 50, 100, 300] {
        for k in 1..=4u32 {
            for s in [0usize, 1, 2, 9, 250, 999, 1000, 4096, 86_835] {
                let mut prev = 0;
                for e in 1..=big_e {
                    // floor(e^k·S / E^k) in exact integer arithmetic
                    let direct = ((e as u128).pow(k) * s as u128 / (big_e as u128).pow(k)) as usize;
                    let got = schedule_size(e, big_e, k, s).map_err(|err| err.to_string())?;
                    ensure!(got == direct, "r({e}) with E={big_e}, k={k}, |S|={s}: {got} != {direct}");
                    ensure!(got >= prev, "decrease at e={e}, E={big_e}, k={k}, |S|={s}");
                    prev = got;
                    checked += 1;
                }
                ensure!(prev == s, "r(E) = {prev} != |S| = {s}");
            }
        }
    }
    ensure!(schedule_size(0, 5, 1, 10).is_err() && schedule_size(6, 5, 1, 10).is_err(), "out-of-range epochs accepted");
    Ok(format!("{checked} grid points exact, monotone, r(E) = |S|"))
}

// 6 ---------------------------------------------------------------------

fn param(m: &mut EmbeddingModel, block: usize, row: usize, i: usize) -> &mut f64 {
    if block == 1 {
        &mut m.relation_row_mut(row)[i]
    } else {
        &mut m.entity_row_mut(row)[i]
    }
}

fn gradient_error(model: &mut EmbeddingModel, h: usize, r: usize, t: usize) -> f64 {
    let mut grad = ScoreGrad::default();
    model.score_with_grad(h, r, t, &mut grad);
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for block in 0..3 {
        let width = if block == 1 { model.relation_row(r).len() } else { model.entity_width() };
        for i in 0..width {
            let row = [h, r, t][block];
            let orig = *param(model, block, row, i);
            *param(model, block, row, i) = orig + step;
            let up = model.score(h, r, t);
            *param(model, block, row, i) = orig - step;
            let down = model.score(h, r, t);
            *param(model, block, row, i) = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = [&grad.head, &grad.relation, &grad.tail][block][i];
            let scale = analytic.abs().max(numeric.abs());
            worst = worst.max(if scale > 1e-6 { (analytic - numeric).abs() / scale } else { (analytic - numeric).abs() });
        }
    }
    worst
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = [0.0f64; 2];
    for (slot, variant) in [Variant::TransE, Variant::RotatE].into_iter().enumerate() {
        let mut checked = 0;
        while checked < 100 {
            let mut m = EmbeddingModel::new(variant, 5, 2, 6, NormOrder::L1, &mut rng).map_err(|e| e.to_string())?;
            for e in 0..5 {
                m.entity_row_mut(e).iter_mut().for_each(|v| *v = rng.gen_range(-1.5..1.5));
            }
            for r in 0..2 {
                m.relation_row_mut(r).iter_mut().for_each(|v| *v = rng.gen_range(-3.0..3.0));
            }
            let (h, r) = (rng.gen_range(0..5), rng.gen_range(0..2));
            let t = (h + rng.gen_range(1..5)) % 5;
            if variant == Variant::TransE {
                let (hv, rv, tv) = (m.entity_row(h), m.relation_row(r), m.entity_row(t));
                // keep away from the L1 kinks
                if hv.iter().zip(rv).zip(tv).any(|((a, b), c)| (a + b - c).abs() <= 1e-3) {
                    continue;
                }
            }
            worst[slot] = worst[slot].max(gradient_error(&mut m, h, r, t));
            checked += 1;
        }
    }
    ensure!(worst[0] <= 1e-4, "TransE relative gradient error {:.2e}", worst[0]);
    ensure!(worst[1] <= 1e-4, "RotatE relative gradient error {:.2e}", worst[1]);

    // 1000+ single-triple updates, then every |r_i| must be 1
    let mut triples = Vec::new();
    for i in 0..10 {
        triples.push(Triple::new(i, 0, (i + 1) % 10));
        triples.push(Triple::new(i, 1, (i + 3) % 10));
    }
    let g = KnowledgeGraph::from_ids(10, 2, triples, vec![], vec![]).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 1,
        dim: 8,
        learning_rate: 0.05,
        seed: 6,
        ..TrainConfig::default()
    };
    let (model, _) = train(&g, &AugmentedSet::empty(), &cfg, Variant::RotatE).map_err(|e| e.to_string())?;
    let mut max_dev: f64 = 0.0;
    for r in 0..2 {
        for &theta in model.relation_row(r) {
            max_dev = max_dev.max((theta.cos().hypot(theta.sin()) - 1.0).abs());
        }
    }
    ensure!(max_dev <= f64::EPSILON, "|r_i| deviates from 1 by {max_dev:.2e}");
    Ok(format!(
        "max relative error TransE {:.1e}, RotatE {:.1e}; |r_i| - 1 <= {max_dev:.0e} after 1000 single-triple updates",
        worst[0], worst[1]
    ))
}

// 7 ---------------------------------------------------------------------

struct Table(Vec<Vec<f64>>);

impl TripleScorer for Table {
    fn n_entities(&self) -> usize {
        self.0.len()
    }
    fn score(&self, h: usize, _: usize, t: usize) -> f64 {
        self.0[h][t]
    }
}

struct Mapped<'a, F>(&'a EmbeddingModel, F);

impl<F: Fn(f64) -> f64 + Sync> TripleScorer for Mapped<'_, F> {
    fn n_entities(&self) -> usize {
        self.0.n_entities()
    }
    fn score(&self, h: usize, r: usize, t: usize) -> f64 {
        (self.1)(self.0.score(h, r, t))
    }
}

fn evaluation_oracle() -> Outcome {
    let x = f64::NAN;
    let table = Table(vec![
        vec![x, 0.9, 0.5, 0.9],
        vec![0.2, x, 0.7, 0.1],
        vec![0.3, 0.4, x, 0.6],
        vec![0.8, 0.95, 0.6, x],
    ]);
    let test = vec![Triple::new(0, 0, 1), Triple::new(2, 0, 3)];
    let g = KnowledgeGraph::from_ids(4, 1, vec![Triple::new(0, 0, 3), Triple::new(3, 0, 1)], vec![], test.clone())
        .map_err(|e| e.to_string())?;
    // hand-sorted: (0,0,1) head 2, tail 1.5; (2,0,3) head 2, tail 1
    let ranks = evaluate_ranks(&table, &test, RankMode::Raw, &g);
    ensure!(ranks == vec![(2.0, 1.5), (2.0, 1.0)], "ranks {ranks:?}");
    let m = evaluate(&table, &test, RankMode::Raw, &g).map_err(|e| e.to_string())?;
    ensure!(m.mrr == (0.5 + 1.0 / 1.5 + 0.5 + 1.0) / 4.0, "MRR {}", m.mrr);
    ensure!(m.mr == 1.625, "MR {}", m.mr);
    ensure!(m.hits == [25.0, 100.0, 100.0, 100.0], "Hits {:?}", m.hits);
    let f = evaluate(&table, &test, RankMode::Filtered, &g).map_err(|e| e.to_string())?;
    ensure!(f.mrr == 1.0 && f.mr == 1.0 && f.hits == [100.0; 4], "filtered {f:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..20 {
        let n = rng.gen_range(6..40);
        let pick = |rng: &mut ChaCha8Rng, k: usize| -> Vec<Triple> {
            (0..k)
                .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..3), rng.gen_range(0..n)))
                .filter(|t| !t.is_self_loop())
                .collect()
        };
        let (tr, te) = (pick(&mut rng, 3 * n), pick(&mut rng, n));
        let g = KnowledgeGraph::from_ids(n, 3, tr, vec![], te).map_err(|e| e.to_string())?;
        let variant = if i % 2 == 0 { Variant::TransE } else { Variant::RotatE };
        let model = EmbeddingModel::new(variant, n, 3, 5, NormOrder::L2, &mut rng).map_err(|e| e.to_string())?;
        for mode in [RankMode::Raw, RankMode::Filtered] {
            let base = evaluate(&model, g.test(), mode, &g).map_err(|e| e.to_string())?;
            let a = evaluate(&Mapped(&model, |s| 3.0 * s + 1.0), g.test(), mode, &g).map_err(|e| e.to_string())?;
            let b = evaluate(&Mapped(&model, f64::atan), g.test(), mode, &g).map_err(|e| e.to_string())?;
            let c = evaluate(&Mapped(&model, |s: f64| s.exp()), g.test(), mode, &g).map_err(|e| e.to_string())?;
            ensure!(base == a && base == b && base == c, "model {i} ({}) changed under a transform", mode.name());
        }
    }
    Ok("hand-scored model exact (raw and filtered); 20 random models invariant under 3 transforms".into())
}

// 8 ---------------------------------------------------------------------

fn toy_learnability() -> Outcome {
    let start = Instant::now();
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for i in 0..10 {
        for j in 0..10 {
            let fwd = Triple::new(i, 0, 10 + j);
            if (i + 2 * j) % 10 == 3 { te.push(fwd) } else { tr.push(fwd) }
            if (i + j) % 2 == 0 {
                let back = Triple::new(10 + j, 1, i);
                if (i + j) % 8 == 0 && i < 5 { te.push(back) } else { tr.push(back) }
            }
        }
    }
    let g = KnowledgeGraph::from_ids(20, 2, tr, vec![], te).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 200,
        dim: 32,
        batch_size: 8,
        learning_rate: 0.01,
        margin: 2.0,
        seed: 1,
        ..TrainConfig::default()
    };
    let (model, _) = train(&g, &AugmentedSet::empty(), &cfg, Variant::TransE).map_err(|e| e.to_string())?;
    let m = evaluate(&model, g.test(), RankMode::Raw, &g).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure!(m.hits[3] >= 90.0, "held-out Hits@10 {:.1}%", m.hits[3]);
    ensure!(took < Duration::from_secs(120), "took {took:.1?}");
    Ok(format!("held-out Hits@10 {:.1}% on {} triples, {took:.2?}", m.hits[3], g.test().len()))
}

// 9 ---------------------------------------------------------------------

fn dl50a_reproduction() -> Outcome {
    let dir = dataset_dir("DL50a")?;
    let start = Instant::now();
    let p = Prepared::load(&dir).map_err(|e| format!("{e:#}"))?;
    let mut base = RunConfig::default();
    base.dataset = Some(dir.clone());
    let seeds = [1u64, 2, 3];
    let err = |e: anyhow::Error| format!("{e:#}");

    let baseline: Vec<f64> = seeds
        .iter()
        .map(|&s| pipeline::train_and_evaluate(&p, &AugmentedSet::empty(), &base.with_seed(s)).map(|t| t.record.scores.mrr))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let baseline_mean = baseline.iter().sum::<f64>() / 3.0;

    // tune (L, k) on validation MRR with the first seed
    let tune = base.with_seed(seeds[0]);
    let factors = pipeline::factorize(&p, &tune).map_err(err)?;
    let partition = pipeline::cluster(&factors, &tune.cluster).map_err(err)?;
    let mut best = (f64::NEG_INFINITY, 0usize, 0u32);
    for l in [1000usize, 2000, 4000] {
        let mut c = tune.clone();
        c.sampler.target_count = l;
        let s = pipeline::augment(&p, &partition, &c).map_err(err)?;
        for k in [1u32, 2, 3] {
            c.train.exponent_k = k;
            c.train.eval_every = Some(c.train.epochs);
            let (_, hist) = train(&p.graph, &s, &c.train, c.model).map_err(|e| e.to_string())?;
            let val = hist.val_mrr.last().copied().flatten().unwrap_or(f64::NEG_INFINITY);
            if val > best.0 {
                best = (val, l, k);
            }
        }
    }
    let (_, l, k) = best;
    let mut augmented = Vec::new();
    for &s in &seeds {
        let mut c = base.with_seed(s);
        c.sampler.target_count = l;
        c.train.exponent_k = k;
        let (_, _, set) = pipeline::factorize_and_augment(&p, &c).map_err(err)?;
        augmented.push(pipeline::train_and_evaluate(&p, &set, &c).map_err(err)?.record.scores.mrr);
    }
    let aug_mean = augmented.iter().sum::<f64>() / 3.0;
    let took = start.elapsed();
    let detail = format!(
        "baseline MRR {baseline_mean:.4} (per seed {baseline:.4?}), NNMFAug MRR {aug_mean:.4} with L={l}, k={k}, {took:.1?}"
    );
    ensure!(
        baseline.iter().all(|m| (0.10..=0.22).contains(m)),
        "baseline MRR outside [0.10, 0.22]: {detail}"
    );
    ensure!(aug_mean >= baseline_mean, "augmentation did not help on average: {detail}");
    ensure!(took < Duration::from_secs(30 * 60), "over the 30 min budget: {detail}");
    Ok(detail)
}

// 10 and 11 ---------------------------------------------------------------

/// Four groups of 75 entities, two relations per group, each a noisy
/// offset within the group (3000 distinct triples possible, 2400 drawn).
fn synthetic_dataset(dir: &Path) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    while triples.len() < 2400 {
        let group = rng.gen_range(0..4);
        let which = rng.gen_range(0..2);
        let h = rng.gen_range(0..75);
        let offset = if which == 0 { rng.gen_range(1..6) } else { rng.gen_range(10..15) };
        let t = (h + offset) % 75;
        let triple = (75 * group + h, 2 * group + which, 75 * group + t);
        if seen.insert(triple) {
            triples.push(triple);
        }
    }
    let line = |&(h, r, t): &(usize, usize, usize)| format!("e{h}\tr{r}\te{t}\n");
    let write = |name: &str, part: &[(usize, usize, usize)]| std::fs::write(dir.join(name), part.iter().map(line).collect::<String>());
    write("train.txt", &triples[..2000])?;
    write("valid.txt", &triples[2000..2150])?;
    write("test.txt", &triples[2150..])
}

const SMALL: &[&str] = &["--rank", "8", "--epochs", "15", "--dim", "24", "--batch-size", "64"];

fn sweep_plumbing() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = root.path().join("data");
    std::fs::create_dir_all(&data).map_err(|e| e.to_string())?;
    synthetic_dataset(&data).map_err(|e| e.to_string())?;
    let d = data.to_str().unwrap();
    let sweep_out = root.path().join("sweep");
    let base_out = root.path().join("base");
    let mut args = vec!["sweep", "--dataset", d, "--out", sweep_out.to_str().unwrap(), "--axis", "num-aug"];
    args.extend(["--values", "0,500,1000,2000", "--seeds", "1,2"]);
    args.extend(SMALL);
    run_cli(&args, None)?;
    let mut args = vec!["train", "--dataset", d, "--out", base_out.to_str().unwrap(), "--seeds", "1,2"];
    args.extend(SMALL);
    run_cli(&args, None)?;

    let text = std::fs::read_to_string(sweep_out.join("sweep.csv")).map_err(|e| e.to_string())?;
    ensure!(
        text.lines().next() == Some("axis,value,seed,mrr,mr,h1,h3,h5,h10"),
        "bad header {:?}",
        text.lines().next()
    );
    let rows = read_sweep_csv(&sweep_out.join("sweep.csv")).map_err(|e| format!("{e:#}"))?;
    ensure!(rows.len() == 8, "{} data rows, expected 8", rows.len());
    ensure!(rows.iter().all(|r| r.axis == "num-aug"), "wrong axis column");
    ensure!(
        rows.iter().all(|r| r.mrr > 0.0 && r.mrr <= 1.0 && r.mr >= 1.0 && r.h1 <= r.h3 && r.h3 <= r.h5 && r.h5 <= r.h10),
        "metric out of range"
    );
    let baseline = read_jsonl(&base_out.join("metrics.jsonl")).map_err(|e| format!("{e:#}"))?;
    for seed in [1u64, 2] {
        let row = rows.iter().find(|r| r.value == "0" && r.seed == seed).ok_or("missing |S|=0 row")?;
        let b = baseline
            .iter()
            .find(|r| r.kind == "run" && r.seed == Some(seed))
            .ok_or("missing baseline record")?;
        let s = &b.scores;
        let same = [row.mrr, row.mr, row.h1, row.h3, row.h5, row.h10]
            .iter()
            .zip([s.mrr, s.mr, s.hits_at_1, s.hits_at_3, s.hits_at_5, s.hits_at_10])
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "seed {seed}: |S|=0 row {row:?} differs from baseline {s:?}");
    }
    let mrr: Vec<String> = rows.iter().map(|r| format!("{}:{:.3}", r.value, r.mrr)).collect();
    Ok(format!("8 rows parsed back; |S|=0 rows bit-identical to baseline; MRR {}", mrr.join(" ")))
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = root.path().join("data");
    std::fs::create_dir_all(&data).map_err(|e| e.to_string())?;
    synthetic_dataset(&data).map_err(|e| e.to_string())?;
    let config = root.path().join("run.ini");
    std::fs::write(
        &config,
        "[run]\nseeds = 3,4\n[nnmf]\nrank = 8\n[augment]\nnum_aug = 800\nworkers = 3\n[train]\nepochs = 10\ndim = 16\n",
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (name, threads) in [("a", None), ("b", None), ("c", Some("1"))] {
        let out = root.path().join(name);
        run_cli(
            &["pipeline", "--config", config.to_str().unwrap(), "--dataset", data.to_str().unwrap(), "--out", out.to_str().unwrap()],
            threads,
        )?;
        let metrics = std::fs::read(out.join("metrics.jsonl")).map_err(|e| e.to_string())?;
        let augmented = std::fs::read(out.join("seed3/augmented.txt")).map_err(|e| e.to_string())?;
        outputs.push((metrics, augmented));
    }
    ensure!(outputs[0].0 == outputs[1].0, "metrics.jsonl differs between identical runs");
    ensure!(outputs[0].1 == outputs[1].1, "augmented set differs between identical runs");
    ensure!(outputs[0] == outputs[2], "single-threaded run differs");
    let lines = String::from_utf8_lossy(&outputs[0].0).lines().count();
    Ok(format!("metrics.jsonl ({lines} records) and augmented sets byte-identical across 3 runs, including one on 1 thread"))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "dataset fidelity", dataset_fidelity),
        (2, "NNMF correctness", nnmf_correctness),
        (3, "clustering oracle", clustering_oracle),
        (4, "sampler distribution", sampler_distribution),
        (5, "schedule", schedule),
        (6, "gradient checks", gradients),
        (7, "evaluation oracle", evaluation_oracle),
        (8, "toy-KG learnability", toy_learnability),
        (9, "DL50a reproduction", dl50a_reproduction),
        (10, "sweep plumbing", sweep_plumbing),
        (11, "end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS [{id:>2}] {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL [{id:>2}] {name}: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
