//! Regularized non-negative matrix factorization `M ≈ W1·W2` by alternating
//! multiplicative updates.
//!
//! The minimized objective is
//!
//! ```text
//! 0.5·‖M − W1·W2‖²_F + α·( c·(‖W1‖₁ + ‖W2‖₁) + 0.5·(1−c)·(‖W1‖²_F + ‖W2‖²_F) )
//! ```
//!
//! The input is only touched through [`NonNegOperator`], so the solver never
//! densifies `M`. Internally `W2` is held transposed (`H = W2ᵀ`, one row per
//! column of `M`) so both factors are row-major with one row per entity.

use std::io::Write;

use rand::Rng;

use crate::cooccur::SparseCountMatrix;
use crate::error::{KgError, Result};
use crate::linalg::Dense;
use crate::rng::{stream_rng, Stream};

/// A non-negative matrix seen only through products with dense blocks.
pub trait NonNegOperator: Sync {
    fn shape(&self) -> (usize, usize);
    /// `M·x` where `x` is `n_cols × p`.
    fn mul_dense(&self, x: &Dense) -> Result<Dense>;
    /// `Mᵀ·x` where `x` is `n_rows × p`.
    fn t_mul_dense(&self, x: &Dense) -> Result<Dense>;
    fn frobenius_sq(&self) -> f64;
    fn sum(&self) -> f64;
}

impl NonNegOperator for SparseCountMatrix {
    fn shape(&self) -> (usize, usize) {
        SparseCountMatrix::shape(self)
    }

    fn mul_dense(&self, x: &Dense) -> Result<Dense> {
        SparseCountMatrix::mul_dense(self, x)
    }

    fn t_mul_dense(&self, x: &Dense) -> Result<Dense> {
        SparseCountMatrix::t_mul_dense(self, x)
    }

    fn frobenius_sq(&self) -> f64 {
        SparseCountMatrix::frobenius_sq(self)
    }

    fn sum(&self) -> f64 {
        self.sum_f64()
    }
}

/// The affinity matrix `C = A·Bᵀ` kept in factored form.
///
/// Products go through the thin `|E|×|R|` factors, so the cost is
/// `O((nnz(A)+nnz(B))·p)` regardless of how dense `C` itself is.
pub struct FactoredAffinity<'a> {
    a: &'a SparseCountMatrix,
    b: &'a SparseCountMatrix,
}

impl<'a> FactoredAffinity<'a> {
    pub fn new(a: &'a SparseCountMatrix, b: &'a SparseCountMatrix) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(KgError::Shape("A and B differ in shape".into()));
        }
        Ok(FactoredAffinity { a, b })
    }
}

impl NonNegOperator for FactoredAffinity<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.a.n_rows(), self.b.n_rows())
    }

    fn mul_dense(&self, x: &Dense) -> Result<Dense> {
        // A·(Bᵀ·x)
        self.a.mul_dense(&self.b.t_mul_dense(x)?)
    }

    fn t_mul_dense(&self, x: &Dense) -> Result<Dense> {
        // B·(Aᵀ·x)
        self.b.mul_dense(&self.a.t_mul_dense(x)?)
    }

    fn frobenius_sq(&self) -> f64 {
        // ‖A·Bᵀ‖² = tr(AᵀA · BᵀB)
        let ga = sparse_gram(self.a);
        let gb = sparse_gram(self.b);
        ga.dot(&gb)
    }

    fn sum(&self) -> f64 {
        self.a
            .col_sums()
            .iter()
            .zip(self.b.col_sums())
            .map(|(x, y)| x * y)
            .sum()
    }
}

fn sparse_gram(m: &SparseCountMatrix) -> Dense {
    let k = m.n_cols();
    let mut g = Dense::zeros(k, k);
    for r in 0..m.n_rows() {
        let (cols, vals) = m.row(r);
        for (&ci, &vi) in cols.iter().zip(vals) {
            for (&cj, &vj) in cols.iter().zip(vals) {
                let cur = g.get(ci as usize, cj as usize);
                g.set(ci as usize, cj as usize, cur + vi as f64 * vj as f64);
            }
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnmfConfig {
    pub rank: usize,
    pub alpha: f64,
    pub l1_mix: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for NnmfConfig {
    fn default() -> Self {
        NnmfConfig {
            rank: 64,
            alpha: 0.01,
            l1_mix: 0.5,
            max_iters: 300,
            rel_tol: 1e-5,
            seed: 0,
        }
    }
}

impl NnmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(KgError::InvalidParam("NNMF rank must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(KgError::InvalidParam(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.l1_mix) {
            return Err(KgError::InvalidParam(format!(
                "l1_mix must lie in [0, 1], got {}",
                self.l1_mix
            )));
        }
        if self.max_iters == 0 {
            return Err(KgError::InvalidParam("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(KgError::InvalidParam(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

/// Non-negative factors with the objective recorded at every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    /// `n_rows × p`.
    pub w1: Dense,
    /// `W2ᵀ`, stored `n_cols × p`.
    pub w2t: Dense,
    /// `loss_trace[0]` is the objective at initialization; entry `i` is the
    /// objective after iteration `i`.
    pub loss_trace: Vec<f64>,
}

impl FactorPair {
    pub fn rank(&self) -> usize {
        self.w1.cols()
    }

    /// `W2` in its `p × n_cols` orientation.
    pub fn w2(&self) -> Dense {
        self.w2t.transpose()
    }

    pub fn iterations(&self) -> usize {
        self.loss_trace.len().saturating_sub(1)
    }

    /// Dense reconstruction `W1·W2`. Only for small matrices.
    pub fn reconstruct(&self) -> Dense {
        self.w1
            .matmul(&self.w2t.transpose())
            .expect("factor shapes conform")
    }

    /// Checkpoint: a `rows cols p` header line, then `W1` row-major, then
    /// `W2` row-major, one matrix row per line.
    pub fn write_checkpoint(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.w1.rows(), self.w2t.rows(), self.rank())?;
        write_rows(&mut out, &self.w1)?;
        write_rows(&mut out, &self.w2())?;
        Ok(())
    }

    /// Loss trace as CSV `iter,objective`.
    pub fn write_loss_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "iter,objective")?;
        for (i, v) in self.loss_trace.iter().enumerate() {
            writeln!(out, "{i},{v}")?;
        }
        Ok(())
    }
}

fn write_rows(out: &mut impl Write, m: &Dense) -> std::io::Result<()> {
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Terms of the objective that depend only on the factors.
fn penalty(w1: &Dense, h: &Dense, cfg: &NnmfConfig) -> f64 {
    if cfg.alpha == 0.0 {
        return 0.0;
    }
    let l1 = w1.sum() + h.sum();
    let l2 = w1.frobenius_sq() + h.frobenius_sq();
    cfg.alpha * (cfg.l1_mix * l1 + 0.5 * (1.0 - cfg.l1_mix) * l2)
}

/// Objective value given a precomputed `M·H`.
fn objective_with(m_norm_sq: f64, mh: &Dense, w1: &Dense, h: &Dense, cfg: &NnmfConfig) -> f64 {
    // ‖M − W1Hᵀ‖² = ‖M‖² − 2⟨M·H, W1⟩ + ⟨W1ᵀW1, HᵀH⟩
    let cross = mh.dot(w1);
    let recon = w1.gram().dot(&h.gram());
    let fro = (m_norm_sq - 2.0 * cross + recon).max(0.0);
    0.5 * fro + penalty(w1, h, cfg)
}

/// Objective for `M ≈ W1·W2` with `W2` given transposed (`w2t`, `n_cols × p`).
/// The Frobenius term is evaluated through Gram matrices, never densifying
/// `M` or `W1·W2`.
pub fn objective(
    m: &impl NonNegOperator,
    w1: &Dense,
    w2t: &Dense,
    cfg: &NnmfConfig,
) -> Result<f64> {
    let (rows, cols) = m.shape();
    if w1.rows() != rows || w2t.rows() != cols || w1.cols() != w2t.cols() {
        return Err(KgError::Shape(format!(
            "M is {rows}x{cols}, W1 is {}x{}, W2ᵀ is {}x{}",
            w1.rows(),
            w1.cols(),
            w2t.rows(),
            w2t.cols()
        )));
    }
    let mh = m.mul_dense(w2t)?;
    Ok(objective_with(m.frobenius_sq(), &mh, w1, w2t, cfg))
}

/// One multiplicative step for factor `w` given numerator `num = M·other`
/// and the Gram matrix of the other factor.
fn multiplicative_step(w: &mut Dense, num: &Dense, other_gram: &Dense, cfg: &NnmfConfig, floor: f64) {
    let l1 = cfg.alpha * cfg.l1_mix;
    let l2 = cfg.alpha * (1.0 - cfg.l1_mix);
    let p = w.cols();
    let mut denom_row = vec![0.0; p];
    for i in 0..w.rows() {
        let row = w.row(i);
        for (k, d) in denom_row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, &wij) in row.iter().enumerate() {
                s += wij * other_gram.get(j, k);
            }
            *d = s + l1 + l2 * row[k];
        }
        let nrow = num.row(i);
        let row = w.row_mut(i);
        for k in 0..p {
            let d = denom_row[k].max(f64::MIN_POSITIVE);
            row[k] = (row[k] * nrow[k] / d).max(floor);
        }
    }
}

/// Factorizes `m` into non-negative `W1 (n_rows × p)` and `W2 (p × n_cols)`.
///
/// Factors start uniform on `(0, s]` with `s = sqrt(mean(M)/p)` and are then
/// updated alternately until `max_iters` or until the relative objective
/// improvement falls below `rel_tol`. Entries are floored at `ε·s` so no
/// entry locks at zero.
pub fn nnmf(m: &impl NonNegOperator, cfg: &NnmfConfig) -> Result<FactorPair> {
    nnmf_observed(m, cfg, |_, _, _| {})
}

/// [`nnmf`] with a callback receiving `(iteration, W1, W2ᵀ)` after every
/// iteration.
pub fn nnmf_observed(
    m: &impl NonNegOperator,
    cfg: &NnmfConfig,
    mut observe: impl FnMut(usize, &Dense, &Dense),
) -> Result<FactorPair> {
    cfg.validate()?;
    let (rows, cols) = m.shape();
    if cfg.rank > rows.min(cols) {
        return Err(KgError::InvalidParam(format!(
            "rank {} exceeds min({rows}, {cols})",
            cfg.rank
        )));
    }
    let p = cfg.rank;
    let mean = m.sum() / (rows as f64 * cols as f64);
    let scale = if mean > 0.0 { (mean / p as f64).sqrt() } else { 1.0 };
    let floor = f64::EPSILON * scale;

    let mut rng = stream_rng(cfg.seed, Stream::Nnmf);
    let mut draw = |n: usize| -> Dense {
        let data = (0..n * p)
            .map(|_| (1.0 - rng.gen::<f64>()) * scale)
            .collect();
        Dense::from_vec(n, p, data).expect("sized buffer")
    };
    let mut w1 = draw(rows);
    let mut h = draw(cols);

    let m_norm_sq = m.frobenius_sq();
    let mut mh = m.mul_dense(&h)?;
    let mut trace = vec![objective_with(m_norm_sq, &mh, &w1, &h, cfg)];

    for iter in 1..=cfg.max_iters {
        multiplicative_step(&mut w1, &mh, &h.gram(), cfg, floor);
        let mtw = m.t_mul_dense(&w1)?;
        multiplicative_step(&mut h, &mtw, &w1.gram(), cfg, floor);
        observe(iter, &w1, &h);
        mh = m.mul_dense(&h)?;
        let cur = objective_with(m_norm_sq, &mh, &w1, &h, cfg);
        if !cur.is_finite() {
            return Err(KgError::InvalidParam(format!(
                "NNMF objective became non-finite after {} iterations",
                trace.len()
            )));
        }
        let prev = *trace.last().expect("trace seeded");
        trace.push(cur);
        if prev <= 0.0 || (prev - cur) / prev < cfg.rel_tol {
            break;
        }
    }
    Ok(FactorPair {
        w1,
        w2t: h,
        loss_trace: trace,
    })
}
