//! Head-relation and tail-relation count matrices, the entity affinity
//! product `C = A·Bᵀ`, and per-pair relation distributions.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{KgError, Result};
use crate::graph::{EntityId, KnowledgeGraph};
use crate::linalg::Dense;

/// Compressed-row sparse matrix of non-negative integer counts.
///
/// Only positive values are stored and each row's column indices are
/// strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseCountMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<u64>,
}

impl SparseCountMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseCountMatrix {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` entries, summing duplicate coordinates
    /// and dropping zeros.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut entries: Vec<(usize, usize, u64)>,
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = entries.iter().find(|(r, c, _)| *r >= n_rows || *c >= n_cols) {
            return Err(KgError::Shape(format!(
                "entry ({r}, {c}) outside a {n_rows}x{n_cols} matrix"
            )));
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<u64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if v == 0 {
                continue;
            }
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c as u32);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(SparseCountMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(m: &[Vec<u64>]) -> Result<Self> {
        let n_rows = m.len();
        let n_cols = m.first().map_or(0, Vec::len);
        let mut entries = Vec::new();
        for (i, row) in m.iter().enumerate() {
            if row.len() != n_cols {
                return Err(KgError::Shape("ragged dense rows".into()));
            }
            for (j, &v) in row.iter().enumerate() {
                entries.push((i, j, v));
            }
        }
        Self::from_triplets(n_rows, n_cols, entries)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[u32], &[u64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&(c as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0,
        }
    }

    /// Iterates stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c as usize, v))
        })
    }

    pub fn total(&self) -> u128 {
        self.values.iter().map(|&v| v as u128).sum()
    }

    pub fn sum_f64(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    pub fn transpose(&self) -> SparseCountMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![0u64; self.nnz()];
        for (r, c, v) in self.iter() {
            let slot = next[c];
            indices[slot] = r as u32;
            values[slot] = v;
            next[c] += 1;
        }
        SparseCountMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            indptr,
            indices,
            values,
        }
    }

    /// Column sums as floats.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n_cols];
        for (c, &v) in self.indices.iter().zip(&self.values) {
            s[*c as usize] += v as f64;
        }
        s
    }

    /// `self·x` for a dense `n_cols × p` matrix.
    pub fn mul_dense(&self, x: &Dense) -> Result<Dense> {
        if x.rows() != self.n_cols {
            return Err(KgError::Shape(format!(
                "cannot multiply sparse {}x{} by {}x{}",
                self.n_rows,
                self.n_cols,
                x.rows(),
                x.cols()
            )));
        }
        let p = x.cols();
        let mut out = Dense::zeros(self.n_rows, p);
        if p == 0 {
            return Ok(out);
        }
        out.as_mut_slice()
            .par_chunks_mut(p)
            .enumerate()
            .for_each(|(r, orow)| {
                let (cols, vals) = self.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    let v = v as f64;
                    for (o, &xv) in orow.iter_mut().zip(x.row(c as usize)) {
                        *o += v * xv;
                    }
                }
            });
        Ok(out)
    }

    /// `selfᵀ·x` for a dense `n_rows × p` matrix.
    pub fn t_mul_dense(&self, x: &Dense) -> Result<Dense> {
        if x.rows() != self.n_rows {
            return Err(KgError::Shape(format!(
                "cannot multiply sparse ({}x{})ᵀ by {}x{}",
                self.n_rows,
                self.n_cols,
                x.rows(),
                x.cols()
            )));
        }
        let mut out = Dense::zeros(self.n_cols, x.cols());
        for (r, c, v) in self.iter() {
            let v = v as f64;
            let xr = x.row(r);
            for (o, &xv) in out.row_mut(c).iter_mut().zip(xr) {
                *o += v * xv;
            }
        }
        Ok(out)
    }

    /// Dense copy, for small matrices and tests.
    pub fn to_dense(&self) -> Vec<Vec<u64>> {
        let mut d = vec![vec![0u64; self.n_cols]; self.n_rows];
        for (r, c, v) in self.iter() {
            d[r][c] = v;
        }
        d
    }

    /// Coordinate text dump: `row<TAB>col<TAB>value`, row-major.
    pub fn write_coo(&self, mut out: impl Write) -> std::io::Result<()> {
        for (r, c, v) in self.iter() {
            writeln!(out, "{r}\t{c}\t{v}")?;
        }
        Ok(())
    }
}

/// `A[i][j]` = number of training triples with head `i` and relation `j`.
pub fn build_head_relation(g: &KnowledgeGraph) -> SparseCountMatrix {
    let entries = g
        .train()
        .iter()
        .map(|t| (t.head.index(), t.relation.index(), 1))
        .collect();
    SparseCountMatrix::from_triplets(g.num_entities(), g.num_relations(), entries)
        .expect("graph ids are in range")
}

/// `B[i][j]` = number of training triples with tail `i` and relation `j`.
pub fn build_tail_relation(g: &KnowledgeGraph) -> SparseCountMatrix {
    let entries = g
        .train()
        .iter()
        .map(|t| (t.tail.index(), t.relation.index(), 1))
        .collect();
    SparseCountMatrix::from_triplets(g.num_entities(), g.num_relations(), entries)
        .expect("graph ids are in range")
}

/// Sparse product `C = A·Bᵀ`, so `C[h][t] = Σ_r A[h][r]·B[t][r]`.
pub fn build_affinity(a: &SparseCountMatrix, b: &SparseCountMatrix) -> Result<SparseCountMatrix> {
    if a.shape() != b.shape() {
        return Err(KgError::Shape(format!(
            "A is {}x{} but B is {}x{}",
            a.n_rows, a.n_cols, b.n_rows, b.n_cols
        )));
    }
    let bt = b.transpose();
    let n = a.n_rows;
    let rows: Vec<Result<(Vec<u32>, Vec<u64>)>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0u128; b.n_rows], Vec::<u32>::new()),
            |(acc, touched), h| {
                let (rels, counts) = a.row(h);
                for (&r, &av) in rels.iter().zip(counts) {
                    let (tails, bvals) = bt.row(r as usize);
                    for (&t, &bv) in tails.iter().zip(bvals) {
                        let slot = &mut acc[t as usize];
                        if *slot == 0 {
                            touched.push(t);
                        }
                        *slot += av as u128 * bv as u128;
                    }
                }
                touched.sort_unstable();
                let mut vals = Vec::with_capacity(touched.len());
                for &t in touched.iter() {
                    let v = std::mem::take(&mut acc[t as usize]);
                    vals.push(u64::try_from(v).map_err(|_| {
                        KgError::InvalidParam(format!("affinity entry ({h}, {t}) overflows u64"))
                    })?);
                }
                let cols = std::mem::take(touched);
                Ok((cols, vals))
            },
        )
        .collect();
    let mut indptr = Vec::with_capacity(n + 1);
    indptr.push(0);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for row in rows {
        let (c, v) = row?;
        indices.extend(c);
        values.extend(v);
        indptr.push(indices.len());
    }
    Ok(SparseCountMatrix {
        n_rows: n,
        n_cols: b.n_rows,
        indptr,
        indices,
        values,
    })
}

/// Normalized elementwise product of `A[h]` and `B[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationDistribution {
    probs: Vec<f64>,
    support: Vec<(u32, u128)>,
}

impl RelationDistribution {
    /// True when `A[h]·B[t]` has no positive entry.
    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Relations with positive weight, with their unnormalized weights.
    pub fn support(&self) -> &[(u32, u128)] {
        &self.support
    }

    pub fn total_weight(&self) -> u128 {
        self.support.iter().map(|&(_, w)| w).sum()
    }
}

/// Unnormalized `d[r] = A[h][r]·B[t][r]` over relations where both are
/// positive, as a sorted sparse list.
pub(crate) fn relation_weights(
    a: &SparseCountMatrix,
    b: &SparseCountMatrix,
    h: usize,
    t: usize,
    out: &mut Vec<(u32, u128)>,
) {
    out.clear();
    let (ac, av) = a.row(h);
    let (bc, bv) = b.row(t);
    let (mut i, mut j) = (0, 0);
    while i < ac.len() && j < bc.len() {
        match ac[i].cmp(&bc[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push((ac[i], av[i] as u128 * bv[j] as u128));
                i += 1;
                j += 1;
            }
        }
    }
}

pub fn relation_distribution(
    a: &SparseCountMatrix,
    b: &SparseCountMatrix,
    h: EntityId,
    t: EntityId,
) -> Result<RelationDistribution> {
    if h == t {
        return Err(KgError::SelfLoop(h.index()));
    }
    if a.shape() != b.shape() {
        return Err(KgError::Shape("A and B differ in shape".into()));
    }
    let mut support = Vec::new();
    relation_weights(a, b, h.index(), t.index(), &mut support);
    let mut probs = vec![0.0; a.n_cols];
    let total: u128 = support.iter().map(|&(_, w)| w).sum();
    if total > 0 {
        for &(r, w) in &support {
            probs[r as usize] = w as f64 / total as f64;
        }
    }
    Ok(RelationDistribution { probs, support })
}
