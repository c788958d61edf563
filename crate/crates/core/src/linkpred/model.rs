use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{KgError, Result};
use crate::graph::Triple;
use crate::linalg::Dense;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    TransE,
    RotatE,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::TransE => "transe",
            Variant::RotatE => "rotate",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(Variant::TransE),
            "rotate" => Ok(Variant::RotatE),
            other => Err(KgError::InvalidParam(format!("unknown model {other:?}"))),
        }
    }
}

/// Norm used by the TransE distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormOrder {
    #[default]
    L1,
    L2,
}

impl std::str::FromStr for NormOrder {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "l1" | "L1" => Ok(NormOrder::L1),
            "2" | "l2" | "L2" => Ok(NormOrder::L2),
            other => Err(KgError::InvalidParam(format!("norm order must be 1 or 2, got {other:?}"))),
        }
    }
}

/// Gradient of the score with respect to the head row, relation row and
/// tail row of one triple.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreGrad {
    pub head: Vec<f64>,
    pub relation: Vec<f64>,
    pub tail: Vec<f64>,
}

impl ScoreGrad {
    fn reset(&mut self, entity_width: usize, relation_width: usize) {
        for (v, n) in [
            (&mut self.head, entity_width),
            (&mut self.relation, relation_width),
            (&mut self.tail, entity_width),
        ] {
            v.clear();
            v.resize(n, 0.0);
        }
    }
}

/// Entity and relation tables.
///
/// TransE rows are real `d`-vectors. A RotatE entity row stores `d` real
/// parts followed by `d` imaginary parts, and a RotatE relation row stores
/// `d` phases `θ`, so the relation is `e^{iθ}` with modulus exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    variant: Variant,
    norm: NormOrder,
    dim: usize,
    entity: Dense,
    relation: Dense,
}

impl EmbeddingModel {
    /// Random initialization. TransE rows are uniform on `±6/√d` and then
    /// scaled to unit length; RotatE entity parts are uniform on `±1/√d`
    /// and phases uniform on `[−π, π)`.
    pub fn new(
        variant: Variant,
        n_entities: usize,
        n_relations: usize,
        dim: usize,
        norm: NormOrder,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(KgError::InvalidParam("embedding dimension must be at least 1".into()));
        }
        let mut model = match variant {
            Variant::TransE => {
                let bound = 6.0 / (dim as f64).sqrt();
                let entity = Dense::from_fn(n_entities, dim, |_, _| rng.gen_range(-bound..bound));
                let relation = Dense::from_fn(n_relations, dim, |_, _| rng.gen_range(-bound..bound));
                EmbeddingModel { variant, norm, dim, entity, relation }
            }
            Variant::RotatE => {
                let bound = 1.0 / (dim as f64).sqrt();
                let entity = Dense::from_fn(n_entities, 2 * dim, |_, _| rng.gen_range(-bound..bound));
                let pi = std::f64::consts::PI;
                let relation = Dense::from_fn(n_relations, dim, |_, _| rng.gen_range(-pi..pi));
                EmbeddingModel { variant, norm, dim, entity, relation }
            }
        };
        if variant == Variant::TransE {
            for e in 0..n_entities {
                model.normalize_entity(e);
            }
            for r in 0..n_relations {
                normalize(model.relation.row_mut(r));
            }
        }
        Ok(model)
    }

    /// Builds a model from explicit tables. `entity` must be `|E|×d` for
    /// TransE or `|E|×2d` for RotatE; `relation` is `|R|×d` either way.
    pub fn from_parts(variant: Variant, norm: NormOrder, entity: Dense, relation: Dense) -> Result<Self> {
        let dim = relation.cols();
        let expected = match variant {
            Variant::TransE => dim,
            Variant::RotatE => 2 * dim,
        };
        if entity.cols() != expected || dim == 0 {
            return Err(KgError::Shape(format!(
                "{} needs entity width {expected} for relation width {dim}, got {}",
                variant.name(),
                entity.cols()
            )));
        }
        Ok(EmbeddingModel { variant, norm, dim, entity, relation })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn norm(&self) -> NormOrder {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_entities(&self) -> usize {
        self.entity.rows()
    }

    pub fn n_relations(&self) -> usize {
        self.relation.rows()
    }

    pub fn entity_row(&self, e: usize) -> &[f64] {
        self.entity.row(e)
    }

    pub fn entity_row_mut(&mut self, e: usize) -> &mut [f64] {
        self.entity.row_mut(e)
    }

    pub fn relation_row(&self, r: usize) -> &[f64] {
        self.relation.row(r)
    }

    pub fn relation_row_mut(&mut self, r: usize) -> &mut [f64] {
        self.relation.row_mut(r)
    }

    pub fn entity_width(&self) -> usize {
        self.entity.cols()
    }

    pub(crate) fn entity_table_mut(&mut self) -> &mut Dense {
        &mut self.entity
    }

    pub(crate) fn relation_table_mut(&mut self) -> &mut Dense {
        &mut self.relation
    }

    pub(crate) fn normalize_entity(&mut self, e: usize) {
        normalize(self.entity.row_mut(e));
    }

    pub fn all_finite(&self) -> bool {
        self.entity.as_slice().iter().chain(self.relation.as_slice()).all(|v| v.is_finite())
    }

    /// `−‖h + r − t‖` under the configured norm.
    pub fn score_transe(&self, h: usize, r: usize, t: usize) -> Result<f64> {
        self.expect(Variant::TransE)?;
        Ok(transe(self.norm, self.entity.row(h), self.relation.row(r), self.entity.row(t), None))
    }

    /// `−‖h ∘ r − t‖²` with `r = e^{iθ}` componentwise.
    pub fn score_rotate(&self, h: usize, r: usize, t: usize) -> Result<f64> {
        self.expect(Variant::RotatE)?;
        Ok(rotate(self.entity.row(h), self.relation.row(r), self.entity.row(t), None))
    }

    fn expect(&self, want: Variant) -> Result<()> {
        if self.variant != want {
            return Err(KgError::WrongVariant {
                expected: want.name(),
                found: self.variant.name(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn score(&self, h: usize, r: usize, t: usize) -> f64 {
        let (hr, rr, tr) = (self.entity.row(h), self.relation.row(r), self.entity.row(t));
        match self.variant {
            Variant::TransE => transe(self.norm, hr, rr, tr, None),
            Variant::RotatE => rotate(hr, rr, tr, None),
        }
    }

    pub fn score_triple(&self, t: &Triple) -> f64 {
        self.score(t.head.index(), t.relation.index(), t.tail.index())
    }

    /// Score and its gradient with respect to the three rows involved.
    pub fn score_with_grad(&self, h: usize, r: usize, t: usize, grad: &mut ScoreGrad) -> f64 {
        grad.reset(self.entity.cols(), self.relation.cols());
        let (hr, rr, tr) = (self.entity.row(h), self.relation.row(r), self.entity.row(t));
        match self.variant {
            Variant::TransE => transe(self.norm, hr, rr, tr, Some(grad)),
            Variant::RotatE => rotate(hr, rr, tr, Some(grad)),
        }
    }

    /// Checkpoint: a header `variant n_entities n_relations dim norm`, then
    /// entity rows, then relation rows, space-separated.
    pub fn write_checkpoint(&self, mut out: impl Write) -> std::io::Result<()> {
        let norm = match self.norm {
            NormOrder::L1 => 1,
            NormOrder::L2 => 2,
        };
        writeln!(
            out,
            "{} {} {} {} {}",
            self.variant.name(),
            self.n_entities(),
            self.n_relations(),
            self.dim,
            norm
        )?;
        for m in [&self.entity, &self.relation] {
            for i in 0..m.rows() {
                let line: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(input: impl BufRead) -> Result<Self> {
        let bad = |detail: String| KgError::Format { what: "model checkpoint", detail };
        let mut lines = input.lines();
        let mut next_line = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file".into()))?
                .map_err(|e| bad(e.to_string()))
        };
        let header = next_line()?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(bad(format!("header {header:?}")));
        }
        let variant: Variant = fields[0].parse()?;
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("header field {s:?}")));
        let (n_e, n_r, dim) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        let norm: NormOrder = fields[4].parse()?;
        let width = match variant {
            Variant::TransE => dim,
            Variant::RotatE => 2 * dim,
        };
        let mut read_table = |rows: usize, cols: usize| -> Result<Dense> {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let line = next_line()?;
                let before = data.len();
                for tok in line.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|_| bad(format!("value {tok:?}")))?);
                }
                if data.len() - before != cols {
                    return Err(bad(format!("expected {cols} values per row")));
                }
            }
            Dense::from_vec(rows, cols, data)
        };
        let entity = read_table(n_e, width)?;
        let relation = read_table(n_r, dim)?;
        EmbeddingModel::from_parts(variant, norm, entity, relation)
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn transe(norm: NormOrder, h: &[f64], r: &[f64], t: &[f64], grad: Option<&mut ScoreGrad>) -> f64 {
    let dist = match norm {
        NormOrder::L1 => h.iter().zip(r).zip(t).map(|((h, r), t)| (h + r - t).abs()).sum::<f64>(),
        NormOrder::L2 => h
            .iter()
            .zip(r)
            .zip(t)
            .map(|((h, r), t)| (h + r - t) * (h + r - t))
            .sum::<f64>()
            .sqrt(),
    };
    if let Some(g) = grad {
        // ∂score/∂h = ∂score/∂r = −∂dist/∂u, ∂score/∂t = +∂dist/∂u, u = h + r − t
        for i in 0..h.len() {
            let u = h[i] + r[i] - t[i];
            let du = match norm {
                NormOrder::L1 => {
                    if u > 0.0 {
                        1.0
                    } else if u < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                NormOrder::L2 => {
                    if dist > 0.0 {
                        u / dist
                    } else {
                        0.0
                    }
                }
            };
            g.head[i] = -du;
            g.relation[i] = -du;
            g.tail[i] = du;
        }
    }
    -dist
}

fn rotate(h: &[f64], theta: &[f64], t: &[f64], mut grad: Option<&mut ScoreGrad>) -> f64 {
    let d = theta.len();
    let (h_re, h_im) = h.split_at(d);
    let (t_re, t_im) = t.split_at(d);
    let mut dist = 0.0;
    for i in 0..d {
        let (s, c) = theta[i].sin_cos();
        let (a, b) = (h_re[i], h_im[i]);
        let u_re = a * c - b * s - t_re[i];
        let u_im = a * s + b * c - t_im[i];
        dist += u_re * u_re + u_im * u_im;
        if let Some(g) = grad.as_deref_mut() {
            g.head[i] = -2.0 * (u_re * c + u_im * s);
            g.head[d + i] = -2.0 * (-u_re * s + u_im * c);
            g.tail[i] = 2.0 * u_re;
            g.tail[d + i] = 2.0 * u_im;
            // ∂(h∘r)/∂θ = i·(h∘r)
            g.relation[i] = -2.0 * (u_re * (-a * s - b * c) + u_im * (a * c - b * s));
        }
    }
    -dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn transe_model(entity: &[&[f64]], relation: &[&[f64]], norm: NormOrder) -> EmbeddingModel {
        let d = relation[0].len();
        EmbeddingModel::from_parts(
            Variant::TransE,
            norm,
            Dense::from_fn(entity.len(), d, |i, j| entity[i][j]),
            Dense::from_fn(relation.len(), d, |i, j| relation[i][j]),
        )
        .unwrap()
    }

    #[test]
    fn transe_exact_translation_scores_zero() {
        let m = transe_model(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0]], &[&[0.0, 0.0], &[0.0, 1.0]], NormOrder::L1);
        assert_eq!(m.score_transe(0, 0, 0).unwrap(), 0.0);
        assert_eq!(m.score_transe(1, 1, 2).unwrap(), 0.0);
        assert_eq!(m.score_transe(0, 1, 2).unwrap(), -1.0);
        let m2 = transe_model(&[&[0.0, 0.0], &[3.0, 4.0]], &[&[0.0, 0.0]], NormOrder::L2);
        assert_eq!(m2.score_transe(0, 0, 1).unwrap(), -5.0);
    }

    #[test]
    fn rotate_identity_and_half_turn() {
        let ident = EmbeddingModel::from_parts(
            Variant::RotatE,
            NormOrder::L1,
            Dense::from_vec(1, 4, vec![0.3, -1.2, 0.5, 2.0]).unwrap(),
            Dense::from_vec(1, 2, vec![0.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(ident.score_rotate(0, 0, 0).unwrap(), 0.0);

        let half = EmbeddingModel::from_parts(
            Variant::RotatE,
            NormOrder::L1,
            Dense::from_vec(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap(),
            Dense::from_vec(1, 1, vec![PI]).unwrap(),
        )
        .unwrap();
        assert!(half.score_rotate(0, 0, 1).unwrap().abs() < 1e-24);
    }

    #[test]
    fn wrong_variant_is_rejected() {
        let m = transe_model(&[&[0.0], &[1.0]], &[&[1.0]], NormOrder::L1);
        assert!(matches!(m.score_rotate(0, 0, 1), Err(KgError::WrongVariant { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for variant in [Variant::TransE, Variant::RotatE] {
            let m = EmbeddingModel::new(variant, 4, 2, 3, NormOrder::L2, &mut rng).unwrap();
            let mut buf = Vec::new();
            m.write_checkpoint(&mut buf).unwrap();
            let back = EmbeddingModel::read_checkpoint(&buf[..]).unwrap();
            assert_eq!(back, m);
        }
        assert!(EmbeddingModel::read_checkpoint(&b"transe 1 1 2 1\n0.5\n"[..]).is_err());
    }

    #[test]
    fn transe_init_has_unit_entities() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = EmbeddingModel::new(Variant::TransE, 5, 2, 8, NormOrder::L1, &mut rng).unwrap();
        for e in 0..5 {
            let n: f64 = m.entity_row(e).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
