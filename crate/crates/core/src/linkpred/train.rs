use std::io::Write;

use rand::seq::SliceRandom;

use super::model::{EmbeddingModel, NormOrder, ScoreGrad, Variant};
use super::negative::negative_sample;
use super::schedule::schedule_size;
use crate::augment::AugmentedSet;
use crate::error::{KgError, Result};
use crate::eval::{evaluate, RankMode};
use crate::graph::{KnowledgeGraph, Triple};
use crate::linalg::Dense;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub exponent_k: u32,
    pub dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub negatives: usize,
    pub norm: NormOrder,
    pub seed: u64,
    /// Evaluate raw MRR on the validation split every this many epochs.
    pub eval_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            exponent_k: 2,
            dim: 100,
            batch_size: 128,
            learning_rate: 0.01,
            margin: 2.0,
            negatives: 4,
            norm: NormOrder::L1,
            seed: 0,
            eval_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("exponent_k", self.exponent_k as usize),
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(KgError::InvalidParam(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(KgError::InvalidParam("learning rate must be positive".into()));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(KgError::InvalidParam("margin must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub augmented: Vec<usize>,
    pub val_mrr: Vec<Option<f64>>,
}

impl TrainHistory {
    /// CSV `epoch,loss,r_e,val_mrr`; epochs are 1-based and a missing
    /// validation score is left empty.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,loss,r_e,val_mrr")?;
        for (i, loss) in self.loss.iter().enumerate() {
            let mrr = self.val_mrr[i].map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", i + 1, loss, self.augmented[i], mrr)?;
        }
        Ok(())
    }
}

/// Sparse gradient accumulator over table rows.
struct RowGrad {
    width: usize,
    data: Vec<f64>,
    touched: Vec<usize>,
    mark: Vec<bool>,
}

impl RowGrad {
    fn new(rows: usize, width: usize) -> Self {
        RowGrad {
            width,
            data: vec![0.0; rows * width],
            touched: Vec::new(),
            mark: vec![false; rows],
        }
    }

    fn add(&mut self, row: usize, scale: f64, g: &[f64]) {
        if !self.mark[row] {
            self.mark[row] = true;
            self.touched.push(row);
        }
        let slot = &mut self.data[row * self.width..(row + 1) * self.width];
        for (s, v) in slot.iter_mut().zip(g) {
            *s += scale * v;
        }
    }

    /// Applies `row −= lr·grad` to every touched row of `table` and clears
    /// the buffer, returning the touched rows in first-touch order.
    fn descend(&mut self, lr: f64, table: &mut Dense) -> Vec<usize> {
        for &r in &self.touched {
            let slot = &mut self.data[r * self.width..(r + 1) * self.width];
            for (t, g) in table.row_mut(r).iter_mut().zip(slot.iter_mut()) {
                *t -= lr * *g;
                *g = 0.0;
            }
            self.mark[r] = false;
        }
        std::mem::take(&mut self.touched)
    }
}

/// Trains a link predictor on `train ∪ prefix(S, r(e))` at each epoch `e`,
/// with `r(e) = ⌊(e/E)^k·|S|⌋`.
///
/// Every positive in the epoch's set is paired with `negatives` corruptions
/// and contributes `Σ max(0, γ − f(pos) + f(neg))`. Gradients are summed over
/// a mini-batch and applied by plain SGD; TransE entity rows touched by a
/// batch are rescaled to unit length afterwards. The batch order is a seeded
/// shuffle, so runs are reproducible.
pub fn train(
    g: &KnowledgeGraph,
    augmented: &AugmentedSet,
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<(EmbeddingModel, TrainHistory)> {
    cfg.validate()?;
    let mut order_rng = stream_rng(cfg.seed, Stream::Trainer);
    let mut neg_rng = stream_rng(cfg.seed, Stream::Negatives);
    let mut model = EmbeddingModel::new(
        variant,
        g.num_entities(),
        g.num_relations(),
        cfg.dim,
        cfg.norm,
        &mut order_rng,
    )?;
    let mut ent_grad = RowGrad::new(model.n_entities(), model.entity_width());
    let mut rel_grad = RowGrad::new(model.n_relations(), model.dim());
    let mut pos_grad = ScoreGrad::default();
    let mut neg_grad = ScoreGrad::default();
    let mut history = TrainHistory::default();
    let n_entities = g.num_entities();

    for epoch in 1..=cfg.epochs {
        let r_e = schedule_size(epoch, cfg.epochs, cfg.exponent_k, augmented.len())?;
        let mut active: Vec<Triple> = g.train().to_vec();
        active.extend_from_slice(augmented.prefix(r_e));
        active.shuffle(&mut order_rng);

        let mut epoch_loss = 0.0;
        for (batch_no, batch) in active.chunks(cfg.batch_size).enumerate() {
            let mut batch_loss = 0.0;
            for pos in batch {
                let (ph, pr, pt) = (pos.head.index(), pos.relation.index(), pos.tail.index());
                let pos_score = model.score_with_grad(ph, pr, pt, &mut pos_grad);
                for neg in negative_sample(n_entities, pos, &mut neg_rng, cfg.negatives) {
                    let (nh, nr, nt) = (neg.head.index(), neg.relation.index(), neg.tail.index());
                    let neg_score = model.score_with_grad(nh, nr, nt, &mut neg_grad);
                    let violation = cfg.margin - pos_score + neg_score;
                    if violation <= 0.0 {
                        continue;
                    }
                    batch_loss += violation;
                    // d/dθ [γ − f(pos) + f(neg)]
                    ent_grad.add(ph, -1.0, &pos_grad.head);
                    ent_grad.add(pt, -1.0, &pos_grad.tail);
                    rel_grad.add(pr, -1.0, &pos_grad.relation);
                    ent_grad.add(nh, 1.0, &neg_grad.head);
                    ent_grad.add(nt, 1.0, &neg_grad.tail);
                    rel_grad.add(nr, 1.0, &neg_grad.relation);
                }
            }
            if !batch_loss.is_finite() {
                return Err(KgError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;
            let lr = cfg.learning_rate;
            let touched = ent_grad.descend(lr, model.entity_table_mut());
            rel_grad.descend(lr, model.relation_table_mut());
            if variant == Variant::TransE {
                for e in touched {
                    model.normalize_entity(e);
                }
            }
        }
        if !model.all_finite() {
            return Err(KgError::NonFiniteLoss {
                epoch,
                batch: 0,
                loss: f64::NAN,
            });
        }
        history.loss.push(epoch_loss);
        history.augmented.push(r_e);
        let val = match cfg.eval_every {
            Some(every) if every > 0 && epoch % every == 0 && !g.valid().is_empty() => {
                Some(evaluate(&model, g.valid(), RankMode::Raw, g)?.mrr)
            }
            _ => None,
        };
        history.val_mrr.push(val);
    }
    Ok((model, history))
}
