//! Negative-sampling baseline with the same square loss as the non-sampling
//! trainer, restricted to positives plus uniformly corrupted negatives.

use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AdjacencyIndex, Dataset, Triple};
use crate::linalg::{adam_step, AdamState, DenseMatrix};
use crate::models::{accumulate_score_gradient, project_unit_norm, score_unchecked, ModelKind, ParameterSet};
use crate::train::{EpochRecord, TrainConfig, TrainError, TrainHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub negatives_per_positive: usize,
    pub batch_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            negatives_per_positive: 25,
            batch_size: 4000,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.negatives_per_positive < 1 {
            return Err(TrainError::Config("negatives_per_positive must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which entity of a triple a corruption replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Head,
    Tail,
}

fn corrupt(t: Triple, side: Side, entity: usize) -> Triple {
    match side {
        Side::Head => Triple::new(entity, t.relation, t.tail),
        Side::Tail => Triple::new(t.head, t.relation, entity),
    }
}

fn saturated(t: Triple, side: Side, index: &AdjacencyIndex, entity_count: usize) -> bool {
    let known = match side {
        Side::Head => index.heads(t.tail, t.relation).len(),
        Side::Tail => index.tails(t.head, t.relation).len(),
    };
    known >= entity_count
}

/// All corruptions of `t` on one side that are absent from `index`.
pub fn legal_corruptions(t: Triple, side: Side, index: &AdjacencyIndex, entity_count: usize) -> Vec<Triple> {
    (0..entity_count)
        .map(|e| corrupt(t, side, e))
        .filter(|c| !index.contains(*c))
        .collect()
}

/// Draws `k` corruptions of `triple`: a fair coin picks the side, then an
/// entity is drawn uniformly among those giving a triple outside `index`.
/// A saturated side falls back to the other one; if both are saturated the
/// triple is skipped and an empty list returned.
pub fn sample_negatives<R: Rng>(
    triple: Triple,
    k: usize,
    index: &AdjacencyIndex,
    entity_count: usize,
    rng: &mut R,
) -> Vec<Triple> {
    let head_full = saturated(triple, Side::Head, index, entity_count);
    let tail_full = saturated(triple, Side::Tail, index, entity_count);
    if head_full && tail_full {
        warn!("triple {triple} has no legal corruption; skipped");
        return Vec::new();
    }
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let mut side = if rng.gen_bool(0.5) { Side::Head } else { Side::Tail };
        if side == Side::Head && head_full {
            side = Side::Tail;
        } else if side == Side::Tail && tail_full {
            side = Side::Head;
        }
        loop {
            let candidate = corrupt(triple, side, rng.gen_range(0..entity_count));
            if !index.contains(candidate) {
                out.push(candidate);
                break;
            }
        }
    }
    out
}

/// `Σ_pos c⁺(1 − f̂)² + Σ_neg c⁻ f̂²`.
pub fn sampled_loss(params: &ParameterSet, positives: &[Triple], negatives: &[Triple], c_pos: f64, c_neg: f64) -> f64 {
    let pos: f64 = positives
        .iter()
        .map(|&t| {
            let f = score_unchecked(params, t);
            c_pos * (1.0 - f) * (1.0 - f)
        })
        .sum();
    let neg: f64 = negatives
        .iter()
        .map(|&t| {
            let f = score_unchecked(params, t);
            c_neg * f * f
        })
        .sum();
    pos + neg
}

/// Mini-batch sampled training state, advanced one epoch at a time.
pub struct SampledTrainer<'a> {
    config: TrainConfig,
    sampler: SamplerConfig,
    dataset: &'a Dataset,
    index: AdjacencyIndex,
    params: ParameterSet,
    states: Vec<AdamState>,
    grads: Vec<DenseMatrix>,
    rng: ChaCha8Rng,
    order: Vec<Triple>,
    epoch: usize,
    history: TrainHistory,
}

impl<'a> SampledTrainer<'a> {
    pub fn new(config: &TrainConfig, sampler: &SamplerConfig, dataset: &'a Dataset) -> Result<Self, TrainError> {
        config.validate()?;
        sampler.validate()?;
        if dataset.entity_count == 0 || dataset.relation_count == 0 {
            return Err(TrainError::Data("dataset has no entities or relations".into()));
        }
        let params = ParameterSet::random(
            config.kind,
            dataset.entity_count,
            dataset.relation_count,
            config.dim,
            config.seed,
        );
        let states = params.tables().iter().map(AdamState::for_table).collect();
        let grads = params.zeros_like();
        Ok(Self {
            config: config.clone(),
            sampler: *sampler,
            dataset,
            index: AdjacencyIndex::build(dataset.train.iter().copied()),
            params,
            states,
            grads,
            // Separate stream from initialisation.
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5a3f_1e5b_0001),
            order: dataset.train.clone(),
            epoch: 0,
            history: TrainHistory::default(),
        })
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    fn current_lr(&self) -> f64 {
        if self.epoch >= self.config.decay_epoch() {
            self.config.lr * self.config.lr_decay
        } else {
            self.config.lr
        }
    }

    /// One pass over the shuffled positives in batches, resampling
    /// negatives for every batch.
    pub fn step(&mut self) -> Result<&EpochRecord, TrainError> {
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let (c_pos, c_neg) = (self.config.c_pos, self.config.c_neg);
        let l2 = self.config.effective_l2();
        let lr = self.current_lr();
        let k = self.sampler.negatives_per_positive;
        self.order.shuffle(&mut self.rng);

        let mut pos_loss = 0.0;
        let mut neg_loss = 0.0;
        let mut regularization = 0.0;
        let mut batch_start = 0;
        while batch_start < self.order.len() {
            let batch_end = (batch_start + self.sampler.batch_size).min(self.order.len());
            self.grads.iter_mut().for_each(|g| g.fill(0.0));
            for &t in &self.order[batch_start..batch_end] {
                let f = score_unchecked(&self.params, t);
                pos_loss += c_pos * (1.0 - f) * (1.0 - f);
                accumulate_score_gradient(&self.params, t, -2.0 * c_pos * (1.0 - f), &mut self.grads);
                for n in sample_negatives(t, k, &self.index, self.dataset.entity_count, &mut self.rng) {
                    let f = score_unchecked(&self.params, n);
                    neg_loss += c_neg * f * f;
                    accumulate_score_gradient(&self.params, n, 2.0 * c_neg * f, &mut self.grads);
                }
            }
            if l2 > 0.0 {
                regularization += l2 * self.params.squared_norm();
                for (g, t) in self.grads.iter_mut().zip(self.params.tables()) {
                    g.add_scaled(t, 2.0 * l2)?;
                }
            }
            let total = pos_loss + neg_loss + regularization;
            if !total.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    term: "sampled batch loss".into(),
                    max_abs_param: self.params.max_abs(),
                    history: self.history.clone(),
                });
            }
            let roles = self.params.roles();
            for (((table, grad), state), role) in self
                .params
                .tables_mut()
                .iter_mut()
                .zip(&self.grads)
                .zip(&mut self.states)
                .zip(roles)
            {
                adam_step(role.name(), table, grad, state, lr, &self.config.adam)?;
            }
            if self.config.kind == ModelKind::TransE {
                project_unit_norm(&mut self.params)?;
            }
            batch_start = batch_end;
        }
        self.epoch = epoch;
        self.history.records.push(EpochRecord {
            epoch,
            loss: pos_loss + neg_loss + regularization,
            lp: pos_loss,
            la: neg_loss,
            regularization,
            constant: 0.0,
            seconds: start.elapsed().as_secs_f64(),
            param_norms: self.params.tables().iter().map(|t| t.squared_norm().sqrt()).collect(),
        });
        Ok(self.history.records.last().expect("just pushed"))
    }

    pub fn finish(self) -> (ParameterSet, TrainHistory) {
        (self.params, self.history)
    }
}

/// Runs `config.epochs` sampled epochs. History columns `lp`/`la` hold the
/// positive and sampled-negative parts of the loss.
pub fn train_sampled(
    config: &TrainConfig,
    sampler: &SamplerConfig,
    dataset: &Dataset,
) -> Result<(ParameterSet, TrainHistory), TrainError> {
    let mut trainer = SampledTrainer::new(config, sampler, dataset)?;
    for _ in 0..config.epochs {
        trainer.step()?;
    }
    Ok(trainer.finish())
}
