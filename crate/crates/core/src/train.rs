//! Non-sampling trainer.
//!
//! The loss over every `(h, r, t)` splits into a sum over training triples
//! (`lp`), a closed-form sum over all triples (`la`) evaluated from `d×d`
//! Gram matrices, and a constant `c⁺·|train|` that is reported but never
//! differentiated.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Triple};
use crate::linalg::{
    accumulate_product, adam_step, column_sums, cross_gram, cross_gram_par, hadamard_product, hadamard_sum,
    outer, AdamConfig, AdamState, DenseMatrix, LinalgError,
};
use crate::models::{
    accumulate_score_gradient, project_unit_norm, score_unchecked, square_terms, Factor, IndexSet, ModelError,
    ModelKind, ParameterSet, Role, TermSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Multiplies the learning rate once, after epoch `⌈epochs/2⌉`.
    pub lr_decay: f64,
    pub c_pos: f64,
    pub c_neg: f64,
    pub l2: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Sequential reductions everywhere; runs are bit-reproducible.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::DistMult,
            dim: 200,
            epochs: 2000,
            lr: 1e-4,
            lr_decay: 0.5,
            c_pos: 1.0,
            c_neg: 1e-3,
            l2: 1e-4,
            seed: 0,
            adam: AdamConfig::default(),
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if self.dim < 1 {
            return bad("dim must be at least 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(self.c_pos > 0.0 && self.c_pos.is_finite()) {
            return bad("c_pos must be positive");
        }
        if !(self.c_neg >= 0.0 && self.c_neg.is_finite()) {
            return bad("c_neg must be non-negative");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be non-negative");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam requires 0 <= beta1, beta2 < 1 and eps > 0");
        }
        Ok(())
    }

    /// The epoch after which `lr_decay` takes effect.
    pub fn decay_epoch(&self) -> usize {
        self.epochs.div_ceil(2)
    }

    /// L2 penalty weight actually applied; TransE is kept on the unit sphere
    /// by projection instead.
    pub fn effective_l2(&self) -> f64 {
        if self.kind == ModelKind::TransE {
            0.0
        } else {
            self.l2
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is not usable for training: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch} in {term} (max |param| = {max_abs_param:e})")]
    Diverged {
        epoch: usize,
        term: String,
        max_abs_param: f64,
        history: TrainHistory,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `lp + la + regularization`; the value being minimised.
    pub loss: f64,
    pub lp: f64,
    pub la: f64,
    pub regularization: f64,
    pub constant: f64,
    pub seconds: f64,
    /// Frobenius norm of each table after the update, in role order.
    pub param_norms: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,lp,la,seconds\n");
        for r in &self.records {
            s.push_str(&format!("{},{:e},{:e},{:e},{:.6}\n", r.epoch, r.loss, r.lp, r.la, r.seconds));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())
    }
}

/// Loss pieces at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lp: f64,
    pub la: f64,
    pub regularization: f64,
    pub constant: f64,
}

impl LossBreakdown {
    /// Objective minimised by the trainer.
    pub fn total(&self) -> f64 {
        self.lp + self.la + self.regularization
    }

    /// The full weighted square loss over every triple, constant included.
    pub fn square_loss(&self) -> f64 {
        self.lp + self.la + self.constant
    }
}

/// Gram matrices and column sums needed by a term list, keyed by role so
/// terms sharing a factor share the computation.
#[derive(Debug, Clone)]
pub struct GramCache {
    grams: BTreeMap<(Role, Role), DenseMatrix>,
    sums: BTreeMap<Role, Vec<f64>>,
}

impl GramCache {
    pub fn build(params: &ParameterSet, terms: &[TermSpec], parallel: bool) -> Result<Self, LinalgError> {
        let mut grams: BTreeMap<(Role, Role), DenseMatrix> = BTreeMap::new();
        let mut sums = BTreeMap::new();
        for term in terms {
            for factor in &term.factors {
                match *factor {
                    Factor::Gram { a, b, .. } => {
                        if grams.contains_key(&(a, b)) {
                            continue;
                        }
                        let g = match grams.get(&(b, a)) {
                            Some(t) => t.transpose(),
                            None if parallel => cross_gram_par(params.table(a), params.table(b))?,
                            None => cross_gram(params.table(a), params.table(b))?,
                        };
                        grams.insert((a, b), g);
                    }
                    Factor::MomentOuter { a, b, .. } => {
                        for role in [a, b] {
                            if !sums.contains_key(&role) {
                                sums.insert(role, column_sums(params.table(role))?);
                            }
                        }
                    }
                    Factor::Count(_) => {}
                }
            }
        }
        Ok(Self { grams, sums })
    }

    pub fn gram(&self, a: Role, b: Role) -> Option<&DenseMatrix> {
        self.grams.get(&(a, b))
    }

    pub fn sums(&self, role: Role) -> Option<&[f64]> {
        self.sums.get(&role).map(Vec::as_slice)
    }

    pub fn gram_count(&self) -> usize {
        self.grams.len()
    }
}

fn set_size(params: &ParameterSet, set: IndexSet) -> usize {
    match set {
        IndexSet::Head | IndexSet::Tail => params.entity_count(),
        IndexSet::Relation => params.relation_count(),
    }
}

fn factor_matrix(params: &ParameterSet, cache: &GramCache, factor: &Factor) -> DenseMatrix {
    let d = params.dim();
    match *factor {
        Factor::Gram { a, b, .. } => cache.gram(a, b).expect("cache built from these terms").clone(),
        Factor::MomentOuter { a, b, .. } => outer(
            cache.sums(a).expect("cache built from these terms"),
            cache.sums(b).expect("cache built from these terms"),
        ),
        Factor::Count(set) => DenseMatrix::filled(d, d, set_size(params, set) as f64),
    }
}

/// `Σ_terms coefficient · hadamard_sum(factors)`, i.e. `Σ_{h,r,t} f̂²` when
/// `terms` is the model's expansion (TransE additionally needs unit rows).
pub fn evaluate_terms(params: &ParameterSet, terms: &[TermSpec], cache: &GramCache) -> Result<f64, LinalgError> {
    let mut total = 0.0;
    for term in terms {
        let mats: Vec<DenseMatrix> = term.factors.iter().map(|f| factor_matrix(params, cache, f)).collect();
        let refs: Vec<&DenseMatrix> = mats.iter().collect();
        total += term.coefficient * hadamard_sum(&refs)?;
    }
    Ok(total)
}

/// `c⁻ · Σ_{h,r,t} f̂²` through the Gram factorisation.
pub fn all_pairs_loss(params: &ParameterSet, c_neg: f64) -> f64 {
    all_pairs_loss_with_terms(params, &square_terms(params.kind()), c_neg)
        .expect("model term lists are shape-consistent")
}

pub fn all_pairs_loss_with_terms(params: &ParameterSet, terms: &[TermSpec], c_neg: f64) -> Result<f64, LinalgError> {
    if c_neg == 0.0 {
        return Ok(0.0);
    }
    let cache = GramCache::build(params, terms, false)?;
    Ok(c_neg * evaluate_terms(params, terms, &cache)?)
}

/// `Σ_{train} [(c⁺ − c⁻)·f̂² − 2c⁺·f̂]`.
pub fn positive_loss(params: &ParameterSet, train: &[Triple], c_pos: f64, c_neg: f64) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for &t in train {
        params.check_triple(t)?;
        let f = score_unchecked(params, t);
        total += (c_pos - c_neg) * f * f - 2.0 * c_pos * f;
    }
    Ok(total)
}

/// Adds the gradient of `scale · Σ_terms coefficient · hadamard_sum(...)`
/// into `grads`, returning the (unscaled) term sum.
fn all_pairs_gradient(
    params: &ParameterSet,
    terms: &[TermSpec],
    scale: f64,
    parallel: bool,
    grads: &mut [DenseMatrix],
) -> Result<f64, LinalgError> {
    let kind = params.kind();
    let d = params.dim();
    let cache = GramCache::build(params, terms, parallel)?;
    // Adjoints keyed by the unordered role pair (a <= b) and by role for
    // column sums.
    let mut gram_adj: BTreeMap<(Role, Role), DenseMatrix> = BTreeMap::new();
    let mut sum_adj: BTreeMap<Role, Vec<f64>> = BTreeMap::new();
    let mut value = 0.0;
    for term in terms {
        let mats: Vec<DenseMatrix> = term.factors.iter().map(|f| factor_matrix(params, &cache, f)).collect();
        let all: Vec<&DenseMatrix> = mats.iter().collect();
        value += term.coefficient * hadamard_sum(&all)?;
        if scale == 0.0 {
            continue;
        }
        for (fi, factor) in term.factors.iter().enumerate() {
            let others: Vec<&DenseMatrix> = mats
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != fi)
                .map(|(_, m)| m)
                .collect();
            let mut w = if others.is_empty() {
                DenseMatrix::filled(d, d, 1.0)
            } else {
                hadamard_product(&others)?
            };
            w.scale(scale * term.coefficient);
            match *factor {
                Factor::Gram { a, b, .. } => {
                    if a <= b {
                        let adj = gram_adj.entry((a, b)).or_insert_with(|| DenseMatrix::zeros(d, d));
                        adj.add_scaled(&w, 1.0)?;
                    } else {
                        let adj = gram_adj.entry((b, a)).or_insert_with(|| DenseMatrix::zeros(d, d));
                        adj.add_scaled(&w.transpose(), 1.0)?;
                    }
                }
                Factor::MomentOuter { a, b, .. } => {
                    let sa = cache.sums(a).expect("built");
                    let sb = cache.sums(b).expect("built");
                    // M[i][j] = sa[i]·sb[j]
                    let ga = sum_adj.entry(a).or_insert_with(|| vec![0.0; d]);
                    for i in 0..d {
                        ga[i] += (0..d).map(|j| w[(i, j)] * sb[j]).sum::<f64>();
                    }
                    let gb = sum_adj.entry(b).or_insert_with(|| vec![0.0; d]);
                    for j in 0..d {
                        gb[j] += (0..d).map(|i| w[(i, j)] * sa[i]).sum::<f64>();
                    }
                }
                Factor::Count(_) => {}
            }
        }
    }
    for ((a, b), adj) in &gram_adj {
        let (ia, ib) = (kind.role_index(*a).unwrap(), kind.role_index(*b).unwrap());
        if a == b {
            // G = XᵀX: ∂/∂X = X·(A + Aᵀ)
            let mut sym = adj.transpose();
            sym.add_scaled(adj, 1.0)?;
            accumulate_product(&mut grads[ia], &params.tables()[ia], &sym, parallel)?;
        } else {
            // G = XᵀY: ∂/∂X = Y·Aᵀ, ∂/∂Y = X·A
            accumulate_product(&mut grads[ia], &params.tables()[ib], &adj.transpose(), parallel)?;
            accumulate_product(&mut grads[ib], &params.tables()[ia], adj, parallel)?;
        }
    }
    for (role, adj) in &sum_adj {
        let ia = kind.role_index(*role).unwrap();
        let g = &mut grads[ia];
        for k in 0..g.rows() {
            for (x, a) in g.row_mut(k).iter_mut().zip(adj) {
                *x += a;
            }
        }
    }
    Ok(value)
}

/// Loss pieces and analytic gradients of `lp + la + regularization`.
#[derive(Debug, Clone)]
pub struct LossAndGradients {
    pub loss: LossBreakdown,
    pub grads: Vec<DenseMatrix>,
}

/// Numeric failure while evaluating the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct NonFiniteLoss {
    pub term: String,
    pub max_abs_param: f64,
}

/// Loss and gradient with an explicit term list (the model's own expansion
/// in normal use).
pub fn loss_and_gradients_with_terms(
    params: &ParameterSet,
    train: &[Triple],
    config: &TrainConfig,
    terms: &[TermSpec],
) -> Result<Result<LossAndGradients, NonFiniteLoss>, TrainError> {
    let mut grads = params.zeros_like();
    let (c_pos, c_neg) = (config.c_pos, config.c_neg);

    let mut lp = 0.0;
    for &t in train {
        params.check_triple(t)?;
        let f = score_unchecked(params, t);
        lp += (c_pos - c_neg) * f * f - 2.0 * c_pos * f;
        let w = 2.0 * (c_pos - c_neg) * f - 2.0 * c_pos;
        accumulate_score_gradient(params, t, w, &mut grads);
    }

    let parallel = !config.deterministic;
    let la = c_neg * all_pairs_gradient(params, terms, c_neg, parallel, &mut grads)?;

    let l2 = config.effective_l2();
    let regularization = l2 * params.squared_norm();
    if l2 > 0.0 {
        for (g, t) in grads.iter_mut().zip(params.tables()) {
            g.add_scaled(t, 2.0 * l2)?;
        }
    }

    let loss = LossBreakdown {
        lp,
        la,
        regularization,
        constant: c_pos * train.len() as f64,
    };
    let bad = |term: &str| NonFiniteLoss {
        term: term.to_string(),
        max_abs_param: params.max_abs(),
    };
    if !lp.is_finite() {
        return Ok(Err(bad("lp")));
    }
    if !la.is_finite() {
        return Ok(Err(bad("la")));
    }
    if !regularization.is_finite() {
        return Ok(Err(bad("regularization")));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Ok(Err(bad(&format!("gradient of `{}`", params.roles()[i]))));
    }
    Ok(Ok(LossAndGradients { loss, grads }))
}

/// Loss and analytic gradients for the model's own term expansion.
pub fn loss_and_gradients(
    params: &ParameterSet,
    train: &[Triple],
    config: &TrainConfig,
) -> Result<LossAndGradients, TrainError> {
    let terms = square_terms(params.kind());
    match loss_and_gradients_with_terms(params, train, config, &terms)? {
        Ok(lg) => Ok(lg),
        Err(nf) => Err(TrainError::Diverged {
            epoch: 0,
            term: nf.term,
            max_abs_param: nf.max_abs_param,
            history: TrainHistory::default(),
        }),
    }
}

/// Full-batch non-sampling training state, advanced one epoch at a time.
pub struct NsTrainer<'a> {
    config: TrainConfig,
    train: &'a [Triple],
    params: ParameterSet,
    states: Vec<AdamState>,
    terms: Vec<TermSpec>,
    epoch: usize,
    history: TrainHistory,
}

impl<'a> NsTrainer<'a> {
    pub fn new(config: &TrainConfig, dataset: &'a Dataset) -> Result<Self, TrainError> {
        config.validate()?;
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
        Self::with_params(config, dataset, params)
    }

    pub fn with_params(config: &TrainConfig, dataset: &'a Dataset, params: ParameterSet) -> Result<Self, TrainError> {
        config.validate()?;
        let states = params.tables().iter().map(AdamState::for_table).collect();
        Ok(Self {
            config: config.clone(),
            train: &dataset.train,
            terms: square_terms(config.kind),
            params,
            states,
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

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn current_lr(&self) -> f64 {
        // `self.epoch` counts completed epochs.
        if self.epoch >= self.config.decay_epoch() {
            self.config.lr * self.config.lr_decay
        } else {
            self.config.lr
        }
    }

    /// Loss, gradient, one Adam step per table, TransE projection.
    pub fn step(&mut self) -> Result<&EpochRecord, TrainError> {
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let lg = match loss_and_gradients_with_terms(&self.params, self.train, &self.config, &self.terms)? {
            Ok(lg) => lg,
            Err(nf) => {
                return Err(TrainError::Diverged {
                    epoch,
                    term: nf.term,
                    max_abs_param: nf.max_abs_param,
                    history: self.history.clone(),
                })
            }
        };
        let lr = self.current_lr();
        let roles = self.params.roles();
        for (((table, grad), state), role) in self
            .params
            .tables_mut()
            .iter_mut()
            .zip(&lg.grads)
            .zip(&mut self.states)
            .zip(roles)
        {
            adam_step(role.name(), table, grad, state, lr, &self.config.adam)?;
        }
        if self.config.kind == ModelKind::TransE {
            project_unit_norm(&mut self.params)?;
        }
        self.epoch = epoch;
        self.history.records.push(EpochRecord {
            epoch,
            loss: lg.loss.total(),
            lp: lg.loss.lp,
            la: lg.loss.la,
            regularization: lg.loss.regularization,
            constant: lg.loss.constant,
            seconds: start.elapsed().as_secs_f64(),
            param_norms: self.params.tables().iter().map(|t| t.squared_norm().sqrt()).collect(),
        });
        Ok(self.history.records.last().expect("just pushed"))
    }

    pub fn finish(self) -> (ParameterSet, TrainHistory) {
        (self.params, self.history)
    }
}

/// Runs `config.epochs` full-batch epochs.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<(ParameterSet, TrainHistory), TrainError> {
    let mut trainer = NsTrainer::new(config, dataset)?;
    for _ in 0..config.epochs {
        trainer.step()?;
    }
    Ok(trainer.finish())
}
