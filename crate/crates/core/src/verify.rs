//! Self-check suite: factorised loss and analytic gradients against the
//! brute-force paths on random small instances, for every model kind.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Triple};
use crate::linalg::DenseMatrix;
use crate::models::{ModelKind, ParameterSet, TermSpec};
use crate::oracle::{
    fd_gradient, max_relative_error, naive_full_loss, naive_sum_squared_scores, relative_error, tangent_component,
};
use crate::train::{all_pairs_loss_with_terms, loss_and_gradients_with_terms, positive_loss, TrainConfig};

pub const LOSS_TOLERANCE: f64 = 1e-8;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

/// Bounds for randomly drawn instances; sizes are drawn uniformly in
/// `1..=max` (entities from 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceBounds {
    pub max_entities: usize,
    pub max_relations: usize,
    pub max_dim: usize,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub dataset: Dataset,
    pub params: ParameterSet,
}

/// Random sizes, positives and parameters for one check. TransE rows are
/// unit-norm.
pub fn random_instance(kind: ModelKind, bounds: InstanceBounds, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entities = rng.gen_range(2..=bounds.max_entities.max(2));
    let relations = rng.gen_range(1..=bounds.max_relations.max(1));
    let dim = rng.gen_range(1..=bounds.max_dim.max(1));
    let capacity = entities * entities * relations;
    let positives = rng.gen_range(1..=capacity.min(3 * entities));
    let dataset = Dataset::make_synthetic(rng.gen(), entities, relations, positives).expect("positives within capacity");
    let params = ParameterSet::random(kind, entities, relations, dim, rng.gen());
    Instance { dataset, params }
}

/// `L^P + L^A + c⁺|S|` through the factorised path with an explicit term
/// list.
pub fn efficient_square_loss(
    params: &ParameterSet,
    train: &[Triple],
    c_pos: f64,
    c_neg: f64,
    terms: &[TermSpec],
) -> f64 {
    let lp = positive_loss(params, train, c_pos, c_neg).expect("triples in range");
    let la = all_pairs_loss_with_terms(params, terms, c_neg).expect("terms match model");
    lp + la + c_pos * train.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    Tiny,
    Small,
}

impl Scale {
    pub fn bounds(self) -> InstanceBounds {
        match self {
            Self::Tiny => InstanceBounds {
                max_entities: 6,
                max_relations: 2,
                max_dim: 3,
            },
            Self::Small => InstanceBounds {
                max_entities: 20,
                max_relations: 4,
                max_dim: 6,
            },
        }
    }

    pub fn instances(self) -> usize {
        match self {
            Self::Tiny => 3,
            Self::Small => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Property {
    /// Full square loss: factorised vs enumerated.
    LossIdentity,
    /// `Σ f̂²`: term expansion vs enumerated.
    AllPairsIdentity,
    /// Analytic gradient vs central differences of the factorised loss.
    GradientFiniteDifference,
    /// Analytic gradient vs central differences of the enumerated loss
    /// (tangential part only for TransE).
    GradientNaiveCrossCheck,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LossIdentity => "loss identity",
            Self::AllPairsIdentity => "all-pairs identity",
            Self::GradientFiniteDifference => "gradient vs finite differences",
            Self::GradientNaiveCrossCheck => "gradient vs naive loss",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub kind: ModelKind,
    pub property: Property,
    /// Largest relative error over all instances.
    pub error: f64,
    pub tolerance: f64,
    pub instances: usize,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<8} {:<32} max rel err {:.3e} (tol {:.0e}, {} instances)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.kind.display_name(),
            self.property.to_string(),
            self.error,
            self.tolerance,
            self.instances
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(PropertyResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyResult> {
        self.results.iter().filter(|r| !r.passed())
    }
}

fn check_config(kind: ModelKind, dim: usize) -> TrainConfig {
    TrainConfig {
        kind,
        dim,
        c_pos: 1.0,
        c_neg: 0.5,
        l2: 1e-3,
        ..TrainConfig::default()
    }
}

/// Worst-case errors of the four properties for `kind` over `count`
/// instances, using `terms` for the factorised path.
pub fn check_kind(
    kind: ModelKind,
    terms: &[TermSpec],
    bounds: InstanceBounds,
    count: usize,
    seed: u64,
) -> Vec<PropertyResult> {
    let mut worst = [0.0f64; 4];
    for i in 0..count {
        let inst = random_instance(kind, bounds, seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        let (params, train) = (&inst.params, &inst.dataset.train);
        let config = check_config(kind, params.dim());
        let (c_pos, c_neg, l2) = (config.c_pos, config.c_neg, config.effective_l2());

        let naive = naive_full_loss(params, train, c_pos, c_neg).expect("instance within oracle bounds");
        let efficient = efficient_square_loss(params, train, c_pos, c_neg, terms);
        worst[0] = worst[0].max(relative_error(efficient, naive));

        let naive_sq = naive_sum_squared_scores(params).expect("instance within oracle bounds");
        let efficient_sq = all_pairs_loss_with_terms(params, terms, 1.0).expect("terms match model");
        worst[1] = worst[1].max(relative_error(efficient_sq, naive_sq));

        let analytic = match loss_and_gradients_with_terms(params, train, &config, terms).expect("valid instance") {
            Ok(lg) => lg.grads,
            Err(_) => {
                worst[2] = f64::INFINITY;
                worst[3] = f64::INFINITY;
                continue;
            }
        };
        let objective = |q: &ParameterSet| {
            positive_loss(q, train, c_pos, c_neg).expect("triples in range")
                + all_pairs_loss_with_terms(q, terms, c_neg).expect("terms match model")
                + l2 * q.squared_norm()
        };
        let fd = fd_gradient(params, FD_STEP, objective).expect("instance within oracle bounds");
        worst[2] = worst[2].max(max_relative_error(&analytic, &fd));

        let naive_objective = |q: &ParameterSet| naive_full_loss(q, train, c_pos, c_neg).unwrap() + l2 * q.squared_norm();
        let fd_naive = fd_gradient(params, FD_STEP, naive_objective).expect("instance within oracle bounds");
        let err = if kind == ModelKind::TransE {
            let a: Vec<DenseMatrix> = tangent_component(params, &analytic);
            let b: Vec<DenseMatrix> = tangent_component(params, &fd_naive);
            max_relative_error(&a, &b)
        } else {
            max_relative_error(&analytic, &fd_naive)
        };
        worst[3] = worst[3].max(err);
    }
    let props = [
        (Property::LossIdentity, LOSS_TOLERANCE),
        (Property::AllPairsIdentity, LOSS_TOLERANCE),
        (Property::GradientFiniteDifference, GRADIENT_TOLERANCE),
        (Property::GradientNaiveCrossCheck, GRADIENT_TOLERANCE),
    ];
    props
        .iter()
        .zip(worst)
        .map(|(&(property, tolerance), error)| PropertyResult {
            kind,
            property,
            error,
            tolerance,
            instances: count,
        })
        .collect()
}

/// Runs every property for every kind, taking each kind's term list from
/// `terms`.
pub fn run_verify_with<F>(scale: Scale, seed: u64, terms: F) -> VerifyReport
where
    F: Fn(ModelKind) -> Vec<TermSpec>,
{
    let mut results = Vec::new();
    for (i, kind) in ModelKind::ALL.into_iter().enumerate() {
        let kind_seed = seed.wrapping_add(7919 * i as u64);
        results.extend(check_kind(kind, &terms(kind), scale.bounds(), scale.instances(), kind_seed));
    }
    VerifyReport { results }
}

pub fn run_verify(scale: Scale, seed: u64) -> VerifyReport {
    run_verify_with(scale, seed, crate::models::square_terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::square_terms;

    #[test]
    fn tiny_suite_passes() {
        let report = run_verify(Scale::Tiny, 1);
        assert_eq!(report.results.len(), 16);
        assert!(report.all_passed(), "{:#?}", report.failures().collect::<Vec<_>>());
    }

    #[test]
    fn injected_complex_sign_error_is_caught() {
        let report = run_verify_with(Scale::Tiny, 2, |kind| {
            let mut terms = square_terms(kind);
            if kind == ModelKind::ComplEx {
                terms[3].coefficient = -terms[3].coefficient;
            }
            terms
        });
        let failed: Vec<_> = report.failures().collect();
        assert!(!failed.is_empty());
        assert!(failed.iter().all(|r| r.kind == ModelKind::ComplEx));
        assert!(failed.iter().any(|r| r.property == Property::AllPairsIdentity));
    }

    #[test]
    fn instances_respect_bounds() {
        let b = Scale::Small.bounds();
        for seed in 0..20 {
            let inst = random_instance(ModelKind::TransE, b, seed);
            assert!(inst.params.entity_count() <= b.max_entities);
            assert!(inst.params.relation_count() <= b.max_relations);
            assert!(inst.params.dim() <= b.max_dim);
            assert!(!inst.dataset.train.is_empty());
        }
    }
}
