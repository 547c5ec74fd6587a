use nskge::models::{square_terms, ModelKind};
use nskge::oracle::fd_gradient;
use nskge::train::{all_pairs_loss, loss_and_gradients, positive_loss, TrainConfig};
use nskge::verify::{random_instance, InstanceBounds};

fn bounds() -> InstanceBounds {
    InstanceBounds {
        max_entities: 6,
        max_relations: 2,
        max_dim: 3,
    }
}

fn max_abs_diff(a: &[nskge::DenseMatrix], b: &[nskge::DenseMatrix]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Central differences have O(step²) truncation error, so shrinking the step
/// from 1e-3 to 1e-5 should cut the error by far more than 100×, until
/// rounding takes over.
#[test]
fn finite_difference_error_shrinks_quadratically() {
    for kind in ModelKind::ALL {
        let inst = random_instance(kind, bounds(), 42);
        let train = &inst.dataset.train;
        let config = TrainConfig {
            kind,
            dim: inst.params.dim(),
            c_neg: 0.5,
            l2: 0.0,
            ..TrainConfig::default()
        };
        let analytic = loss_and_gradients(&inst.params, train, &config).unwrap().grads;
        let objective = |q: &nskge::ParameterSet| {
            positive_loss(q, train, config.c_pos, config.c_neg).unwrap() + all_pairs_loss(q, config.c_neg)
        };
        let coarse = max_abs_diff(&analytic, &fd_gradient(&inst.params, 1e-3, objective).unwrap());
        let fine = max_abs_diff(&analytic, &fd_gradient(&inst.params, 1e-5, objective).unwrap());
        assert!(
            fine < coarse / 100.0 || fine < 1e-9,
            "{kind}: error {coarse:e} at 1e-3, {fine:e} at 1e-5"
        );
    }
}

#[test]
fn term_lists_are_well_formed() {
    for kind in ModelKind::ALL {
        assert!(square_terms(kind).iter().all(|t| t.is_well_formed()), "{kind}");
    }
}

#[test]
fn planted_training_lowers_the_loss() {
    let ds = nskge::Dataset::make_planted(3, 20, 2).unwrap();
    for kind in ModelKind::ALL {
        let config = TrainConfig {
            kind,
            dim: 8,
            epochs: 50,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let (_, history) = nskge::train(&config, &ds).unwrap();
        assert_eq!(history.len(), 50);
        assert!(history.last().unwrap().loss < history.first().unwrap().loss, "{kind}");
    }
}
