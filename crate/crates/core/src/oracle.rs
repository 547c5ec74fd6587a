//! Brute-force reference paths. Deliberately naive and size-guarded; used
//! to validate the factorised loss and the analytic gradients.

use std::collections::HashSet;

use crate::data::Triple;
use crate::linalg::DenseMatrix;
use crate::models::{score_unchecked, ParameterSet};

pub const MAX_ENTITIES: usize = 64;
pub const MAX_RELATIONS: usize = 8;
pub const MAX_DIM: usize = 16;
pub const MIN_STEP: f64 = 1e-7;
pub const MAX_STEP: f64 = 1e-3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error(
        "oracle size guard exceeded: |E|={entities} (max {MAX_ENTITIES}), |R|={relations} (max {MAX_RELATIONS}), d={dim} (max {MAX_DIM})"
    )]
    TooLarge {
        entities: usize,
        relations: usize,
        dim: usize,
    },
    #[error("finite-difference step {0} outside [{MIN_STEP}, {MAX_STEP}]")]
    Step(f64),
    #[error("positive triple {0} out of range")]
    OutOfRange(Triple),
}

pub fn check_guard(params: &ParameterSet) -> Result<(), OracleError> {
    if params.entity_count() > MAX_ENTITIES || params.relation_count() > MAX_RELATIONS || params.dim() > MAX_DIM {
        return Err(OracleError::TooLarge {
            entities: params.entity_count(),
            relations: params.relation_count(),
            dim: params.dim(),
        });
    }
    Ok(())
}

/// `Σ_{h,r,t} f̂²` by direct enumeration, with no size guard. Callers are
/// responsible for keeping `|E|²·|R|·d` affordable.
pub fn sum_squared_scores_unguarded(params: &ParameterSet) -> f64 {
    let mut total = 0.0;
    for r in 0..params.relation_count() {
        for h in 0..params.entity_count() {
            for t in 0..params.entity_count() {
                let f = score_unchecked(params, Triple::new(h, r, t));
                total += f * f;
            }
        }
    }
    total
}

pub fn naive_sum_squared_scores(params: &ParameterSet) -> Result<f64, OracleError> {
    check_guard(params)?;
    Ok(sum_squared_scores_unguarded(params))
}

/// `Σ_{h,r,t} c·(f − f̂)²` with `f = 1, c = c⁺` on `positives` and
/// `f = 0, c = c⁻` elsewhere.
pub fn naive_full_loss(params: &ParameterSet, positives: &[Triple], c_pos: f64, c_neg: f64) -> Result<f64, OracleError> {
    check_guard(params)?;
    let mut set = HashSet::with_capacity(positives.len());
    for &p in positives {
        if params.check_triple(p).is_err() {
            return Err(OracleError::OutOfRange(p));
        }
        set.insert(p);
    }
    let mut total = 0.0;
    for h in 0..params.entity_count() {
        for r in 0..params.relation_count() {
            for t in 0..params.entity_count() {
                let triple = Triple::new(h, r, t);
                let f_hat = score_unchecked(params, triple);
                let (truth, weight) = if set.contains(&triple) { (1.0, c_pos) } else { (0.0, c_neg) };
                total += weight * (truth - f_hat) * (truth - f_hat);
            }
        }
    }
    Ok(total)
}

/// Central difference of a scalar function.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

/// Central-difference gradient of `loss` with respect to every entry of
/// every table, in role order.
pub fn fd_gradient<F>(params: &ParameterSet, step: f64, mut loss: F) -> Result<Vec<DenseMatrix>, OracleError>
where
    F: FnMut(&ParameterSet) -> f64,
{
    check_guard(params)?;
    if !(MIN_STEP..=MAX_STEP).contains(&step) {
        return Err(OracleError::Step(step));
    }
    let mut probe = params.clone();
    let mut grads = params.zeros_like();
    for (ti, grad) in grads.iter_mut().enumerate() {
        for idx in 0..grad.data().len() {
            let original = params.tables()[ti].data()[idx];
            let g = central_difference(
                |x| {
                    probe.tables_mut()[ti].data_mut()[idx] = x;
                    loss(&probe)
                },
                original,
                step,
            );
            probe.tables_mut()[ti].data_mut()[idx] = original;
            grad.data_mut()[idx] = g;
        }
    }
    Ok(grads)
}

/// Largest `|a − b| / max(1, |b|)` over all entries.
pub fn max_relative_error(analytic: &[DenseMatrix], reference: &[DenseMatrix]) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .flat_map(|(a, b)| a.data().iter().zip(b.data()))
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// `|a − b| / max(1, |b|)`.
pub fn relative_error(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(1.0)
}

/// Removes each row's component along that row of `params` (tangent space of
/// the product of unit spheres).
pub fn tangent_component(params: &ParameterSet, grads: &[DenseMatrix]) -> Vec<DenseMatrix> {
    grads
        .iter()
        .zip(params.tables())
        .map(|(g, x)| {
            let mut out = g.clone();
            for k in 0..g.rows() {
                let xr = x.row(k);
                let nn: f64 = xr.iter().map(|v| v * v).sum();
                let dot: f64 = g.row(k).iter().zip(xr).map(|(a, b)| a * b).sum();
                for (o, xv) in out.row_mut(k).iter_mut().zip(xr) {
                    *o -= dot / nn * xv;
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    #[test]
    fn empty_positive_set_zero_params() {
        let p = ParameterSet::zeros(ModelKind::ComplEx, 4, 2, 3);
        assert_eq!(naive_full_loss(&p, &[], 1.0, 0.001).unwrap(), 0.0);
    }

    #[test]
    fn single_term_case() {
        let p = ParameterSet::from_tables(
            ModelKind::DistMult,
            1,
            1,
            1,
            vec![DenseMatrix::from_rows(&[[2.0]]), DenseMatrix::from_rows(&[[3.0]])],
        )
        .unwrap();
        assert_eq!(naive_full_loss(&p, &[], 1.0, 1.0).unwrap(), 144.0);
    }

    #[test]
    fn guards_are_errors() {
        let p = ParameterSet::zeros(ModelKind::DistMult, 65, 1, 2);
        assert!(matches!(naive_full_loss(&p, &[], 1.0, 1.0), Err(OracleError::TooLarge { .. })));
        let p = ParameterSet::zeros(ModelKind::DistMult, 4, 9, 2);
        assert!(naive_sum_squared_scores(&p).is_err());
        let p = ParameterSet::zeros(ModelKind::DistMult, 4, 2, 17);
        assert!(fd_gradient(&p, 1e-5, |_| 0.0).is_err());
        let p = ParameterSet::zeros(ModelKind::DistMult, 4, 2, 2);
        assert_eq!(fd_gradient(&p, 1e-2, |_| 0.0).unwrap_err(), OracleError::Step(1e-2));
        assert!(fd_gradient(&p, 1e-8, |_| 0.0).is_err());
    }

    #[test]
    fn quadratic_toy() {
        for p in [-1.5, 0.0, 0.3, 2.0] {
            let step = 1e-4;
            let g = central_difference(|x| x * x, p, step);
            assert!((g - 2.0 * p).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_params_give_near_zero_fd_gradient() {
        let p = ParameterSet::zeros(ModelKind::DistMult, 5, 2, 3);
        let step = 1e-5;
        let g = fd_gradient(&p, step, |q| naive_sum_squared_scores(q).unwrap()).unwrap();
        assert!(g.iter().all(|m| m.max_abs() < 10.0 * step));
    }

    #[test]
    fn relabeling_entities_preserves_loss() {
        let kind = ModelKind::SimplE;
        let p = ParameterSet::random(kind, 7, 2, 3, 5);
        let positives = [Triple::new(0, 0, 1), Triple::new(3, 1, 6), Triple::new(5, 0, 5)];
        let perm = [4, 2, 6, 0, 1, 3, 5];
        let mut tables = Vec::new();
        for (role, t) in kind.roles().iter().zip(p.tables()) {
            if role.is_entity() {
                let mut moved = t.clone();
                for (old, &new) in perm.iter().enumerate() {
                    moved.row_mut(new).copy_from_slice(t.row(old));
                }
                tables.push(moved);
            } else {
                tables.push(t.clone());
            }
        }
        let q = ParameterSet::from_tables(kind, 7, 2, 3, tables).unwrap();
        let relabeled: Vec<Triple> = positives
            .iter()
            .map(|t| Triple::new(perm[t.head], t.relation, perm[t.tail]))
            .collect();
        let a = naive_full_loss(&p, &positives, 1.0, 0.1).unwrap();
        let b = naive_full_loss(&q, &relabeled, 1.0, 0.1).unwrap();
        assert!(relative_error(b, a) < 1e-12);
    }
}
