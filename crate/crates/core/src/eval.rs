//! Link-prediction ranking: for every test triple the tail is ranked among
//! all entities given `(h, r)`, then the head given `(r, t)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AdjacencyIndex, Triple};
use crate::models::{score_unchecked, ModelError, ModelKind, ParameterSet};

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("cannot evaluate an empty test set")]
    EmptyTestSet,
    #[error("filtered ranking requires an adjacency index over all known triples")]
    MissingFilter,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown ranking mode `{0}` (expected raw or filtered)")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    #[default]
    Raw,
    Filtered,
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Raw => "raw",
            Self::Filtered => "filtered",
        })
    }
}

impl FromStr for RankMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Self::Raw),
            "filtered" => Ok(Self::Filtered),
            other => Err(EvalError::UnknownMode(other.to_string())),
        }
    }
}

/// Which end of the triple is being predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub fixed: usize,
    pub relation: usize,
    pub direction: Direction,
}

impl Query {
    pub fn tail_of(t: Triple) -> Self {
        Self {
            fixed: t.head,
            relation: t.relation,
            direction: Direction::Tail,
        }
    }

    pub fn head_of(t: Triple) -> Self {
        Self {
            fixed: t.tail,
            relation: t.relation,
            direction: Direction::Head,
        }
    }

    fn triple_with(&self, candidate: usize) -> Triple {
        match self.direction {
            Direction::Tail => Triple::new(self.fixed, self.relation, candidate),
            Direction::Head => Triple::new(candidate, self.relation, self.fixed),
        }
    }

    fn known<'a>(&self, index: &'a AdjacencyIndex) -> &'a [usize] {
        match self.direction {
            Direction::Tail => index.tails(self.fixed, self.relation),
            Direction::Head => index.heads(self.fixed, self.relation),
        }
    }
}

/// `1 + #(strictly higher) + ⌊#(ties other than truth) / 2⌋`, skipping
/// candidates for which `excluded` holds (the truth is never excluded).
pub fn rank_from_scores<F: Fn(usize) -> bool>(scores: &[f64], truth: usize, excluded: F) -> usize {
    let target = scores[truth];
    let mut higher = 0;
    let mut ties = 0;
    for (c, &s) in scores.iter().enumerate() {
        if c == truth || excluded(c) {
            continue;
        }
        if s > target {
            higher += 1;
        } else if s == target {
            ties += 1;
        }
    }
    1 + higher + ties / 2
}

/// Rank of `truth` for one query. `filter` must index every known triple
/// when `mode` is filtered.
pub fn rank_one(
    params: &ParameterSet,
    query: Query,
    truth: usize,
    mode: RankMode,
    filter: Option<&AdjacencyIndex>,
) -> Result<usize, EvalError> {
    params.check_triple(query.triple_with(truth))?;
    let scores: Vec<f64> = (0..params.entity_count())
        .map(|c| score_unchecked(params, query.triple_with(c)))
        .collect();
    Ok(match mode {
        RankMode::Raw => rank_from_scores(&scores, truth, |_| false),
        RankMode::Filtered => {
            let known = query.known(filter.ok_or(EvalError::MissingFilter)?);
            rank_from_scores(&scores, truth, |c| known.binary_search(&c).is_ok())
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub mr: f64,
    pub mrr: f64,
    /// Fraction of evaluations with rank ≤ K, for K in [`HITS_AT`].
    pub hr: BTreeMap<usize, f64>,
    pub evaluation_count: usize,
}

impl RankMetrics {
    /// Aggregates a flat list of ranks (head and tail ranks together).
    pub fn from_ranks(ranks: &[usize]) -> Result<Self, EvalError> {
        if ranks.is_empty() {
            return Err(EvalError::EmptyTestSet);
        }
        let n = ranks.len() as f64;
        let mr = ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let hr = HITS_AT
            .iter()
            .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
            .collect();
        Ok(Self {
            mr,
            mrr,
            hr,
            evaluation_count: ranks.len(),
        })
    }

    pub fn hits(&self, k: usize) -> f64 {
        self.hr.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Head and tail rank of every test triple.
pub fn ranks(
    params: &ParameterSet,
    test: &[Triple],
    mode: RankMode,
    filter: Option<&AdjacencyIndex>,
) -> Result<Vec<usize>, EvalError> {
    if mode == RankMode::Filtered && filter.is_none() {
        return Err(EvalError::MissingFilter);
    }
    let per_triple: Result<Vec<[usize; 2]>, EvalError> = test
        .par_iter()
        .map(|&t| {
            let head = rank_one(params, Query::head_of(t), t.head, mode, filter)?;
            let tail = rank_one(params, Query::tail_of(t), t.tail, mode, filter)?;
            Ok([head, tail])
        })
        .collect();
    Ok(per_triple?.into_iter().flatten().collect())
}

pub fn evaluate(
    params: &ParameterSet,
    test: &[Triple],
    mode: RankMode,
    filter: Option<&AdjacencyIndex>,
) -> Result<RankMetrics, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    RankMetrics::from_ranks(&ranks(params, test, mode, filter)?)
}

/// Metrics as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: ModelKind,
    pub dataset: String,
    pub mode: RankMode,
    pub mr: f64,
    pub mrr: f64,
    pub hr1: f64,
    pub hr3: f64,
    pub hr10: f64,
    pub evaluation_count: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn new(
        model: ModelKind,
        dataset: impl Into<String>,
        mode: RankMode,
        metrics: &RankMetrics,
        seed: u64,
        config_hash: impl Into<String>,
    ) -> Self {
        Self {
            model,
            dataset: dataset.into(),
            mode,
            mr: metrics.mr,
            mrr: metrics.mrr,
            hr1: metrics.hits(1),
            hr3: metrics.hits(3),
            hr10: metrics.hits(10),
            evaluation_count: metrics.evaluation_count,
            seed,
            config_hash: config_hash.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_from_scores(&[0.9, 0.5, 0.1], 0, |_| false), 1);
        assert_eq!(rank_from_scores(&[0.3; 7], 2, |_| false), 1 + 6 / 2);
        assert_eq!(rank_from_scores(&[0.3; 8], 0, |_| false), 1 + 7 / 2);
        assert_eq!(rank_from_scores(&[0.1, 0.5, 0.9], 0, |_| false), 3);
        assert_eq!(rank_from_scores(&[0.1, 0.5, 0.9], 0, |c| c == 2), 2);
    }

    #[test]
    fn metric_formulas() {
        let m = RankMetrics::from_ranks(&[2, 4]).unwrap();
        assert_eq!(m.mr, 3.0);
        assert_eq!(m.mrr, 0.375);
        assert_eq!(m.hits(3), 0.5);
        assert_eq!(m.hits(1), 0.0);
        assert_eq!(m.hits(10), 1.0);
        assert_eq!(m.evaluation_count, 2);

        let perfect = RankMetrics::from_ranks(&[1; 6]).unwrap();
        assert_eq!((perfect.mr, perfect.mrr), (1.0, 1.0));
        assert!(HITS_AT.iter().all(|&k| perfect.hits(k) == 1.0));

        assert_eq!(RankMetrics::from_ranks(&[]), Err(EvalError::EmptyTestSet));
    }

    /// Sorts candidates by descending score and applies the same mid-tie rule.
    fn sort_oracle(scores: &[f64], truth: usize, excluded: &[usize]) -> usize {
        let mut kept: Vec<(usize, f64)> = scores
            .iter()
            .copied()
            .enumerate()
            .filter(|(c, _)| *c == truth || !excluded.contains(c))
            .collect();
        kept.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let first = kept.iter().position(|&(_, s)| s == scores[truth]).unwrap();
        let last = kept.iter().rposition(|&(_, s)| s == scores[truth]).unwrap();
        let tied_others = last - first;
        first + 1 + tied_others / 2
    }

    #[test]
    fn rank_matches_sort_oracle() {
        let ds = Dataset::make_synthetic_split(8, 15, 2, 30, 0, 10).unwrap();
        let params = ParameterSet::random(ModelKind::ComplEx, 15, 2, 3, 4);
        let filter = AdjacencyIndex::build(ds.all_known());
        for &t in &ds.test {
            for (query, truth) in [(Query::tail_of(t), t.tail), (Query::head_of(t), t.head)] {
                let scores: Vec<f64> = (0..15).map(|c| score_unchecked(&params, query.triple_with(c))).collect();
                let raw = rank_one(&params, query, truth, RankMode::Raw, None).unwrap();
                assert_eq!(raw, sort_oracle(&scores, truth, &[]));
                let known = query.known(&filter).to_vec();
                let filtered = rank_one(&params, query, truth, RankMode::Filtered, Some(&filter)).unwrap();
                assert_eq!(filtered, sort_oracle(&scores, truth, &known));
                assert!(filtered <= raw);
            }
        }
    }

    #[test]
    fn raising_truth_score_never_worsens_rank() {
        let scores = vec![0.2, 0.7, 0.7, 0.1, 0.9];
        let mut prev = usize::MAX;
        for bump in [0.0, 0.5, 0.6, 0.7, 1.0] {
            let mut s = scores.clone();
            s[0] += bump;
            let r = rank_from_scores(&s, 0, |_| false);
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let ds = Dataset::make_synthetic_split(2, 12, 2, 20, 0, 8).unwrap();
        let params = ParameterSet::random(ModelKind::DistMult, 12, 2, 4, 3);
        let a = evaluate(&params, &ds.test, RankMode::Raw, None).unwrap();
        let mut rev = ds.test.clone();
        rev.reverse();
        let b = evaluate(&params, &rev, RankMode::Raw, None).unwrap();
        assert_eq!(a.hr, b.hr);
        assert_eq!(a.mr, b.mr);
        assert!((a.mrr - b.mrr).abs() < 1e-12);
        assert_eq!(a.evaluation_count, 16);
    }

    #[test]
    fn evaluate_errors() {
        let params = ParameterSet::zeros(ModelKind::DistMult, 3, 1, 2);
        assert_eq!(evaluate(&params, &[], RankMode::Raw, None), Err(EvalError::EmptyTestSet));
        assert_eq!(
            evaluate(&params, &[Triple::new(0, 0, 1)], RankMode::Filtered, None),
            Err(EvalError::MissingFilter)
        );
        assert!(matches!(
            evaluate(&params, &[Triple::new(0, 3, 1)], RankMode::Raw, None),
            Err(EvalError::Model(_))
        ));
    }

    #[test]
    fn constant_model_gets_mid_rank() {
        let params = ParameterSet::zeros(ModelKind::DistMult, 9, 1, 2);
        let r = rank_one(&params, Query::tail_of(Triple::new(0, 0, 3)), 3, RankMode::Raw, None).unwrap();
        assert_eq!(r, 1 + 8 / 2);
    }
}
