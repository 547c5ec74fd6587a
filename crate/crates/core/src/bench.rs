//! Wall-clock comparisons: naive vs factorised all-pairs term, and
//! non-sampling vs sampled epochs.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::models::{ModelKind, ParameterSet};
use crate::oracle::{relative_error, sum_squared_scores_unguarded};
use crate::sampled::{SampledTrainer, SamplerConfig};
use crate::train::{all_pairs_loss, NsTrainer, TrainConfig, TrainError};

/// Upper bound on `|E|²·|R|·d` for the naive arm.
pub const NAIVE_WORK_LIMIT: f64 = 5e8;
pub const MIN_REPEATS: usize = 5;
pub const HANDSHAKE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("naive arm too expensive: |E|²·|R|·d = {work:e} exceeds {NAIVE_WORK_LIMIT:e}")]
    Guard { work: f64 },
    #[error("at least {MIN_REPEATS} repeats are required, got {0}")]
    Repeats(usize),
    #[error("value handshake failed for {what}: {left} vs {right}")]
    Mismatch { what: String, left: f64, right: f64 },
    #[error("nothing to benchmark")]
    Empty,
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Summary of repeated wall-clock samples, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub repeats: usize,
}

impl Timing {
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        assert!(!samples.is_empty());
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let median = if n % 2 == 1 {
            samples[n / 2]
        } else {
            0.5 * (samples[n / 2 - 1] + samples[n / 2])
        };
        Self {
            median,
            min: samples[0],
            max: samples[n - 1],
            repeats: n,
        }
    }
}

/// One discarded warm-up call, then `repeats` timed calls.
pub fn time_repeated<T, F: FnMut() -> T>(repeats: usize, mut f: F) -> (Timing, T) {
    let mut last = f();
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        last = f();
        samples.push(start.elapsed().as_secs_f64());
    }
    (Timing::from_samples(samples), last)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPathReport {
    pub model: ModelKind,
    pub entities: usize,
    pub relations: usize,
    pub dim: usize,
    pub threads: usize,
    pub naive: Timing,
    pub efficient: Timing,
    /// Naive median over efficient median.
    pub speedup: f64,
    pub naive_value: f64,
    pub efficient_value: f64,
}

/// Times `Σ f̂²` by direct enumeration against the factorised evaluation on
/// the same random parameters. The two values must agree first.
pub fn time_loss_paths(
    kind: ModelKind,
    (entities, relations, dim): (usize, usize, usize),
    repeats: usize,
    seed: u64,
) -> Result<LossPathReport, BenchError> {
    let work = (entities * entities * relations * dim) as f64;
    if work > NAIVE_WORK_LIMIT {
        return Err(BenchError::Guard { work });
    }
    if repeats < MIN_REPEATS {
        return Err(BenchError::Repeats(repeats));
    }
    let params = ParameterSet::random(kind, entities, relations, dim, seed);
    let naive_value = sum_squared_scores_unguarded(&params);
    let efficient_value = all_pairs_loss(&params, 1.0);
    if relative_error(efficient_value, naive_value) > HANDSHAKE_TOLERANCE {
        return Err(BenchError::Mismatch {
            what: format!("{kind} all-pairs term"),
            left: efficient_value,
            right: naive_value,
        });
    }
    let (naive, _) = time_repeated(repeats, || sum_squared_scores_unguarded(&params));
    let (efficient, _) = time_repeated(repeats, || all_pairs_loss(&params, 1.0));
    Ok(LossPathReport {
        model: kind,
        entities,
        relations,
        dim,
        threads: rayon::current_num_threads(),
        speedup: naive.median / efficient.median,
        naive,
        efficient,
        naive_value,
        efficient_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Ns,
    Sampled,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ns => "ns",
            Self::Sampled => "sampled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub model: ModelKind,
    pub mode: TrainMode,
    pub epoch_seconds: Timing,
    /// Sampled median over non-sampling median; set on non-sampling rows.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochComparison {
    pub dataset: String,
    pub dim: usize,
    pub timed_epochs: usize,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    pub threads: usize,
    pub rows: Vec<EpochRow>,
    /// Non-sampling kinds from fastest to slowest.
    pub ns_order: Vec<ModelKind>,
    /// Whether DistMult ≤ SimplE ≤ TransE ≤ ComplEx in non-sampling epoch time.
    pub expected_order_holds: bool,
}

pub const EXPECTED_NS_ORDER: [ModelKind; 4] = [
    ModelKind::DistMult,
    ModelKind::SimplE,
    ModelKind::TransE,
    ModelKind::ComplEx,
];

impl EpochComparison {
    pub fn row(&self, model: ModelKind, mode: TrainMode) -> Option<&EpochRow> {
        self.rows.iter().find(|r| r.model == model && r.mode == mode)
    }

    pub fn speedup(&self, model: ModelKind) -> Option<f64> {
        self.row(model, TrainMode::Ns).and_then(|r| r.speedup)
    }

    /// Aligned text table: model, mode, median seconds, dispersion, speed-up.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# {} d={} epochs={} k={} batch={} threads={}",
            self.dataset, self.dim, self.timed_epochs, self.negatives_per_positive, self.batch_size, self.threads
        );
        let _ = writeln!(
            out,
            "{:<14} {:>12} {:>12} {:>12} {:>10}",
            "model", "median_s", "min_s", "max_s", "speed-up"
        );
        for r in &self.rows {
            let name = match r.mode {
                TrainMode::Ns => format!("NS-{}", r.model.display_name()),
                TrainMode::Sampled => r.model.display_name().to_string(),
            };
            let speedup = r.speedup.map(|s| format!("{s:.2}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<14} {:>12.4} {:>12.4} {:>12.4} {:>10}",
                name, r.epoch_seconds.median, r.epoch_seconds.min, r.epoch_seconds.max, speedup
            );
        }
        out
    }
}

/// Median per-epoch wall time (loss, gradient and update) of the
/// non-sampling and sampled trainers for each kind in `kinds`.
pub fn compare_epoch_time(
    dataset_name: &str,
    dataset: &Dataset,
    kinds: &[ModelKind],
    base: &TrainConfig,
    sampler: &SamplerConfig,
    timed_epochs: usize,
) -> Result<EpochComparison, BenchError> {
    if kinds.is_empty() {
        return Err(BenchError::Empty);
    }
    if timed_epochs < MIN_REPEATS {
        return Err(BenchError::Repeats(timed_epochs));
    }
    let mut rows = Vec::with_capacity(2 * kinds.len());
    for &kind in kinds {
        let config = TrainConfig {
            kind,
            epochs: timed_epochs + 1,
            ..base.clone()
        };
        let mut ns = NsTrainer::new(&config, dataset)?;
        let mut ns_samples = Vec::with_capacity(timed_epochs);
        for i in 0..=timed_epochs {
            let start = Instant::now();
            ns.step()?;
            if i > 0 {
                ns_samples.push(start.elapsed().as_secs_f64());
            }
        }
        let mut sampled = SampledTrainer::new(&config, sampler, dataset)?;
        let mut sampled_samples = Vec::with_capacity(timed_epochs);
        for i in 0..=timed_epochs {
            let start = Instant::now();
            sampled.step()?;
            if i > 0 {
                sampled_samples.push(start.elapsed().as_secs_f64());
            }
        }
        let ns_timing = Timing::from_samples(ns_samples);
        let sampled_timing = Timing::from_samples(sampled_samples);
        log::info!(
            "{kind}: ns {:.4}s, sampled {:.4}s per epoch",
            ns_timing.median,
            sampled_timing.median
        );
        rows.push(EpochRow {
            model: kind,
            mode: TrainMode::Ns,
            speedup: Some(sampled_timing.median / ns_timing.median),
            epoch_seconds: ns_timing,
        });
        rows.push(EpochRow {
            model: kind,
            mode: TrainMode::Sampled,
            epoch_seconds: sampled_timing,
            speedup: None,
        });
    }
    let mut ns_rows: Vec<&EpochRow> = rows.iter().filter(|r| r.mode == TrainMode::Ns).collect();
    ns_rows.sort_by(|a, b| a.epoch_seconds.median.total_cmp(&b.epoch_seconds.median));
    let ns_order: Vec<ModelKind> = ns_rows.iter().map(|r| r.model).collect();
    let median_of = |k: ModelKind| {
        rows.iter()
            .find(|r| r.model == k && r.mode == TrainMode::Ns)
            .map(|r| r.epoch_seconds.median)
    };
    let expected: Vec<f64> = EXPECTED_NS_ORDER.iter().filter_map(|&k| median_of(k)).collect();
    let expected_order_holds = expected.windows(2).all(|w| w[0] <= w[1]);
    Ok(EpochComparison {
        dataset: dataset_name.to_string(),
        dim: base.dim,
        timed_epochs,
        negatives_per_positive: sampler.negatives_per_positive,
        batch_size: sampler.batch_size,
        threads: rayon::current_num_threads(),
        rows,
        ns_order,
        expected_order_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        let t = Timing::from_samples(vec![3.0, 1.0, 2.0]);
        assert_eq!((t.median, t.min, t.max, t.repeats), (2.0, 1.0, 3.0, 3));
        assert_eq!(Timing::from_samples(vec![4.0, 1.0, 2.0, 3.0]).median, 2.5);
    }

    #[test]
    fn warm_up_is_discarded() {
        let mut calls = 0;
        let (t, last) = time_repeated(5, || {
            calls += 1;
            calls
        });
        assert_eq!(t.repeats, 5);
        assert_eq!(last, 6);
    }

    #[test]
    fn single_entry_paths_agree() {
        let r = time_loss_paths(ModelKind::DistMult, (1, 1, 1), 5, 3).unwrap();
        assert!(relative_error(r.efficient_value, r.naive_value) <= HANDSHAKE_TOLERANCE);
    }

    #[test]
    fn guards() {
        assert!(matches!(
            time_loss_paths(ModelKind::DistMult, (5000, 20, 32), 5, 0),
            Err(BenchError::Guard { .. })
        ));
        assert!(matches!(
            time_loss_paths(ModelKind::DistMult, (4, 2, 2), 4, 0),
            Err(BenchError::Repeats(4))
        ));
    }

    #[test]
    fn comparison_has_two_rows_per_kind() {
        let ds = Dataset::make_synthetic(1, 20, 3, 60).unwrap();
        let config = TrainConfig {
            dim: 4,
            ..Default::default()
        };
        let sampler = SamplerConfig {
            negatives_per_positive: 3,
            batch_size: 16,
        };
        let cmp = compare_epoch_time("toy", &ds, &ModelKind::ALL, &config, &sampler, 5).unwrap();
        assert_eq!(cmp.rows.len(), 8);
        assert_eq!(cmp.ns_order.len(), 4);
        for kind in ModelKind::ALL {
            let ns = cmp.row(kind, TrainMode::Ns).unwrap();
            let sampled = cmp.row(kind, TrainMode::Sampled).unwrap();
            assert_eq!(
                cmp.speedup(kind).unwrap(),
                sampled.epoch_seconds.median / ns.epoch_seconds.median
            );
        }
        let table = cmp.to_table();
        assert_eq!(table.lines().count(), 10);
        assert!(table.contains("NS-ComplEx"));
        assert!(matches!(
            compare_epoch_time("toy", &ds, &[], &config, &sampler, 5),
            Err(BenchError::Empty)
        ));
    }
}
