//! Non-sampling knowledge graph embedding.
//!
//! The square loss over every possible triple is rewritten as a sum over the
//! training triples plus a term built from `d×d` Gram matrices, so a full
//! epoch costs `O((|E| + |R|)·d² + |S|·d)` instead of `O(|E|²·|R|·d)`.

pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod sampled;
pub mod train;
pub mod verify;

pub use data::{AdjacencyIndex, DataError, Dataset, Triple};
pub use eval::{evaluate, MetricsReport, RankMetrics, RankMode};
pub use linalg::DenseMatrix;
pub use models::{ModelKind, ParameterSet};
pub use sampled::{train_sampled, SamplerConfig};
pub use train::{train, TrainConfig, TrainError, TrainHistory};
