//! Neural-network library built around modulated random projections: a
//! layer that keeps a fixed, seed-regenerable random matrix and learns only
//! per-coordinate input/output modulation vectors plus a bias. Includes
//! dense baselines, hand-derived gradients, Adam training with exponential
//! learning-rate decay and a learning-rate range test, synthetic and IDX
//! image datasets, and evaluation metrics.

pub mod data;
pub mod error;
pub mod experiments;
pub mod layers;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod projections;
pub mod rng;
pub mod training;

pub use data::{BatchSize, Dataset, Targets, TaskKind};
pub use error::{Error, Result};
pub use layers::{DenseLayer, GradientSet, ModulationInit, PrpLayer};
pub use linalg::{Matrix, Vector};
pub use metrics::MetricReport;
pub use models::{Activation, ModelKind, Sequential};
pub use projections::{InitScheme, ProjectionDescriptor, ProjectionMatrix};
pub use rng::SeededRng;
pub use training::{AdamState, Loss, LrSchedule, TrainConfig, TrainRecord};
