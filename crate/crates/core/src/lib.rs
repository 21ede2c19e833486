//! Loss-based mini-batch subsampling.
//!
//! Each training batch is forwarded in full; a sampler then picks the samples
//! whose gradients are computed. The `obftf` sampler picks the budgeted
//! subset whose mean loss is closest to the batch mean.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`, the default for every experiment, and the
//! `f32` module holds the single-precision variants.

pub mod bilevel;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod solver;
pub mod train;

pub use error::{Error, Result};
pub use loss::{Budget, Cardinality, SelectionMask, TargetPolicy};
pub use model::{ModelKind, Reduction};
pub use sampler::SamplerSpec;
pub use scalar::Scalar;
pub use solver::SolveStatus;
pub use train::LrSchedule;

pub type LossVector = loss::LossVector<f64>;
pub type SubsetInstance = solver::SubsetInstance<f64>;
pub type SolveReport = solver::SolveReport<f64>;
pub type Dataset = data::Dataset<f64>;
pub type DatasetHandle = data::DatasetHandle<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type TrainState = train::TrainState<f64>;

pub mod f32 {
    use super::{data, loss, model, solver, train};

    pub type LossVector = loss::LossVector<f32>;
    pub type SubsetInstance = solver::SubsetInstance<f32>;
    pub type SolveReport = solver::SolveReport<f32>;
    pub type Dataset = data::Dataset<f32>;
    pub type DatasetHandle = data::DatasetHandle<f32>;
    pub type ModelParams = model::ModelParams<f32>;
    pub type TrainState = train::TrainState<f32>;
}
