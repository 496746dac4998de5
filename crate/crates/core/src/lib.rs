//! Exposure-fair reranking in a closed recommendation feedback loop.
//!
//! The core is generic over the floating-point type (`f32` or `f64`); the
//! aliases below pin the common choices.

pub mod dataset;
pub mod flow;
pub mod metrics;
pub mod mf;
pub mod rerank;
pub mod scalar;
pub mod sim;

pub use scalar::Scalar;

pub type FactorModelF32 = mf::FactorModel<f32>;
pub type FactorModelF64 = mf::FactorModel<f64>;
pub type ExposureLedgerF32 = metrics::ExposureLedger<f32>;
pub type ExposureLedgerF64 = metrics::ExposureLedger<f64>;
pub type SimulationF32 = sim::Simulation<f32>;
pub type SimulationF64 = sim::Simulation<f64>;
