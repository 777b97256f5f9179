//! Life-cycle-aware microgrid battery dispatch.
//!
//! Quantile gradient-boosted models predict cyclic and calendar capacity
//! fade; a rolling LP dispatch with four degradation penalties runs inside a
//! life-cycle simulation, and a particle swarm tunes the penalties against
//! the worst-case replacement-chain cost.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the precision; life-cycle orchestration uses `f64`.

pub mod dataset;
pub mod dispatch;
pub mod error;
pub mod gbt;
pub mod lifecycle;
pub mod lp;
pub mod report;
pub mod scalar;
pub mod tuner;
pub mod validate;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LinearProgram = lp::LinearProgram<f64>;
pub type LinearProgramF32 = lp::LinearProgram<f32>;
pub type Tariff = dispatch::Tariff<f64>;
pub type ThetaVector = dispatch::ThetaVector<f64>;
pub type ThetaVectorF32 = dispatch::ThetaVector<f32>;
pub type BatteryState = dispatch::BatteryState<f64>;
pub type BatteryStateF32 = dispatch::BatteryState<f32>;
pub type DispatchProblem = dispatch::DispatchProblem<f64>;
pub type DispatchProblemF32 = dispatch::DispatchProblem<f32>;
pub type DispatchSolution = dispatch::DispatchSolution<f64>;
pub type DispatchSolutionF32 = dispatch::DispatchSolution<f32>;
pub type DayScenario = dispatch::DayScenario<f64>;
pub type QuantileEnsemble = gbt::QuantileEnsemble<f64>;
pub type QuantileEnsembleF32 = gbt::QuantileEnsemble<f32>;
pub type TrainingSet = gbt::TrainingSet<f64>;
pub type TrainingSetF32 = gbt::TrainingSet<f32>;
