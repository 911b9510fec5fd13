//! Dynamic working set (DWS) solver for `min ½‖Ax − b‖² + η‖x‖₁` on
//! compressed-sensing instances, with comparator working-set strategies,
//! inner restricted solvers, and an optimality-certificate toolkit.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what instance files store.

pub mod certify;
pub mod dws;
pub mod error;
pub mod instance;
pub mod linalg;
pub mod rng;
pub mod scalar;
pub mod solver;
pub mod strategies;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DenseMatrix = linalg::DenseMatrix<f64>;
pub type DenseMatrix32 = linalg::DenseMatrix<f32>;
pub type Instance = instance::Instance<f64>;
pub type Instance32 = instance::Instance<f32>;
pub type SolverConfig = solver::SolverConfig<f64>;
pub type RestrictedSolution = solver::RestrictedSolution<f64>;
pub type DwsConfig = dws::DwsConfig<f64>;
pub type RunOutput = dws::RunOutput<f64>;
pub type Certificate = certify::Certificate<f64>;
pub type DescentReport = certify::DescentReport<f64>;

pub use strategies::StrategyKind;
