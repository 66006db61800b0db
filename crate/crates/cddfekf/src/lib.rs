//! Continuous-discrete nonlinear filtering built on the derivative-free EKF
//! family: Euler-Maruyama and Itô-Taylor 1.5 discretizations, in
//! conventional, Cholesky square-root and SVD square-root forms, together
//! with the standard EKF/CKF baselines and a Monte Carlo benchmark harness
//! for the ill-conditioned coordinated-turn radar scenario.

pub mod baseline;
pub mod cli;
pub mod coordinated_turn;
pub mod dfekf;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod report;
pub mod run;
pub mod sde;
pub mod sqrt;

pub use error::{ErrorKind, NumError, NumResult};
pub use run::{FailureCause, RunResult, RunStatus};
