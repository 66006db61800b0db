//! Shared filter-run plumbing: the step interface every filter implements,
//! trajectory recording, and failure capture.

use nalgebra::{DMatrix, DVector};

use crate::error::NumError;
use crate::model::ModelSpec;

/// Why a filter run stopped before consuming all measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FailureCause {
    /// A kernel or recursion reported a numerical error.
    Numerical(NumError),
    /// The state estimate or covariance picked up a NaN or infinity.
    NonFiniteState,
    /// `|x̂|∞` exceeded the divergence threshold.
    Diverged,
}

impl std::fmt::Display for FailureCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailureCause::Numerical(e) => e.fmt(f),
            FailureCause::NonFiniteState => f.write_str("state estimate became non-finite"),
            FailureCause::Diverged => f.write_str("state estimate diverged"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Failed { step: usize, cause: FailureCause },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

/// Filtered trajectory of one run: the estimate and reconstructed covariance
/// at every processed measurement time, plus the final status. On failure
/// the partial trajectory up to the failing step is kept.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub times: Vec<f64>,
    pub estimates: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub status: RunStatus,
}

/// Divergence threshold on `|x̂|∞`; estimates beyond this count as failed
/// even when still finite.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// One predict/update cycle of a concrete filter implementation.
pub(crate) trait FilterStepper {
    fn predict(&mut self, model: &ModelSpec, t_to: f64) -> Result<(), NumError>;
    fn update(&mut self, model: &ModelSpec, k: usize, z: &DVector<f64>) -> Result<(), NumError>;
    fn estimate(&self) -> &DVector<f64>;
    fn covariance_full(&self) -> DMatrix<f64>;
}

/// Alternate prediction and measurement update over a time-ordered
/// measurement sequence, recording the filtered trajectory and capturing
/// any failure into the status.
pub(crate) fn run_filter<S: FilterStepper>(
    mut stepper: S,
    model: &ModelSpec,
    measurements: &[(f64, DVector<f64>)],
) -> RunResult {
    let mut result = RunResult {
        times: Vec::with_capacity(measurements.len()),
        estimates: Vec::with_capacity(measurements.len()),
        covariances: Vec::with_capacity(measurements.len()),
        status: RunStatus::Completed,
    };

    for (i, (t_k, z)) in measurements.iter().enumerate() {
        let step = i + 1;
        let outcome = stepper
            .predict(model, *t_k)
            .and_then(|_| stepper.update(model, step, z));
        if let Err(e) = outcome {
            result.status = RunStatus::Failed {
                step,
                cause: FailureCause::Numerical(e),
            };
            return result;
        }

        let x = stepper.estimate();
        let p = stepper.covariance_full();
        if !x.iter().all(|v| v.is_finite()) || !p.iter().all(|v| v.is_finite()) {
            result.status = RunStatus::Failed {
                step,
                cause: FailureCause::NonFiniteState,
            };
            return result;
        }
        if x.amax() > DIVERGENCE_LIMIT {
            result.status = RunStatus::Failed {
                step,
                cause: FailureCause::Diverged,
            };
            return result;
        }

        result.times.push(*t_k);
        result.estimates.push(x.clone());
        result.covariances.push(p);
    }
    result
}
