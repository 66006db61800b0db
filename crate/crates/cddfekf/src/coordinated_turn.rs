//! Seven-state coordinated-turn aircraft dynamics observed through an
//! artificially ill-conditioned two-row linear sensor. The state is
//! `[ε, ε̇, η, η̇, ζ, ζ̇, ω]`: three positions, the corresponding velocities
//! and the turn rate.

use nalgebra::{DMatrix, DVector};

use crate::model::ModelSpec;

/// Model constants. The turn-rate state multiplies the velocities directly
/// in the drift, so `omega` is a per-second rotation rate in whatever
/// convention the constants encode.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatedTurnConstants {
    pub omega: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub x0_mean: DVector<f64>,
    pub p0: DMatrix<f64>,
    pub q_cov: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl CoordinatedTurnConstants {
    fn with_omega(omega: f64) -> Self {
        let sigma1 = 0.2f64.sqrt();
        let sigma2 = 0.007;
        CoordinatedTurnConstants {
            omega,
            sigma1,
            sigma2,
            x0_mean: DVector::from_vec(vec![1000.0, 0.0, 2650.0, 150.0, 200.0, 0.0, omega]),
            p0: DMatrix::identity(7, 7),
            q_cov: DMatrix::identity(7, 7),
            g: DMatrix::from_diagonal(&DVector::from_vec(vec![
                0.0, sigma1, 0.0, sigma1, 0.0, sigma1, sigma2,
            ])),
        }
    }

    /// Benchmark convention: the nominal 3°/s turn rate enters the rotation
    /// dynamics as the raw value 3. This is the scaling under which
    /// `P₀ = I₇` is a sensible initial spread for every component and the
    /// benchmark accuracy numbers are reproduced; see `radians` for the
    /// dimensionally converted variant.
    pub fn benchmark() -> Self {
        CoordinatedTurnConstants::with_omega(3.0)
    }

    /// Dimensionally consistent variant with the turn rate converted to
    /// rad/s (3°/s = 0.05236 rad/s). Useful for sensitivity checks; the
    /// resulting slow rotation leaves individual positions nearly
    /// unobservable through the all-ones sensor.
    pub fn radians() -> Self {
        CoordinatedTurnConstants::with_omega(3.0f64.to_radians())
    }
}

impl Default for CoordinatedTurnConstants {
    fn default() -> Self {
        CoordinatedTurnConstants::benchmark()
    }
}

/// The two-row all-ones sensor whose conditioning degrades as `γ → 0`:
/// rows differ only by `γ` in the last column, and `R = γ²·I₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct IllConditionedSensor {
    pub gamma: f64,
    pub h_matrix: DMatrix<f64>,
    pub r_cov: DMatrix<f64>,
}

impl IllConditionedSensor {
    pub fn new(gamma: f64) -> Self {
        assert!(gamma > 0.0);
        let mut h_matrix = DMatrix::from_element(2, 7, 1.0);
        h_matrix[(1, 6)] = 1.0 + gamma;
        IllConditionedSensor {
            gamma,
            h_matrix,
            r_cov: DMatrix::identity(2, 2) * (gamma * gamma),
        }
    }
}

fn drift(x: &DVector<f64>) -> DVector<f64> {
    let (eps_dot, eta_dot, zeta_dot, omega) = (x[1], x[3], x[5], x[6]);
    DVector::from_vec(vec![
        eps_dot,
        -omega * eta_dot,
        eta_dot,
        omega * eps_dot,
        zeta_dot,
        0.0,
        0.0,
    ])
}

fn drift_jacobian(x: &DVector<f64>) -> DMatrix<f64> {
    let (eps_dot, eta_dot, omega) = (x[1], x[3], x[6]);
    let mut j = DMatrix::zeros(7, 7);
    j[(0, 1)] = 1.0;
    j[(1, 3)] = -omega;
    j[(1, 6)] = -eta_dot;
    j[(2, 3)] = 1.0;
    j[(3, 1)] = omega;
    j[(3, 6)] = eps_dot;
    j[(4, 5)] = 1.0;
    j
}

/// Build the ill-conditioned coordinated-turn model for a given `γ`, with
/// analytic derivative providers. The drift is autonomous and its only
/// curvature pairs distinct diffusion channels, so with the diagonal `G`
/// the `𝕃₀` Hessian contraction is exactly zero and `𝕃₀f = J·f`.
pub fn build_coordinated_turn(gamma: f64) -> ModelSpec {
    build_coordinated_turn_with(&CoordinatedTurnConstants::default(), gamma)
}

pub fn build_coordinated_turn_with(
    constants: &CoordinatedTurnConstants,
    gamma: f64,
) -> ModelSpec {
    let sensor = IllConditionedSensor::new(gamma);
    let h = sensor.h_matrix.clone();
    let h_jac = h.clone();

    ModelSpec::new(
        Box::new(|_t, x| drift(x)),
        Box::new(move |_k, x| &h * x),
        constants.g.clone(),
        constants.q_cov.clone(),
        sensor.r_cov.clone(),
        constants.x0_mean.clone(),
        constants.p0.clone(),
    )
    .expect("coordinated-turn covariances are positive definite")
    .with_drift_jacobian(Box::new(|_t, x| drift_jacobian(x)))
    .with_drift_time_partial(Box::new(|_t, x| DVector::zeros(x.len())))
    .with_drift_hessian_contraction(Box::new(|_t, x| DVector::zeros(x.len())))
    .with_observation_jacobian(Box::new(move |_k, _x| h_jac.clone()))
}
