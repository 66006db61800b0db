//! Comparison filters: standard continuous-discrete EKFs and third-degree
//! cubature Kalman filters, each under both discretization schemes. These
//! are the reference points of the benchmark, implemented in conventional
//! (full-covariance) form.

use nalgebra::{DMatrix, DVector};

use crate::dfekf::FilterState;
use crate::error::{ErrorKind, NumError, NumResult};
use crate::linalg::lower_cholesky;
use crate::model::{fd_jacobian_forward, ModelSpec};
use crate::run::{run_filter, FilterStepper, RunResult};
use crate::sde::{em_drift, it_drift, scheme_drift, Mesh, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineFamily {
    Ekf,
    Ckf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BaselineVariant {
    pub family: BaselineFamily,
    pub scheme: Scheme,
}

/// Relative step for the finite-difference transition matrix of the
/// Itô-Taylor discretized drift. Wider than the first-derivative step so
/// the one-sided subtraction stays well above roundoff; the O(h)
/// truncation is still far below the covariance propagation error.
const TRANSITION_FD_STEP: f64 = 1e-4;

/// Scheme noise terms added to the propagated covariance; identical to the
/// additive terms of the corresponding DF-EKF prediction.
fn add_scheme_noise(
    p: &mut DMatrix<f64>,
    model: &ModelSpec,
    t: f64,
    x: &DVector<f64>,
    delta: f64,
    scheme: Scheme,
) -> NumResult<()> {
    *p += delta * model.gqg();
    if scheme == Scheme::ItoTaylor15 {
        let lf = model.l_matrix(t, x)?;
        let cross = model.g_star().matrix() * lf.transpose();
        *p += (0.5 * delta * delta) * (&cross + cross.transpose());
        *p += (delta.powi(3) / 3.0) * (&lf * lf.transpose());
    }
    Ok(())
}

/// One standard-EKF prediction substep: `P⁺ = Φ·P·Φᵀ` plus the scheme noise,
/// where `Φ` is the Jacobian of the discretized drift — `I + δ·J` for
/// Euler-Maruyama, a finite-difference Jacobian of the Itô-Taylor drift map
/// otherwise.
pub fn ekf_predict_substep(
    state: &FilterState,
    model: &ModelSpec,
    delta: f64,
    scheme: Scheme,
) -> NumResult<FilterState> {
    let (x_next, phi) = match scheme {
        Scheme::EulerMaruyama => {
            let x_next = em_drift(model, state.t, &state.x_hat, delta)?;
            let phi = DMatrix::identity(state.x_hat.len(), state.x_hat.len())
                + delta * model.jacobian(state.t, &state.x_hat)?;
            (x_next, phi)
        }
        Scheme::ItoTaylor15 => {
            let x_next = it_drift(model, state.t, &state.x_hat, delta)?;
            let t = state.t;
            let phi = fd_jacobian_forward(
                |y| {
                    it_drift(model, t, y, delta)
                        .unwrap_or_else(|_| DVector::from_element(y.len(), f64::NAN))
                },
                &state.x_hat,
                &x_next,
                TRANSITION_FD_STEP,
            )?;
            (x_next, phi)
        }
    };

    let mut p_next = &phi * &state.p * phi.transpose();
    add_scheme_noise(&mut p_next, model, state.t, &state.x_hat, delta, scheme)?;
    if !p_next.iter().all(|v| v.is_finite()) {
        return Err(ErrorKind::NonFiniteOutput.into());
    }
    Ok(FilterState {
        t: state.t + delta,
        x_hat: x_next,
        p: p_next,
    })
}

/// Standard EKF measurement update with the observation Jacobian.
pub fn ekf_measurement_update(
    state_pred: &FilterState,
    k: usize,
    z: &DVector<f64>,
    model: &ModelSpec,
) -> NumResult<FilterState> {
    let h = model.observation_jacobian(k, &state_pred.x_hat)?;
    let z_hat = model.observation(k, &state_pred.x_hat);
    let r_e = &h * &state_pred.p * h.transpose() + model.r_cov();
    let p_xz = &state_pred.p * h.transpose();

    let k_t = r_e
        .clone()
        .lu()
        .solve(&p_xz.transpose())
        .ok_or(ErrorKind::SingularResidualCovariance)?;
    let gain = k_t.transpose();

    let x_next = &state_pred.x_hat + &gain * (z - &z_hat);
    let p_next = &state_pred.p - &gain * &r_e * gain.transpose();
    if !x_next.iter().all(|v| v.is_finite()) || !p_next.iter().all(|v| v.is_finite()) {
        return Err(ErrorKind::NonFiniteOutput.into());
    }
    Ok(FilterState {
        t: state_pred.t,
        x_hat: x_next,
        p: p_next,
    })
}

/// Third-degree cubature points `x̂ ± √n·(column i of P^{1/2})`, 2n columns.
fn cubature_points(x_hat: &DVector<f64>, p: &DMatrix<f64>) -> NumResult<DMatrix<f64>> {
    let n = x_hat.len();
    let l = lower_cholesky(p)?;
    let scale = (n as f64).sqrt();
    let mut pts = DMatrix::zeros(n, 2 * n);
    for j in 0..n {
        let col = scale * l.matrix().column(j);
        pts.set_column(j, &(x_hat + &col));
        pts.set_column(n + j, &(x_hat - &col));
    }
    Ok(pts)
}

/// One cubature prediction substep: equal-weight moment recursion of the
/// discretized drift over the 2n cubature points, plus the scheme noise.
/// A failed Cholesky of the covariance is the CKF breakdown signal.
pub fn ckf_predict_substep(
    state: &FilterState,
    model: &ModelSpec,
    delta: f64,
    scheme: Scheme,
) -> NumResult<FilterState> {
    let n = state.x_hat.len();
    let pts = cubature_points(&state.x_hat, &state.p)?;
    let mut propagated = DMatrix::zeros(n, 2 * n);
    for j in 0..2 * n {
        let col = pts.column(j).into_owned();
        propagated.set_column(j, &scheme_drift(scheme, model, state.t, &col, delta)?);
    }

    let weight = 1.0 / (2 * n) as f64;
    let mut x_next = DVector::zeros(n);
    for j in 0..2 * n {
        x_next += weight * propagated.column(j);
    }
    let mut p_next = DMatrix::zeros(n, n);
    for j in 0..2 * n {
        let d = propagated.column(j) - &x_next;
        p_next += weight * &d * d.transpose();
    }
    add_scheme_noise(&mut p_next, model, state.t, &state.x_hat, delta, scheme)?;
    if !p_next.iter().all(|v| v.is_finite()) {
        return Err(ErrorKind::NonFiniteOutput.into());
    }
    Ok(FilterState {
        t: state.t + delta,
        x_hat: x_next,
        p: p_next,
    })
}

/// Cubature measurement update: cubature transform of the observation,
/// then the standard gain and covariance update.
pub fn ckf_measurement_update(
    state_pred: &FilterState,
    k: usize,
    z: &DVector<f64>,
    model: &ModelSpec,
) -> NumResult<FilterState> {
    let n = state_pred.x_hat.len();
    let pts = cubature_points(&state_pred.x_hat, &state_pred.p)?;
    let m = model.measurement_dim();
    let mut z_pts = DMatrix::zeros(m, 2 * n);
    for j in 0..2 * n {
        let col = pts.column(j).into_owned();
        z_pts.set_column(j, &model.observation(k, &col));
    }

    let weight = 1.0 / (2 * n) as f64;
    let mut z_hat = DVector::zeros(m);
    for j in 0..2 * n {
        z_hat += weight * z_pts.column(j);
    }
    let mut r_e = model.r_cov().clone();
    let mut p_xz = DMatrix::zeros(n, m);
    for j in 0..2 * n {
        let dz = z_pts.column(j) - &z_hat;
        let dx = pts.column(j) - &state_pred.x_hat;
        r_e += weight * &dz * dz.transpose();
        p_xz += weight * &dx * dz.transpose();
    }

    let k_t = r_e
        .clone()
        .lu()
        .solve(&p_xz.transpose())
        .ok_or(ErrorKind::SingularResidualCovariance)?;
    let gain = k_t.transpose();

    let x_next = &state_pred.x_hat + &gain * (z - &z_hat);
    let p_next = &state_pred.p - &gain * &r_e * gain.transpose();
    if !x_next.iter().all(|v| v.is_finite()) || !p_next.iter().all(|v| v.is_finite()) {
        return Err(ErrorKind::NonFiniteOutput.into());
    }
    Ok(FilterState {
        t: state_pred.t,
        x_hat: x_next,
        p: p_next,
    })
}

struct BaselineStepper {
    state: FilterState,
    variant: BaselineVariant,
    l_subdivisions: usize,
}

impl FilterStepper for BaselineStepper {
    fn predict(&mut self, model: &ModelSpec, t_to: f64) -> Result<(), NumError> {
        let mesh = Mesh::new(self.state.t, t_to, self.l_subdivisions);
        for l in 0..mesh.l_subdivisions {
            self.state.t = mesh.node(l);
            self.state = match self.variant.family {
                BaselineFamily::Ekf => {
                    ekf_predict_substep(&self.state, model, mesh.delta, self.variant.scheme)
                }
                BaselineFamily::Ckf => {
                    ckf_predict_substep(&self.state, model, mesh.delta, self.variant.scheme)
                }
            }
            .map_err(|e| e.at_substep(l))?;
        }
        self.state.t = mesh.t_end;
        Ok(())
    }

    fn update(&mut self, model: &ModelSpec, k: usize, z: &DVector<f64>) -> Result<(), NumError> {
        self.state = match self.variant.family {
            BaselineFamily::Ekf => ekf_measurement_update(&self.state, k, z, model)?,
            BaselineFamily::Ckf => ckf_measurement_update(&self.state, k, z, model)?,
        };
        Ok(())
    }

    fn estimate(&self) -> &DVector<f64> {
        &self.state.x_hat
    }

    fn covariance_full(&self) -> DMatrix<f64> {
        self.state.p.clone()
    }
}

/// Run a baseline filter from `(x̄₀, Π₀)`; errors are captured into the
/// run status.
pub fn run_baseline(
    model: &ModelSpec,
    variant: BaselineVariant,
    l_subdivisions: usize,
    measurements: &[(f64, DVector<f64>)],
) -> RunResult {
    let stepper = BaselineStepper {
        state: FilterState {
            t: 0.0,
            x_hat: model.x0_mean().clone(),
            p: model.p0().clone(),
        },
        variant,
        l_subdivisions,
    };
    run_filter(stepper, model, measurements)
}
