//! Discretized drift maps for the Euler-Maruyama and Itô-Taylor 1.5 schemes,
//! plus the SDE path simulators used to generate ground truth, including the
//! correlated Itô-Taylor noise pair.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ErrorKind, NumResult};
use crate::model::ModelSpec;

/// SDE discretization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Strong order 0.5: `x + δ·f`.
    EulerMaruyama,
    /// Strong order 1.5: `x + δ·f + ½δ²·𝕃₀f` with correlated noise pair.
    ItoTaylor15,
}

/// Equidistant mesh over one sampling interval with `L` subdivisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh {
    pub t_start: f64,
    pub t_end: f64,
    pub l_subdivisions: usize,
    pub delta: f64,
}

impl Mesh {
    pub fn new(t_start: f64, t_end: f64, l_subdivisions: usize) -> Self {
        assert!(l_subdivisions >= 1, "mesh needs at least one subdivision");
        let delta = (t_end - t_start) / l_subdivisions as f64;
        assert!(delta > 0.0, "mesh step must be positive");
        Mesh {
            t_start,
            t_end,
            l_subdivisions,
            delta,
        }
    }

    /// Node `t⁽ˡ⁾ = t_start + l·δ`.
    pub fn node(&self, l: usize) -> f64 {
        self.t_start + l as f64 * self.delta
    }
}

/// The correlated Itô-Taylor noise pair
/// `w₁ = √δ·v₁`, `w₂ = ½δ^{3/2}(v₁ + v₂/√3)` with independent standard
/// normal `v₁`, `v₂`, so that `E[w₁w₁ᵀ] = δI`, `E[w₁w₂ᵀ] = ½δ²I`,
/// `E[w₂w₂ᵀ] = ⅓δ³I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItNoisePair {
    pub w1: DVector<f64>,
    pub w2: DVector<f64>,
}

fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn sample_it_noise<R: Rng + ?Sized>(delta: f64, n: usize, rng: &mut R) -> ItNoisePair {
    assert!(delta > 0.0);
    let v1 = standard_normal_vector(n, rng);
    let v2 = standard_normal_vector(n, rng);
    let w1 = delta.sqrt() * &v1;
    let w2 = 0.5 * delta.powf(1.5) * (&v1 + &v2 / 3.0f64.sqrt());
    ItNoisePair { w1, w2 }
}

fn check_finite_vec(v: DVector<f64>) -> NumResult<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(ErrorKind::NonFiniteOutput.into())
    }
}

/// Euler-Maruyama discretized drift: `x + δ·f(t, x)`.
pub fn em_drift(model: &ModelSpec, t: f64, x: &DVector<f64>, delta: f64) -> NumResult<DVector<f64>> {
    check_finite_vec(x + delta * model.drift(t, x))
}

/// Itô-Taylor discretized drift: `x + δ·f(t, x) + ½δ²·𝕃₀f(t, x)`.
pub fn it_drift(model: &ModelSpec, t: f64, x: &DVector<f64>, delta: f64) -> NumResult<DVector<f64>> {
    let out = x + delta * model.drift(t, x) + (0.5 * delta * delta) * model.l0_apply(t, x)?;
    check_finite_vec(out)
}

pub fn scheme_drift(
    scheme: Scheme,
    model: &ModelSpec,
    t: f64,
    x: &DVector<f64>,
    delta: f64,
) -> NumResult<DVector<f64>> {
    match scheme {
        Scheme::EulerMaruyama => em_drift(model, t, x, delta),
        Scheme::ItoTaylor15 => it_drift(model, t, x, delta),
    }
}

/// Column-wise application of the discretized drift to a matrix of states.
pub fn scheme_drift_columns(
    scheme: Scheme,
    model: &ModelSpec,
    t: f64,
    states: &DMatrix<f64>,
    delta: f64,
) -> NumResult<DMatrix<f64>> {
    let mut out = DMatrix::zeros(states.nrows(), states.ncols());
    for j in 0..states.ncols() {
        let col = states.column(j).into_owned();
        let mapped = scheme_drift(scheme, model, t, &col, delta)?;
        out.set_column(j, &mapped);
    }
    Ok(out)
}

/// Simulate one SDE path with the given scheme from an explicit initial
/// state. Euler-Maruyama uses increments `G·Δw`, `Δw ~ N(0, δ·Q)`; the
/// Itô-Taylor scheme adds the correlated noise pair through
/// `G·Q^{1/2}·w₁ + 𝕃f·w₂`. Returns the state at every fine node,
/// including `t = 0`.
pub fn simulate_path<R: Rng + ?Sized>(
    model: &ModelSpec,
    scheme: Scheme,
    x0: &DVector<f64>,
    delta_fine: f64,
    t_end: f64,
    rng: &mut R,
) -> NumResult<Vec<(f64, DVector<f64>)>> {
    assert!(delta_fine > 0.0);
    let steps = (t_end / delta_fine).round() as usize;
    assert!(
        (steps as f64 * delta_fine - t_end).abs() <= 1e-9 * t_end.max(1.0),
        "fine step must divide the horizon"
    );

    let n = model.state_dim();
    let q = model.brownian_dim();
    let sqrt_delta = delta_fine.sqrt();
    let mut x = x0.clone();

    let mut path = Vec::with_capacity(steps + 1);
    path.push((0.0, x.clone()));
    for j in 0..steps {
        let t = j as f64 * delta_fine;
        x = match scheme {
            Scheme::EulerMaruyama => {
                let noise =
                    model.g_star().matrix() * (sqrt_delta * standard_normal_vector(q, rng));
                let drift = delta_fine * model.drift(t, &x);
                check_finite_vec(x + drift + noise)?
            }
            Scheme::ItoTaylor15 => {
                let pair = sample_it_noise(delta_fine, n, rng);
                let lf = model.l_matrix(t, &x)?;
                let moved = it_drift(model, t, &x, delta_fine)?;
                check_finite_vec(moved + model.g_star().matrix() * pair.w1 + lf * pair.w2)?
            }
        };
        path.push(((j + 1) as f64 * delta_fine, x.clone()));
    }
    Ok(path)
}

/// Euler-Maruyama ground-truth path from a draw `x(0) ~ N(x̄₀, Π₀)`.
pub fn simulate_truth<R: Rng + ?Sized>(
    model: &ModelSpec,
    delta_fine: f64,
    t_end: f64,
    rng: &mut R,
) -> NumResult<Vec<(f64, DVector<f64>)>> {
    let n = model.state_dim();
    let x0 = model.x0_mean() + model.p0_sqrt().matrix() * standard_normal_vector(n, rng);
    simulate_path(model, Scheme::EulerMaruyama, &x0, delta_fine, t_end, rng)
}

/// Itô-Taylor 1.5 ground-truth path from a draw `x(0) ~ N(x̄₀, Π₀)`.
pub fn simulate_truth_it15<R: Rng + ?Sized>(
    model: &ModelSpec,
    delta_fine: f64,
    t_end: f64,
    rng: &mut R,
) -> NumResult<Vec<(f64, DVector<f64>)>> {
    let n = model.state_dim();
    let x0 = model.x0_mean() + model.p0_sqrt().matrix() * standard_normal_vector(n, rng);
    simulate_path(model, Scheme::ItoTaylor15, &x0, delta_fine, t_end, rng)
}

/// Sample the truth path at multiples of `sample_period` and add measurement
/// noise: `z_k = h(k, x(t_k)) + v_k`, `v_k ~ N(0, R)`, for `t_k = Δ, 2Δ, …`.
/// The sample period must be a multiple of the fine step so no interpolation
/// is needed.
pub fn generate_measurements<R: Rng + ?Sized>(
    model: &ModelSpec,
    truth_path: &[(f64, DVector<f64>)],
    sample_period: f64,
    rng: &mut R,
) -> Vec<(f64, DVector<f64>)> {
    assert!(truth_path.len() >= 2, "truth path must contain at least one step");
    let delta_fine = truth_path[1].0 - truth_path[0].0;
    let stride = (sample_period / delta_fine).round() as usize;
    assert!(
        stride >= 1 && (stride as f64 * delta_fine - sample_period).abs() <= 1e-9 * sample_period,
        "sample period must be a multiple of the fine step"
    );

    let m = model.measurement_dim();
    let mut measurements = Vec::new();
    let mut k = 1usize;
    while k * stride < truth_path.len() {
        let x_true = &truth_path[k * stride].1;
        let noise = model.r_sqrt().matrix() * standard_normal_vector(m, rng);
        let z = model.observation(k, x_true) + noise;
        measurements.push((k as f64 * sample_period, z));
        k += 1;
    }
    measurements
}
