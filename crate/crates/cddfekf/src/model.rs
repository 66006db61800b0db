//! Continuous-discrete stochastic model contract: drift `f`, observation
//! `h`, time-invariant diffusion `G`, noise covariances `Q` and `R`, initial
//! moments, and the derivative providers needed by the Itô-Taylor operators
//! and the baseline EKFs, with finite-difference fallbacks.

use nalgebra::{DMatrix, DVector};

use crate::error::{ErrorKind, NumResult};
use crate::linalg::{lower_cholesky, svd_sqrt, LowerTriangularFactor, SvdSqrtFactor};

pub type DriftFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;
pub type ObservationFn = dyn Fn(usize, &DVector<f64>) -> DVector<f64> + Send + Sync;
pub type DriftJacobianFn = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
pub type ObservationJacobianFn = dyn Fn(usize, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
pub type VectorProviderFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// The product `G* = G·Q^{1/2}`, precomputed once per model; valid because
/// the diffusion term is time-invariant and state-independent.
#[derive(Debug, Clone, PartialEq)]
pub struct GStar {
    matrix: DMatrix<f64>,
}

impl GStar {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Continuous-discrete stochastic model
///
/// ```text
/// dx(t) = f(t, x(t)) dt + G dβ(t),      cov(dβ) = Q dt
/// z_k   = h(k, x(t_k)) + v_k,           v_k ~ N(0, R)
/// ```
///
/// with initial state `x(0) ~ N(x0_mean, p0)`. Optional analytic derivative
/// providers take precedence over the finite-difference fallbacks.
pub struct ModelSpec {
    n: usize,
    m: usize,
    q: usize,
    drift: Box<DriftFn>,
    observation: Box<ObservationFn>,
    g: DMatrix<f64>,
    q_cov: DMatrix<f64>,
    r_cov: DMatrix<f64>,
    x0_mean: DVector<f64>,
    p0: DMatrix<f64>,
    drift_jacobian: Option<Box<DriftJacobianFn>>,
    drift_time_partial: Option<Box<VectorProviderFn>>,
    drift_hessian_contraction: Option<Box<VectorProviderFn>>,
    observation_jacobian: Option<Box<ObservationJacobianFn>>,
    // Factors precomputed at construction; the square-root filters never
    // factor a model covariance at run time.
    g_star: GStar,
    g_star_svd: DMatrix<f64>,
    gqg: DMatrix<f64>,
    q_sqrt: LowerTriangularFactor,
    r_sqrt: LowerTriangularFactor,
    r_svd: SvdSqrtFactor,
    p0_sqrt: LowerTriangularFactor,
    p0_svd: SvdSqrtFactor,
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        drift: Box<DriftFn>,
        observation: Box<ObservationFn>,
        g: DMatrix<f64>,
        q_cov: DMatrix<f64>,
        r_cov: DMatrix<f64>,
        x0_mean: DVector<f64>,
        p0: DMatrix<f64>,
    ) -> NumResult<Self> {
        let n = x0_mean.len();
        let q = g.ncols();
        let m = r_cov.nrows();
        assert_eq!(g.nrows(), n, "diffusion matrix must have n rows");
        assert_eq!(q_cov.nrows(), q, "Q must be q×q");
        assert_eq!(q_cov.ncols(), q, "Q must be q×q");
        assert_eq!(r_cov.ncols(), m, "R must be m×m");
        assert_eq!(p0.nrows(), n, "P0 must be n×n");
        assert_eq!(p0.ncols(), n, "P0 must be n×n");

        let q_sqrt = lower_cholesky(&q_cov)?;
        let r_sqrt = lower_cholesky(&r_cov)?;
        let r_svd = svd_sqrt(&r_cov)?;
        let p0_sqrt = lower_cholesky(&p0)?;
        let p0_svd = svd_sqrt(&p0)?;
        let g_star = GStar {
            matrix: &g * q_sqrt.matrix(),
        };
        let q_svd = svd_sqrt(&q_cov)?;
        let g_star_svd = &g * q_svd.sqrt_matrix();
        let gqg = &g * &q_cov * g.transpose();

        Ok(ModelSpec {
            n,
            m,
            q,
            drift,
            observation,
            g,
            q_cov,
            r_cov,
            x0_mean,
            p0,
            drift_jacobian: None,
            drift_time_partial: None,
            drift_hessian_contraction: None,
            observation_jacobian: None,
            g_star,
            g_star_svd,
            gqg,
            q_sqrt,
            r_sqrt,
            r_svd,
            p0_sqrt,
            p0_svd,
        })
    }

    pub fn with_drift_jacobian(mut self, f: Box<DriftJacobianFn>) -> Self {
        self.drift_jacobian = Some(f);
        self
    }

    pub fn with_drift_time_partial(mut self, f: Box<VectorProviderFn>) -> Self {
        self.drift_time_partial = Some(f);
        self
    }

    /// Analytic provider of the `½·Σ G*G* ∂²` contraction term of `𝕃₀`.
    pub fn with_drift_hessian_contraction(mut self, f: Box<VectorProviderFn>) -> Self {
        self.drift_hessian_contraction = Some(f);
        self
    }

    pub fn with_observation_jacobian(mut self, f: Box<ObservationJacobianFn>) -> Self {
        self.observation_jacobian = Some(f);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn measurement_dim(&self) -> usize {
        self.m
    }

    pub fn brownian_dim(&self) -> usize {
        self.q
    }

    pub fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(t, x)
    }

    pub fn observation(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        (self.observation)(k, x)
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn q_cov(&self) -> &DMatrix<f64> {
        &self.q_cov
    }

    pub fn r_cov(&self) -> &DMatrix<f64> {
        &self.r_cov
    }

    pub fn x0_mean(&self) -> &DVector<f64> {
        &self.x0_mean
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p0
    }

    /// `G·Q^{1/2}` with the lower Cholesky square root of `Q`.
    pub fn g_star(&self) -> &GStar {
        &self.g_star
    }

    /// `G·W_Q·Σ_Q^{1/2}` with the SVD square root of `Q`, used by the
    /// SVD-based filter arrays.
    pub fn g_star_svd(&self) -> &DMatrix<f64> {
        &self.g_star_svd
    }

    /// `G·Q·Gᵀ`.
    pub fn gqg(&self) -> &DMatrix<f64> {
        &self.gqg
    }

    pub fn q_sqrt(&self) -> &LowerTriangularFactor {
        &self.q_sqrt
    }

    pub fn r_sqrt(&self) -> &LowerTriangularFactor {
        &self.r_sqrt
    }

    pub fn r_svd(&self) -> &SvdSqrtFactor {
        &self.r_svd
    }

    pub fn p0_sqrt(&self) -> &LowerTriangularFactor {
        &self.p0_sqrt
    }

    pub fn p0_svd(&self) -> &SvdSqrtFactor {
        &self.p0_svd
    }

    /// Drift Jacobian `∂f/∂x` at `(t, x)`: analytic when provided, otherwise
    /// central finite differences with step `hᵢ = 1e-6·max(1, |xᵢ|)`.
    pub fn jacobian(&self, t: f64, x: &DVector<f64>) -> NumResult<DMatrix<f64>> {
        if let Some(jac) = &self.drift_jacobian {
            return Ok(jac(t, x));
        }
        fd_jacobian(|y| self.drift(t, y), x, self.n, JACOBIAN_REL_STEP)
    }

    /// Observation Jacobian `∂h/∂x` at `(k, x)`, used by the baseline EKFs.
    pub fn observation_jacobian(&self, k: usize, x: &DVector<f64>) -> NumResult<DMatrix<f64>> {
        if let Some(jac) = &self.observation_jacobian {
            return Ok(jac(k, x));
        }
        fd_jacobian(|y| self.observation(k, y), x, self.m, JACOBIAN_REL_STEP)
    }

    /// The `𝕃f` matrix with `(i,j)` entry `𝕃ⱼfᵢ`, identically `J·G*` since
    /// `(𝕃f)ᵢⱼ = Σₚ G*ₚⱼ ∂fᵢ/∂xₚ`.
    pub fn l_matrix(&self, t: f64, x: &DVector<f64>) -> NumResult<DMatrix<f64>> {
        self.l_matrix_with(t, x, self.g_star.matrix())
    }

    /// `𝕃f` built against an alternative square root of `Q` (the SVD-based
    /// arrays must pair `𝕃f` with the same `G·Q^{1/2}` factor they stack).
    pub fn l_matrix_with(
        &self,
        t: f64,
        x: &DVector<f64>,
        g_star: &DMatrix<f64>,
    ) -> NumResult<DMatrix<f64>> {
        Ok(self.jacobian(t, x)? * g_star)
    }

    /// `𝕃₀f = ∂f/∂t + J·f + ½·Σⱼ D²f[G*ⱼ, G*ⱼ]` at `(t, x)`.
    pub fn l0_apply(&self, t: f64, x: &DVector<f64>) -> NumResult<DVector<f64>> {
        let f0 = self.drift(t, x);
        if !f0.iter().all(|v| v.is_finite()) {
            return Err(ErrorKind::NonFiniteOutput.into());
        }

        let time_partial = match &self.drift_time_partial {
            Some(p) => p(t, x),
            None => {
                let h = TIME_PARTIAL_STEP;
                let f1 = self.drift(t + h, x);
                (f1 - &f0) / h
            }
        };

        let transport = self.jacobian(t, x)? * &f0;

        let contraction = match &self.drift_hessian_contraction {
            Some(p) => p(t, x),
            None => self.fd_hessian_contraction(t, x, &f0)?,
        };

        let out = time_partial + transport + contraction;
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(ErrorKind::NonFiniteOutput.into())
        }
    }

    /// `½·Σⱼ (f(x + s·gⱼ) - 2f(x) + f(x - s·gⱼ)) / s²` over the columns
    /// `gⱼ` of `G*`.
    fn fd_hessian_contraction(
        &self,
        t: f64,
        x: &DVector<f64>,
        f0: &DVector<f64>,
    ) -> NumResult<DVector<f64>> {
        let mut acc = DVector::zeros(self.n);
        for j in 0..self.q {
            let gj = self.g_star.matrix().column(j);
            let scale = gj.amax();
            if scale == 0.0 {
                continue;
            }
            let s = HESSIAN_REL_STEP * x.amax().max(1.0) / scale;
            let step = s * gj;
            let xp = x + &step;
            let xm = x - &step;
            let fp = self.drift(t, &xp);
            let fm = self.drift(t, &xm);
            if !fp.iter().chain(fm.iter()).all(|v| v.is_finite()) {
                return Err(ErrorKind::NonFiniteOutput.into());
            }
            acc += (fp + fm - 2.0 * f0) / (s * s);
        }
        Ok(acc * 0.5)
    }
}

/// Relative step for first-derivative central differences; balances
/// truncation against roundoff near 1e-8 accuracy in double precision.
const JACOBIAN_REL_STEP: f64 = 1e-6;
/// Forward-difference step in `t`.
const TIME_PARTIAL_STEP: f64 = 1e-6;
/// Relative step for the second-difference Hessian contraction.
const HESSIAN_REL_STEP: f64 = 1e-4;

/// Central-difference Jacobian of an arbitrary vector map.
pub(crate) fn fd_jacobian<F>(
    map: F,
    x: &DVector<f64>,
    out_dim: usize,
    rel_step: f64,
) -> NumResult<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(out_dim, n);
    let mut xp = x.clone();
    let mut xm = x.clone();
    for i in 0..n {
        let h = rel_step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        xm[i] = x[i] - h;
        let fp = map(&xp);
        let fm = map(&xm);
        if !fp.iter().chain(fm.iter()).all(|v| v.is_finite()) {
            return Err(ErrorKind::NonFiniteOutput.into());
        }
        jac.set_column(i, &((fp - fm) / (2.0 * h)));
        xp[i] = x[i];
        xm[i] = x[i];
    }
    Ok(jac)
}

/// One-sided Jacobian of a vector map, reusing a precomputed `map(x)`.
/// The baseline IT-1.5 EKF uses this for the transition matrix of the
/// discretized drift: n+1 drift-map evaluations per substep instead of 2n,
/// which keeps the standard EKF cheaper than the sample-based filters.
pub(crate) fn fd_jacobian_forward<F>(
    map: F,
    x: &DVector<f64>,
    f0: &DVector<f64>,
    rel_step: f64,
) -> NumResult<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(f0.len(), n);
    let mut xp = x.clone();
    for i in 0..n {
        let h = rel_step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = map(&xp);
        if !fp.iter().all(|v| v.is_finite()) {
            return Err(ErrorKind::NonFiniteOutput.into());
        }
        jac.set_column(i, &((fp - f0) / h));
        xp[i] = x[i];
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear_model(a: DMatrix<f64>) -> ModelSpec {
        let n = a.nrows();
        let a_drift = a.clone();
        ModelSpec::new(
            Box::new(move |_t, x| &a_drift * x),
            Box::new(|_k, x| x.clone()),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            DVector::zeros(n),
            DMatrix::identity(n, n),
        )
        .unwrap()
    }

    #[test]
    fn fd_jacobian_matches_linear_drift() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 0.1]);
        let model = linear_model(a.clone());
        let x = DVector::from_vec(vec![1.5, -0.4]);
        let jac = model.jacobian(0.0, &x).unwrap();
        assert_relative_eq!(&jac, &a, epsilon = 1e-8);
    }

    #[test]
    fn analytic_jacobian_takes_precedence() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 0.1]);
        let a2 = a.clone();
        let model = linear_model(a.clone())
            .with_drift_jacobian(Box::new(move |_t, _x| a2.clone()));
        let jac = model.jacobian(0.0, &DVector::zeros(2)).unwrap();
        assert_relative_eq!(&jac, &a, epsilon = 0.0);
    }

    #[test]
    fn constant_drift_has_zero_jacobian_and_l0() {
        let model = ModelSpec::new(
            Box::new(|_t, x| DVector::from_element(x.len(), 2.5)),
            Box::new(|_k, x| x.clone()),
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
            DVector::zeros(3),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_relative_eq!(
            &model.jacobian(0.0, &x).unwrap(),
            &DMatrix::zeros(3, 3),
            epsilon = 1e-9
        );
        assert_relative_eq!(
            &model.l0_apply(0.0, &x).unwrap(),
            &DVector::zeros(3),
            epsilon = 1e-6
        );
    }

    #[test]
    fn l_matrix_is_jacobian_times_g_star() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 0.1]);
        let model = linear_model(a.clone());
        let x = DVector::from_vec(vec![0.2, 0.9]);
        let lm = model.l_matrix(0.0, &x).unwrap();
        let expected = model.jacobian(0.0, &x).unwrap() * model.g_star().matrix();
        assert_relative_eq!(&lm, &expected, epsilon = 0.0);
    }

    #[test]
    fn l_matrix_zero_diffusion() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 0.1]);
        let a_drift = a.clone();
        let model = ModelSpec::new(
            Box::new(move |_t, x| &a_drift * x),
            Box::new(|_k, x| x.clone()),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let lm = model.l_matrix(0.0, &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_relative_eq!(&lm, &DMatrix::zeros(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn l0_of_autonomous_linear_drift_is_a_squared_x() {
        // The Hessian term vanishes for linear drift, leaving J·f = A·A·x.
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 0.1]);
        let model = linear_model(a.clone());
        let x = DVector::from_vec(vec![1.5, -0.4]);
        let expected = &a * (&a * &x);
        assert_relative_eq!(&model.l0_apply(0.0, &x).unwrap(), &expected, epsilon = 1e-6);
    }

    #[test]
    fn l0_fd_fallback_matches_analytic_on_smooth_model() {
        // Drift with genuine curvature: f(x) = [sin(x1)·x0, x0²].
        let drift = |_t: f64, x: &DVector<f64>| {
            DVector::from_vec(vec![x[1].sin() * x[0], x[0] * x[0]])
        };
        let jac = |_t: f64, x: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[x[1].sin(), x[1].cos() * x[0], 2.0 * x[0], 0.0])
        };
        // G* = I, so the contraction is ½·(∂²f/∂x0² + ∂²f/∂x1²).
        let hess = |_t: f64, x: &DVector<f64>| {
            DVector::from_vec(vec![0.5 * (-x[1].sin() * x[0]), 1.0])
        };

        let base = ModelSpec::new(
            Box::new(drift),
            Box::new(|_k, x: &DVector<f64>| x.clone()),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let analytic = ModelSpec::new(
            Box::new(drift),
            Box::new(|_k, x: &DVector<f64>| x.clone()),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap()
        .with_drift_jacobian(Box::new(jac))
        .with_drift_time_partial(Box::new(|_t, x| DVector::zeros(x.len())))
        .with_drift_hessian_contraction(Box::new(hess));

        let mut state = 0x9e3779b97f4a7c15u64;
        for _ in 0..100 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let u = ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0;
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let v = ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0;
            let x = DVector::from_vec(vec![1.0 + u, v]);
            let got = base.l0_apply(0.0, &x).unwrap();
            let want = analytic.l0_apply(0.0, &x).unwrap();
            let denom = want.norm().max(1.0);
            assert!(
                (got - &want).norm() / denom < 1e-5,
                "l0 mismatch at x = {x:?}"
            );
        }
    }

    #[test]
    fn g_star_invariant() {
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.5]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let model = ModelSpec::new(
            Box::new(|_t, x: &DVector<f64>| x.clone()),
            Box::new(|_k, x: &DVector<f64>| x.clone()),
            g.clone(),
            q.clone(),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let gs = model.g_star().matrix();
        let want = &g * &q * g.transpose();
        assert_relative_eq!(&(gs * gs.transpose()), &want, epsilon = 1e-12);
        let gsv = model.g_star_svd();
        assert_relative_eq!(&(gsv * gsv.transpose()), &want, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_drift_output_is_reported() {
        let model = ModelSpec::new(
            Box::new(|_t, x: &DVector<f64>| {
                DVector::from_element(x.len(), f64::NAN)
            }),
            Box::new(|_k, x: &DVector<f64>| x.clone()),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let err = model.jacobian(0.0, &DVector::zeros(1)).unwrap_err();
        assert_eq!(err.kind, ErrorKind::NonFiniteOutput);
    }
}
