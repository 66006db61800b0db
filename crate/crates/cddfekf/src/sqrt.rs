//! Square-root derivative-free EKF variants: Cholesky-based algorithms with
//! a two-array or a combined one-array measurement update, and SVD-based
//! algorithms. The covariance is never formed; only its factor is
//! propagated through orthogonal (or SVD) transformations of pre-arrays,
//! and sample points are generated directly from the held factor.

use nalgebra::{DMatrix, DVector};

use crate::dfekf::{center_scale, sample_matrix, DfekfConfig};
use crate::error::{ErrorKind, NumError, NumResult};
use crate::linalg::{
    block_triangularize, svd_factor_of_array, triangularize_lower, LowerTriangularFactor,
    SvdSqrtFactor,
};
use crate::model::ModelSpec;
use crate::run::{run_filter, FilterStepper, RunResult};
use crate::sde::{scheme_drift, scheme_drift_columns, Mesh, Scheme};

/// Covariance factor carried by a square-root filter.
#[derive(Debug, Clone, PartialEq)]
pub enum SqrtFactor {
    Cholesky(LowerTriangularFactor),
    Svd(SvdSqrtFactor),
}

impl SqrtFactor {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        match self {
            SqrtFactor::Cholesky(l) => l.reconstruct(),
            SqrtFactor::Svd(f) => f.reconstruct(),
        }
    }

    fn cholesky(&self) -> &LowerTriangularFactor {
        match self {
            SqrtFactor::Cholesky(l) => l,
            SqrtFactor::Svd(_) => panic!("filter variant requires a Cholesky factor"),
        }
    }

    fn svd(&self) -> &SvdSqrtFactor {
        match self {
            SqrtFactor::Svd(f) => f,
            SqrtFactor::Cholesky(_) => panic!("filter variant requires an SVD factor"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqrtFilterState {
    pub t: f64,
    pub x_hat: DVector<f64>,
    pub factor: SqrtFactor,
}

/// The three square-root measurement-update structures. Combined with the
/// discretization scheme this yields algorithms 1a/1b/1c (Euler-Maruyama)
/// and 2a/2b/2c (Itô-Taylor).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SqrtAlgorithm {
    /// Two orthogonal transformations per update; gain through two
    /// triangular solves (variants 1a/2a).
    TwoQr,
    /// One combined-array transformation per update; the normalized
    /// cross-covariance is read off the post-array and the gain needs a
    /// single triangular solve (variants 1b/2b).
    OneQr,
    /// SVD factors throughout (variants 1c/2c).
    Svd,
}

impl SqrtAlgorithm {
    /// Conventional pseudo-code label for this algorithm under a scheme.
    pub fn label(&self, scheme: Scheme) -> &'static str {
        match (scheme, self) {
            (Scheme::EulerMaruyama, SqrtAlgorithm::TwoQr) => "1a",
            (Scheme::EulerMaruyama, SqrtAlgorithm::OneQr) => "1b",
            (Scheme::EulerMaruyama, SqrtAlgorithm::Svd) => "1c",
            (Scheme::ItoTaylor15, SqrtAlgorithm::TwoQr) => "2a",
            (Scheme::ItoTaylor15, SqrtAlgorithm::OneQr) => "2b",
            (Scheme::ItoTaylor15, SqrtAlgorithm::Svd) => "2c",
        }
    }
}

/// Relative floor on the square-root singular values of `Rₑ`; below it the
/// update is declared failed rather than regularized, preserving breakdown
/// semantics.
const SVD_SINGULAR_FLOOR: f64 = 1e-14;

fn propagate_samples(
    state: &SqrtFilterState,
    model: &ModelSpec,
    delta: f64,
    cfg: &DfekfConfig,
    scheme: Scheme,
    sqrt_matrix: &DMatrix<f64>,
) -> NumResult<(DVector<f64>, DMatrix<f64>)> {
    let samples = sample_matrix(&state.x_hat, sqrt_matrix, cfg.alpha);
    let x_next = scheme_drift(scheme, model, state.t, &state.x_hat, delta)?;
    let propagated = scheme_drift_columns(scheme, model, state.t, &samples, delta)?;
    let spread = center_scale(&propagated, &x_next, cfg.alpha);
    Ok((x_next, spread))
}

fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), (rows, b.ncols())).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Euler-Maruyama prediction substep on the Cholesky factor: samples come
/// straight from the held factor (no re-factorization) and the new factor
/// is the triangularization of `[F̄𝕏  √δ·G·Q^{1/2}]`.
pub fn sr_em_predict_substep(
    state: &SqrtFilterState,
    model: &ModelSpec,
    delta: f64,
    cfg: &DfekfConfig,
) -> NumResult<SqrtFilterState> {
    let l = state.factor.cholesky();
    let (x_next, spread) =
        propagate_samples(state, model, delta, cfg, Scheme::EulerMaruyama, l.matrix())?;
    let noise = delta.sqrt() * model.g_star().matrix();
    let pre = hstack(&[&spread, &noise]);
    Ok(SqrtFilterState {
        t: state.t + delta,
        x_hat: x_next,
        factor: SqrtFactor::Cholesky(triangularize_lower(&pre)?),
    })
}

/// Itô-Taylor prediction substep on the Cholesky factor:
/// `[F̄𝕏  √δ(G·Q^{1/2} + ½δ·𝕃f)  √(δ³/12)·𝕃f]` with `𝕃f` at the current
/// mean. Its Gram recombines `δ³/4 + δ³/12 = δ³/3` to the conventional
/// covariance expression.
pub fn sr_it_predict_substep(
    state: &SqrtFilterState,
    model: &ModelSpec,
    delta: f64,
    cfg: &DfekfConfig,
) -> NumResult<SqrtFilterState> {
    let l = state.factor.cholesky();
    let (x_next, spread) =
        propagate_samples(state, model, delta, cfg, Scheme::ItoTaylor15, l.matrix())?;
    let lf = model.l_matrix(state.t, &state.x_hat)?;
    let mid = delta.sqrt() * (model.g_star().matrix() + (0.5 * delta) * &lf);
    let tail = (delta.powi(3) / 12.0).sqrt() * &lf;
    let pre = hstack(&[&spread, &mid, &tail]);
    Ok(SqrtFilterState {
        t: state.t + delta,
        x_hat: x_next,
        factor: SqrtFactor::Cholesky(triangularize_lower(&pre)?),
    })
}

/// SVD prediction substep (algorithms 1c/2c): samples are built from
/// `W·Σ^{1/2}` and the new factor is the SVD of the scheme's pre-array,
/// using the SVD square root of `Q` throughout.
pub fn svd_predict_substep(
    state: &SqrtFilterState,
    model: &ModelSpec,
    delta: f64,
    cfg: &DfekfConfig,
    scheme: Scheme,
) -> NumResult<SqrtFilterState> {
    let f = state.factor.svd();
    let sqrt_matrix = f.sqrt_matrix();
    let (x_next, spread) = propagate_samples(state, model, delta, cfg, scheme, &sqrt_matrix)?;

    let pre = match scheme {
        Scheme::EulerMaruyama => {
            let noise = delta.sqrt() * model.g_star_svd();
            hstack(&[&spread, &noise])
        }
        Scheme::ItoTaylor15 => {
            // 𝕃f must pair with the same square root of Q that is stacked
            // in the noise block, or the cross terms of the Gram are wrong.
            let lf = model.l_matrix_with(state.t, &state.x_hat, model.g_star_svd())?;
            let mid = delta.sqrt() * (model.g_star_svd() + (0.5 * delta) * &lf);
            let tail = (delta.powi(3) / 12.0).sqrt() * &lf;
            hstack(&[&spread, &mid, &tail])
        }
    };
    Ok(SqrtFilterState {
        t: state.t + delta,
        x_hat: x_next,
        factor: SqrtFactor::Svd(svd_factor_of_array(&pre)?),
    })
}

fn sampled_measurement(
    state_pred: &SqrtFilterState,
    model: &ModelSpec,
    k: usize,
    cfg: &DfekfConfig,
    sqrt_matrix: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let samples = sample_matrix(&state_pred.x_hat, sqrt_matrix, cfg.alpha);
    let z_hat = model.observation(k, &state_pred.x_hat);
    let mut z_samples = DMatrix::zeros(z_hat.len(), samples.ncols());
    for j in 0..samples.ncols() {
        let col = samples.column(j).into_owned();
        z_samples.set_column(j, &model.observation(k, &col));
    }
    let x_bar = center_scale(&samples, &state_pred.x_hat, cfg.alpha);
    let z_bar = center_scale(&z_samples, &z_hat, cfg.alpha);
    (z_hat, x_bar, z_bar)
}

/// Measurement update with two orthogonal transformations (algorithms
/// 1a/2a): `Rₑ^{1/2}` from `[𝕑̄  R^{1/2}]`, gain through two triangular
/// solves, filtered factor from `[𝕏̄ - K𝕑̄  K·R^{1/2}]`.
pub fn sr_mu_two_qr(
    state_pred: &SqrtFilterState,
    k: usize,
    z: &DVector<f64>,
    model: &ModelSpec,
    cfg: &DfekfConfig,
) -> NumResult<SqrtFilterState> {
    let l = state_pred.factor.cholesky();
    let (z_hat, x_bar, z_bar) = sampled_measurement(state_pred, model, k, cfg, l.matrix());

    let re_sqrt = triangularize_lower(&hstack(&[&z_bar, model.r_sqrt().matrix()]))?;
    let p_xz = &x_bar * z_bar.transpose();

    // K = P_xz·Rₑ^{-ᵀ/2}·Rₑ^{-1/2}:  Kᵀ = Rₑ^{-ᵀ/2}·(Rₑ^{-1/2}·P_xzᵀ).
    let u = re_sqrt.solve(&p_xz.transpose())?;
    let gain = re_sqrt.solve_transposed(&u)?.transpose();

    let x_next = &state_pred.x_hat + &gain * (z - &z_hat);
    let pre = hstack(&[&(&x_bar - &gain * &z_bar), &(&gain * model.r_sqrt().matrix())]);
    Ok(SqrtFilterState {
        t: state_pred.t,
        x_hat: x_next,
        factor: SqrtFactor::Cholesky(triangularize_lower(&pre)?),
    })
}

/// Measurement update with one combined-array transformation (algorithms
/// 1b/2b): `Rₑ^{1/2}`, the normalized cross-covariance and the filtered
/// factor are all read off one post-array, and the gain
/// `K = P̄_xz·Rₑ^{-1/2}` needs a single triangular solve.
pub fn sr_mu_one_qr(
    state_pred: &SqrtFilterState,
    k: usize,
    z: &DVector<f64>,
    model: &ModelSpec,
    cfg: &DfekfConfig,
) -> NumResult<SqrtFilterState> {
    let l = state_pred.factor.cholesky();
    let (z_hat, x_bar, z_bar) = sampled_measurement(state_pred, model, k, cfg, l.matrix());

    let (re_sqrt, pxz_bar, p_sqrt) =
        block_triangularize(&z_bar, &x_bar, model.r_sqrt().matrix())?;

    // K·Rₑ^{1/2} = P̄_xz  ⇔  Rₑ^{ᵀ/2}·Kᵀ = P̄_xzᵀ.
    let gain = re_sqrt.solve_transposed(&pxz_bar.transpose())?.transpose();

    let x_next = &state_pred.x_hat + &gain * (z - &z_hat);
    Ok(SqrtFilterState {
        t: state_pred.t,
        x_hat: x_next,
        factor: SqrtFactor::Cholesky(p_sqrt),
    })
}

/// SVD measurement update (algorithms 1c/2c): SVD factors of `Rₑ` from
/// `[𝕑̄  W_R·Σ_R^{1/2}]`, gain `K = P_xz·W·Σ⁻¹·Wᵀ` with reciprocal singular
/// values, filtered factor from `[𝕏̄ - K𝕑̄  K·W_R·Σ_R^{1/2}]`.
pub fn svd_mu(
    state_pred: &SqrtFilterState,
    k: usize,
    z: &DVector<f64>,
    model: &ModelSpec,
    cfg: &DfekfConfig,
) -> NumResult<SqrtFilterState> {
    let f = state_pred.factor.svd();
    let sqrt_matrix = f.sqrt_matrix();
    let (z_hat, x_bar, z_bar) = sampled_measurement(state_pred, model, k, cfg, &sqrt_matrix);

    let r_sqrt_svd = model.r_svd().sqrt_matrix();
    let re = svd_factor_of_array(&hstack(&[&z_bar, &r_sqrt_svd]))?;

    // Written so that a NaN or zero leading singular value also fails.
    let s_max = re.s[0];
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(s_max > 0.0) || re.s.iter().any(|&s| s < SVD_SINGULAR_FLOOR * s_max) {
        return Err(ErrorKind::SingularResidualCovariance.into());
    }

    // K = P_xz · W·diag(1/s²)·Wᵀ.
    let p_xz = &x_bar * z_bar.transpose();
    let mut w_scaled = re.w.clone();
    for (j, &s) in re.s.iter().enumerate() {
        w_scaled.column_mut(j).scale_mut(1.0 / (s * s));
    }
    let gain = &p_xz * w_scaled * re.w.transpose();

    let x_next = &state_pred.x_hat + &gain * (z - &z_hat);
    let pre = hstack(&[&(&x_bar - &gain * &z_bar), &(&gain * &r_sqrt_svd)]);
    Ok(SqrtFilterState {
        t: state_pred.t,
        x_hat: x_next,
        factor: SqrtFactor::Svd(svd_factor_of_array(&pre)?),
    })
}

/// One prediction substep of the given square-root algorithm.
pub fn sr_predict_substep(
    state: &SqrtFilterState,
    model: &ModelSpec,
    delta: f64,
    cfg: &DfekfConfig,
    algorithm: SqrtAlgorithm,
) -> NumResult<SqrtFilterState> {
    match algorithm {
        SqrtAlgorithm::Svd => svd_predict_substep(state, model, delta, cfg, cfg.scheme),
        SqrtAlgorithm::TwoQr | SqrtAlgorithm::OneQr => match cfg.scheme {
            Scheme::EulerMaruyama => sr_em_predict_substep(state, model, delta, cfg),
            Scheme::ItoTaylor15 => sr_it_predict_substep(state, model, delta, cfg),
        },
    }
}

/// Propagate a square-root state across one sampling interval with `L`
/// substeps.
pub fn sr_predict_interval(
    state: &SqrtFilterState,
    model: &ModelSpec,
    big_delta: f64,
    cfg: &DfekfConfig,
    algorithm: SqrtAlgorithm,
) -> NumResult<SqrtFilterState> {
    assert!(big_delta > 0.0);
    let mesh = Mesh::new(state.t, state.t + big_delta, cfg.l_subdivisions);
    let mut current = state.clone();
    for l in 0..mesh.l_subdivisions {
        current.t = mesh.node(l);
        current = sr_predict_substep(&current, model, mesh.delta, cfg, algorithm)
            .map_err(|e| e.at_substep(l))?;
    }
    current.t = mesh.t_end;
    Ok(current)
}

struct SqrtStepper {
    state: SqrtFilterState,
    cfg: DfekfConfig,
    algorithm: SqrtAlgorithm,
}

impl FilterStepper for SqrtStepper {
    fn predict(&mut self, model: &ModelSpec, t_to: f64) -> Result<(), NumError> {
        self.state = sr_predict_interval(
            &self.state,
            model,
            t_to - self.state.t,
            &self.cfg,
            self.algorithm,
        )?;
        Ok(())
    }

    fn update(&mut self, model: &ModelSpec, k: usize, z: &DVector<f64>) -> Result<(), NumError> {
        self.state = match self.algorithm {
            SqrtAlgorithm::TwoQr => sr_mu_two_qr(&self.state, k, z, model, &self.cfg)?,
            SqrtAlgorithm::OneQr => sr_mu_one_qr(&self.state, k, z, model, &self.cfg)?,
            SqrtAlgorithm::Svd => svd_mu(&self.state, k, z, model, &self.cfg)?,
        };
        Ok(())
    }

    fn estimate(&self) -> &DVector<f64> {
        &self.state.x_hat
    }

    fn covariance_full(&self) -> DMatrix<f64> {
        self.state.factor.reconstruct()
    }
}

/// Run a square-root DF-EKF variant from `(x̄₀, Π₀)`; the initial factor is
/// the lower Cholesky or SVD square root of `Π₀` and the only full-matrix
/// factorization of the whole run.
pub fn run_squareroot(
    model: &ModelSpec,
    cfg: &DfekfConfig,
    algorithm: SqrtAlgorithm,
    measurements: &[(f64, DVector<f64>)],
) -> RunResult {
    let factor = match algorithm {
        SqrtAlgorithm::Svd => SqrtFactor::Svd(model.p0_svd().clone()),
        _ => SqrtFactor::Cholesky(model.p0_sqrt().clone()),
    };
    let stepper = SqrtStepper {
        state: SqrtFilterState {
            t: 0.0,
            x_hat: model.x0_mean().clone(),
            factor,
        },
        cfg: *cfg,
        algorithm,
    };
    run_filter(stepper, model, measurements)
}
