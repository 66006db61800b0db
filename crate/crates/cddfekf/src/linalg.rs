//! Matrix factorization kernels with the exact contracts the square-root
//! filters rely on: lower Cholesky, array triangularization through an
//! implicit orthogonal transformation, block array triangularization and
//! SVD square-root extraction.
//!
//! Every triangularization realizes the orthogonal map as an LQ-style
//! factorization of the pre-array (QR of its transpose); the orthogonal
//! factor is never materialized. Post-array diagonals are sign-normalized
//! to be non-negative so outputs are deterministic.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};

use crate::error::{ErrorKind, NumResult};

thread_local! {
    static CHOLESKY_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of `lower_cholesky` invocations on the current thread.
///
/// The factored-form filters must never re-factor a full covariance after
/// initialization; tests assert that through this counter.
pub fn lower_cholesky_invocations() -> u64 {
    CHOLESKY_CALLS.with(|c| c.get())
}

/// Lower-triangular matrix square-root: `L·Lᵀ` reproduces the factored matrix.
///
/// The strictly upper triangle is exactly zero and diagonal entries are
/// non-negative (strictly positive when the factored matrix was positive
/// definite).
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangularFactor {
    entries: DMatrix<f64>,
}

impl LowerTriangularFactor {
    /// Wrap a matrix that is already lower triangular with non-negative
    /// diagonal. Intended for factors read off a post-array.
    fn from_lower(entries: DMatrix<f64>) -> Self {
        debug_assert!(entries.is_square());
        LowerTriangularFactor { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// `L·Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.entries * self.entries.transpose()
    }

    /// Solve `L·X = B` by forward substitution.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> NumResult<DMatrix<f64>> {
        self.entries
            .solve_lower_triangular(rhs)
            .ok_or_else(|| ErrorKind::SingularResidualCovariance.into())
    }

    /// Solve `Lᵀ·X = B` by back substitution.
    pub fn solve_transposed(&self, rhs: &DMatrix<f64>) -> NumResult<DMatrix<f64>> {
        self.entries
            .tr_solve_lower_triangular(rhs)
            .ok_or_else(|| ErrorKind::SingularResidualCovariance.into())
    }
}

/// SVD square-root of a symmetric positive semidefinite matrix:
/// `P = W·diag(s²)·Wᵀ` with `W` orthogonal and `s` the non-negative,
/// non-increasing square roots of the singular values of `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdSqrtFactor {
    pub w: DMatrix<f64>,
    pub s: DVector<f64>,
}

impl SvdSqrtFactor {
    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// The dense square-root `W·diag(s)`, suitable for sample generation.
    pub fn sqrt_matrix(&self) -> DMatrix<f64> {
        let mut m = self.w.clone();
        for (j, sj) in self.s.iter().enumerate() {
            m.column_mut(j).scale_mut(*sj);
        }
        m
    }

    /// `W·diag(s²)·Wᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let sq = self.sqrt_matrix();
        &sq * sq.transpose()
    }
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Lower Cholesky factorization `p = L·Lᵀ`.
///
/// Fails with `NotPositiveDefinite` as soon as a pivot is not strictly
/// positive; this is the breakdown signal the benchmark records as filter
/// failure. Only the lower triangle of `p` is read, so mildly asymmetric
/// inputs (roundoff in `P - K·Rₑ·Kᵀ`) are factored without symmetrization.
pub fn lower_cholesky(p: &DMatrix<f64>) -> NumResult<LowerTriangularFactor> {
    assert!(p.is_square(), "cholesky input must be square");
    CHOLESKY_CALLS.with(|c| c.set(c.get() + 1));
    let n = p.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = p[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        // Written so that a NaN pivot is also rejected.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(d > 0.0) {
            return Err(ErrorKind::NotPositiveDefinite.into());
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = p[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    Ok(LowerTriangularFactor::from_lower(l))
}

/// Flip column signs so diagonal entries are non-negative. Column scaling by
/// ±1 is absorbed into the implicit orthogonal factor and leaves `L·Lᵀ`
/// unchanged.
fn normalize_diagonal_signs(l: &mut DMatrix<f64>) {
    let n = l.nrows().min(l.ncols());
    for j in 0..n {
        if l[(j, j)] < 0.0 {
            l.column_mut(j).neg_mut();
        }
    }
}

/// Lower-triangularize the pre-array `a` (n×m, m ≥ n): returns the lower
/// triangular `L` with `L·Lᵀ = a·aᵀ`. The orthogonal transformation is an
/// implicit QR of `aᵀ` and is never formed.
pub fn triangularize_lower(a: &DMatrix<f64>) -> NumResult<LowerTriangularFactor> {
    if !all_finite(a) {
        return Err(ErrorKind::NonFiniteInput.into());
    }
    debug_assert!(
        a.ncols() >= a.nrows(),
        "pre-array must have at least as many columns as rows"
    );
    let r = a.transpose().qr().unpack_r();
    let mut l = r.transpose();
    normalize_diagonal_signs(&mut l);
    Ok(LowerTriangularFactor::from_lower(l))
}

/// Block lower-triangularization of the combined measurement-update
/// pre-array
///
/// ```text
/// [ zbar  r_sqrt ]        [ re_sqrt   0      ]
/// [ xbar  0      ] · Θ  = [ pxz_bar   p_sqrt ]
/// ```
///
/// returning the residual-covariance factor, the normalized cross-covariance
/// and the filtered covariance factor in one orthogonal pass.
pub fn block_triangularize(
    zbar: &DMatrix<f64>,
    xbar: &DMatrix<f64>,
    r_sqrt: &DMatrix<f64>,
) -> NumResult<(LowerTriangularFactor, DMatrix<f64>, LowerTriangularFactor)> {
    let m = zbar.nrows();
    let n = xbar.nrows();
    assert_eq!(zbar.ncols(), n, "zbar must have n columns");
    assert_eq!(xbar.ncols(), n, "xbar must be n×n");
    assert_eq!(r_sqrt.nrows(), m, "r_sqrt must be m×m");
    assert_eq!(r_sqrt.ncols(), m, "r_sqrt must be m×m");

    let mut pre = DMatrix::zeros(m + n, n + m);
    pre.view_mut((0, 0), (m, n)).copy_from(zbar);
    pre.view_mut((0, n), (m, m)).copy_from(r_sqrt);
    pre.view_mut((m, 0), (n, n)).copy_from(xbar);
    if !all_finite(&pre) {
        return Err(ErrorKind::NonFiniteInput.into());
    }

    let r = pre.transpose().qr().unpack_r();
    let mut l = r.transpose();
    normalize_diagonal_signs(&mut l);

    let re_sqrt = LowerTriangularFactor::from_lower(l.view((0, 0), (m, m)).into_owned());
    let pxz_bar = l.view((m, 0), (n, m)).into_owned();
    let p_sqrt = LowerTriangularFactor::from_lower(l.view((m, m), (n, n)).into_owned());
    Ok((re_sqrt, pxz_bar, p_sqrt))
}

const JACOBI_MAX_SWEEPS: usize = 64;

/// Sorted left SVD factor of a square `b`: orthogonal `w` and the
/// non-increasing singular values, computed by one-sided (Hestenes) Jacobi.
///
/// The sweep only right-multiplies `b` by plane rotations, so `b·bᵀ` is
/// preserved to machine precision regardless of clustering of the singular
/// values — exactly the Gram contract the square-root arrays rely on.
/// Directions of singular values at roundoff level are completed to an
/// orthonormal basis; their magnitudes are kept.
fn sorted_left_svd(b: DMatrix<f64>, n: usize) -> NumResult<(DMatrix<f64>, DVector<f64>)> {
    debug_assert_eq!(b.nrows(), n);
    debug_assert_eq!(b.ncols(), n);
    let mut work = b;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (aii, ajj, aij) = {
                    let bi = work.column(i);
                    let bj = work.column(j);
                    (bi.norm_squared(), bj.norm_squared(), bi.dot(&bj))
                };
                if aij == 0.0 || aij.abs() <= 1e-15 * (aii * ajj).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (ajj - aii) / (2.0 * aij);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..n {
                    let vi = work[(r, i)];
                    let vj = work[(r, j)];
                    work[(r, i)] = c * vi - s * vj;
                    work[(r, j)] = s * vi + c * vj;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Non-increasing singular values; ties keep sweep order.
    let mut order: Vec<(f64, usize)> = (0..n).map(|j| (work.column(j).norm(), j)).collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut w = DMatrix::zeros(n, n);
    let mut s = DVector::zeros(n);
    let s_max = order[0].0;
    let negligible = s_max * f64::EPSILON * n as f64;
    let mut rank = 0;
    for (dst, &(sigma, src)) in order.iter().enumerate() {
        s[dst] = sigma;
        if sigma > negligible {
            w.column_mut(dst).copy_from(&(work.column(src) / sigma));
            rank = dst + 1;
        }
    }
    if rank < n {
        if rank == 0 {
            w = DMatrix::identity(n, n);
        } else {
            // Orthonormal completion; the completed columns pair with
            // negligible singular values and barely touch reconstructions.
            let qr = w.view((0, 0), (n, rank)).into_owned().qr();
            let mut q_tr = DMatrix::identity(n, n);
            qr.q_tr_mul(&mut q_tr);
            let q_full = q_tr.transpose();
            for j in rank..n {
                w.column_mut(j).copy_from(&q_full.column(j));
            }
        }
    }

    // Canonical column signs: largest-magnitude entry positive. Covariance
    // reconstructions are sign-blind, but sample points generated from the
    // factor are not, so factors of nearly identical matrices must agree.
    for j in 0..n {
        let mut imax = 0;
        let mut vmax = 0.0f64;
        for i in 0..n {
            let v = w[(i, j)].abs();
            if v > vmax {
                vmax = v;
                imax = i;
            }
        }
        if w[(imax, j)] < 0.0 {
            w.column_mut(j).neg_mut();
        }
    }

    if !all_finite(&w) {
        return Err(ErrorKind::NonFiniteOutput.into());
    }
    Ok((w, s))
}

/// SVD square-root of a symmetric positive semidefinite matrix:
/// `p = W·Σ·Wᵀ`, returned as `(W, Σ^{1/2})`.
///
/// The factorization exists for any matrix, which is what makes SVD-based
/// sampling survive covariances whose positive definiteness was lost to
/// roundoff; a symmetric indefinite input yields the factor of `|p|`.
pub fn svd_sqrt(p: &DMatrix<f64>) -> NumResult<SvdSqrtFactor> {
    assert!(p.is_square(), "svd_sqrt input must be square");
    if !all_finite(p) {
        return Err(ErrorKind::NonFiniteInput.into());
    }
    // P = W·Σ·Wᵀ, so the held square roots are √σᵢ.
    let (w, sigma) = sorted_left_svd(p.clone(), p.nrows())?;
    Ok(SvdSqrtFactor {
        w,
        s: sigma.map(f64::sqrt),
    })
}

/// SVD factor of a pre-array `a` (n×m): returns `(W, Σ^{1/2})` with
/// `W·Σ·Wᵀ = a·aᵀ`. The right orthogonal factor of the SVD is discarded.
/// When m < n the missing singular values are zero.
///
/// The wide array is first reduced to its n×n triangular factor by an
/// orthogonal transformation, which leaves the left singular structure
/// unchanged and keeps the Gram reconstruction near machine precision.
pub fn svd_factor_of_array(a: &DMatrix<f64>) -> NumResult<SvdSqrtFactor> {
    if !all_finite(a) {
        return Err(ErrorKind::NonFiniteInput.into());
    }
    let n = a.nrows();
    let square = if a.ncols() >= n {
        a.transpose().qr().unpack_r().transpose()
    } else {
        // Zero columns leave a·aᵀ unchanged; the Jacobi sweep never rotates
        // into them and the rank-deficient directions get completed.
        let mut padded = DMatrix::zeros(n, n);
        padded.view_mut((0, 0), (n, a.ncols())).copy_from(a);
        padded
    };
    let (w, s) = sorted_left_svd(square, n)?;
    Ok(SvdSqrtFactor { w, s })
}
