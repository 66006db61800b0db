//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Criteria 4, 5 and 8 share a single full Monte Carlo sweep of the
//! benchmark scenario (run once, cached).
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines and the measured sweep table.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use cddfekf::baseline::{run_baseline, BaselineFamily, BaselineVariant};
use cddfekf::coordinated_turn::build_coordinated_turn;
use cddfekf::dfekf::{run_conventional, DfekfConfig, SampleSqrt};
use cddfekf::harness::{
    execute_filter, generate_run_data, rng_stream, sweep, ExperimentConfig, FilterVariant,
    ScenarioStatus, SweepTable,
};
use cddfekf::linalg::{
    block_triangularize, lower_cholesky, svd_factor_of_array, triangularize_lower,
};
use cddfekf::model::ModelSpec;
use cddfekf::run::RunStatus;
use cddfekf::sde::{sample_it_noise, Scheme};
use cddfekf::sqrt::{run_squareroot, SqrtAlgorithm};

fn rel_mat(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    (got - want).norm() / want.norm().max(1e-300)
}

fn rel_vec(got: &DVector<f64>, want: &DVector<f64>) -> f64 {
    (got - want).norm() / want.norm().max(1e-300)
}

struct Lcg(u64);

impl Lcg {
    fn unit(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn matrix(&mut self, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| self.unit())
    }

    fn vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.unit())
    }
}

// ---------------------------------------------------------------------
// Criterion 1: linear-Gaussian oracle
// ---------------------------------------------------------------------

/// Classical Kalman filter on the discretized linear model; independent of
/// the library's filter code paths (explicit inverses, no sampling).
struct DiscreteKf {
    phi: DMatrix<f64>,
    q_d: DMatrix<f64>,
    h: DMatrix<f64>,
    r: DMatrix<f64>,
    subdivisions: usize,
    x: DVector<f64>,
    p: DMatrix<f64>,
}

impl DiscreteKf {
    fn step(&mut self, z: &DVector<f64>) {
        for _ in 0..self.subdivisions {
            self.x = &self.phi * &self.x;
            self.p = &self.phi * &self.p * self.phi.transpose() + &self.q_d;
        }
        let re = &self.h * &self.p * self.h.transpose() + &self.r;
        let gain = &self.p * self.h.transpose() * re.clone().try_inverse().unwrap();
        self.x = &self.x + &gain * (z - &self.h * &self.x);
        self.p = &self.p - &gain * &re * gain.transpose();
    }
}

fn linear_test_model(
    a: &DMatrix<f64>,
    h: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x0: &DVector<f64>,
    p0: &DMatrix<f64>,
) -> ModelSpec {
    let a_drift = a.clone();
    let a_jac = a.clone();
    let h_obs = h.clone();
    let h_jac = h.clone();
    ModelSpec::new(
        Box::new(move |_t, x| &a_drift * x),
        Box::new(move |_k, x| &h_obs * x),
        g.clone(),
        q.clone(),
        r.clone(),
        x0.clone(),
        p0.clone(),
    )
    .unwrap()
    .with_drift_jacobian(Box::new(move |_t, _x| a_jac.clone()))
    .with_drift_time_partial(Box::new(|_t, x| DVector::zeros(x.len())))
    .with_drift_hessian_contraction(Box::new(|_t, x| DVector::zeros(x.len())))
    .with_observation_jacobian(Box::new(move |_k, _x| h_jac.clone()))
}

#[test]
fn acceptance_1_linear_gaussian_oracle() {
    let mut rng = Lcg(0xACCE0001);
    let n = 4;
    let a = rng.matrix(n, n) * 0.5;
    let g = rng.matrix(n, 2);
    let q_half = rng.matrix(2, 2);
    let q = &q_half * q_half.transpose() + DMatrix::identity(2, 2) * 0.5;
    let h = rng.matrix(2, n);
    let r = DMatrix::identity(2, 2) * 0.4;
    let x0 = rng.vector(n);
    let p0_half = rng.matrix(n, n);
    let p0 = &p0_half * p0_half.transpose() + DMatrix::identity(n, n);

    let model = linear_test_model(&a, &h, &g, &q, &r, &x0, &p0);

    // Simulated measurements; any data works since all filters see it.
    let steps = 12;
    let big_delta = 0.5;
    let l = 4usize;
    let measurements: Vec<(f64, DVector<f64>)> = (1..=steps)
        .map(|k| (k as f64 * big_delta, rng.vector(2) * 3.0))
        .collect();

    let delta = big_delta / l as f64;
    let g_star = &g * lower_cholesky(&q).unwrap().into_matrix();
    let gqg = &g_star * g_star.transpose();
    let lf = &a * &g_star;
    let cross = &g_star * lf.transpose();

    let start = std::time::Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    for scheme in [Scheme::EulerMaruyama, Scheme::ItoTaylor15] {
        let (phi, q_d) = match scheme {
            Scheme::EulerMaruyama => (
                DMatrix::identity(n, n) + delta * &a,
                delta * &gqg,
            ),
            Scheme::ItoTaylor15 => (
                DMatrix::identity(n, n) + delta * &a + (0.5 * delta * delta) * (&a * &a),
                delta * &gqg
                    + (0.5 * delta * delta) * (&cross + cross.transpose())
                    + (delta.powi(3) / 3.0) * (&lf * lf.transpose()),
            ),
        };

        let mut oracle = DiscreteKf {
            phi,
            q_d,
            h: h.clone(),
            r: r.clone(),
            subdivisions: l,
            x: x0.clone(),
            p: p0.clone(),
        };
        let mut reference: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::new();
        for (_, z) in &measurements {
            oracle.step(z);
            reference.push((oracle.x.clone(), oracle.p.clone()));
        }

        for variant in FilterVariant::all().into_iter().filter(|v| v.scheme == scheme) {
            for alpha in [10.0, 1000.0] {
                let cfg = ExperimentConfig {
                    l_em: l,
                    l_it: l,
                    alpha,
                    ..ExperimentConfig::default()
                };
                let result = execute_filter(&model, variant, &cfg, &measurements);
                assert_eq!(
                    result.status,
                    RunStatus::Completed,
                    "{variant} failed on the linear model"
                );
                for (k, (want_x, want_p)) in reference.iter().enumerate() {
                    let ex = rel_vec(&result.estimates[k], want_x);
                    let ep = rel_mat(&result.covariances[k], want_p);
                    let err = ex.max(ep);
                    if err > worst.0 {
                        worst = (err, format!("{variant} (alpha {alpha}, step {})", k + 1));
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst.0 < 1e-9 && elapsed < 10.0;
    println!(
        "ACCEPTANCE 1 (linear-Gaussian oracle): {} — worst relative deviation {:.2e} at {}, {elapsed:.1}s",
        if pass { "PASS" } else { "FAIL" },
        worst.0,
        worst.1
    );
    assert!(pass, "worst {:.3e} at {} (limit 1e-9, 10s)", worst.0, worst.1);
}

// ---------------------------------------------------------------------
// Criterion 2: square-root / conventional equivalence
// ---------------------------------------------------------------------

#[test]
fn acceptance_2_squareroot_conventional_equivalence() {
    let start = std::time::Instant::now();
    let cfg = ExperimentConfig::default();
    let model = build_coordinated_turn(0.1);
    let data = generate_run_data(&model, &cfg, 0).unwrap();

    let mut worst: (f64, String) = (0.0, String::new());
    for scheme in [Scheme::EulerMaruyama, Scheme::ItoTaylor15] {
        let l = cfg.subdivisions_for(scheme);
        let chol_ref = run_conventional(
            &model,
            &DfekfConfig::new(scheme, l).with_alpha(cfg.alpha),
            &data.measurements,
        );
        let svd_ref = run_conventional(
            &model,
            &DfekfConfig::new(scheme, l)
                .with_alpha(cfg.alpha)
                .with_sample_sqrt(SampleSqrt::Svd),
            &data.measurements,
        );
        assert_eq!(chol_ref.status, RunStatus::Completed);
        assert_eq!(svd_ref.status, RunStatus::Completed);

        for (algorithm, reference) in [
            (SqrtAlgorithm::TwoQr, &chol_ref),
            (SqrtAlgorithm::OneQr, &chol_ref),
            (SqrtAlgorithm::Svd, &svd_ref),
        ] {
            let sr = run_squareroot(
                &model,
                &DfekfConfig::new(scheme, l).with_alpha(cfg.alpha),
                algorithm,
                &data.measurements,
            );
            assert_eq!(sr.status, RunStatus::Completed, "{}", algorithm.label(scheme));
            for k in 0..reference.covariances.len() {
                let err = rel_mat(&sr.covariances[k], &reference.covariances[k]);
                if err > worst.0 {
                    worst = (err, format!("algorithm {} step {}", algorithm.label(scheme), k + 1));
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst.0 < 1e-6 && elapsed < 30.0;
    println!(
        "ACCEPTANCE 2 (square-root/conventional equivalence): {} — worst covariance deviation {:.2e} at {}, {elapsed:.1}s",
        if pass { "PASS" } else { "FAIL" },
        worst.0,
        worst.1
    );
    assert!(pass, "worst {:.3e} at {}", worst.0, worst.1);
}

// ---------------------------------------------------------------------
// Criterion 3: alpha-convergence to the standard EKF
// ---------------------------------------------------------------------

#[test]
fn acceptance_3_alpha_convergence_to_ekf() {
    let start = std::time::Instant::now();
    let cfg = ExperimentConfig::default();
    let model = build_coordinated_turn(0.1);
    let data = generate_run_data(&model, &cfg, 0).unwrap();

    let ekf = run_baseline(
        &model,
        BaselineVariant {
            family: BaselineFamily::Ekf,
            scheme: Scheme::ItoTaylor15,
        },
        cfg.l_it,
        &data.measurements,
    );
    assert_eq!(ekf.status, RunStatus::Completed);

    let mut deviations = Vec::new();
    for alpha in [10.0, 100.0, 1000.0, 10000.0] {
        let df = run_conventional(
            &model,
            &DfekfConfig::new(Scheme::ItoTaylor15, cfg.l_it)
                .with_alpha(alpha)
                .with_sample_sqrt(SampleSqrt::Svd),
            &data.measurements,
        );
        assert_eq!(df.status, RunStatus::Completed, "alpha {alpha}");
        let max_dev = df
            .estimates
            .iter()
            .zip(&ekf.estimates)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        deviations.push((alpha, max_dev));
    }
    let monotone = deviations.windows(2).all(|w| w[1].1 < w[0].1);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = monotone && elapsed < 60.0;
    let detail: Vec<String> = deviations
        .iter()
        .map(|(a, d)| format!("alpha {a:.0e}: {d:.3e}"))
        .collect();
    println!(
        "ACCEPTANCE 3 (alpha-convergence to EKF): {} — max state deviation {}, {elapsed:.1}s",
        if pass { "PASS" } else { "FAIL" },
        detail.join(", ")
    );
    assert!(pass, "deviations not monotone: {detail:?}");
}

// ---------------------------------------------------------------------
// Criteria 4, 5, 8 share the full default sweep.
// ---------------------------------------------------------------------

static FULL_SWEEP: OnceLock<SweepTable> = OnceLock::new();

fn full_sweep() -> &'static SweepTable {
    FULL_SWEEP.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        eprintln!(
            "acceptance: running the full sweep ({} gammas x {} filters, M = {}) ...",
            cfg.gamma_list.len(),
            cfg.filters.len(),
            cfg.mc_runs
        );
        let table = sweep(&cfg);
        let out = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-results");
        match cddfekf::report::emit_reports(&table, &out) {
            Ok(bundle) => eprintln!("acceptance: sweep reports in {}", bundle.sweep_csv.parent().unwrap().display()),
            Err(e) => eprintln!("acceptance: could not write sweep reports: {e}"),
        }
        table
    })
}

fn variant(id: &str) -> FilterVariant {
    FilterVariant::parse(id).unwrap()
}

#[test]
fn acceptance_4_scheme_order_superiority() {
    let table = full_sweep();
    let gamma = 1e-1;
    let it_band = (1.06e1 * 0.7, 1.06e1 * 1.3);
    let em_band = (4.38e2 * 0.7, 4.38e2 * 1.3);

    let mut pass = true;
    let mut detail = Vec::new();
    // The combined one-array variants are the canonical square-root
    // DF-EKFs (they complete the whole sweep); the a/c values are printed
    // for context since single slip runs move them within Monte Carlo
    // variability.
    let mut banded = |id: &str, band: (f64, f64)| -> f64 {
        let row = table.row(gamma, variant(id)).unwrap();
        let armse = row.armse.unwrap_or(f64::NAN);
        let ok = row.status == ScenarioStatus::Completed && armse > band.0 && armse < band.1;
        pass &= ok;
        detail.push(format!("{id}={armse:.3e}{}", if ok { "" } else { "(!)" }));
        armse
    };
    let it_repr = banded("it-dfekf-2b", it_band);
    let em_repr = banded("em-dfekf-1b", em_band);
    for id in ["it-dfekf-2a", "it-dfekf-2c", "em-dfekf-1a", "em-dfekf-1c"] {
        let row = table.row(gamma, variant(id)).unwrap();
        detail.push(format!(
            "{id}={}",
            row.armse.map(|a| format!("{a:.3e}")).unwrap_or_else(|| "fail".into())
        ));
    }
    let margin = em_repr / it_repr;
    pass &= margin > 5.0;
    println!(
        "ACCEPTANCE 4 (scheme-order superiority): {} — {} , EM/IT margin {margin:.1}x",
        if pass { "PASS" } else { "FAIL" },
        detail.join(", ")
    );
    assert!(pass, "{detail:?}, margin {margin:.2}");
}

#[test]
fn acceptance_5_breakdown_pattern() {
    let table = full_sweep();
    let cfg = ExperimentConfig::default();

    let first_fail = |id: &str| -> Option<f64> {
        cfg.gamma_list
            .iter()
            .copied()
            .find(|&g| table.row(g, variant(id)).unwrap().status == ScenarioStatus::Failed)
    };
    let fmt = |g: Option<f64>| g.map(|g| format!("{g:.0e}")).unwrap_or_else(|| "never".into());

    for v in FilterVariant::all() {
        let marks: String = cfg
            .gamma_list
            .iter()
            .map(|&g| {
                if table.row(g, v).unwrap().status == ScenarioStatus::Completed {
                    'C'
                } else {
                    'F'
                }
            })
            .collect();
        eprintln!("  sweep {:<20} {}", v.id(), marks);
    }

    let mut pass = true;
    let mut lines = Vec::new();
    let mut check = |name: &str, ok: bool, detail: String| {
        lines.push(format!(
            "  5.{name}: {} — {detail}",
            if ok { "pass" } else { "FAIL" }
        ));
        pass &= ok;
    };

    // 1b/2b complete the entire sweep.
    for id in ["em-dfekf-1b", "it-dfekf-2b"] {
        let ok = first_fail(id).is_none();
        check("robust-b-complete", ok, format!("{id} first fail {}", fmt(first_fail(id))));
    }
    // Conventional Cholesky DF-EKF fails by 1e-2.
    for id in ["em-dfekf-conv-chol", "it-dfekf-conv-chol"] {
        let ff = first_fail(id);
        let ok = ff.map(|g| g >= 1e-2 * 0.99).unwrap_or(false);
        check("conv-chol", ok, format!("{id} first fail {}", fmt(ff)));
    }
    // Conventional SVD-sampled DF-EKF fails by 1e-5 ± one decade.
    for id in ["em-dfekf-conv-svd", "it-dfekf-conv-svd"] {
        let ff = first_fail(id);
        let ok = ff.map(|g| (1e-6 * 0.99..=1e-4 * 1.01).contains(&g)).unwrap_or(false);
        check("conv-svd", ok, format!("{id} first fail {}", fmt(ff)));
    }
    // Variants a/c fail at 1e-10 ± one decade.
    for id in ["em-dfekf-1a", "em-dfekf-1c", "it-dfekf-2a", "it-dfekf-2c"] {
        let ff = first_fail(id);
        let ok = ff.map(|g| (1e-11 * 0.99..=1e-9 * 1.01).contains(&g)).unwrap_or(false);
        check("variants-ac", ok, format!("{id} first fail {}", fmt(ff)));
    }
    // EKFs fail at 1e-7 ± one decade.
    for id in ["em-ekf", "it-ekf"] {
        let ff = first_fail(id);
        let ok = ff.map(|g| (1e-8 * 0.99..=1e-6 * 1.01).contains(&g)).unwrap_or(false);
        check("ekf", ok, format!("{id} first fail {}", fmt(ff)));
    }
    // CKFs fail by 1e-2.
    for id in ["em-ckf", "it-ckf"] {
        let ff = first_fail(id);
        let ok = ff.map(|g| g >= 1e-2 * 0.99).unwrap_or(false);
        check("ckf", ok, format!("{id} first fail {}", fmt(ff)));
    }

    println!(
        "ACCEPTANCE 5 (breakdown-pattern reproduction): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    for line in &lines {
        println!("{line}");
    }
    assert!(pass, "{lines:?}");
}

#[test]
fn acceptance_8_timing_ordering() {
    let table = full_sweep();
    let gamma = 1e-1;

    let mut pass = true;
    let mut detail = Vec::new();
    for scheme in [Scheme::EulerMaruyama, Scheme::ItoTaylor15] {
        let t_of = |family_id: &str| -> Option<f64> {
            let v = variant(family_id);
            let row = table.row(gamma, v)?;
            (row.status == ScenarioStatus::Completed).then_some(row.cpu_seconds)
        };
        let prefix = match scheme {
            Scheme::EulerMaruyama => "em",
            Scheme::ItoTaylor15 => "it",
        };
        let digit = if prefix == "em" { "1" } else { "2" };
        let ekf = t_of(&format!("{prefix}-ekf")).expect("EKF must complete at 1e-1");
        detail.push(format!("{prefix}-ekf={ekf:.3}s"));

        for suffix in [
            "dfekf-conv-chol".to_string(),
            "dfekf-conv-svd".to_string(),
            format!("dfekf-{digit}a"),
            format!("dfekf-{digit}b"),
            format!("dfekf-{digit}c"),
        ] {
            let id = format!("{prefix}-{suffix}");
            if let Some(t) = t_of(&id) {
                detail.push(format!("{id}={t:.3}s"));
                if ekf >= t {
                    pass = false;
                    detail.push(format!("(! {prefix}-ekf not faster than {id})"));
                }
            }
        }

        let sr_svd = t_of(&format!("{prefix}-dfekf-{digit}c"));
        let sr_a = t_of(&format!("{prefix}-dfekf-{digit}a"));
        let sr_b = t_of(&format!("{prefix}-dfekf-{digit}b"));
        if let (Some(c), Some(a), Some(b)) = (sr_svd, sr_a, sr_b) {
            if c < a || c < b {
                pass = false;
                detail.push(format!("(! {prefix} SVD variant faster than Cholesky variants)"));
            }
        }
    }
    println!(
        "ACCEPTANCE 8 (timing ordering): {} — {}",
        if pass { "PASS" } else { "FAIL" },
        detail.join(" ")
    );
    assert!(pass, "{detail:?}");
}

// ---------------------------------------------------------------------
// Criterion 6: array identities
// ---------------------------------------------------------------------

#[test]
fn acceptance_6_array_identities() {
    let start = std::time::Instant::now();
    let mut rng = Lcg(0xACCE0006);
    let mut worst = 0.0f64;

    for _ in 0..1000 {
        let a = rng.matrix(4, 9) * 10.0;
        let gram = &a * a.transpose();
        let l = triangularize_lower(&a).unwrap();
        worst = worst.max(rel_mat(&l.reconstruct(), &gram));
        let f = svd_factor_of_array(&a).unwrap();
        worst = worst.max(rel_mat(&f.reconstruct(), &gram));

        let tall = rng.matrix(5, 3) * 10.0;
        let f = svd_factor_of_array(&tall).unwrap();
        worst = worst.max(rel_mat(&f.reconstruct(), &(&tall * tall.transpose())));

        let zbar = rng.matrix(2, 4);
        let xbar = rng.matrix(4, 4);
        let r_sqrt = rng.matrix(2, 2);
        let (re, pxz, p) = block_triangularize(&zbar, &xbar, &r_sqrt).unwrap();
        let mut pre = DMatrix::zeros(6, 6);
        pre.view_mut((0, 0), (2, 4)).copy_from(&zbar);
        pre.view_mut((0, 4), (2, 2)).copy_from(&r_sqrt);
        pre.view_mut((2, 0), (4, 4)).copy_from(&xbar);
        let mut post = DMatrix::zeros(6, 6);
        post.view_mut((0, 0), (2, 2)).copy_from(re.matrix());
        post.view_mut((2, 0), (4, 2)).copy_from(&pxz);
        post.view_mut((2, 2), (4, 4)).copy_from(p.matrix());
        worst = worst.max(rel_mat(&(&post * post.transpose()), &(&pre * pre.transpose())));
    }

    // The Itô-Taylor square-root pre-array Gram must equal the conventional
    // covariance expression: δ³/4 + δ³/12 recombine to δ³/3.
    let mut it_worst = 0.0f64;
    for _ in 0..50 {
        let n = 3;
        let spread = rng.matrix(n, n);
        let g_star = rng.matrix(n, n);
        let lf = rng.matrix(n, n);
        let delta: f64 = 1.0 / 64.0;

        let mid = delta.sqrt() * (&g_star + (0.5 * delta) * &lf);
        let tail = (delta.powi(3) / 12.0).sqrt() * &lf;
        let mut pre = DMatrix::zeros(n, 3 * n);
        pre.view_mut((0, 0), (n, n)).copy_from(&spread);
        pre.view_mut((0, n), (n, n)).copy_from(&mid);
        pre.view_mut((0, 2 * n), (n, n)).copy_from(&tail);
        let gram = &pre * pre.transpose();

        let cross = &g_star * lf.transpose();
        let lemma = &spread * spread.transpose()
            + delta * (&g_star * g_star.transpose())
            + (0.5 * delta * delta) * (&cross + cross.transpose())
            + (delta.powi(3) / 3.0) * (&lf * lf.transpose());
        it_worst = it_worst.max(rel_mat(&gram, &lemma));
    }

    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && it_worst <= 1e-12 && elapsed < 5.0;
    println!(
        "ACCEPTANCE 6 (array identities): {} — worst Gram deviation {worst:.2e}, worst Itô-Taylor recombination {it_worst:.2e}, {elapsed:.1}s",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "gram {worst:.3e}, it {it_worst:.3e}, {elapsed:.1}s");
}

// ---------------------------------------------------------------------
// Criterion 7: Itô noise moments
// ---------------------------------------------------------------------

#[test]
fn acceptance_7_ito_noise_moments() {
    let start = std::time::Instant::now();
    let delta = 0.01;
    let n = 3;
    let draws = 1_000_000usize;
    let mut rng = rng_stream(7, 0, 777);

    let mut m11 = DMatrix::zeros(n, n);
    let mut m12 = DMatrix::zeros(n, n);
    let mut m22 = DMatrix::zeros(n, n);
    for _ in 0..draws {
        let pair = sample_it_noise(delta, n, &mut rng);
        m11 += &pair.w1 * pair.w1.transpose();
        m12 += &pair.w1 * pair.w2.transpose();
        m22 += &pair.w2 * pair.w2.transpose();
    }
    let nf = draws as f64;
    m11 /= nf;
    m12 /= nf;
    m22 /= nf;

    // Entry-wise 3σ bounds from the exact fourth moments of the pair.
    let d3 = delta.powi(3) / 3.0;
    let sd11_diag = delta * (2.0 / nf).sqrt();
    let sd11_off = delta / nf.sqrt();
    let sd12_diag = delta * delta * (7.0 / 12.0 / nf).sqrt();
    let sd12_off = delta * delta * (1.0 / 3.0f64 / nf).sqrt();
    let sd22_diag = d3 * (2.0 / nf).sqrt();
    let sd22_off = d3 / nf.sqrt();

    let mut pass = true;
    let mut worst_z = 0.0f64;
    let mut check = |m: &DMatrix<f64>, target_diag: f64, sd_diag: f64, sd_off: f64| {
        for i in 0..n {
            for j in 0..n {
                let (target, sd) = if i == j {
                    (target_diag, sd_diag)
                } else {
                    (0.0, sd_off)
                };
                let z = (m[(i, j)] - target).abs() / sd;
                worst_z = worst_z.max(z);
                if z > 3.0 {
                    pass = false;
                }
            }
        }
    };
    check(&m11, delta, sd11_diag, sd11_off);
    check(&m12, 0.5 * delta * delta, sd12_diag, sd12_off);
    check(&m22, d3, sd22_diag, sd22_off);

    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed < 10.0;
    println!(
        "ACCEPTANCE 7 (Itô noise moments): {} — worst |z| = {worst_z:.2} over {draws} draws, {elapsed:.1}s",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "worst z {worst_z:.2}, {elapsed:.1}s");
}
