//! Command-line front end: `sweep` runs the full benchmark, `run` executes
//! one filter at one γ, `simulate` writes a truth+measurement dataset, and
//! `selftest` exercises the linear-oracle and array-identity suites.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use crate::coordinated_turn::build_coordinated_turn;
use crate::dfekf::{run_conventional, DfekfConfig};
use crate::harness::{
    armse, execute_filter, generate_run_data, rng_stream, run_scenario, sweep, ExperimentConfig,
    FilterVariant, ScenarioStatus,
};
use crate::linalg::{lower_cholesky, svd_factor_of_array, triangularize_lower};
use crate::model::ModelSpec;
use crate::report::{emit_reports, format_armse, parse_config, Dataset};
use crate::run::RunStatus;
use crate::sde::Scheme;

const EXIT_OK: i32 = 0;
const EXIT_CONFIG: i32 = 1;
const EXIT_INTERNAL: i32 = 2;

#[derive(Parser)]
#[command(
    name = "cddfekf",
    about = "Continuous-discrete derivative-free EKF benchmark",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigOverrides {
    /// TOML configuration file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Monte Carlo runs per (gamma, filter) cell.
    #[arg(long)]
    mc: Option<usize>,
    /// Master RNG seed (also via CDDFEKF_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated filter identifiers, e.g. em-ekf,it-dfekf-2b.
    #[arg(long, value_delimiter = ',')]
    filters: Option<Vec<String>>,
    /// Comma-separated gamma values.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full ill-conditioning sweep and write reports.
    Sweep {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Output directory for the report bundle.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Run one filter at one gamma and print status and ARMSE.
    Run {
        #[command(flatten)]
        overrides: ConfigOverrides,
        #[arg(long)]
        gamma: Option<f64>,
        /// Filter identifier.
        #[arg(long)]
        filter: String,
        /// Replay a dataset written by `simulate` instead of generating data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Simulate one Monte Carlo run and write its dataset to a file.
    Simulate {
        #[command(flatten)]
        overrides: ConfigOverrides,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        /// Run index within the seed's stream.
        #[arg(long, default_value_t = 0)]
        run: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the linear-oracle and array-identity property suites.
    Selftest,
}

fn build_config(overrides: &ConfigOverrides) -> Result<ExperimentConfig, String> {
    let mut cfg = match &overrides.config {
        Some(path) => parse_config(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if let Ok(seed) = std::env::var("CDDFEKF_SEED") {
        cfg.master_seed = seed
            .parse()
            .map_err(|e| format!("bad CDDFEKF_SEED '{seed}': {e}"))?;
    }
    if let Some(mc) = overrides.mc {
        cfg.mc_runs = mc;
    }
    if let Some(seed) = overrides.seed {
        cfg.master_seed = seed;
    }
    if let Some(names) = &overrides.filters {
        let mut filters = Vec::new();
        for name in names {
            filters.push(FilterVariant::parse(name)?);
        }
        cfg.filters = filters;
    }
    if let Some(gammas) = &overrides.gammas {
        cfg.gamma_list = gammas.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Entry point shared by the binary and the CLI tests. Never panics on user
/// input: 0 on success, 1 on configuration errors, 2 on internal errors.
pub fn cli_main(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits.
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };

    match cli.command {
        Command::Sweep { overrides, out } => {
            let cfg = match build_config(&overrides) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            eprintln!(
                "sweep: {} gammas x {} filters, {} runs each",
                cfg.gamma_list.len(),
                cfg.filters.len(),
                cfg.mc_runs
            );
            let table = sweep(&cfg);
            match emit_reports(&table, &out) {
                Ok(bundle) => {
                    println!("wrote {}", bundle.sweep_csv.display());
                    println!("wrote {}", bundle.accuracy_markdown.display());
                    println!("wrote {}", bundle.timing_csv.display());
                    for p in bundle.svg_paths {
                        println!("wrote {}", p.display());
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: cannot write reports: {e}");
                    EXIT_INTERNAL
                }
            }
        }
        Command::Run {
            overrides,
            gamma,
            filter,
            data,
        } => {
            let cfg = match build_config(&overrides) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            let variant = match FilterVariant::parse(&filter) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            match data {
                Some(path) => run_on_dataset(&cfg, variant, &path),
                None => {
                    let gamma = match gamma {
                        Some(g) if g > 0.0 => g,
                        Some(_) => {
                            eprintln!("error: gamma must be positive");
                            return EXIT_CONFIG;
                        }
                        None => {
                            eprintln!("error: --gamma is required unless --data is given");
                            return EXIT_CONFIG;
                        }
                    };
                    let mut one = cfg.clone();
                    one.filters = vec![variant];
                    let rows = run_scenario(&build_coordinated_turn, gamma, &one);
                    print_row(&rows[0]);
                    EXIT_OK
                }
            }
        }
        Command::Simulate {
            overrides,
            gamma,
            run,
            out,
        } => {
            let cfg = match build_config(&overrides) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            if gamma <= 0.0 {
                eprintln!("error: gamma must be positive");
                return EXIT_CONFIG;
            }
            let model = build_coordinated_turn(gamma);
            let data = match generate_run_data(&model, &cfg, run as usize) {
                Ok(d) => d,
                Err(e) => {
                    eprintln!("error: truth simulation failed: {e}");
                    return EXIT_INTERNAL;
                }
            };
            let ds = Dataset {
                model_id: "coordinated-turn".into(),
                gamma,
                master_seed: cfg.master_seed,
                run,
                sample_period: cfg.sample_period,
                horizon: cfg.horizon,
                truth_at_tk: data.truth_at_tk,
                measurements: data.measurements,
            };
            match ds.write_to(&out) {
                Ok(()) => {
                    println!("wrote {} ({} records)", out.display(), ds.truth_at_tk.len());
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: cannot write {}: {e}", out.display());
                    EXIT_INTERNAL
                }
            }
        }
        Command::Selftest => selftest(),
    }
}

fn print_row(row: &crate::harness::SweepRow) {
    match (row.status, row.armse) {
        (ScenarioStatus::Completed, Some(a)) => {
            println!(
                "gamma={:.0e} filter={} status=Completed armse={} cpu_s={:.4}",
                row.gamma,
                row.filter,
                format_armse(a),
                row.cpu_seconds
            );
        }
        _ => {
            println!(
                "gamma={:.0e} filter={} status=Failed cpu_s={:.4}",
                row.gamma, row.filter, row.cpu_seconds
            );
        }
    }
}

fn run_on_dataset(cfg: &ExperimentConfig, variant: FilterVariant, path: &Path) -> i32 {
    let ds = match Dataset::read_from(path, 7, 2) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if ds.model_id != "coordinated-turn" {
        eprintln!("error: unknown dataset model '{}'", ds.model_id);
        return EXIT_CONFIG;
    }
    let model = build_coordinated_turn(ds.gamma);
    let result = execute_filter(&model, variant, cfg, &ds.measurements);
    match result.status {
        RunStatus::Completed => {
            let truth = vec![ds.truth_at_tk.iter().map(|(_, x)| x.clone()).collect()];
            let est = vec![result.estimates];
            match armse(&truth, &est) {
                Ok(a) => {
                    println!(
                        "gamma={:.0e} filter={variant} status=Completed armse={}",
                        ds.gamma,
                        format_armse(a)
                    );
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_INTERNAL
                }
            }
        }
        RunStatus::Failed { step, cause } => {
            println!(
                "gamma={:.0e} filter={variant} status=Failed step={step} cause=\"{cause}\"",
                ds.gamma
            );
            EXIT_OK
        }
    }
}

fn selftest_linear_oracle() -> Result<(), String> {
    // A fixed stable 3-state linear SDE; every filter must match the
    // conventional DF-EKF, which the unit suites pin to the Kalman filter.
    let a = DMatrix::from_row_slice(3, 3, &[-0.4, 0.2, 0.0, -0.1, -0.5, 0.3, 0.0, 0.1, -0.6]);
    let h = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, -1.0]);
    let a_drift = a.clone();
    let a_jac = a.clone();
    let h_obs = h.clone();
    let h_jac = h.clone();
    let model = ModelSpec::new(
        Box::new(move |_t, x| &a_drift * x),
        Box::new(move |_k, x| &h_obs * x),
        DMatrix::identity(3, 3),
        DMatrix::identity(3, 3) * 0.2,
        DMatrix::identity(2, 2) * 0.5,
        DVector::from_vec(vec![1.0, 0.0, -1.0]),
        DMatrix::identity(3, 3),
    )
    .map_err(|e| e.to_string())?
    .with_drift_jacobian(Box::new(move |_t, _x| a_jac.clone()))
    .with_drift_time_partial(Box::new(|_t, x| DVector::zeros(x.len())))
    .with_drift_hessian_contraction(Box::new(|_t, x| DVector::zeros(x.len())))
    .with_observation_jacobian(Box::new(move |_k, _x| h_jac.clone()));

    let cfg = ExperimentConfig {
        mc_runs: 1,
        horizon: 5.0,
        l_em: 8,
        l_it: 8,
        truth_step: 0.01,
        ..ExperimentConfig::default()
    };
    let mut rng = rng_stream(cfg.master_seed, 0, 7);
    let path = crate::sde::simulate_truth(&model, cfg.truth_step, cfg.horizon, &mut rng)
        .map_err(|e| e.to_string())?;
    let measurements = crate::sde::generate_measurements(&model, &path, 1.0, &mut rng);

    let reference = run_conventional(
        &model,
        &DfekfConfig::new(Scheme::EulerMaruyama, cfg.l_em),
        &measurements,
    );
    if reference.status != RunStatus::Completed {
        return Err("reference run failed".into());
    }

    for variant in FilterVariant::all() {
        let result = execute_filter(&model, variant, &cfg, &measurements);
        if result.status != RunStatus::Completed {
            return Err(format!("{variant} failed on the linear model"));
        }
        // Same-scheme filters must agree to near roundoff.
        if variant.scheme == Scheme::EulerMaruyama {
            for (got, want) in result.estimates.iter().zip(&reference.estimates) {
                let err = (got - want).norm() / want.norm().max(1.0);
                if err > 1e-8 {
                    return Err(format!("{variant} deviates from the linear oracle: {err:.2e}"));
                }
            }
        }
    }
    Ok(())
}

fn selftest_array_identities() -> Result<(), String> {
    let mut seed = 0x5eedu64;
    let mut unit = move || {
        seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    for rep in 0..200 {
        let a = DMatrix::from_fn(4, 9, |_, _| unit() * 10.0);
        let gram = &a * a.transpose();
        let l = triangularize_lower(&a).map_err(|e| e.to_string())?;
        let err = (l.reconstruct() - &gram).norm() / gram.norm();
        if err > 1e-12 {
            return Err(format!("triangularization Gram identity violated: {err:.2e}"));
        }
        let f = svd_factor_of_array(&a).map_err(|e| e.to_string())?;
        let err = (f.reconstruct() - &gram).norm() / gram.norm();
        if err > 1e-10 {
            return Err(format!("SVD Gram identity violated: {err:.2e}"));
        }
        if rep % 10 == 0 {
            let p = &gram + DMatrix::identity(4, 4);
            let c = lower_cholesky(&p).map_err(|e| e.to_string())?;
            let err = (c.reconstruct() - &p).norm() / p.norm();
            if err > 1e-12 {
                return Err(format!("Cholesky round-trip violated: {err:.2e}"));
            }
        }
    }
    Ok(())
}

type SelftestFn = fn() -> Result<(), String>;

fn selftest() -> i32 {
    let checks: [(&str, SelftestFn); 2] = [
        ("linear-oracle", selftest_linear_oracle),
        ("array-identities", selftest_array_identities),
    ];
    let mut failed = false;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("selftest {name}: ok"),
            Err(e) => {
                println!("selftest {name}: FAILED ({e})");
                failed = true;
            }
        }
    }
    if failed {
        EXIT_INTERNAL
    } else {
        EXIT_OK
    }
}
