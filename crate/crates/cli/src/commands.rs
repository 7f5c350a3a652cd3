use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use kising_core::glauber::{
    boltzmann_distribution, exact_moments, exact_stationary_distribution, run, SimulationSchedule, TrajectoryWriter,
};
use kising_core::harness::{
    dynamics_seed, realization_couplings, root_fraction_sweep, scatter_experiment, sweep_data_length,
    sweep_temperature, write_failure_log, write_scatter_csv, write_sweep_csv, SweepOutput,
};
use kising_core::inference::{infer, infer_nmf, reconstruction_error, Method, Termination};
use kising_core::moments::{batch_mean_stderr, BatchedMoments, MomentAccumulator, MomentEstimates};
use kising_core::sk_model::CouplingMatrix;

use crate::config::{CommandKind, ResolvedConfig};
use crate::manifest::RunManifest;
use crate::CliError;

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_error(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_error(path))
}

fn sidecar(output: &Path, suffix: &str) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn finish(config: &ResolvedConfig, outputs: Vec<PathBuf>) -> Result<(), CliError> {
    let manifest = RunManifest::new(config, outputs);
    manifest.save(&config.output).map_err(io_error(&config.output))?;
    Ok(())
}

fn read_couplings(path: &Path) -> Result<CouplingMatrix, CliError> {
    let file = File::open(path).map_err(io_error(path))?;
    CouplingMatrix::read_from(BufReader::new(file))
        .map_err(|e| CliError::Format { path: path.to_path_buf(), source: e })
}

fn read_moments(path: &Path) -> Result<MomentEstimates, CliError> {
    let file = File::open(path).map_err(io_error(path))?;
    MomentEstimates::read_from(BufReader::new(file))
        .map_err(|e| CliError::Format { path: path.to_path_buf(), source: e })
}

pub fn generate(config: &ResolvedConfig) -> Result<(), CliError> {
    let params = config.model_params()?;
    let j = realization_couplings(&params, 0, 0);
    write_file(&config.output, |w| j.write_to(w))?;
    println!("wrote {}x{} couplings to {}", j.dim(), j.dim(), config.output.display());
    finish(config, vec![config.output.clone()])
}

pub fn simulate(config: &ResolvedConfig, couplings: Option<&Path>, trajectory: Option<&Path>) -> Result<(), CliError> {
    let params = config.model_params()?;
    let j = match couplings {
        Some(path) => {
            let j = read_couplings(path)?;
            j.check_dimension(&params)?;
            j
        }
        None => realization_couplings(&params, 0, 0),
    };
    let schedule = SimulationSchedule::new(
        config.burn_in_sweeps * params.n_spins as u64,
        config.data_length,
        dynamics_seed(params.rng_seed, 0, 0),
    );
    let mut acc = MomentAccumulator::new(params.n_spins, params.beta(), config.lag_attempts)?.with_couplings(&j)?;
    let mut outputs = vec![config.output.clone()];
    let mut failure = None;
    match trajectory {
        Some(path) => {
            let file = File::create(path).map_err(io_error(path))?;
            let mut writer =
                TrajectoryWriter::new(BufWriter::new(file), params.n_spins as u32).map_err(io_error(path))?;
            let mut write_error = None;
            run(&params, &j, &schedule, |step| {
                if let Err(e) = acc.record_step(step) {
                    failure.get_or_insert(e);
                }
                if write_error.is_none() {
                    if let Err(e) = writer.record(step) {
                        write_error = Some(e);
                    }
                }
            })?;
            if let Some(e) = write_error {
                return Err(io_error(path)(e));
            }
            writer.finish().and_then(|mut w| w.flush()).map_err(io_error(path))?;
            outputs.push(path.to_path_buf());
        }
        None => {
            run(&params, &j, &schedule, |step| {
                if let Err(e) = acc.record_step(step) {
                    failure.get_or_insert(e);
                }
            })?;
        }
    }
    if let Some(e) = failure {
        return Err(e.into());
    }
    let moments = acc.finalize()?.with_estimator(config.estimator)?;
    write_file(&config.output, |w| moments.write_to(w))?;
    let mean_abs_m = moments.m.iter().map(|m| m.abs()).sum::<f64>() / moments.m.len() as f64;
    println!(
        "simulated {} attempts at T = {}; mean |m| = {:.6}; moments ({} estimator) written to {}",
        moments.sample_count,
        params.temperature,
        mean_abs_m,
        config.estimator.name(),
        config.output.display()
    );
    finish(config, outputs)
}

pub fn infer_command(
    config: &ResolvedConfig,
    moments: &Path,
    truth: Option<&Path>,
    method: Option<Method>,
) -> Result<(), CliError> {
    let temperature = config.temperature.expect("infer requires a temperature");
    let method = method.unwrap_or(config.methods[0]);
    let mut mo = read_moments(moments)?;
    if mo.n_spins() != config.n_spins {
        return Err(CliError::Mismatch(format!(
            "moments file has N = {}, configuration has n_spins = {}",
            mo.n_spins(),
            config.n_spins
        )));
    }
    // The stored D is kept for the tanh estimator; the finite difference
    // is recomputed from C0 and C_lag.
    if config.estimator != kising_core::moments::DEstimator::Tanh {
        mo = mo.with_estimator(config.estimator)?;
    }
    let result = infer(method, &mo, temperature, config.tap_options())?;
    write_file(&config.output, |w| result.write_to(w))?;
    println!("method={}", method.name());
    if method == Method::TapIterative {
        println!(
            "converged={} iterations={} termination={:?}",
            result.converged, result.iterations, result.termination
        );
    }
    if let Some(path) = truth {
        let j = read_couplings(path)?;
        if j.dim() != config.n_spins {
            return Err(CliError::Mismatch(format!("truth has N = {}, expected {}", j.dim(), config.n_spins)));
        }
        println!("delta={:.8e}", reconstruction_error(&result.couplings, &j)?);
    }
    if let Some(d) = &result.diagnostics {
        println!("spin x root_count selected_F");
        for i in 0..d.x.len() {
            println!("{i} {:.8e} {} {:.8e}", d.x[i], d.root_counts[i], d.selected_roots[i]);
        }
    }
    if method == Method::TapIterative && result.termination != Termination::Converged {
        eprintln!("warning: TAP iteration did not converge; couplings are the last iterate");
    }
    finish(config, vec![config.output.clone()])
}

fn write_sweep(config: &ResolvedConfig, out: &SweepOutput) -> Result<(), CliError> {
    write_file(&config.output, |w| write_sweep_csv(w, &out.records))?;
    let log = sidecar(&config.output, ".failures.log");
    write_file(&log, |w| write_failure_log(w, &out.failures))?;
    println!(
        "{} records ({} estimator) written to {}; {} excluded realizations logged in {}",
        out.records.len(),
        out.estimator.name(),
        config.output.display(),
        out.failures.len(),
        log.display()
    );
    finish(config, vec![config.output.clone(), log])
}

pub fn sweep(config: &ResolvedConfig) -> Result<(), CliError> {
    let experiment = config.experiment()?;
    let out = match config.command {
        CommandKind::SweepTemperature => sweep_temperature(&experiment)?,
        CommandKind::RootFraction => root_fraction_sweep(&experiment)?,
        CommandKind::SweepLength => sweep_data_length(&experiment)?,
        other => unreachable!("{} is not a sweep", other.name()),
    };
    write_sweep(config, &out)
}

pub fn scatter(config: &ResolvedConfig) -> Result<(), CliError> {
    let rows = scatter_experiment(&config.experiment()?)?;
    write_file(&config.output, |w| write_scatter_csv(w, &rows))?;
    println!("{} scatter rows written to {}", rows.len(), config.output.display());
    finish(config, vec![config.output.clone()])
}

/// One line of the oracle report.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Batches used for the standard errors of simulated moments.
pub const ORACLE_BATCHES: u64 = 20;
/// Temperature of the reconstruction check.
pub const ORACLE_NMF_TEMPERATURE: f64 = 4.0;

/// Small-N validation against exact enumeration.
pub fn oracle_checks(config: &ResolvedConfig) -> Result<Vec<OracleCheck>, CliError> {
    let params = config.model_params()?;
    let j = realization_couplings(&params, 0, 0);
    let n = params.n_spins;
    let mut checks = Vec::new();

    let exact = exact_stationary_distribution(&params, &j)?;
    let total: f64 = exact.iter().sum();
    checks.push(OracleCheck {
        name: "normalization",
        passed: (total - 1.0).abs() < 1e-12,
        detail: format!("sum of stationary probabilities - 1 = {:.3e}", total - 1.0),
    });
    if params.asymmetry == 0.0 {
        let gibbs = boltzmann_distribution(&params, &j)?;
        let diff = exact.iter().zip(&gibbs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        checks.push(OracleCheck {
            name: "boltzmann",
            passed: diff < 1e-10,
            detail: format!("max |P_master - P_boltzmann| = {diff:.3e} (tolerance 1e-10)"),
        });
    } else {
        checks.push(OracleCheck {
            name: "boltzmann",
            passed: true,
            detail: "skipped: asymmetric couplings have no Boltzmann stationary state".into(),
        });
    }

    let oracle = exact_moments(&params, &j, config.lag_attempts)?;
    let batch_len = config.data_length / ORACLE_BATCHES;
    let mut batched = BatchedMoments::new(n, params.beta(), config.lag_attempts, batch_len)?.with_couplings(&j)?;
    let schedule = SimulationSchedule::new(
        config.burn_in_sweeps * n as u64,
        batch_len * ORACLE_BATCHES,
        dynamics_seed(params.rng_seed, 0, 0),
    );
    let mut failure = None;
    run(&params, &j, &schedule, |step| {
        if let Err(e) = batched.record_step(step) {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    let batches = batched.batches();
    let m_rows: Vec<_> = batches.iter().map(|b| nalgebra::DMatrix::from_row_slice(1, n, &b.m)).collect();
    let (m_mean, m_se) = batch_mean_stderr(&m_rows);
    let (c_mean, c_se) = batch_mean_stderr(&batches.iter().map(|b| b.c0.clone()).collect::<Vec<_>>());
    let mut worst: f64 = 0.0;
    for i in 0..n {
        worst = worst.max((m_mean[(0, i)] - oracle.m[i]).abs() / m_se[(0, i)]);
        for k in (0..n).filter(|&k| k != i) {
            worst = worst.max((c_mean[(i, k)] - oracle.c0[(i, k)]).abs() / c_se[(i, k)]);
        }
    }
    checks.push(OracleCheck {
        name: "simulated-moments",
        passed: worst < 3.0,
        detail: format!(
            "largest deviation of m and C0 from the exact values: {worst:.2} standard errors \
             ({} attempts, {} batches)",
            batch_len * ORACLE_BATCHES,
            batches.len()
        ),
    });

    let hot = params.with_temperature(ORACLE_NMF_TEMPERATURE)?;
    let hot_moments = exact_moments(&hot, &j, config.lag_attempts)?;
    let nmf = infer_nmf(&hot_moments, ORACLE_NMF_TEMPERATURE)?;
    let delta = reconstruction_error(&nmf.couplings, &j)?;
    checks.push(OracleCheck {
        name: "nmf-exact-moments",
        passed: delta < 0.15,
        detail: format!("nMF on exact moments at T = {ORACLE_NMF_TEMPERATURE}: relative error {delta:.4} (limit 0.15)"),
    });
    Ok(checks)
}

pub fn oracle_check(config: &ResolvedConfig) -> Result<bool, CliError> {
    let checks = oracle_checks(config)?;
    let mut report = String::new();
    for c in &checks {
        report.push_str(&format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    print!("{report}");
    fs::write(&config.output, &report).map_err(io_error(&config.output))?;
    finish(config, vec![config.output.clone()])?;
    Ok(checks.iter().all(|c| c.passed))
}
