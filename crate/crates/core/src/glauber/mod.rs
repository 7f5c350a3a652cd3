//! Asynchronous Glauber dynamics.
//!
//! The master equation is discretized as random-sequential updating: each
//! attempt picks a spin uniformly at random and flips it with probability
//! `1 / (1 + exp(2 beta s_i H_i))`. One attempt advances model time by
//! `1/N`, so a sweep of `N` attempts is one time unit.

mod exact;
mod trajectory;

pub use exact::{boltzmann_distribution, exact_moments, exact_stationary_distribution, MAX_EXACT_SPINS};
pub use trajectory::{read_trajectory, TrajectoryRecord, TrajectoryWriter, TRAJECTORY_MAGIC};

use rand::Rng;
use thiserror::Error;

use crate::moments::{MomentAccumulator, MomentError, MomentEstimates};
use crate::seed::{rng_from_seed, SimRng};
use crate::sk_model::{CouplingMatrix, ModelError, ModelParams};

#[derive(Debug, Error)]
pub enum GlauberError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("spin index {index} out of range for {n} spins")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("configuration has {got} spins, expected {expected}")]
    ConfigurationLength { expected: usize, got: usize },
    #[error("total_updates {total} is shorter than one sweep of {n} attempts")]
    ScheduleTooShort { total: u64, n: usize },
    #[error("exact enumeration supports at most {max} spins, got {n}")]
    TooLargeForEnumeration { n: usize, max: usize },
    #[error(transparent)]
    Moments(#[from] MomentError),
}

/// Spin values in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpinConfiguration(Vec<i8>);

impl SpinConfiguration {
    /// Returns `None` if any entry is not exactly `+1` or `-1`.
    pub fn new(states: Vec<i8>) -> Option<Self> {
        states.iter().all(|&s| s == 1 || s == -1).then_some(SpinConfiguration(states))
    }

    pub fn all_up(n: usize) -> Self {
        SpinConfiguration(vec![1; n])
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        SpinConfiguration((0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
    }

    /// Configuration encoded by the low `n` bits of `index`, bit set meaning `+1`.
    pub fn from_index(index: usize, n: usize) -> Self {
        SpinConfiguration((0..n).map(|i| if index >> i & 1 == 1 { 1 } else { -1 }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn states(&self) -> &[i8] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationSchedule {
    /// Single-spin attempts discarded before measurement.
    pub burn_in_updates: u64,
    /// Measured single-spin attempts (the data length `L`).
    pub total_updates: u64,
    pub rng_seed: u64,
}

impl SimulationSchedule {
    pub fn new(burn_in_updates: u64, total_updates: u64, rng_seed: u64) -> Self {
        SimulationSchedule { burn_in_updates, total_updates, rng_seed }
    }

    pub fn validate(&self, n: usize) -> Result<(), GlauberError> {
        if self.total_updates < n as u64 {
            return Err(GlauberError::ScheduleTooShort { total: self.total_updates, n });
        }
        Ok(())
    }
}

/// Attempts between full recomputations of the effective fields.
pub const FIELD_REFRESH_INTERVAL: u64 = 1_000_000;

/// `theta_i + sum_j J_ij s_j`.
pub fn effective_field(
    couplings: &CouplingMatrix,
    theta: &[f64],
    s: &SpinConfiguration,
    i: usize,
) -> Result<f64, GlauberError> {
    let n = couplings.dim();
    if i >= n {
        return Err(GlauberError::IndexOutOfRange { index: i, n });
    }
    if s.len() != n {
        return Err(GlauberError::ConfigurationLength { expected: n, got: s.len() });
    }
    let j = couplings.as_matrix();
    Ok(theta[i] + s.states().iter().enumerate().map(|(k, &sk)| j[(i, k)] * sk as f64).sum::<f64>())
}

/// Glauber flip probability `1 / (1 + exp(2 beta s H))`.
///
/// Evaluated so the exponent is never positive; saturates to 0 or 1 without
/// overflow.
#[inline]
pub fn flip_probability(beta: f64, s_i: i8, h: f64) -> f64 {
    // exp(700) is finite, and beyond it the probability is 0 or 1 anyway.
    let z = (2.0 * beta * s_i as f64 * h).clamp(-700.0, 700.0);
    1.0 / (1.0 + z.exp())
}

/// One measured attempt as seen by an observer.
#[derive(Debug, Clone, Copy)]
pub struct Step<'a> {
    /// Index of the attempt within the measured phase, starting at 0.
    pub attempt: u64,
    /// Spin that was offered a flip.
    pub spin: usize,
    pub flipped: bool,
    /// Configuration after the attempt.
    pub state: &'a [i8],
    /// Effective fields of the configuration after the attempt.
    pub fields: &'a [f64],
}

impl Step<'_> {
    pub fn flipped_spin(&self) -> Option<usize> {
        self.flipped.then_some(self.spin)
    }

    /// Measured model time after this attempt, in sweeps.
    pub fn time(&self) -> f64 {
        (self.attempt + 1) as f64 / self.state.len() as f64
    }
}

/// Random-sequential Glauber sampler with incrementally maintained fields.
pub struct GlauberDynamics {
    n: usize,
    beta: f64,
    /// Column-major copy of J: column k is contiguous, which is what a flip of
    /// spin k touches.
    columns: Vec<f64>,
    theta: Vec<f64>,
    state: Vec<i8>,
    fields: Vec<f64>,
    attempts: u64,
    rng: SimRng,
}

impl GlauberDynamics {
    /// Starts from a uniformly random configuration drawn from `seed`.
    pub fn new(params: &ModelParams, couplings: &CouplingMatrix, seed: u64) -> Result<Self, GlauberError> {
        params.validate()?;
        couplings.check_dimension(params)?;
        let mut rng = rng_from_seed(seed);
        let initial = SpinConfiguration::random(params.n_spins, &mut rng);
        let mut dynamics = GlauberDynamics {
            n: params.n_spins,
            beta: params.beta(),
            columns: couplings.as_matrix().as_slice().to_vec(),
            theta: params.external_field.clone(),
            state: initial.0,
            fields: vec![0.0; params.n_spins],
            attempts: 0,
            rng,
        };
        dynamics.recompute_fields();
        Ok(dynamics)
    }

    pub fn state(&self) -> &[i8] {
        &self.state
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn attempts(&self) -> u64 {
        self.attempts
    }

    fn fresh_fields(&self) -> Vec<f64> {
        let mut h = self.theta.clone();
        for (k, &sk) in self.state.iter().enumerate() {
            let col = &self.columns[k * self.n..(k + 1) * self.n];
            let sk = sk as f64;
            for (hi, &jik) in h.iter_mut().zip(col) {
                *hi += jik * sk;
            }
        }
        h
    }

    fn recompute_fields(&mut self) {
        let fresh = self.fresh_fields();
        debug_assert!(
            self.attempts == 0 || fresh.iter().zip(&self.fields).all(|(a, b)| (a - b).abs() <= 1e-10 * (1.0 + a.abs())),
            "incremental fields drifted from recomputation"
        );
        self.fields = fresh;
    }

    /// Performs one attempt; returns the chosen spin and whether it flipped.
    #[inline]
    pub fn attempt(&mut self) -> (usize, bool) {
        let i = self.rng.random_range(0..self.n);
        let p = flip_probability(self.beta, self.state[i], self.fields[i]);
        let flipped = self.rng.random::<f64>() < p;
        if flipped {
            let s = -self.state[i];
            self.state[i] = s;
            let delta = 2.0 * s as f64;
            let col = &self.columns[i * self.n..(i + 1) * self.n];
            for (h, &jki) in self.fields.iter_mut().zip(col) {
                *h += jki * delta;
            }
        }
        self.attempts += 1;
        if self.attempts.is_multiple_of(FIELD_REFRESH_INTERVAL) {
            self.recompute_fields();
        }
        (i, flipped)
    }
}

/// Runs burn-in then `total_updates` measured attempts, calling `observer`
/// after every measured attempt. Returns the final configuration.
pub fn run<O>(
    params: &ModelParams,
    couplings: &CouplingMatrix,
    schedule: &SimulationSchedule,
    mut observer: O,
) -> Result<SpinConfiguration, GlauberError>
where
    O: FnMut(&Step<'_>),
{
    schedule.validate(params.n_spins)?;
    let mut dynamics = GlauberDynamics::new(params, couplings, schedule.rng_seed)?;
    for _ in 0..schedule.burn_in_updates {
        dynamics.attempt();
    }
    for attempt in 0..schedule.total_updates {
        let (spin, flipped) = dynamics.attempt();
        observer(&Step { attempt, spin, flipped, state: &dynamics.state, fields: &dynamics.fields });
    }
    Ok(SpinConfiguration(dynamics.state))
}

/// Runs the dynamics and streams every measured attempt into a moment
/// accumulator with the given lag (in attempts).
pub fn simulate_moments(
    params: &ModelParams,
    couplings: &CouplingMatrix,
    schedule: &SimulationSchedule,
    lag_attempts: u64,
) -> Result<MomentEstimates, GlauberError> {
    let mut acc = MomentAccumulator::new(params.n_spins, params.beta(), lag_attempts)?.with_couplings(couplings)?;
    let mut failure = None;
    run(params, couplings, schedule, |step| {
        if let Err(e) = acc.record_step(step) {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(acc.finalize()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sk_model::sample_couplings_seeded;
    use nalgebra::DMatrix;

    #[test]
    fn field_with_zero_couplings_is_theta() {
        let j = CouplingMatrix::zeros(4);
        let s = SpinConfiguration::new(vec![1, -1, -1, 1]).unwrap();
        for i in 0..4 {
            assert_eq!(effective_field(&j, &[0.5; 4], &s, i).unwrap(), 0.5);
        }
    }

    #[test]
    fn field_single_term() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = 0.3;
        let j = CouplingMatrix::new(m).unwrap();
        let s = SpinConfiguration::new(vec![1, -1]).unwrap();
        assert!((effective_field(&j, &[0.0, 0.0], &s, 0).unwrap() + 0.3).abs() < 1e-15);
        assert!(matches!(
            effective_field(&j, &[0.0, 0.0], &s, 2),
            Err(GlauberError::IndexOutOfRange { index: 2, n: 2 })
        ));
    }

    #[test]
    fn spin_configuration_rejects_zero() {
        assert!(SpinConfiguration::new(vec![1, 0, -1]).is_none());
    }

    #[test]
    fn flip_probability_values() {
        assert_eq!(flip_probability(1.0, 1, 0.0), 0.5);
        assert_eq!(flip_probability(3.0, -1, 0.0), 0.5);
        let expected = 1.0 / (1.0 + 2f64.exp());
        assert!((flip_probability(1.0, 1, 1.0) - expected).abs() < 1e-15);
        assert!((flip_probability(1.0, 1, 1.0) - 0.11920).abs() < 1e-5);
        assert!(flip_probability(1e6, 1, 1.0) < 1e-300);
        assert_eq!(flip_probability(1e6, -1, 1.0), 1.0);
        assert!(flip_probability(1e300, 1, 1e300).is_finite());
    }

    #[test]
    fn incremental_fields_match_recomputation() {
        let params = ModelParams::uniform(15, 1.3, 1.0, 1.0, 0.2, 4).unwrap();
        let j = sample_couplings_seeded(&params);
        let mut dynamics = GlauberDynamics::new(&params, &j, 9).unwrap();
        for _ in 0..200_000 {
            dynamics.attempt();
        }
        let s = SpinConfiguration::new(dynamics.state().to_vec()).unwrap();
        for i in 0..15 {
            let h = effective_field(&j, &params.external_field, &s, i).unwrap();
            assert!((h - dynamics.fields()[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn spins_stay_binary_and_run_is_deterministic() {
        let params = ModelParams::uniform(8, 0.7, 1.0, 0.5, 0.1, 2).unwrap();
        let j = sample_couplings_seeded(&params);
        let schedule = SimulationSchedule::new(100, 50_000, 17);
        let mut trace_a = Vec::new();
        let end_a = run(&params, &j, &schedule, |s| {
            assert!(s.state.iter().all(|&v| v == 1 || v == -1));
            trace_a.push((s.spin, s.flipped));
        })
        .unwrap();
        let mut trace_b = Vec::new();
        let end_b = run(&params, &j, &schedule, |s| trace_b.push((s.spin, s.flipped))).unwrap();
        assert_eq!(trace_a, trace_b);
        assert_eq!(end_a, end_b);
    }

    #[test]
    fn rejects_short_schedule_and_bad_dimension() {
        let params = ModelParams::uniform(4, 1.0, 1.0, 0.0, 0.0, 0).unwrap();
        let j = CouplingMatrix::zeros(4);
        assert!(matches!(
            run(&params, &j, &SimulationSchedule::new(0, 3, 0), |_| {}),
            Err(GlauberError::ScheduleTooShort { .. })
        ));
        assert!(matches!(
            run(&params, &CouplingMatrix::zeros(5), &SimulationSchedule::new(0, 10, 0), |_| {}),
            Err(GlauberError::Model(ModelError::Dimension { .. }))
        ));
    }

    #[test]
    fn infinite_temperature_acceptance_is_half() {
        let params = ModelParams::uniform(10, 1e12, 1.0, 1.0, 0.0, 1).unwrap();
        let j = sample_couplings_seeded(&params);
        let mut flips = 0u64;
        run(&params, &j, &SimulationSchedule::new(0, 1_000_000, 3), |s| flips += s.flipped as u64).unwrap();
        let rate = flips as f64 / 1e6;
        assert!((rate - 0.5).abs() < 0.01, "acceptance {rate}");
    }

    /// Batch-means standard error of the time average of one spin.
    fn magnetization_with_error(theta: f64, seed: u64) -> Vec<(f64, f64)> {
        let n = 4;
        let params = ModelParams::uniform(n, 1.0, 1.0, 0.0, theta, 0).unwrap();
        let j = CouplingMatrix::zeros(n);
        let batches = 50u64;
        let total = 1_000_000u64;
        let per = total / batches;
        let mut sums = vec![vec![0.0; batches as usize]; n];
        run(&params, &j, &SimulationSchedule::new(1000, total, seed), |s| {
            let b = (s.attempt / per) as usize;
            for (i, &v) in s.state.iter().enumerate() {
                sums[i][b] += v as f64;
            }
        })
        .unwrap();
        sums.into_iter()
            .map(|b| {
                let means: Vec<f64> = b.iter().map(|v| v / per as f64).collect();
                let mean = means.iter().sum::<f64>() / batches as f64;
                let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
                (mean, (var / batches as f64).sqrt())
            })
            .collect()
    }

    #[test]
    fn free_spins_average_to_zero() {
        for (m, se) in magnetization_with_error(0.0, 21) {
            assert!(m.abs() < 3.0 * se, "m={m} se={se}");
        }
    }

    #[test]
    fn free_spins_in_field_follow_tanh() {
        let expected = 0.5f64.tanh();
        assert!((expected - 0.46212).abs() < 1e-5);
        for (m, se) in magnetization_with_error(0.5, 22) {
            assert!((m - expected).abs() < 3.0 * se, "m={m} se={se}");
        }
    }
}
