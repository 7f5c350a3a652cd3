//! Streaming estimation of magnetizations and correlations.
//!
//! Every measured attempt is one sample. Between accepted flips the
//! configuration is constant, so the accumulator keeps running cumulative
//! sums (`sum_{u<t} s_j(u)`, `sum_{u<t} tanh(beta H_i(u))`, and the same for
//! the lag-delayed spins) that are evaluated lazily. A flip of spin `k` closes
//! the constant segment of `s_k` and adds its contribution to row `k` of each
//! pair sum. The cost is O(1) per attempt and O(N) per flip, and the memory
//! is independent of the run length apart from a queue of at most `lag`
//! pending flips.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::glauber::Step;
use crate::io::{parse_dimension, write_matrix, write_row, FormatError, LineReader};
use crate::sk_model::CouplingMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentError {
    #[error("lag must be at least one attempt")]
    ZeroLag,
    #[error("attempt {got} recorded out of order, expected {expected}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("need at least 2 samples and more than the lag ({lag}), have {count}")]
    TooFewSamples { count: u64, lag: u64 },
    #[error("state has {got} spins, accumulator expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("finite-difference estimator needs lag_delta > 0, got {0}")]
    NonPositiveLag(f64),
}

/// Which estimate of `D = dC/dt(0) + C(0)` feeds inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DEstimator {
    /// `<tanh(beta H_i) s_j> - m_i m_j`, read off the equation of motion.
    Tanh,
    /// Forward difference of the lagged correlation.
    FiniteDifference,
}

impl DEstimator {
    pub fn name(self) -> &'static str {
        match self {
            DEstimator::Tanh => "tanh",
            DEstimator::FiniteDifference => "finite_difference",
        }
    }
}

impl std::str::FromStr for DEstimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "tanh" => Ok(DEstimator::Tanh),
            "finite_difference" | "fd" => Ok(DEstimator::FiniteDifference),
            other => Err(format!("unknown estimator `{other}` (expected tanh or finite_difference)")),
        }
    }
}

impl std::fmt::Display for DEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Connected moments of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub m: Vec<f64>,
    /// Equal-time connected correlations.
    pub c0: DMatrix<f64>,
    /// `<s_i(t) s_j(t - lag)> - m_i m_j`.
    pub c_lag: DMatrix<f64>,
    /// Derivative-corrected correlation matrix used by inference.
    pub d: DMatrix<f64>,
    /// Lag in sweeps (attempts / N).
    pub lag_delta: f64,
    /// Number of samples; 0 marks exact (enumerated) moments.
    pub sample_count: u64,
}

impl MomentEstimates {
    pub fn n_spins(&self) -> usize {
        self.m.len()
    }

    /// Copy with `d` recomputed by the given estimator. The tanh estimate is
    /// what [`MomentAccumulator::finalize`] stores, so `Tanh` leaves `d` alone.
    pub fn with_estimator(&self, estimator: DEstimator) -> Result<MomentEstimates, MomentError> {
        let mut out = self.clone();
        if estimator == DEstimator::FiniteDifference {
            out.d = estimate_d_fd(self)?;
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.n_spins(), self.lag_delta, self.sample_count)?;
        write_row(w, self.m.iter().copied())?;
        write_matrix(w, &self.c0)?;
        write_matrix(w, &self.c_lag)?;
        write_matrix(w, &self.d)
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, FormatError> {
        let mut lines = LineReader::new(r);
        let head = lines.expect_line()?.to_owned();
        let line = lines.line_number();
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(FormatError::parse(line, "header must be `N lag_delta sample_count`"));
        }
        let n = parse_dimension(parts[0], line)?;
        let lag_delta = parts[1].parse::<f64>().map_err(|e| FormatError::parse(line, format!("lag_delta: {e}")))?;
        let sample_count =
            parts[2].parse::<u64>().map_err(|e| FormatError::parse(line, format!("sample_count: {e}")))?;
        let m = lines.floats(n)?;
        let c0 = lines.matrix(n)?;
        let c_lag = lines.matrix(n)?;
        let d = lines.matrix(n)?;
        Ok(MomentEstimates { m, c0, c_lag, d, lag_delta, sample_count })
    }
}

/// `C0 + (C_lag - C0) / lag_delta`.
pub fn estimate_d_fd(moments: &MomentEstimates) -> Result<DMatrix<f64>, MomentError> {
    if !(moments.lag_delta > 0.0) {
        return Err(MomentError::NonPositiveLag(moments.lag_delta));
    }
    Ok(&moments.c0 + (&moments.c_lag - &moments.c0) / moments.lag_delta)
}

/// Unnormalized sums accumulated so far.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSums {
    pub count: u64,
    /// Samples entering the lagged sums (`count - lag`).
    pub lagged_count: u64,
    /// `sum_t s_i(t)`.
    pub spins: Vec<f64>,
    /// `sum_t s_i(t) s_j(t)`.
    pub pairs: DMatrix<f64>,
    /// `sum_t s_i(t) s_j(t - lag)`.
    pub lagged: DMatrix<f64>,
    /// `sum_t tanh(beta H_i(t)) s_j(t)`.
    pub tanh_pairs: DMatrix<f64>,
}

/// Running sums of piecewise-constant signals, stored as `offset + value * t`
/// so that `sum_{u<t} x(u)` costs one multiply-add at any `t`.
#[derive(Debug, Clone)]
struct Signals {
    value: Vec<f64>,
    offset: Vec<f64>,
}

impl Signals {
    fn new(n: usize) -> Self {
        Signals { value: vec![0.0; n], offset: vec![0.0; n] }
    }

    #[inline]
    fn set(&mut self, j: usize, value: f64, t: u64) {
        self.offset[j] += (self.value[j] - value) * t as f64;
        self.value[j] = value;
    }

    fn sums(&self, t: u64) -> Vec<f64> {
        let t = t as f64;
        self.value.iter().zip(&self.offset).map(|(v, o)| o + v * t).collect()
    }
}

/// Adds `c * (offset_j + value_j * t)` to every entry of `acc`.
#[inline]
fn add_scaled_sums(acc: &mut [f64], sig: &Signals, c: f64, t: f64) {
    let n = acc.len();
    let (value, offset) = (&sig.value[..n], &sig.offset[..n]);
    for j in 0..n {
        acc[j] += c * (offset[j] + value[j] * t);
    }
}

#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    n: usize,
    beta: f64,
    lag: u64,
    count: u64,
    first_attempt: u64,
    initial: Vec<f64>,
    spins: Signals,
    /// Spins as seen `lag` samples ago; 0 before the lag window is filled.
    delayed: Signals,
    /// `(sample at which the delayed spin changes, spin, new value)`.
    pending: VecDeque<(u64, usize, f64)>,
    tanh: Signals,
    // Row k of each block collects `sum over flips of 2 s_k^old * S_j(t_flip)`,
    // where `S_j` is the running sum of the partner signal. Together with the
    // open segment `s_k S_j(t)` this telescopes to `sum_t s_k(t) x_j(t)`.
    pairs: Vec<f64>,
    lagged: Vec<f64>,
    /// Stored transposed: entry `k * n + i` is the `(i, k)` tanh pair sum.
    tanh_pairs: Vec<f64>,
    changed: Vec<usize>,
    /// Entry `k * n + i` is `tanh(2 beta J_ik)`, the tanh of the field jump
    /// of spin `i` when spin `k` flips up. Empty when unused.
    jumps: Vec<f64>,
    flips_since_refresh: u32,
}

/// Incremental tanh updates between exact recomputations.
const TANH_REFRESH_FLIPS: u32 = 32;
/// Beyond this magnitude the addition formula loses relative accuracy in
/// `1 - |tanh|`, so such entries are recomputed exactly.
const TANH_EXACT_ABOVE: f64 = 0.999;

impl MomentAccumulator {
    /// `lag_attempts` is the lag of `C_lag` in single-spin attempts.
    pub fn new(n: usize, beta: f64, lag_attempts: u64) -> Result<Self, MomentError> {
        if lag_attempts == 0 {
            return Err(MomentError::ZeroLag);
        }
        let nn = n * n;
        Ok(MomentAccumulator {
            n,
            beta,
            lag: lag_attempts,
            count: 0,
            first_attempt: 0,
            initial: vec![0.0; n],
            spins: Signals::new(n),
            delayed: Signals::new(n),
            pending: VecDeque::new(),
            tanh: Signals::new(n),
            pairs: vec![0.0; nn],
            lagged: vec![0.0; nn],
            tanh_pairs: vec![0.0; nn],
            changed: Vec::with_capacity(n),
            jumps: Vec::new(),
            flips_since_refresh: 0,
        })
    }

    /// Enables the fast tanh update for single flips, using the couplings
    /// that generate the fields. Results agree with the plain accumulator
    /// to round-off.
    pub fn with_couplings(mut self, couplings: &CouplingMatrix) -> Result<Self, MomentError> {
        let n = self.n;
        if couplings.dim() != n {
            return Err(MomentError::Dimension { expected: n, got: couplings.dim() });
        }
        let j = couplings.as_matrix();
        self.jumps = (0..n * n).map(|idx| (2.0 * self.beta * j[(idx % n, idx / n)]).tanh()).collect();
        Ok(self)
    }

    pub fn sample_count(&self) -> u64 {
        self.count
    }

    pub fn lag_attempts(&self) -> u64 {
        self.lag
    }

    pub fn record_step(&mut self, step: &Step<'_>) -> Result<(), MomentError> {
        self.record_flip(step.attempt, step.state, step.fields, step.flipped_spin())
    }

    /// Records one sample whose state differs from the previous one at most
    /// in `flipped`.
    pub fn record_flip(
        &mut self,
        attempt: u64,
        state: &[i8],
        fields: &[f64],
        flipped: Option<usize>,
    ) -> Result<(), MomentError> {
        if self.count == 0 {
            return self.start(attempt, state, fields);
        }
        self.advance_to(attempt, state)?;
        if let Some(k) = flipped {
            debug_assert_eq!(state[k] as f64, -self.spins.value[k], "flip hint does not match state");
            self.changed.clear();
            self.changed.push(k);
            self.apply_changes(fields);
        }
        self.count += 1;
        Ok(())
    }

    /// Records one sample of an arbitrary configuration, detecting changed
    /// spins by comparison with the previous sample.
    pub fn record(&mut self, attempt: u64, state: &[i8], fields: &[f64]) -> Result<(), MomentError> {
        if self.count == 0 {
            return self.start(attempt, state, fields);
        }
        self.advance_to(attempt, state)?;
        self.changed.clear();
        let (changed, spins) = (&mut self.changed, &self.spins.value);
        changed.extend((0..self.n).filter(|&i| state[i] as f64 != spins[i]));
        if !self.changed.is_empty() {
            self.apply_changes(fields);
        }
        self.count += 1;
        Ok(())
    }

    fn start(&mut self, attempt: u64, state: &[i8], fields: &[f64]) -> Result<(), MomentError> {
        if state.len() != self.n || fields.len() != self.n {
            return Err(MomentError::Dimension { expected: self.n, got: state.len() });
        }
        self.first_attempt = attempt;
        for (j, &s) in state.iter().enumerate() {
            self.initial[j] = s as f64;
            self.spins.value[j] = s as f64;
        }
        for (t, &h) in self.tanh.value.iter_mut().zip(fields) {
            *t = (self.beta * h).tanh();
        }
        self.count = 1;
        Ok(())
    }

    fn advance_to(&mut self, attempt: u64, state: &[i8]) -> Result<(), MomentError> {
        let expected = self.first_attempt + self.count;
        if attempt != expected {
            return Err(MomentError::OutOfOrder { expected, got: attempt });
        }
        if state.len() != self.n {
            return Err(MomentError::Dimension { expected: self.n, got: state.len() });
        }
        let t = self.count;
        if t == self.lag {
            for j in 0..self.n {
                self.delayed.set(j, self.initial[j], t);
            }
        }
        while let Some(&(when, j, value)) = self.pending.front() {
            if when > t {
                break;
            }
            self.delayed.set(j, value, when);
            self.pending.pop_front();
        }
        Ok(())
    }

    /// Closes the segments of every spin in `self.changed` at sample `count`.
    fn apply_changes(&mut self, fields: &[f64]) {
        let n = self.n;
        let t = self.count;
        let tf = t as f64;
        for idx in 0..self.changed.len() {
            let k = self.changed[idx];
            let old = self.spins.value[k];
            let row = k * n..(k + 1) * n;
            add_scaled_sums(&mut self.pairs[row.clone()], &self.spins, 2.0 * old, tf);
            add_scaled_sums(&mut self.lagged[row.clone()], &self.delayed, 2.0 * old, tf);
            add_scaled_sums(&mut self.tanh_pairs[row], &self.tanh, 2.0 * old, tf);
            self.spins.set(k, -old, t);
            self.pending.push_back((t + self.lag, k, -old));
        }

        let beta = self.beta;
        let (value, offset) = (&mut self.tanh.value[..n], &mut self.tanh.offset[..n]);
        self.flips_since_refresh += 1;
        let incremental =
            !self.jumps.is_empty() && self.changed.len() == 1 && self.flips_since_refresh < TANH_REFRESH_FLIPS;
        if incremental {
            let k = self.changed[0];
            let sign = self.spins.value[k];
            let jumps = &self.jumps[k * n..(k + 1) * n];
            let mut saturated = false;
            for i in 0..n {
                let u = sign * jumps[i];
                let th = (value[i] + u) / (1.0 + value[i] * u);
                saturated |= th.abs() > TANH_EXACT_ABOVE;
                offset[i] += (value[i] - th) * tf;
                value[i] = th;
            }
            if saturated {
                for i in 0..n {
                    if value[i].abs() > TANH_EXACT_ABOVE {
                        let th = (beta * fields[i]).tanh();
                        offset[i] += (value[i] - th) * tf;
                        value[i] = th;
                    }
                }
            }
        } else {
            self.flips_since_refresh = 0;
            for i in 0..n {
                let th = (beta * fields[i]).tanh();
                offset[i] += (value[i] - th) * tf;
                value[i] = th;
            }
        }
    }

    /// Sums over all samples recorded so far, open segments included.
    pub fn raw_sums(&self) -> RawSums {
        let n = self.n;
        let t = self.count;
        let spins = self.spins.sums(t);
        let delayed = self.delayed.sums(t);
        let tanh = self.tanh.sums(t);

        let mut pairs = DMatrix::zeros(n, n);
        let mut lagged = DMatrix::zeros(n, n);
        let mut tanh_pairs = DMatrix::zeros(n, n);
        for k in 0..n {
            let s = self.spins.value[k];
            for j in 0..n {
                let idx = k * n + j;
                // The first segment of s_k starts at 0, where every running
                // sum vanishes.
                pairs[(k, j)] = self.pairs[idx] + s * spins[j];
                lagged[(k, j)] = self.lagged[idx] + s * delayed[j];
                // idx doubles as (row i = j, column k) for the transposed block.
                tanh_pairs[(j, k)] = self.tanh_pairs[idx] + s * tanh[j];
            }
        }
        RawSums { count: t, lagged_count: t.saturating_sub(self.lag), spins, pairs, lagged, tanh_pairs }
    }

    /// `<tanh(beta H_i) s_j> - m_i m_j`.
    pub fn estimate_d_tanh(&self) -> Result<DMatrix<f64>, MomentError> {
        Ok(self.finalize()?.d)
    }

    /// Connected moments of the samples so far. The accumulator is left
    /// untouched, so this can be called for prefix snapshots.
    pub fn finalize(&self) -> Result<MomentEstimates, MomentError> {
        if self.count < 2 || self.count <= self.lag {
            return Err(MomentError::TooFewSamples { count: self.count, lag: self.lag });
        }
        let n = self.n;
        let raw = self.raw_sums();
        let count = raw.count as f64;
        let m: Vec<f64> = raw.spins.iter().map(|s| s / count).collect();
        let mm = DMatrix::from_fn(n, n, |i, j| m[i] * m[j]);
        let mut c0 = raw.pairs / count - &mm;
        for i in 0..n {
            c0[(i, i)] = 1.0 - m[i] * m[i];
        }
        let c_lag = raw.lagged / raw.lagged_count as f64 - &mm;
        let d = raw.tanh_pairs / count - &mm;
        Ok(MomentEstimates { m, c0, c_lag, d, lag_delta: self.lag as f64 / n as f64, sample_count: raw.count })
    }
}

/// Splits one run into contiguous batches with an accumulator each, for
/// batch-means error bars.
#[derive(Debug, Clone)]
pub struct BatchedMoments {
    batch_len: u64,
    template: MomentAccumulator,
    current: MomentAccumulator,
    done: Vec<MomentEstimates>,
}

impl BatchedMoments {
    pub fn new(n: usize, beta: f64, lag_attempts: u64, batch_len: u64) -> Result<Self, MomentError> {
        let template = MomentAccumulator::new(n, beta, lag_attempts)?;
        if batch_len <= lag_attempts.max(1) {
            return Err(MomentError::TooFewSamples { count: batch_len, lag: lag_attempts });
        }
        Ok(BatchedMoments { batch_len, current: template.clone(), template, done: Vec::new() })
    }

    /// See [`MomentAccumulator::with_couplings`].
    pub fn with_couplings(mut self, couplings: &CouplingMatrix) -> Result<Self, MomentError> {
        self.template = self.template.with_couplings(couplings)?;
        self.current = self.template.clone();
        Ok(self)
    }

    pub fn record_step(&mut self, step: &Step<'_>) -> Result<(), MomentError> {
        self.current.record_step(step)?;
        if self.current.sample_count() == self.batch_len {
            let fresh = self.template.clone();
            let full = std::mem::replace(&mut self.current, fresh);
            self.done.push(full.finalize()?);
        }
        Ok(())
    }

    /// Completed batches; a trailing partial batch is dropped.
    pub fn batches(&self) -> &[MomentEstimates] {
        &self.done
    }
}

/// Entrywise mean and standard error of the mean across batches.
pub fn batch_mean_stderr(values: &[DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    assert!(values.len() >= 2, "need at least two batches");
    let b = values.len() as f64;
    let (r, c) = values[0].shape();
    let mean = values.iter().fold(DMatrix::zeros(r, c), |acc, v| acc + v) / b;
    let var = values.iter().fold(DMatrix::zeros(r, c), |acc, v| acc + (v - &mean).map(|x| x * x)) / (b - 1.0);
    (mean, var.map(|v| (v / b).sqrt()))
}
