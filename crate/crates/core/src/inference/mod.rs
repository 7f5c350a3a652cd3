//! Coupling reconstruction from moments.
//!
//! All methods start from `V = D C0^{-1}`:
//!
//! * naive mean field: `J_ij = T V_ij / (1 - m_i^2)`;
//! * TAP: `J_ij = T V_ij / ((1 - m_i^2)(1 - F_i))` with the Onsager factor
//!   `F_i = beta^2 (1 - m_i^2) sum_{j != i} J_ij^2 (1 - m_j^2)`, found either by
//!   fixed-point iteration or from the per-spin cubic
//!   `F_i (1 - F_i)^2 + x_i = 0`, `x_i = -sum_{j != i} V_ij^2 (1 - m_j^2) / (1 - m_i^2)`.
//!
//! Inferred self-couplings are removed from the returned matrix and kept in
//! [`InferenceResult::self_couplings`].

mod cubic;
mod linalg;

pub use cubic::{solve_cubic_f, CubicRoots, ROOT_BOUNDARY};
pub use linalg::{checked_inverse, MAX_CONDITION};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::moments::MomentEstimates;
use crate::sk_model::{CouplingMatrix, ModelError};

/// Smallest admissible `1 - m_i^2`.
pub const SATURATION_LIMIT: f64 = 1e-12;
/// Selected roots closer than this to 1 are rejected.
pub const DEGENERATE_ROOT_GAP: f64 = 1e-9;
/// Iterates with any coupling beyond this magnitude count as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("correlation matrix is singular or ill-conditioned (condition {condition:e})")]
    SingularCorrelation { condition: f64 },
    #[error("spin {spin} is frozen (1 - m^2 = {one_minus_m2:e})")]
    SaturatedSpin { spin: usize, one_minus_m2: f64 },
    #[error("selected TAP root {root} for spin {spin} is too close to 1")]
    DegenerateRoot { spin: usize, root: f64 },
    #[error("cubic constant term must be nonpositive, got {0}")]
    PositiveCubicConstant(f64),
    #[error("true couplings are identically zero")]
    ZeroTruth,
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Nmf,
    TapIterative,
    TapCubic,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Nmf, Method::TapIterative, Method::TapCubic];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nmf => "nmf",
            Method::TapIterative => "tap-iterative",
            Method::TapCubic => "tap-cubic",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "nmf" => Ok(Method::Nmf),
            "tap-iterative" | "tap-iter" => Ok(Method::TapIterative),
            "tap-cubic" => Ok(Method::TapCubic),
            other => Err(format!("unknown method `{other}` (expected nmf, tap-iterative or tap-cubic)")),
        }
    }
}

/// Per-spin cubic data behind the root-type classification.
#[derive(Debug, Clone, PartialEq)]
pub struct RootDiagnostics {
    pub x: Vec<f64>,
    pub root_counts: Vec<u8>,
    pub selected_roots: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Closed-form methods, or the iteration met its tolerance.
    Converged,
    MaxIterations,
    /// An iterate exceeded [`DIVERGENCE_LIMIT`] or became non-finite.
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub method: Method,
    pub couplings: CouplingMatrix,
    /// Diagonal of the raw inferred matrix, excluded from `couplings`.
    pub self_couplings: Vec<f64>,
    /// Onsager factor per spin; all zero for nMF.
    pub f: Vec<f64>,
    /// `None` for nMF.
    pub diagnostics: Option<RootDiagnostics>,
    pub converged: bool,
    pub iterations: usize,
    pub termination: Termination,
}

impl InferenceResult {
    /// Coupling matrix text followed by one `i x_i root_count selected_F`
    /// line per spin when diagnostics are present.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        self.couplings.write_to(w)?;
        if let Some(d) = &self.diagnostics {
            for i in 0..d.x.len() {
                writeln!(w, "{i} {} {} {}", d.x[i], d.root_counts[i], d.selected_roots[i])?;
            }
        }
        Ok(())
    }
}

/// Quantities shared by every method.
struct Prepared {
    n: usize,
    /// `1 - m_i^2`.
    w: Vec<f64>,
    v: DMatrix<f64>,
}

fn prepare(moments: &MomentEstimates) -> Result<Prepared, InferenceError> {
    let n = moments.n_spins();
    if moments.c0.shape() != (n, n) || moments.d.shape() != (n, n) {
        return Err(InferenceError::Dimension(n, moments.c0.nrows()));
    }
    let w: Vec<f64> = moments.m.iter().map(|m| 1.0 - m * m).collect();
    if let Some(spin) = w.iter().position(|&v| !(v >= SATURATION_LIMIT)) {
        return Err(InferenceError::SaturatedSpin { spin, one_minus_m2: w[spin] });
    }
    let (c_inv, _) = checked_inverse(&moments.c0)?;
    Ok(Prepared { n, w, v: &moments.d * c_inv })
}

fn split_diagonal(raw: DMatrix<f64>) -> Result<(CouplingMatrix, Vec<f64>), InferenceError> {
    Ok(CouplingMatrix::from_offdiagonal(raw)?)
}

/// `J = T A^{-1} D C0^{-1}` with `A = diag(1 - m_i^2)`.
pub fn infer_nmf(moments: &MomentEstimates, temperature: f64) -> Result<InferenceResult, InferenceError> {
    let p = prepare(moments)?;
    let (couplings, self_couplings) = split_diagonal(nmf_raw(&p, temperature))?;
    Ok(InferenceResult {
        method: Method::Nmf,
        couplings,
        self_couplings,
        f: vec![0.0; p.n],
        diagnostics: None,
        converged: true,
        iterations: 0,
        termination: Termination::Converged,
    })
}

fn nmf_raw(p: &Prepared, temperature: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p.n, p.n, |i, j| temperature * p.v[(i, j)] / p.w[i])
}

fn root_diagnostics(p: &Prepared) -> Result<RootDiagnostics, InferenceError> {
    let mut x = Vec::with_capacity(p.n);
    let mut root_counts = Vec::with_capacity(p.n);
    let mut selected_roots = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let s: f64 = (0..p.n).filter(|&j| j != i).map(|j| p.v[(i, j)].powi(2) * p.w[j]).sum();
        let xi = -s / p.w[i];
        let roots = solve_cubic_f(xi)?;
        x.push(xi);
        root_counts.push(roots.root_count);
        selected_roots.push(roots.selected);
    }
    Ok(RootDiagnostics { x, root_counts, selected_roots })
}

/// Per-spin root classification of the TAP cubic for these moments.
pub fn tap_root_diagnostics(moments: &MomentEstimates) -> Result<RootDiagnostics, InferenceError> {
    root_diagnostics(&prepare(moments)?)
}

/// TAP couplings from the smallest real root of each spin's cubic.
pub fn infer_tap_cubic(moments: &MomentEstimates, temperature: f64) -> Result<InferenceResult, InferenceError> {
    let p = prepare(moments)?;
    let diagnostics = root_diagnostics(&p)?;
    let f = diagnostics.selected_roots.clone();
    for (spin, &root) in f.iter().enumerate() {
        if (root - 1.0).abs() < DEGENERATE_ROOT_GAP {
            return Err(InferenceError::DegenerateRoot { spin, root });
        }
    }
    let raw = DMatrix::from_fn(p.n, p.n, |i, j| temperature * p.v[(i, j)] / (p.w[i] * (1.0 - f[i])));
    let (couplings, self_couplings) = split_diagonal(raw)?;
    Ok(InferenceResult {
        method: Method::TapCubic,
        couplings,
        self_couplings,
        f,
        diagnostics: Some(diagnostics),
        converged: true,
        iterations: 0,
        termination: Termination::Converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapIterationOptions {
    /// Stop once the mean absolute change of the off-diagonal couplings drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for TapIterationOptions {
    fn default() -> Self {
        TapIterationOptions { tolerance: 1e-5, max_iterations: 10_000 }
    }
}

fn onsager_factors(j: &DMatrix<f64>, w: &[f64], beta: f64) -> Vec<f64> {
    let n = w.len();
    (0..n)
        .map(|i| {
            let s: f64 = (0..n).filter(|&k| k != i).map(|k| j[(i, k)].powi(2) * w[k]).sum();
            beta * beta * w[i] * s
        })
        .collect()
}

/// Fixed-point iteration `J <- T A(J)^{-1} D C0^{-1}`, started from `initial`
/// or from the nMF solution. No damping: a divergent iteration is reported
/// through `termination`, not an error.
pub fn infer_tap_iterative(
    moments: &MomentEstimates,
    temperature: f64,
    initial: Option<&CouplingMatrix>,
    options: TapIterationOptions,
) -> Result<InferenceResult, InferenceError> {
    let p = prepare(moments)?;
    let diagnostics = root_diagnostics(&p)?;
    let beta = 1.0 / temperature;
    let n = p.n;
    let mut current = match initial {
        Some(j0) if j0.dim() != n => return Err(InferenceError::Dimension(n, j0.dim())),
        Some(j0) => j0.as_matrix().clone(),
        None => nmf_raw(&p, temperature),
    };
    let pairs = (n * (n - 1)) as f64;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let f = onsager_factors(&current, &p.w, beta);
        let next = DMatrix::from_fn(n, n, |i, j| temperature * p.v[(i, j)] / (p.w[i] * (1.0 - f[i])));
        if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            termination = Termination::Diverged;
            break;
        }
        let mut change = 0.0;
        for c in 0..n {
            for r in 0..n {
                if r != c {
                    change += (next[(r, c)] - current[(r, c)]).abs();
                }
            }
        }
        current = next;
        if change / pairs < options.tolerance {
            termination = Termination::Converged;
            break;
        }
    }
    let f = onsager_factors(&current, &p.w, beta);
    let (couplings, self_couplings) = split_diagonal(current)?;
    Ok(InferenceResult {
        method: Method::TapIterative,
        couplings,
        self_couplings,
        f,
        diagnostics: Some(diagnostics),
        converged: termination == Termination::Converged,
        iterations,
        termination,
    })
}

pub fn infer(
    method: Method,
    moments: &MomentEstimates,
    temperature: f64,
    options: TapIterationOptions,
) -> Result<InferenceResult, InferenceError> {
    match method {
        Method::Nmf => infer_nmf(moments, temperature),
        Method::TapCubic => infer_tap_cubic(moments, temperature),
        Method::TapIterative => infer_tap_iterative(moments, temperature, None, options),
    }
}

/// Share of spins whose cubic has three real roots.
pub fn fraction_three_real(diagnostics: &RootDiagnostics) -> f64 {
    let n = diagnostics.root_counts.len();
    diagnostics.root_counts.iter().filter(|&&c| c == 3).count() as f64 / n as f64
}

/// `sqrt(sum_{i!=j} (J_re - J_true)^2 / sum_{i!=j} J_true^2)`.
pub fn reconstruction_error(inferred: &CouplingMatrix, truth: &CouplingMatrix) -> Result<f64, InferenceError> {
    if inferred.dim() != truth.dim() {
        return Err(InferenceError::Dimension(inferred.dim(), truth.dim()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for ((_, _, t), (_, _, r)) in truth.offdiagonal().zip(inferred.offdiagonal()) {
        num += (r - t) * (r - t);
        den += t * t;
    }
    if den == 0.0 {
        return Err(InferenceError::ZeroTruth);
    }
    Ok((num / den).sqrt())
}
