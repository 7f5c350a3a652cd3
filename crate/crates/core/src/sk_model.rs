//! Asymmetric Sherrington-Kirkpatrick couplings.
//!
//! `J = J^s + k J^as` with `J^s` symmetric and `J^as` antisymmetric. Every
//! upper-triangle entry of both parts is an independent Gaussian with
//! variance `J^2 / (N (1 + k^2))`, so the total per-entry variance is
//! `J^2 / N` for every `k`, and `cov(J_ij, J_ji) = (1 - k^2) J^2 / (N (1 + k^2))`.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::io::{parse_dimension, write_matrix, FormatError, LineReader};
use crate::seed::rng_from_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("n_spins must be at least 2, got {0}")]
    TooFewSpins(usize),
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("coupling_scale must be positive and finite, got {0}")]
    CouplingScale(f64),
    #[error("asymmetry must be nonnegative and finite, got {0}")]
    Asymmetry(f64),
    #[error("external_field has {got} entries, expected {expected}")]
    FieldLength { expected: usize, got: usize },
    #[error("external_field entry {0} is not finite")]
    FieldValue(usize),
    #[error("coupling matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("coupling matrix has nonzero diagonal entry at {0}")]
    NonzeroDiagonal(usize),
    #[error("coupling matrix entry ({0}, {1}) is not finite")]
    NonFinite(usize, usize),
    #[error("coupling matrix is {got}x{got}, model has {expected} spins")]
    Dimension { expected: usize, got: usize },
}

/// Full parameter vector of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub n_spins: usize,
    pub temperature: f64,
    pub coupling_scale: f64,
    pub asymmetry: f64,
    pub external_field: Vec<f64>,
    pub rng_seed: u64,
}

impl ModelParams {
    pub fn new(
        n_spins: usize,
        temperature: f64,
        coupling_scale: f64,
        asymmetry: f64,
        external_field: Vec<f64>,
        rng_seed: u64,
    ) -> Result<Self, ModelError> {
        let p = ModelParams { n_spins, temperature, coupling_scale, asymmetry, external_field, rng_seed };
        p.validate()?;
        Ok(p)
    }

    /// Same as [`ModelParams::new`] with the scalar field broadcast to every spin.
    pub fn uniform(
        n_spins: usize,
        temperature: f64,
        coupling_scale: f64,
        asymmetry: f64,
        field: f64,
        rng_seed: u64,
    ) -> Result<Self, ModelError> {
        Self::new(n_spins, temperature, coupling_scale, asymmetry, vec![field; n_spins], rng_seed)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_spins < 2 {
            return Err(ModelError::TooFewSpins(self.n_spins));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ModelError::Temperature(self.temperature));
        }
        if !(self.coupling_scale > 0.0 && self.coupling_scale.is_finite()) {
            return Err(ModelError::CouplingScale(self.coupling_scale));
        }
        if !(self.asymmetry >= 0.0 && self.asymmetry.is_finite()) {
            return Err(ModelError::Asymmetry(self.asymmetry));
        }
        if self.external_field.len() != self.n_spins {
            return Err(ModelError::FieldLength { expected: self.n_spins, got: self.external_field.len() });
        }
        if let Some(i) = self.external_field.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::FieldValue(i));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.temperature
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self, ModelError> {
        let p = ModelParams { temperature, ..self.clone() };
        p.validate()?;
        Ok(p)
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        ModelParams { rng_seed, ..self.clone() }
    }

    /// Variance of each independent entry of `J^s` and of `J^as`.
    pub fn component_variance(&self) -> f64 {
        let k2 = self.asymmetry * self.asymmetry;
        self.coupling_scale * self.coupling_scale / (self.n_spins as f64 * (1.0 + k2))
    }
}

/// Square coupling matrix with an exactly zero diagonal and finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix(DMatrix<f64>);

impl CouplingMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self, ModelError> {
        if entries.nrows() != entries.ncols() {
            return Err(ModelError::NotSquare { rows: entries.nrows(), cols: entries.ncols() });
        }
        for c in 0..entries.ncols() {
            for r in 0..entries.nrows() {
                if !entries[(r, c)].is_finite() {
                    return Err(ModelError::NonFinite(r, c));
                }
            }
        }
        if let Some(i) = (0..entries.nrows()).find(|&i| entries[(i, i)] != 0.0) {
            return Err(ModelError::NonzeroDiagonal(i));
        }
        Ok(CouplingMatrix(entries))
    }

    /// Zeroes the diagonal of `entries` and wraps it. Returns the removed
    /// diagonal alongside.
    pub fn from_offdiagonal(mut entries: DMatrix<f64>) -> Result<(Self, Vec<f64>), ModelError> {
        if entries.nrows() != entries.ncols() {
            return Err(ModelError::NotSquare { rows: entries.nrows(), cols: entries.ncols() });
        }
        let diag: Vec<f64> = (0..entries.nrows()).map(|i| entries[(i, i)]).collect();
        entries.fill_diagonal(0.0);
        Ok((CouplingMatrix::new(entries)?, diag))
    }

    pub fn zeros(n: usize) -> Self {
        CouplingMatrix(DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn check_dimension(&self, params: &ModelParams) -> Result<(), ModelError> {
        if self.dim() != params.n_spins {
            return Err(ModelError::Dimension { expected: params.n_spins, got: self.dim() });
        }
        Ok(())
    }

    /// Iterates `(i, j, J_ij)` over ordered off-diagonal pairs, row-major.
    pub fn offdiagonal(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.dim();
        (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j, self.0[(i, j)])))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", self.dim())?;
        write_matrix(w, &self.0)
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, FormatError> {
        let mut lines = LineReader::new(r);
        let head = lines.expect_line()?.to_owned();
        let n = parse_dimension(&head, lines.line_number())?;
        let m = lines.matrix(n)?;
        CouplingMatrix::new(m).map_err(|e| FormatError::Parse { line: 0, message: e.to_string() })
    }
}

/// Draws `J = J^s + k J^as` from the asymmetric SK ensemble.
///
/// One normal draw per upper-triangle entry of each part, mirrored with the
/// matching sign, so `J^s` is exactly symmetric and `J^as` exactly antisymmetric.
pub fn sample_couplings<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> CouplingMatrix {
    let n = params.n_spins;
    let normal = Normal::new(0.0, params.component_variance().sqrt())
        .expect("validated parameters give a finite positive deviation");
    let k = params.asymmetry;
    let mut j = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in (r + 1)..n {
            let sym: f64 = normal.sample(rng);
            let anti: f64 = normal.sample(rng);
            j[(r, c)] = sym + k * anti;
            j[(c, r)] = sym - k * anti;
        }
    }
    CouplingMatrix(j)
}

/// [`sample_couplings`] driven by `params.rng_seed`.
pub fn sample_couplings_seeded(params: &ModelParams) -> CouplingMatrix {
    sample_couplings(params, &mut rng_from_seed(params.rng_seed))
}

/// Splits `J` into `((J + J^T)/2, (J - J^T)/2)`.
pub fn decompose(j: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = j.transpose();
    ((j + &t) * 0.5, (j - &t) * 0.5)
}
