//! Kinetic Ising model toolkit.
//!
//! Samples asymmetric Sherrington-Kirkpatrick couplings, runs asynchronous
//! (random-sequential) Glauber dynamics, streams the resulting spin history
//! into first and second moments, and reconstructs the coupling matrix with
//! naive mean-field and TAP inference.
//!
//! ```no_run
//! use kising_core::prelude::*;
//!
//! let params = ModelParams::uniform(20, 3.7, 1.0, 1.0, 0.0, 7).unwrap();
//! let truth = sample_couplings_seeded(&params);
//! let schedule = SimulationSchedule::new(1_000 * 20, 2_000_000, 11);
//! let moments = simulate_moments(&params, &truth, &schedule, 1).unwrap();
//! let nmf = infer_nmf(&moments, params.temperature).unwrap();
//! let tap = infer_tap_cubic(&moments, params.temperature).unwrap();
//! println!(
//!     "nMF {:.4}  TAP {:.4}",
//!     reconstruction_error(&nmf.couplings, &truth).unwrap(),
//!     reconstruction_error(&tap.couplings, &truth).unwrap(),
//! );
//! ```

// `!(a <= b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod glauber;
pub mod harness;
pub mod inference;
pub mod io;
pub mod moments;
pub mod seed;
pub mod sk_model;

pub mod prelude {
    pub use crate::glauber::{
        effective_field, exact_moments, exact_stationary_distribution, flip_probability, run, simulate_moments,
        SimulationSchedule, SpinConfiguration, Step,
    };
    pub use crate::inference::{
        fraction_three_real, infer_nmf, infer_tap_cubic, infer_tap_iterative, reconstruction_error, solve_cubic_f,
        InferenceResult, Method, RootDiagnostics, TapIterationOptions,
    };
    pub use crate::moments::{estimate_d_fd, DEstimator, MomentAccumulator, MomentEstimates};
    pub use crate::sk_model::{decompose, sample_couplings, sample_couplings_seeded, CouplingMatrix, ModelParams};
}
