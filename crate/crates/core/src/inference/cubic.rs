//! Real roots of `F (1 - F)^2 + x = 0`, i.e. `F^3 - 2F^2 + F + x = 0`.
//!
//! With `F = y + 2/3` the cubic becomes `y^3 - y/3 + (x + 2/27) = 0`. Its
//! discriminant is nonnegative exactly when `-4/27 <= x <= 0`, in which case
//! the trigonometric form gives all three roots; otherwise Cardano's formula
//! gives the single real root (which is then larger than 4/3).

use std::f64::consts::PI;

use super::InferenceError;

/// Constant term at which two real roots merge.
pub const ROOT_BOUNDARY: f64 = -4.0 / 27.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CubicRoots {
    /// Real roots in ascending order (repeated roots listed twice).
    pub roots: Vec<f64>,
    /// 1 or 3.
    pub root_count: u8,
    /// Smallest real root.
    pub selected: f64,
}

#[inline]
fn poly(f: f64, x: f64) -> f64 {
    ((f - 2.0) * f + 1.0) * f + x
}

/// One Newton step, kept only if it lowers the residual. Near a double
/// root the derivative vanishes and the unpolished value is already the
/// better answer.
fn polish(f: f64, x: f64) -> f64 {
    let d = (3.0 * f - 4.0) * f + 1.0;
    if d == 0.0 {
        return f;
    }
    let g = f - poly(f, x) / d;
    if poly(g, x).abs() < poly(f, x).abs() {
        g
    } else {
        f
    }
}

/// Solves the per-spin TAP cubic. `x` must be nonpositive.
pub fn solve_cubic_f(x: f64) -> Result<CubicRoots, InferenceError> {
    if !(x <= 0.0) {
        return Err(InferenceError::PositiveCubicConstant(x));
    }
    let q = x + 2.0 / 27.0;
    if x >= ROOT_BOUNDARY {
        // cos(phi) = -27 q / 2. Snap within a few ulps of +-1 so the
        // boundary cases produce an exactly repeated root.
        let mut c = -13.5 * q;
        if c >= 1.0 - 8.0 * f64::EPSILON {
            c = 1.0;
        } else if c <= -1.0 + 8.0 * f64::EPSILON {
            c = -1.0;
        }
        let phi = c.acos();
        let mut roots: Vec<f64> = (0..3)
            .map(|k| 2.0 / 3.0 + (2.0 / 3.0) * (phi / 3.0 - 2.0 * PI * k as f64 / 3.0).cos())
            .map(|f| polish(f, x))
            .collect();
        roots.sort_by(f64::total_cmp);
        Ok(CubicRoots { selected: roots[0], roots, root_count: 3 })
    } else {
        // p = -1/3, so the Cardano radicand is q^2/4 - 1/729 > 0 here.
        let half = -0.5 * q;
        let u = (half + (q * q / 4.0 - 1.0 / 729.0).sqrt()).cbrt();
        let root = polish(2.0 / 3.0 + u + 1.0 / (9.0 * u), x);
        Ok(CubicRoots { roots: vec![root], root_count: 1, selected: root })
    }
}
