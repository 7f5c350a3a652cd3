use nalgebra::DMatrix;

use super::InferenceError;

/// Condition number above which a correlation matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

fn norm_1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// LU inverse plus its 1-norm condition number; fails when the matrix is
/// singular or worse conditioned than [`MAX_CONDITION`].
pub fn checked_inverse(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), InferenceError> {
    let inv = m.clone().lu().try_inverse().ok_or(InferenceError::SingularCorrelation { condition: f64::INFINITY })?;
    let condition = norm_1(m) * norm_1(&inv);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(InferenceError::SingularCorrelation { condition });
    }
    Ok((inv, condition))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_well_conditioned() {
        let (inv, cond) = checked_inverse(&DMatrix::identity(4, 4)).unwrap();
        assert_eq!(inv, DMatrix::identity(4, 4));
        assert_eq!(cond, 1.0);
    }

    #[test]
    fn singular_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(checked_inverse(&m), Err(InferenceError::SingularCorrelation { .. })));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-14]);
        assert!(matches!(checked_inverse(&m), Err(InferenceError::SingularCorrelation { .. })));
    }
}
