//! Minimum-norm least squares via singular value decomposition.
//!
//! One deterministic solver backs every fit in the crate: rank-revealing,
//! minimum-norm on rank deficiency, with an optional ridge penalty applied
//! through row augmentation so the same code path handles both cases.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VlError};

#[derive(Debug)]
pub(crate) struct LsFit {
    pub solution: DVector<f64>,
    /// Numerical rank at the tolerance `s_max * max(nrows, ncols) * eps`.
    pub rank: usize,
    /// Ratio of the largest singular value to the smallest one above the
    /// rank tolerance; 0 for an all-zero matrix. Always finite.
    pub condition: f64,
    /// Sum of squared residuals against the *unaugmented* system.
    pub sse: f64,
}

/// Solve `min ||y - X b||^2 (+ ridge * ||b||^2)` for `b`.
///
/// `ridge == 0` gives the plain minimum-norm least-squares solution. A
/// positive ridge is handled by stacking `sqrt(ridge) * I` under `X`, which
/// keeps the solve rank-revealing and deterministic. The reported residual
/// always refers to the original rows only.
pub(crate) fn solve_least_squares(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<LsFit> {
    if x.nrows() != y.len() {
        return Err(VlError::InvalidParameter(format!(
            "design has {} rows but the target has {} samples",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(VlError::InvalidParameter(
            "least squares needs a non-empty design matrix".into(),
        ));
    }
    if !ridge.is_finite() || ridge < 0.0 {
        return Err(VlError::InvalidParameter(format!(
            "ridge penalty must be finite and non-negative, got {ridge}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(VlError::Data(
            "design matrix contains a non-finite value".into(),
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(VlError::Data(
            "target vector contains a non-finite value".into(),
        ));
    }

    let cols = x.ncols();
    let (xa, ya) = if ridge > 0.0 {
        let mut xa = DMatrix::zeros(x.nrows() + cols, cols);
        xa.view_mut((0, 0), (x.nrows(), cols)).copy_from(x);
        let s = ridge.sqrt();
        for c in 0..cols {
            xa[(x.nrows() + c, c)] = s;
        }
        let mut ya = DVector::zeros(x.nrows() + cols);
        ya.rows_mut(0, x.nrows()).copy_from(y);
        (xa, ya)
    } else {
        (x.clone(), y.clone())
    };

    let svd = xa.clone().svd(true, true);
    let s_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = s_max * xa.nrows().max(xa.ncols()) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let condition = if rank == 0 {
        0.0
    } else {
        let s_min = svd
            .singular_values
            .iter()
            .cloned()
            .filter(|&s| s > tol)
            .fold(f64::INFINITY, f64::min);
        s_max / s_min
    };
    let solution = if rank == 0 {
        DVector::zeros(cols)
    } else {
        svd.solve(&ya, tol)
            .map_err(|e| VlError::InvalidParameter(format!("singular value solve failed: {e}")))?
    };
    let residual = y - x * &solution;
    let sse = residual.norm_squared();
    Ok(LsFit {
        solution,
        rank,
        condition,
        sse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_system_recovers_solution() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_column_slice(&[2.0, -1.0, 1.0]);
        let fit = solve_least_squares(&x, &y, 0.0).unwrap();
        assert_relative_eq!(fit.solution[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.solution[1], -1.0, epsilon = 1e-12);
        assert!(fit.sse < 1e-24);
        assert_eq!(fit.rank, 2);
        assert!(fit.condition >= 1.0 && fit.condition.is_finite());
    }

    #[test]
    fn zero_matrix_gives_zero_solution() {
        let x = DMatrix::zeros(4, 3);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        let fit = solve_least_squares(&x, &y, 0.0).unwrap();
        assert!(fit.solution.iter().all(|&v| v == 0.0));
        assert_eq!(fit.rank, 0);
        assert_eq!(fit.condition, 0.0);
        assert_relative_eq!(fit.sse, 30.0, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_column_splits_weight_evenly() {
        // Minimum-norm solution distributes the coefficient equally over
        // identical columns.
        let col = [1.0, 2.0, 3.0, 4.0];
        let mut x = DMatrix::zeros(4, 2);
        for i in 0..4 {
            x[(i, 0)] = col[i];
            x[(i, 1)] = col[i];
        }
        let y = DVector::from_column_slice(&[2.0, 4.0, 6.0, 8.0]);
        let fit = solve_least_squares(&x, &y, 0.0).unwrap();
        assert_relative_eq!(fit.solution[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(fit.solution[1], 1.0, epsilon = 1e-10);
        assert_eq!(fit.rank, 1);
    }

    #[test]
    fn ridge_shrinks_toward_zero() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let y = DVector::from_column_slice(&[3.0, 3.0, 3.0]);
        let plain = solve_least_squares(&x, &y, 0.0).unwrap();
        let ridged = solve_least_squares(&x, &y, 3.0).unwrap();
        assert_relative_eq!(plain.solution[0], 3.0, epsilon = 1e-12);
        // (X'X + 3I)^-1 X'y = 9 / 6 = 1.5
        assert_relative_eq!(ridged.solution[0], 1.5, epsilon = 1e-12);
        // Residual is reported against the original rows.
        assert_relative_eq!(ridged.sse, 3.0 * 1.5 * 1.5, epsilon = 1e-10);
    }

    #[test]
    fn rejects_mismatched_and_nonfinite_input() {
        let x = DMatrix::zeros(3, 2);
        let y = DVector::from_column_slice(&[1.0, 2.0]);
        assert!(solve_least_squares(&x, &y, 0.0).is_err());
        let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        let y = DVector::from_column_slice(&[1.0, 2.0]);
        assert_eq!(
            solve_least_squares(&x, &y, 0.0).unwrap_err().class(),
            "data"
        );
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(solve_least_squares(&x, &y, -1.0).is_err());
    }
}
