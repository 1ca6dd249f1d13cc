//! Weighted least squares via the normal equations.

use nalgebra::{DMatrix, DVector};

use super::EstimatorError;

/// Pivot ratio below which a Cholesky factor is treated as near-singular.
const CONDITION_FLOOR: f64 = 1e-12;

/// Solves `A x = b` for symmetric positive semi-definite `A`.
///
/// Falls back to `A + ridge * I` when the Cholesky factorization fails or its
/// pivots span more than `1 / CONDITION_FLOOR`. The flag reports the fallback.
pub(crate) fn solve_normal_equations(
    a: DMatrix<f64>,
    b: &DVector<f64>,
    ridge: f64,
) -> Result<(DVector<f64>, bool), EstimatorError> {
    if a.nrows() == 0 {
        return Ok((DVector::zeros(0), false));
    }
    let well_conditioned = |m: &DMatrix<f64>| {
        m.clone().cholesky().filter(|c| {
            let diag = c.l_dirty().diagonal();
            let (lo, hi) = (diag.min(), diag.max());
            lo > 0.0 && (lo / hi).powi(2) > CONDITION_FLOOR
        })
    };
    if let Some(chol) = well_conditioned(&a) {
        return Ok((chol.solve(b), false));
    }
    let n = a.nrows();
    let ridged = a + DMatrix::<f64>::identity(n, n) * ridge;
    match ridged.cholesky() {
        Some(chol) => Ok((chol.solve(b), true)),
        None => Err(EstimatorError::SingularDesign),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coefficients: DVector<f64>,
    pub ridge_used: bool,
}

impl LinearFit {
    pub fn predict(&self, design: &DMatrix<f64>) -> Vec<f64> {
        (design * &self.coefficients).iter().copied().collect()
    }
}

/// Minimizes `sum_i w_i (y_i - x_i' beta)^2`; `design` carries its own intercept column.
pub fn weighted_least_squares(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    ridge: f64,
) -> Result<LinearFit, EstimatorError> {
    let (n, p) = design.shape();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        for a in 0..p {
            let xa = design[(i, a)] * w;
            xty[a] += xa * y[i];
            for b in 0..=a {
                xtx[(a, b)] += xa * design[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    let (coefficients, ridge_used) = solve_normal_equations(xtx, &xty, ridge)?;
    Ok(LinearFit {
        coefficients,
        ridge_used,
    })
}
