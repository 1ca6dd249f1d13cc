//! Logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use super::linear::solve_normal_equations;
use super::EstimatorError;
use crate::bias::sigmoid;

/// Fitted scores outside `[SEPARATION_BOUND, 1 - SEPARATION_BOUND]` mark (quasi-)separation.
pub const SEPARATION_BOUND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Convergence when the largest absolute score-gradient entry drops below this.
    pub gradient_tol: f64,
    /// Added to the diagonal when the weighted normal matrix is near-singular.
    pub ridge: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            gradient_tol: 1e-8,
            ridge: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefficients: DVector<f64>,
    /// Gradient criterion met and no separation detected.
    pub converged: bool,
    pub separated: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub ridge_used: bool,
}

impl LogisticFit {
    /// Fitted probabilities for a design with the same columns as the fit.
    pub fn predict(&self, design: &DMatrix<f64>) -> Vec<f64> {
        (design * &self.coefficients)
            .iter()
            .map(|&eta| sigmoid(eta))
            .collect()
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_likelihood(design: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    eta.iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| wi * (yi * e - softplus(e)))
        .sum()
}

/// Maximum-likelihood logistic fit of `y` (0/1) on `design` (which must
/// already contain any intercept column).
///
/// Each Newton step solves the weighted normal equations, halving the step
/// while the log-likelihood would decrease by more than rounding error.
pub fn fit_logistic(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    opts: &LogisticOptions,
) -> Result<LogisticFit, EstimatorError> {
    let (n, p) = design.shape();
    let ones;
    let w = match weights {
        Some(w) => w,
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    let mut beta = DVector::<f64>::zeros(p);
    let mut ll = log_likelihood(design, y, w, &beta);
    let mut converged = false;
    let mut ridge_used = false;
    let mut iterations = 0;

    for iter in 0..=opts.max_iter {
        let mu: Vec<f64> = (design * &beta).iter().map(|&e| sigmoid(e)).collect();
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let resid = w[i] * (y[i] - mu[i]);
            let curv = w[i] * mu[i] * (1.0 - mu[i]);
            for a in 0..p {
                let xa = design[(i, a)];
                grad[a] += xa * resid;
                for b in 0..=a {
                    hess[(a, b)] += curv * xa * design[(i, b)];
                }
            }
        }
        if grad.amax() < opts.gradient_tol {
            converged = true;
            break;
        }
        if iter == opts.max_iter {
            break;
        }
        iterations = iter + 1;
        for a in 0..p {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        let (mut step, ridged) = solve_normal_equations(hess, &grad, opts.ridge)?;
        ridge_used |= ridged;
        let mut next = &beta + &step;
        let mut next_ll = log_likelihood(design, y, w, &next);
        // Near the optimum the gain of a Newton step is below the rounding
        // error of the log-likelihood; only a real decrease triggers halving.
        let slack = 1e-12 * (1.0 + ll.abs());
        let mut halvings = 0;
        while next_ll < ll - slack && halvings < 40 {
            step *= 0.5;
            next = &beta + &step;
            next_ll = log_likelihood(design, y, w, &next);
            halvings += 1;
        }
        if next_ll < ll - slack {
            // No ascent direction left at machine precision.
            break;
        }
        beta = next;
        ll = next_ll;
    }

    let fitted = (design * &beta).map(sigmoid);
    let separated = fitted
        .iter()
        .any(|&m| !(SEPARATION_BOUND..=1.0 - SEPARATION_BOUND).contains(&m));
    Ok(LogisticFit {
        coefficients: beta,
        converged: converged && !separated,
        separated,
        iterations,
        log_likelihood: ll,
        ridge_used,
    })
}

/// Prepends an intercept column.
pub(crate) fn with_intercept(features: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = features.shape();
    DMatrix::from_fn(
        n,
        k + 1,
        |i, j| if j == 0 { 1.0 } else { features[(i, j - 1)] },
    )
}

/// Logistic model of treatment probability given covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub fit: LogisticFit,
    pub feature_names: Vec<String>,
}

impl PropensityModel {
    /// Coefficients in `[intercept, features...]` order.
    pub fn coefficients(&self) -> &DVector<f64> {
        &self.fit.coefficients
    }

    pub fn converged(&self) -> bool {
        self.fit.converged
    }

    /// Scores clipped to `[SEPARATION_BOUND, 1 - SEPARATION_BOUND]`.
    pub fn scores(&self, features: &DMatrix<f64>) -> Vec<f64> {
        self.fit
            .predict(&with_intercept(features))
            .into_iter()
            .map(|e| e.clamp(SEPARATION_BOUND, 1.0 - SEPARATION_BOUND))
            .collect()
    }
}

/// Fits `P(T = 1 | features)` with an intercept plus main effects.
pub fn fit_propensity(
    features: &DMatrix<f64>,
    treatment: &[f64],
    weights: Option<&[f64]>,
    opts: &LogisticOptions,
    feature_names: &[String],
) -> Result<PropensityModel, EstimatorError> {
    let treated = treatment.iter().filter(|&&t| t == 1.0).count();
    if treated == 0 || treated == treatment.len() {
        return Err(EstimatorError::SingleClassTreatment);
    }
    for (j, col) in features.column_iter().enumerate() {
        if col.iter().any(|v| !v.is_finite()) {
            let name = feature_names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("feature {j}"));
            return Err(EstimatorError::NonFiniteFeature(name));
        }
    }
    let fit = fit_logistic(&with_intercept(features), treatment, weights, opts)?;
    Ok(PropensityModel {
        fit,
        feature_names: feature_names.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(x: &[f64], t: &[f64]) -> PropensityModel {
        let features = DMatrix::from_column_slice(x.len(), 1, x);
        fit_propensity(
            &features,
            t,
            None,
            &LogisticOptions::default(),
            &["x".into()],
        )
        .unwrap()
    }

    #[test]
    fn intercept_only_recovers_sample_mean() {
        let t = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let features = DMatrix::<f64>::zeros(10, 0);
        let m = fit_propensity(&features, &t, None, &LogisticOptions::default(), &[]).unwrap();
        assert!(m.converged());
        for s in m.scores(&features) {
            assert!((s - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_fixture_is_flagged_and_clipped() {
        let m = fit(&[-2.0, -1.0, 1.0, 2.0], &[0.0, 0.0, 1.0, 1.0]);
        assert!(m.fit.separated);
        assert!(!m.converged());
        let s = m.scores(&DMatrix::from_column_slice(4, 1, &[-2.0, -1.0, 1.0, 2.0]));
        assert_eq!(s[0], SEPARATION_BOUND);
        assert_eq!(s[3], 1.0 - SEPARATION_BOUND);
    }

    #[test]
    fn negating_a_covariate_negates_its_coefficient() {
        let x = [-1.5, -0.3, 0.2, 0.9, 1.4, -0.7, 0.5, 2.0];
        let t = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = fit(&x, &t);
        let b = fit(&neg, &t);
        assert!(a.converged() && b.converged());
        assert!((a.coefficients()[1] + b.coefficients()[1]).abs() < 1e-9);
        let sa = a.scores(&DMatrix::from_column_slice(8, 1, &x));
        let sb = b.scores(&DMatrix::from_column_slice(8, 1, &neg));
        for (p, q) in sa.iter().zip(&sb) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_at_the_fit() {
        let x = [-1.5, -0.3, 0.2, 0.9, 1.4, -0.7, 0.5, 2.0];
        let t = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let m = fit(&x, &t);
        let s = m
            .fit
            .predict(&with_intercept(&DMatrix::from_column_slice(8, 1, &x)));
        let g0: f64 = t.iter().zip(&s).map(|(a, b)| a - b).sum();
        let g1: f64 = t
            .iter()
            .zip(&s)
            .zip(&x)
            .map(|((a, b), xi)| (a - b) * xi)
            .sum();
        assert!(g0.abs() < 1e-8 && g1.abs() < 1e-8);
    }

    #[test]
    fn input_errors() {
        let f = DMatrix::from_column_slice(3, 1, &[1.0, f64::NAN, 2.0]);
        assert_eq!(
            fit_propensity(
                &f,
                &[0.0, 1.0, 0.0],
                None,
                &LogisticOptions::default(),
                &["z".into()]
            )
            .unwrap_err(),
            EstimatorError::NonFiniteFeature("z".into())
        );
        let f = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        assert_eq!(
            fit_propensity(
                &f,
                &[1.0, 1.0],
                None,
                &LogisticOptions::default(),
                &["z".into()]
            )
            .unwrap_err(),
            EstimatorError::SingleClassTreatment
        );
    }
}
