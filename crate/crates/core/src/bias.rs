//! Biasing functions: covariate values to treatment-selection probabilities.
//!
//! The functional form is logistic in transformed covariates,
//!
//! ```text
//! p = clip(sigmoid(intercept + sum_k coefficient_k * transform_k(value_k)), eps, 1 - eps)
//! ```
//!
//! Transform parameters (means, deviations, quantile tables) are estimated
//! once from the pre-bias table by [`compile_bias`] and frozen, so a subsample
//! never redefines the function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ColumnData, ColumnRole, Dataset};
use crate::stats::pearson;

pub const DEFAULT_COEFFICIENT: f64 = 0.6;
pub const DEFAULT_CLIP_EPSILON: f64 = 0.01;
/// Correlations below this magnitude trigger a weak-confounding warning.
pub const WEAK_CORRELATION: f64 = 0.05;
/// Calibration searches intercept shifts within `[-CALIBRATION_BRACKET, CALIBRATION_BRACKET]`.
pub const CALIBRATION_BRACKET: f64 = 40.0;
const CALIBRATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum BiasError {
    #[error("covariate `{0}` is not a covariate column of the table")]
    UnknownCovariate(String),
    #[error("covariate `{0}` needs at least two distinct values")]
    ConstantCovariate(String),
    #[error("transform does not fit column `{0}`")]
    TransformMismatch(String),
    #[error("level `{level}` does not occur in covariate `{covariate}`")]
    UnknownLevel { covariate: String, level: String },
    #[error("no value supplied for covariate `{0}`")]
    MissingCovariateValue(String),
    #[error(
        "cannot shift the intercept to reach a mean probability of 0.5 (reachable mean {reached})"
    )]
    CalibrationFailed { reached: f64 },
    #[error("invalid biasing spec: {0}")]
    InvalidSpec(String),
    #[error("table has no rows")]
    EmptyDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `(x - mean) / sd`.
    Standardize,
    /// Average-rank quantile, centred to lie in `(-0.5, 0.5)`.
    RankQuantile,
    /// Indicator of one categorical level.
    OneHotLevel(String),
}

fn default_transform() -> Transform {
    Transform::Standardize
}

fn default_coefficient() -> f64 {
    DEFAULT_COEFFICIENT
}

fn default_epsilon() -> f64 {
    DEFAULT_CLIP_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasTerm {
    pub covariate: String,
    #[serde(default = "default_transform")]
    pub transform: Transform,
    #[serde(default = "default_coefficient")]
    pub coefficient: f64,
}

impl BiasTerm {
    pub fn standardized(covariate: impl Into<String>, coefficient: f64) -> Self {
        Self {
            covariate: covariate.into(),
            transform: Transform::Standardize,
            coefficient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasingSpec {
    pub terms: Vec<BiasTerm>,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default = "default_epsilon")]
    pub clip_epsilon: f64,
    /// Shift the intercept so the mean probability over the table is 0.5.
    #[serde(default)]
    pub calibrate: bool,
    /// Required to set `clip_epsilon = 0`, which lets probabilities reach 0 or 1.
    #[serde(default)]
    pub allow_positivity_violation: bool,
}

impl BiasingSpec {
    pub fn new(terms: Vec<BiasTerm>) -> Self {
        Self {
            terms,
            intercept: 0.0,
            clip_epsilon: DEFAULT_CLIP_EPSILON,
            calibrate: false,
            allow_positivity_violation: false,
        }
    }

    pub fn validate(&self) -> Result<(), BiasError> {
        if self.terms.is_empty() {
            return Err(BiasError::InvalidSpec(
                "at least one term is required".into(),
            ));
        }
        let eps = self.clip_epsilon;
        let eps_ok = if self.allow_positivity_violation {
            (0.0..0.5).contains(&eps)
        } else {
            eps > 0.0 && eps < 0.5
        };
        if !eps_ok {
            return Err(BiasError::InvalidSpec(format!(
                "clip_epsilon {eps} must lie in (0, 0.5); 0 needs allow_positivity_violation"
            )));
        }
        if !self.intercept.is_finite() || self.terms.iter().any(|t| !t.coefficient.is_finite()) {
            return Err(BiasError::InvalidSpec("coefficients must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FrozenTransform {
    Standardize { mean: f64, sd: f64 },
    RankQuantile { sorted: Vec<f64> },
    OneHotLevel { level: String },
}

impl FrozenTransform {
    fn apply_numeric(&self, x: f64) -> f64 {
        match self {
            FrozenTransform::Standardize { mean, sd } => (x - mean) / sd,
            FrozenTransform::RankQuantile { sorted } => {
                let n = sorted.len() as f64;
                let below = sorted.partition_point(|&v| v < x) as f64;
                let ties = sorted.partition_point(|&v| v <= x) as f64 - below;
                // 1-based average rank; a value absent from the table sits halfway between neighbours.
                let rank = below + (ties + 1.0) / 2.0;
                (rank - 0.5) / n - 0.5
            }
            FrozenTransform::OneHotLevel { level } => {
                // Integer-coded factors compare by their decimal text.
                if format!("{x}") == *level {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn apply_level(&self, level: &str) -> Option<f64> {
        match self {
            FrozenTransform::OneHotLevel { level: target } => {
                Some(if level == target { 1.0 } else { 0.0 })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CompiledTerm {
    covariate: String,
    coefficient: f64,
    transform: FrozenTransform,
}

/// Correlation between one transformed biasing covariate and the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateDiagnostic {
    pub covariate: String,
    pub outcome_correlation: Option<f64>,
    pub weak: bool,
}

/// One covariate value supplied to [`CompiledBias::probability`].
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValue {
    Number(f64),
    Level(String),
}

/// An executable biasing function with frozen parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledBias {
    terms: Vec<CompiledTerm>,
    intercept: f64,
    clip_epsilon: f64,
    constant: Option<f64>,
    calibration_shift: f64,
    diagnostics: Vec<CovariateDiagnostic>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Estimates transform parameters from `d` and freezes them.
pub fn compile_bias(spec: &BiasingSpec, d: &Dataset) -> Result<CompiledBias, BiasError> {
    spec.validate()?;
    let outcome = reference_outcome(d);
    let mut terms = Vec::with_capacity(spec.terms.len());
    let mut diagnostics = Vec::with_capacity(spec.terms.len());
    for term in &spec.terms {
        let col = d
            .column(&term.covariate)
            .filter(|c| c.role == ColumnRole::Covariate)
            .ok_or_else(|| BiasError::UnknownCovariate(term.covariate.clone()))?;
        let transform = match (&term.transform, &col.data) {
            (Transform::Standardize | Transform::RankQuantile, ColumnData::Categorical { .. }) => {
                return Err(BiasError::TransformMismatch(term.covariate.clone()))
            }
            (Transform::Standardize, data) => {
                let values = data.to_f64_vec().unwrap_or_default();
                let (mean, sd) = mean_sd(&values);
                if sd.is_nan() || sd <= 0.0 {
                    return Err(BiasError::ConstantCovariate(term.covariate.clone()));
                }
                FrozenTransform::Standardize { mean, sd }
            }
            (Transform::RankQuantile, data) => {
                let mut sorted = data.to_f64_vec().unwrap_or_default();
                sorted.sort_by(f64::total_cmp);
                if sorted.first() == sorted.last() {
                    return Err(BiasError::ConstantCovariate(term.covariate.clone()));
                }
                FrozenTransform::RankQuantile { sorted }
            }
            (Transform::OneHotLevel(level), data) => {
                let present = match data {
                    ColumnData::Categorical { levels, codes } => levels
                        .iter()
                        .position(|l| l == level)
                        .is_some_and(|code| codes.contains(&(code as u32))),
                    ColumnData::Integer(v) => v.iter().any(|x| x.to_string() == *level),
                    ColumnData::Numeric(v) => v.iter().any(|x| format!("{x}") == *level),
                };
                if !present {
                    return Err(BiasError::UnknownLevel {
                        covariate: term.covariate.clone(),
                        level: level.clone(),
                    });
                }
                FrozenTransform::OneHotLevel {
                    level: level.clone(),
                }
            }
        };
        let compiled = CompiledTerm {
            covariate: term.covariate.clone(),
            coefficient: term.coefficient,
            transform,
        };
        let transformed = term_values(&compiled, d)?;
        let outcome_correlation = outcome.as_ref().and_then(|y| pearson(&transformed, y));
        diagnostics.push(CovariateDiagnostic {
            covariate: term.covariate.clone(),
            weak: outcome_correlation.is_none_or(|r| r.abs() < WEAK_CORRELATION),
            outcome_correlation,
        });
        terms.push(compiled);
    }
    let compiled = CompiledBias {
        terms,
        intercept: spec.intercept,
        clip_epsilon: spec.clip_epsilon,
        constant: None,
        calibration_shift: 0.0,
        diagnostics,
    };
    if spec.calibrate {
        calibrate_mean_half(&compiled, d)
    } else {
        Ok(compiled)
    }
}

/// Outcome used for diagnostics: the observed outcome, or the mean of the potential outcomes.
fn reference_outcome(d: &Dataset) -> Option<Vec<f64>> {
    if let Some(y) = d.outcome() {
        return Some(y.to_vec());
    }
    let (y0, y1) = (d.potential_outcome(0)?, d.potential_outcome(1)?);
    Some(y0.iter().zip(y1).map(|(a, b)| 0.5 * (a + b)).collect())
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.len() < 2 {
        return (values.first().copied().unwrap_or(0.0), 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn term_values(term: &CompiledTerm, d: &Dataset) -> Result<Vec<f64>, BiasError> {
    let col = d
        .column(&term.covariate)
        .ok_or_else(|| BiasError::MissingCovariateValue(term.covariate.clone()))?;
    Ok(match &col.data {
        ColumnData::Categorical { codes, levels } => {
            let per_level: Vec<f64> = levels
                .iter()
                .map(|l| term.transform.apply_level(l))
                .collect::<Option<_>>()
                .ok_or_else(|| BiasError::TransformMismatch(term.covariate.clone()))?;
            codes.iter().map(|&c| per_level[c as usize]).collect()
        }
        data => (0..data.len())
            .map(|r| {
                term.transform
                    .apply_numeric(data.as_f64(r).unwrap_or(f64::NAN))
            })
            .collect(),
    })
}

impl CompiledBias {
    /// A covariate-free function that returns `p` for every unit, unclipped.
    pub fn constant(p: f64) -> Self {
        assert!((0.0..=1.0).contains(&p), "probability out of range");
        Self {
            terms: Vec::new(),
            intercept: 0.0,
            clip_epsilon: 0.0,
            constant: Some(p),
            calibration_shift: 0.0,
            diagnostics: Vec::new(),
        }
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn clip_epsilon(&self) -> f64 {
        self.clip_epsilon
    }

    /// Total intercept shift applied by calibration.
    pub fn calibration_shift(&self) -> f64 {
        self.calibration_shift
    }

    pub fn diagnostics(&self) -> &[CovariateDiagnostic] {
        &self.diagnostics
    }

    /// Names of the covariates the function reads.
    pub fn covariates(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.covariate.as_str()).collect()
    }

    fn finish(&self, eta: f64) -> f64 {
        sigmoid(eta).clamp(self.clip_epsilon, 1.0 - self.clip_epsilon)
    }

    /// Linear predictor for every row of `d`.
    fn linear_predictors(&self, d: &Dataset) -> Result<Vec<f64>, BiasError> {
        let mut eta = vec![self.intercept; d.n_rows()];
        for term in &self.terms {
            let values = term_values(term, d)?;
            for (e, v) in eta.iter_mut().zip(values) {
                *e += term.coefficient * v;
            }
        }
        Ok(eta)
    }

    /// Selection probability for each row of `d`.
    pub fn probabilities(&self, d: &Dataset) -> Result<Vec<f64>, BiasError> {
        if let Some(p) = self.constant {
            return Ok(vec![p; d.n_rows()]);
        }
        Ok(self
            .linear_predictors(d)?
            .into_iter()
            .map(|e| self.finish(e))
            .collect())
    }

    /// Selection probability for one unit given its covariate values.
    pub fn probability(&self, row: &BTreeMap<String, CovariateValue>) -> Result<f64, BiasError> {
        if let Some(p) = self.constant {
            return Ok(p);
        }
        let mut eta = self.intercept;
        for term in &self.terms {
            let value = row
                .get(&term.covariate)
                .ok_or_else(|| BiasError::MissingCovariateValue(term.covariate.clone()))?;
            let z = match value {
                CovariateValue::Number(x) => term.transform.apply_numeric(*x),
                CovariateValue::Level(l) => term
                    .transform
                    .apply_level(l)
                    .ok_or_else(|| BiasError::TransformMismatch(term.covariate.clone()))?,
            };
            eta += term.coefficient * z;
        }
        Ok(self.finish(eta))
    }

    /// Serializable description of the frozen parameters.
    pub fn summary(&self) -> BiasSummary {
        BiasSummary {
            functional_form: if self.constant.is_some() {
                "constant".into()
            } else {
                "logistic: clip(sigmoid(intercept + sum coefficient * transform(covariate)), eps, 1 - eps)".into()
            },
            constant: self.constant,
            intercept: self.intercept,
            calibration_shift: self.calibration_shift,
            clip_epsilon: self.clip_epsilon,
            terms: self
                .terms
                .iter()
                .map(|t| {
                    let (transform, parameters) = match &t.transform {
                        FrozenTransform::Standardize { mean, sd } => (
                            "standardize".to_string(),
                            BTreeMap::from([("mean".to_string(), *mean), ("sd".to_string(), *sd)]),
                        ),
                        FrozenTransform::RankQuantile { sorted } => (
                            "rank_quantile".to_string(),
                            BTreeMap::from([
                                ("n_reference".to_string(), sorted.len() as f64),
                                ("min".to_string(), sorted[0]),
                                ("max".to_string(), sorted[sorted.len() - 1]),
                            ]),
                        ),
                        FrozenTransform::OneHotLevel { level } => {
                            (format!("one_hot_level:{level}"), BTreeMap::new())
                        }
                    };
                    TermSummary {
                        covariate: t.covariate.clone(),
                        transform,
                        coefficient: t.coefficient,
                        parameters,
                    }
                })
                .collect(),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSummary {
    pub covariate: String,
    pub transform: String,
    pub coefficient: f64,
    pub parameters: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub functional_form: String,
    pub constant: Option<f64>,
    pub intercept: f64,
    pub calibration_shift: f64,
    pub clip_epsilon: f64,
    pub terms: Vec<TermSummary>,
    pub diagnostics: Vec<CovariateDiagnostic>,
}

/// Shifts the intercept by bisection so the mean probability over `d` is 0.5.
///
/// Transforms and coefficients are unchanged. Fails when no shift within
/// `±CALIBRATION_BRACKET` brings the mean within 1e-6 of 0.5.
pub fn calibrate_mean_half(b: &CompiledBias, d: &Dataset) -> Result<CompiledBias, BiasError> {
    if d.is_empty() {
        return Err(BiasError::EmptyDataset);
    }
    if let Some(p) = b.constant {
        if (p - 0.5).abs() <= CALIBRATION_TOLERANCE {
            return Ok(b.clone());
        }
        return Err(BiasError::CalibrationFailed { reached: p });
    }
    let eta = b.linear_predictors(d)?;
    let n = eta.len() as f64;
    let mean_at = |shift: f64| eta.iter().map(|e| b.finish(e + shift)).sum::<f64>() / n;

    let mut shift = 0.0;
    let mut mean = mean_at(0.0);
    if (mean - 0.5).abs() > 1e-12 {
        let (mut lo, mut hi) = (-CALIBRATION_BRACKET, CALIBRATION_BRACKET);
        let (m_lo, m_hi) = (mean_at(lo), mean_at(hi));
        if m_lo > 0.5 + CALIBRATION_TOLERANCE {
            return Err(BiasError::CalibrationFailed { reached: m_lo });
        }
        if m_hi < 0.5 - CALIBRATION_TOLERANCE {
            return Err(BiasError::CalibrationFailed { reached: m_hi });
        }
        for _ in 0..200 {
            shift = 0.5 * (lo + hi);
            mean = mean_at(shift);
            if (mean - 0.5).abs() <= 1e-12 || hi - lo <= 1e-14 {
                break;
            }
            if mean < 0.5 {
                lo = shift;
            } else {
                hi = shift;
            }
        }
        if (mean - 0.5).abs() > CALIBRATION_TOLERANCE {
            return Err(BiasError::CalibrationFailed { reached: mean });
        }
    }
    let mut out = b.clone();
    out.intercept += shift;
    out.calibration_shift += shift;
    Ok(out)
}
