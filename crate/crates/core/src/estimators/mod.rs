//! Treatment-effect estimators evaluated by the harness.
//!
//! All estimators read only the estimator-visible view of a
//! [`ConstructedStudy`]: hidden covariates never reach them. When the accepted
//! sample carries a weight column (reweighting mode) every estimator honors
//! it. Binary outcomes are scored as risk differences, everything else as
//! average treatment effects.

mod aipw;
mod iptw;
mod linear;
mod logistic;
mod naive;
mod psm;
mod regression;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ColumnData, DataError};
use crate::sampling::ConstructedStudy;

pub use aipw::{aipw_from_parts, Aipw};
pub use iptw::{hajek_difference, Iptw};
pub use linear::{weighted_least_squares, LinearFit};
pub use logistic::{fit_logistic, fit_propensity, LogisticFit, LogisticOptions, PropensityModel};
pub use naive::Naive;
pub use psm::{match_on_logits, MatchResult, MatchTarget, Psm};
pub use regression::{fit_outcome_model, OutcomeModel, OutcomeRegression};

/// Propensity scores are clipped to `[PROPENSITY_CLIP, 1 - PROPENSITY_CLIP]` before use.
pub const PROPENSITY_CLIP: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("accepted sample has {treated} treated and {control} control units")]
    DegenerateSample { treated: usize, control: usize },
    #[error("all units share one treatment value")]
    SingleClassTreatment,
    #[error("feature `{0}` has non-finite values")]
    NonFiniteFeature(String),
    #[error("model fit did not converge: {0}")]
    NonConvergence(String),
    #[error("singular design matrix")]
    SingularDesign,
    #[error("{0}")]
    Data(String),
    #[error("external estimator failed: {0}")]
    External(String),
}

impl EstimatorError {
    /// Short name used as the status of a failed trial record.
    pub fn code(&self) -> &'static str {
        match self {
            EstimatorError::DegenerateSample { .. } => "DegenerateSample",
            EstimatorError::SingleClassTreatment => "SingleClassTreatment",
            EstimatorError::NonFiniteFeature(_) => "NonFiniteFeature",
            EstimatorError::NonConvergence(_) => "NonConvergence",
            EstimatorError::SingularDesign => "SingularDesign",
            EstimatorError::Data(_) => "DataError",
            EstimatorError::External(_) => "ExternalFailure",
        }
    }
}

impl From<DataError> for EstimatorError {
    fn from(e: DataError) -> Self {
        EstimatorError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    Ate,
    RiskDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimator: String,
    pub estimand: Estimand,
    pub value: f64,
    pub n_used: usize,
    pub diagnostics: BTreeMap<String, f64>,
    /// Named warnings such as `HighTieRate` or `PropensitySeparation`.
    pub flags: Vec<String>,
}

impl EffectEstimate {
    pub fn new(estimator: &str, design: &StudyDesign, value: f64) -> Self {
        Self {
            estimator: estimator.to_string(),
            estimand: design.estimand(),
            value,
            n_used: design.n(),
            diagnostics: BTreeMap::new(),
            flags: Vec::new(),
        }
    }

    pub fn with_diagnostic(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    pub fn with_flag(mut self, flag: &str) -> Self {
        if !self.flags.iter().any(|f| f == flag) {
            self.flags.push(flag.to_string());
        }
        self
    }
}

pub trait Estimator: Send + Sync {
    fn id(&self) -> &str;
    fn estimate(&self, study: &ConstructedStudy) -> Result<EffectEstimate, EstimatorError>;
}

/// Numeric view of a study: outcome, treatment, encoded covariates, weights.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyDesign {
    pub y: Vec<f64>,
    /// Treatment as 0.0 / 1.0.
    pub t: Vec<f64>,
    /// Encoded covariates, one row per unit, no intercept column.
    pub x: DMatrix<f64>,
    pub feature_names: Vec<String>,
    pub weights: Option<Vec<f64>>,
    pub binary_outcome: bool,
}

impl StudyDesign {
    /// Encodes the estimator-visible covariates of the accepted sample.
    ///
    /// Numeric covariates enter as-is. Factors are one-hot encoded with the
    /// first level (in dictionary order) as reference. Columns that are
    /// constant within the sample carry no information and are dropped.
    pub fn from_study(study: &ConstructedStudy) -> Result<Self, EstimatorError> {
        let view = study.estimator_view();
        let t: Vec<f64> = view.binary_treatment()?.iter().map(|&v| v as f64).collect();
        let treated = t.iter().filter(|&&v| v == 1.0).count();
        if treated == 0 || treated == t.len() {
            return Err(EstimatorError::DegenerateSample {
                treated,
                control: t.len() - treated,
            });
        }
        let y = view
            .outcome()
            .ok_or_else(|| EstimatorError::Data("no numeric outcome column".into()))?
            .to_vec();
        let n = y.len();
        let mut features: Vec<(String, Vec<f64>)> = Vec::new();
        for name in study.visible_covariates() {
            let col = view.column(name).expect("visible covariates exist");
            match &col.data {
                ColumnData::Categorical { codes, levels } => {
                    for (code, level) in levels.iter().enumerate().skip(1) {
                        let ind = codes
                            .iter()
                            .map(|&c| f64::from(c as usize == code))
                            .collect();
                        features.push((format!("{name}={level}"), ind));
                    }
                }
                data => {
                    features.push((name.to_string(), data.to_f64_vec().expect("numeric column")))
                }
            }
        }
        features.retain(|(_, v)| v.iter().any(|&a| a != v[0]));
        let x = DMatrix::from_fn(n, features.len(), |i, j| features[j].1[i]);
        Ok(Self {
            binary_outcome: view.has_binary_outcome(),
            weights: view.weights().map(<[f64]>::to_vec),
            feature_names: features.into_iter().map(|(name, _)| name).collect(),
            y,
            t,
            x,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn estimand(&self) -> Estimand {
        if self.binary_outcome {
            Estimand::RiskDifference
        } else {
            Estimand::Ate
        }
    }

    /// Unit weights, all ones when the study is unweighted.
    pub fn unit_weights(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.n()])
    }

    /// Fits the shared propensity model and returns clipped scores.
    pub fn propensity_scores(&self) -> Result<(Vec<f64>, PropensityModel), EstimatorError> {
        let model = fit_propensity(
            &self.x,
            &self.t,
            self.weights.as_deref(),
            &LogisticOptions::default(),
            &self.feature_names,
        )?;
        let scores = model
            .scores(&self.x)
            .into_iter()
            .map(|e| e.clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP))
            .collect();
        Ok((scores, model))
    }
}

/// Canonical ids of the built-in estimators.
pub const BUILTIN_IDS: [&str; 5] = ["naive", "iptw", "outcome_regression", "psm", "aipw"];

/// Looks up a built-in estimator by id (`or` and `dr` are accepted aliases).
pub fn builtin(id: &str, psm_target: MatchTarget) -> Option<Box<dyn Estimator>> {
    match id {
        "naive" => Some(Box::new(Naive)),
        "iptw" => Some(Box::new(Iptw)),
        "outcome_regression" | "or" => Some(Box::new(OutcomeRegression)),
        "psm" => Some(Box::new(Psm::new(psm_target))),
        "aipw" | "dr" => Some(Box::new(Aipw)),
        _ => None,
    }
}
