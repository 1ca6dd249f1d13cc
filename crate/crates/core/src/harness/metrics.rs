use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::sampling::{ConstructedStudy, SamplingMode};

/// Largest selection probability a complementary unit may carry before its
/// weight `p / (1 - p)` is considered unbounded.
pub const MAX_COMPLEMENT_PROB: f64 = 1.0 - 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("ground truth needs both arms; got {treated} treated and {control} control units")]
    SingleArm { treated: usize, control: usize },
    #[error("outcome range is zero")]
    DegenerateRange,
    #[error("{got} predictions for {expected} complementary units")]
    MissingPrediction { expected: usize, got: usize },
    #[error("complementary unit {row} has selection probability {prob}")]
    WeightOverflow { row: usize, prob: f64 },
    #[error("complementary error needs a subsampled study with a non-empty complement")]
    NoComplement,
    #[error("{0}")]
    Data(String),
}

/// Difference of arm means of a randomized trial: the ATE, or the risk
/// difference when outcomes are 0/1.
pub fn ground_truth_effect(rct: &Dataset) -> Result<f64, MetricError> {
    let t = rct
        .binary_treatment()
        .map_err(|e| MetricError::Data(e.to_string()))?;
    let y = rct
        .outcome()
        .ok_or_else(|| MetricError::Data("table has no numeric outcome column".into()))?;
    let (mut sum1, mut n1, mut sum0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (&ti, &yi) in t.iter().zip(y) {
        if ti == 1 {
            sum1 += yi;
            n1 += 1;
        } else {
            sum0 += yi;
            n0 += 1;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(MetricError::SingleArm {
            treated: n1,
            control: n0,
        });
    }
    Ok(sum1 / n1 as f64 - sum0 / n0 as f64)
}

/// `|estimate - truth| / range`.
pub fn normalized_error(estimate: f64, truth: f64, range: f64) -> Result<f64, MetricError> {
    if range.is_nan() || range <= 0.0 {
        return Err(MetricError::DegenerateRange);
    }
    Ok((estimate - truth).abs() / range)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplementNormalization {
    /// Divide the weighted error sum by the number of complementary units.
    #[default]
    Count,
    /// Divide by the sum of the weights.
    SelfNormalized,
}

/// Estimated mean prediction error on the accepted sample, computed from
/// the complementary sample.
///
/// Each complementary unit is weighted by `p / (1 - p)`, where `p` is the
/// probability that the sampler would have drawn the treatment the unit
/// holds.
pub fn complementary_outcome_error(
    predictions: &[f64],
    study: &ConstructedStudy,
    normalization: ComplementNormalization,
) -> Result<f64, MetricError> {
    let comp = study.complementary();
    if study.mode() != SamplingMode::Subsample || comp.is_empty() {
        return Err(MetricError::NoComplement);
    }
    let y = comp
        .outcome()
        .ok_or_else(|| MetricError::Data("complementary sample has no numeric outcome".into()))?;
    if predictions.len() != y.len() {
        return Err(MetricError::MissingPrediction {
            expected: y.len(),
            got: predictions.len(),
        });
    }
    let errors: Vec<f64> = predictions.iter().zip(y).map(|(a, b)| a - b).collect();
    weighted_complement_error(&errors, study.comp_selection_prob(), normalization)
}

/// Weighted mean of per-unit errors with weights `p / (1 - p)`.
pub fn weighted_complement_error(
    errors: &[f64],
    probs: &[f64],
    normalization: ComplementNormalization,
) -> Result<f64, MetricError> {
    if errors.len() != probs.len() {
        return Err(MetricError::MissingPrediction {
            expected: probs.len(),
            got: errors.len(),
        });
    }
    if errors.is_empty() {
        return Err(MetricError::NoComplement);
    }
    let (mut total, mut mass) = (0.0, 0.0);
    for (row, (&e, &p)) in errors.iter().zip(probs).enumerate() {
        if p > MAX_COMPLEMENT_PROB {
            return Err(MetricError::WeightOverflow { row, prob: p });
        }
        let w = p / (1.0 - p);
        total += w * e;
        mass += w;
    }
    Ok(match normalization {
        ComplementNormalization::Count => total / errors.len() as f64,
        ComplementNormalization::SelfNormalized => total / mass,
    })
}

/// Mean of `prediction - outcome` over the accepted sample.
pub fn accepted_outcome_error(
    predictions: &[f64],
    study: &ConstructedStudy,
) -> Result<f64, MetricError> {
    let y = study
        .accepted()
        .outcome()
        .ok_or_else(|| MetricError::Data("accepted sample has no numeric outcome".into()))?;
    if predictions.len() != y.len() {
        return Err(MetricError::MissingPrediction {
            expected: y.len(),
            got: predictions.len(),
        });
    }
    if y.is_empty() {
        return Err(MetricError::Data("accepted sample is empty".into()));
    }
    Ok(predictions.iter().zip(y).map(|(a, b)| a - b).sum::<f64>() / y.len() as f64)
}
