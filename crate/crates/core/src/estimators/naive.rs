use super::{EffectEstimate, Estimator, EstimatorError, StudyDesign};
use crate::sampling::ConstructedStudy;
use crate::stats::weighted_mean;

/// Difference of (weighted) arm means, `E[Y | T = 1] - E[Y | T = 0]`.
///
/// Ignores covariates entirely, so on a confounded sample its error measures
/// how much confounding the sampling induced.
#[derive(Debug, Clone, Copy, Default)]
pub struct Naive;

pub(crate) fn arm_mean_difference(design: &StudyDesign) -> f64 {
    let w = design.unit_weights();
    let arm = |level: f64| {
        let (ys, ws): (Vec<f64>, Vec<f64>) = design
            .y
            .iter()
            .zip(&design.t)
            .zip(&w)
            .filter(|((_, &t), _)| t == level)
            .map(|((&y, _), &wi)| (y, wi))
            .unzip();
        weighted_mean(&ys, &ws).unwrap_or(f64::NAN)
    };
    arm(1.0) - arm(0.0)
}

impl Estimator for Naive {
    fn id(&self) -> &str {
        "naive"
    }

    fn estimate(&self, study: &ConstructedStudy) -> Result<EffectEstimate, EstimatorError> {
        let design = StudyDesign::from_study(study)?;
        Ok(EffectEstimate::new(
            self.id(),
            &design,
            arm_mean_difference(&design),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::fixtures::study;

    #[test]
    fn arm_difference_examples() {
        let s = study(&[1, 1, 0, 0], &[3.0, 3.0, 1.0, 1.0], &[], None);
        assert_eq!(Naive.estimate(&s).unwrap().value, 2.0);
        let s = study(&[1, 1, 0, 0], &[2.0, 4.0, 1.0, 1.0], &[], None);
        assert_eq!(Naive.estimate(&s).unwrap().value, 2.0);
    }

    #[test]
    fn honors_weights() {
        let s = study(&[1, 1, 0], &[2.0, 4.0, 1.0], &[], Some(vec![3.0, 1.0, 1.0]));
        assert_eq!(Naive.estimate(&s).unwrap().value, 1.5);
    }
}
