use super::{EffectEstimate, Estimator, EstimatorError, StudyDesign, PROPENSITY_CLIP};
use crate::sampling::ConstructedStudy;

/// Inverse probability of treatment weighting, self-normalized (Hájek) form:
///
/// ```text
/// sum_T y/e / sum_T 1/e  -  sum_C y/(1-e) / sum_C 1/(1-e)
/// ```
///
/// with propensity scores clipped to `[0.01, 0.99]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Iptw;

/// Hájek IPW difference for given scores; `weights` multiply the inverse-probability weights.
pub fn hajek_difference(y: &[f64], t: &[f64], scores: &[f64], weights: Option<&[f64]>) -> f64 {
    let (mut num1, mut den1, mut num0, mut den0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..y.len() {
        let w = weights.map_or(1.0, |w| w[i]);
        if t[i] == 1.0 {
            num1 += w * y[i] / scores[i];
            den1 += w / scores[i];
        } else {
            num0 += w * y[i] / (1.0 - scores[i]);
            den0 += w / (1.0 - scores[i]);
        }
    }
    num1 / den1 - num0 / den0
}

impl Estimator for Iptw {
    fn id(&self) -> &str {
        "iptw"
    }

    fn estimate(&self, study: &ConstructedStudy) -> Result<EffectEstimate, EstimatorError> {
        let design = StudyDesign::from_study(study)?;
        let (scores, model) = design.propensity_scores()?;
        let value = hajek_difference(&design.y, &design.t, &scores, design.weights.as_deref());
        let max_weight = scores
            .iter()
            .zip(&design.t)
            .map(|(&e, &t)| if t == 1.0 { 1.0 / e } else { 1.0 / (1.0 - e) })
            .fold(0.0, f64::max);
        let mut est = EffectEstimate::new(self.id(), &design, value)
            .with_diagnostic("max_weight", max_weight)
            .with_diagnostic("propensity_clip", PROPENSITY_CLIP)
            .with_diagnostic(
                "propensity_converged",
                f64::from(u8::from(model.converged())),
            )
            .with_diagnostic("propensity_iterations", model.fit.iterations as f64);
        if model.fit.separated {
            est = est.with_flag("PropensitySeparation");
        }
        Ok(est)
    }
}
