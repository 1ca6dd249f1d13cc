use serde::{Deserialize, Serialize};

use super::{EffectEstimate, Estimator, EstimatorError, StudyDesign, PROPENSITY_CLIP};
use crate::bias::logit;
use crate::sampling::ConstructedStudy;

/// Share of matched units with more than one equally close candidate above
/// which the estimate carries a `HighTieRate` flag.
pub const HIGH_TIE_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchTarget {
    /// Every unit is matched to its nearest neighbor in the opposite arm.
    #[default]
    Ate,
    /// Only treated units are matched.
    Att,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub estimate: f64,
    /// Fraction of matched units whose nearest distance was shared by several candidates.
    pub tie_rate: f64,
    pub n_matched: usize,
    /// Row of the chosen match for each unit; `None` for units not matched.
    pub matches: Vec<Option<usize>>,
}

/// One arm sorted by logit, with runs of equal logits collapsed to their lowest row.
struct SortedArm {
    logits: Vec<f64>,
    rows: Vec<usize>,
    multiplicity: Vec<usize>,
}

impl SortedArm {
    fn new(logits: &[f64], members: impl Iterator<Item = usize>) -> Self {
        let mut idx: Vec<usize> = members.collect();
        idx.sort_by(|&a, &b| logits[a].total_cmp(&logits[b]).then(a.cmp(&b)));
        let mut arm = SortedArm {
            logits: Vec::new(),
            rows: Vec::new(),
            multiplicity: Vec::new(),
        };
        for i in idx {
            match arm.logits.last() {
                Some(&l) if l == logits[i] => *arm.multiplicity.last_mut().unwrap() += 1,
                _ => {
                    arm.logits.push(logits[i]);
                    arm.rows.push(i);
                    arm.multiplicity.push(1);
                }
            }
        }
        arm
    }

    /// Nearest row to `x` and whether the minimum distance was shared.
    fn nearest(&self, x: f64) -> (usize, bool) {
        let pos = self.logits.partition_point(|&l| l < x);
        let mut best: Option<(f64, usize, usize)> = None;
        let mut tied = false;
        for g in [pos.wrapping_sub(1), pos] {
            let Some(&l) = self.logits.get(g) else {
                continue;
            };
            let d = (l - x).abs();
            match best {
                None => best = Some((d, self.rows[g], self.multiplicity[g])),
                Some((bd, row, _)) if d == bd => {
                    tied = true;
                    best = Some((d, row.min(self.rows[g]), 2));
                }
                Some((bd, _, _)) if d < bd => best = Some((d, self.rows[g], self.multiplicity[g])),
                _ => {}
            }
        }
        let (_, row, mult) = best.expect("arm is not empty");
        (row, tied || mult > 1)
    }
}

/// 1:1 nearest-neighbor matching with replacement on `logits`.
///
/// Ties go to the lowest row index. Each matched unit contributes
/// `y_treated - y_control` of its pair, weighted by its own unit weight.
pub fn match_on_logits(
    y: &[f64],
    t: &[f64],
    logits: &[f64],
    weights: Option<&[f64]>,
    target: MatchTarget,
) -> MatchResult {
    let n = y.len();
    let treated = SortedArm::new(logits, (0..n).filter(|&i| t[i] == 1.0));
    let control = SortedArm::new(logits, (0..n).filter(|&i| t[i] != 1.0));
    let mut matches = vec![None; n];
    let (mut total, mut mass, mut ties, mut n_matched) = (0.0, 0.0, 0usize, 0usize);
    for i in 0..n {
        let is_treated = t[i] == 1.0;
        if target == MatchTarget::Att && !is_treated {
            continue;
        }
        let (j, tied) = if is_treated {
            control.nearest(logits[i])
        } else {
            treated.nearest(logits[i])
        };
        let effect = if is_treated { y[i] - y[j] } else { y[j] - y[i] };
        let w = weights.map_or(1.0, |w| w[i]);
        total += w * effect;
        mass += w;
        ties += usize::from(tied);
        n_matched += 1;
        matches[i] = Some(j);
    }
    MatchResult {
        estimate: total / mass,
        tie_rate: if n_matched == 0 {
            0.0
        } else {
            ties as f64 / n_matched as f64
        },
        n_matched,
        matches,
    }
}

/// Propensity score matching on the logit of the clipped propensity.
#[derive(Debug, Clone, Copy, Default)]
pub struct Psm {
    pub target: MatchTarget,
}

impl Psm {
    pub fn new(target: MatchTarget) -> Self {
        Self { target }
    }
}

impl Estimator for Psm {
    fn id(&self) -> &str {
        "psm"
    }

    fn estimate(&self, study: &ConstructedStudy) -> Result<EffectEstimate, EstimatorError> {
        let design = StudyDesign::from_study(study)?;
        let (scores, propensity) = design.propensity_scores()?;
        let logits: Vec<f64> = scores.iter().map(|&e| logit(e)).collect();
        let m = match_on_logits(
            &design.y,
            &design.t,
            &logits,
            design.weights.as_deref(),
            self.target,
        );
        let mut est = EffectEstimate::new(self.id(), &design, m.estimate)
            .with_diagnostic("tie_rate", m.tie_rate)
            .with_diagnostic("n_matched", m.n_matched as f64)
            .with_diagnostic("propensity_clip", PROPENSITY_CLIP)
            .with_diagnostic("att", f64::from(u8::from(self.target == MatchTarget::Att)));
        if m.tie_rate > HIGH_TIE_RATE {
            est = est.with_flag("HighTieRate");
        }
        if propensity.fit.separated {
            est = est.with_flag("PropensitySeparation");
        }
        Ok(est)
    }
}
