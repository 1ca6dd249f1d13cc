//! Constructing observational studies from experimental tables.
//!
//! * [`osapo_sample`] draws one treatment per unit of an all-potential-outcomes
//!   table and keeps the matching outcome.
//! * [`osrct_sample`] draws a treatment per unit of a randomized trial and
//!   keeps the unit only when the draw matches the treatment it actually
//!   received. Rejected units form the complementary sample.
//! * [`weighted_view`] keeps every trial unit and weights it by the
//!   probability that the draw would have matched.
//!
//! In every case the selection probability recorded for a unit is
//! `P(T^s = t_i | C^b_i)` for the treatment `t_i` the unit holds.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{BiasError, BiasSummary, CompiledBias};
use crate::data::{write_table, Column, ColumnRole, DataError, Dataset, TableKind};
use crate::rng::TrialRng;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("expected a randomized-trial table")]
    NotRctTable,
    #[error("expected an all-potential-outcomes table")]
    NotApoTable,
    #[error("treatment must be binary")]
    NonBinaryTreatment,
    #[error("accepted sample has {treated} treated and {control} control units")]
    DegenerateSample { treated: usize, control: usize },
    #[error("`{0}` is not a covariate of the accepted sample")]
    UnknownCovariate(String),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    Subsample,
    Reweight,
}

/// Name of the weight column added by [`weighted_view`].
pub const SELECTION_WEIGHT: &str = "selection_weight";

/// A constructed observational study and its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstructedStudy {
    accepted: Dataset,
    complementary: Dataset,
    selection_prob: Vec<f64>,
    comp_selection_prob: Vec<f64>,
    hidden: Vec<String>,
    seed: Option<u64>,
    mode: SamplingMode,
}

impl ConstructedStudy {
    /// Wraps an existing observational table (no sampling record, nothing hidden).
    pub fn observed(accepted: Dataset) -> Self {
        let complementary = accepted.select_rows(&[]);
        let mode = if accepted.weights().is_some() {
            SamplingMode::Reweight
        } else {
            SamplingMode::Subsample
        };
        Self {
            accepted,
            complementary,
            selection_prob: Vec::new(),
            comp_selection_prob: Vec::new(),
            hidden: Vec::new(),
            seed: None,
            mode,
        }
    }

    pub fn accepted(&self) -> &Dataset {
        &self.accepted
    }

    pub fn complementary(&self) -> &Dataset {
        &self.complementary
    }

    /// `P(T^s = t_i | C^b_i)` for each accepted unit; empty for [`ConstructedStudy::observed`].
    pub fn selection_prob(&self) -> &[f64] {
        &self.selection_prob
    }

    /// Same quantity for each complementary unit, for the treatment it holds.
    pub fn comp_selection_prob(&self) -> &[f64] {
        &self.comp_selection_prob
    }

    pub fn hidden(&self) -> &[String] {
        &self.hidden
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    /// Covariates an estimator is allowed to see.
    pub fn visible_covariates(&self) -> Vec<&str> {
        self.accepted
            .covariate_names()
            .into_iter()
            .filter(|c| !self.hidden.iter().any(|h| h == c))
            .collect()
    }

    /// The accepted sample with hidden covariates removed.
    pub fn estimator_view(&self) -> Dataset {
        let hidden: Vec<&str> = self.hidden.iter().map(String::as_str).collect();
        self.accepted
            .without_columns(&hidden)
            .expect("dropping covariates keeps a valid table")
    }

    /// Treated and control counts in the accepted sample.
    pub fn arm_counts(&self) -> (usize, usize) {
        let t = self.accepted.binary_treatment().unwrap_or(&[]);
        let treated = t.iter().filter(|&&x| x == 1).count();
        (treated, t.len() - treated)
    }

    fn check_arms(self) -> Result<Self, SamplingError> {
        let (treated, control) = self.arm_counts();
        if treated == 0 || control == 0 {
            Err(SamplingError::DegenerateSample { treated, control })
        } else {
            Ok(self)
        }
    }

    /// Writes `accepted.csv`, `complementary.csv` and `study.json` into `dir`.
    pub fn export(
        &self,
        dir: impl AsRef<Path>,
        bias: Option<&BiasSummary>,
    ) -> Result<(), DataError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_table(&self.accepted, dir.join("accepted.csv"))?;
        write_table(&self.complementary, dir.join("complementary.csv"))?;
        let meta = StudyMetadata {
            seed: self.seed,
            mode: self.mode,
            hidden: self.hidden.clone(),
            n_accepted: self.accepted.n_rows(),
            n_complementary: self.complementary.n_rows(),
            selection_prob: self.selection_prob.clone(),
            comp_selection_prob: self.comp_selection_prob.clone(),
            bias: bias.cloned(),
        };
        let json = serde_json::to_string_pretty(&meta).map_err(|e| DataError::Io(e.into()))?;
        fs::write(dir.join("study.json"), json + "\n")?;
        Ok(())
    }
}

/// Metadata document written next to an exported study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetadata {
    pub seed: Option<u64>,
    pub mode: SamplingMode,
    pub hidden: Vec<String>,
    pub n_accepted: usize,
    pub n_complementary: usize,
    pub selection_prob: Vec<f64>,
    pub comp_selection_prob: Vec<f64>,
    pub bias: Option<BiasSummary>,
}

fn require_binary(d: &Dataset) -> Result<&[i64], SamplingError> {
    d.binary_treatment().map_err(|e| match e {
        DataError::NonBinaryTreatment => SamplingError::NonBinaryTreatment,
        other => SamplingError::Data(other),
    })
}

fn matched_probability(t: i64, p_treat: f64) -> f64 {
    if t == 1 {
        p_treat
    } else {
        1.0 - p_treat
    }
}

fn bernoulli(rng: &mut TrialRng, p: f64) -> i64 {
    i64::from(rng.random::<f64>() < p)
}

/// One treatment draw per randomized unit, with no check on the resulting arms.
///
/// Consumes exactly one uniform variate per row, in row order.
pub fn osrct_draw(
    rct: &Dataset,
    bias: &CompiledBias,
    rng: &mut TrialRng,
) -> Result<ConstructedStudy, SamplingError> {
    if rct.kind() != TableKind::Rct {
        return Err(SamplingError::NotRctTable);
    }
    let t = require_binary(rct)?;
    let p = bias.probabilities(rct)?;
    let mut keep = Vec::with_capacity(t.len());
    let mut selection_prob = Vec::new();
    let mut comp_selection_prob = Vec::new();
    for (&ti, &pi) in t.iter().zip(&p) {
        let drawn = bernoulli(rng, pi);
        let ps = matched_probability(ti, pi);
        if drawn == ti {
            keep.push(true);
            selection_prob.push(ps);
        } else {
            keep.push(false);
            comp_selection_prob.push(ps);
        }
    }
    let rejected: Vec<bool> = keep.iter().map(|k| !k).collect();
    Ok(ConstructedStudy {
        accepted: rct.filter_rows(&keep).with_kind(TableKind::Observational)?,
        complementary: rct
            .filter_rows(&rejected)
            .with_kind(TableKind::Observational)?,
        selection_prob,
        comp_selection_prob,
        hidden: Vec::new(),
        seed: Some(rng.seed()),
        mode: SamplingMode::Subsample,
    })
}

/// Biased subsampling of a randomized trial.
///
/// Fails with `DegenerateSample` when the accepted sample lacks an arm; the
/// caller decides what to record, nothing is redrawn.
pub fn osrct_sample(
    rct: &Dataset,
    bias: &CompiledBias,
    rng: &mut TrialRng,
) -> Result<ConstructedStudy, SamplingError> {
    osrct_draw(rct, bias, rng)?.check_arms()
}

/// Builds an observed table from an APO table given one treatment per unit.
fn realize(apo: &Dataset, treatment: &[i64], kind: TableKind) -> Result<Dataset, SamplingError> {
    let (y0, y1) = match (apo.potential_outcome(0), apo.potential_outcome(1)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(SamplingError::NotApoTable),
    };
    let outcome: Vec<f64> = treatment
        .iter()
        .enumerate()
        .map(|(i, &t)| if t == 1 { y1[i] } else { y0[i] })
        .collect();
    let mut columns: Vec<Column> = apo
        .columns()
        .iter()
        .filter(|c| {
            matches!(
                c.role,
                ColumnRole::Covariate | ColumnRole::UnitId | ColumnRole::Weight
            )
        })
        .cloned()
        .collect();
    let free = |base: &str| {
        let mut name = base.to_string();
        while apo.column(&name).is_some() {
            name.push('_');
        }
        name
    };
    let t_name = apo
        .treatment_column()
        .map(|c| c.name.clone())
        .unwrap_or_else(|| free("treatment"));
    columns.push(Column::integer(
        t_name,
        ColumnRole::Treatment,
        treatment.to_vec(),
    ));
    columns.push(Column::numeric(
        free("outcome"),
        ColumnRole::Outcome,
        outcome,
    ));
    Ok(Dataset::new(columns, kind)?)
}

/// Biased sampling of an all-potential-outcomes table: one row per unit.
pub fn osapo_sample(
    apo: &Dataset,
    bias: &CompiledBias,
    rng: &mut TrialRng,
) -> Result<ConstructedStudy, SamplingError> {
    if apo.kind() != TableKind::Apo {
        return Err(SamplingError::NotApoTable);
    }
    let p = bias.probabilities(apo)?;
    let drawn: Vec<i64> = p.iter().map(|&pi| bernoulli(rng, pi)).collect();
    let selection_prob = drawn
        .iter()
        .zip(&p)
        .map(|(&t, &pi)| matched_probability(t, pi))
        .collect();
    let accepted = realize(apo, &drawn, TableKind::Observational)?;
    Ok(ConstructedStudy {
        complementary: accepted.select_rows(&[]),
        accepted,
        selection_prob,
        comp_selection_prob: Vec::new(),
        hidden: Vec::new(),
        seed: Some(rng.seed()),
        mode: SamplingMode::Subsample,
    })
}

/// Keeps every trial unit, weighted by `P(T^s = t_i | C^b_i)`. Deterministic.
///
/// An existing weight column is multiplied by the selection weight.
pub fn weighted_view(
    rct: &Dataset,
    bias: &CompiledBias,
) -> Result<ConstructedStudy, SamplingError> {
    if rct.kind() != TableKind::Rct {
        return Err(SamplingError::NotRctTable);
    }
    let t = require_binary(rct)?;
    let p = bias.probabilities(rct)?;
    let ps: Vec<f64> = t
        .iter()
        .zip(&p)
        .map(|(&ti, &pi)| matched_probability(ti, pi))
        .collect();
    let (accepted, name) = match rct.column_by_role(ColumnRole::Weight) {
        Some(existing) => {
            let old = rct.weights().expect("weight columns are numeric");
            (
                rct.without_columns(&[existing.name.as_str()])?,
                (
                    existing.name.clone(),
                    old.iter().zip(&ps).map(|(a, b)| a * b).collect(),
                ),
            )
        }
        None => (rct.clone(), (SELECTION_WEIGHT.to_string(), ps.clone())),
    };
    let accepted = accepted
        .with_column(Column::numeric(name.0, ColumnRole::Weight, name.1))?
        .with_kind(TableKind::Observational)?;
    Ok(ConstructedStudy {
        complementary: accepted.select_rows(&[]),
        accepted,
        selection_prob: ps,
        comp_selection_prob: Vec::new(),
        hidden: Vec::new(),
        seed: None,
        mode: SamplingMode::Reweight,
    })
}

/// Converts an APO table to a randomized trial with `P(T = 1) = 0.5`.
pub fn apo_to_rct(apo: &Dataset, rng: &mut TrialRng) -> Result<Dataset, SamplingError> {
    apo_to_rct_with_rate(apo, 0.5, rng)
}

/// Converts an APO table to a randomized trial with the given treated probability.
pub fn apo_to_rct_with_rate(
    apo: &Dataset,
    treated_rate: f64,
    rng: &mut TrialRng,
) -> Result<Dataset, SamplingError> {
    if apo.kind() != TableKind::Apo {
        return Err(SamplingError::NotApoTable);
    }
    let t: Vec<i64> = (0..apo.n_rows())
        .map(|_| bernoulli(rng, treated_rate))
        .collect();
    realize(apo, &t, TableKind::Rct)
}

/// Removes covariates from the estimator-visible view; the columns stay in the study.
pub fn hide_covariates(
    s: &ConstructedStudy,
    names: &[&str],
) -> Result<ConstructedStudy, SamplingError> {
    let covariates = s.accepted.covariate_names();
    let mut out = s.clone();
    for &name in names {
        if !covariates.contains(&name) {
            return Err(SamplingError::UnknownCovariate(name.to_string()));
        }
        if !out.hidden.iter().any(|h| h == name) {
            out.hidden.push(name.to_string());
        }
    }
    Ok(out)
}
