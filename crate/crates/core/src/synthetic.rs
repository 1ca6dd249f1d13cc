//! Synthetic all-potential-outcomes tables with known effects.
//!
//! Numeric covariates `x1..xk` are independent standard normals; categorical
//! covariates `g1..gm` are uniform over their levels (`a`, `b`, ...). With
//! `m(c)` the baseline below and `tau(c) = tau + sum_j tau_modifiers[j] * x_j`:
//!
//! | family           | `Y(0)`                           | `Y(1)`                                  |
//! |------------------|----------------------------------|-----------------------------------------|
//! | `linear`         | `m(c) + e0`                      | `m(c) + tau(c) + e1`                    |
//! | `step_nonlinear` | `s(c) + e0`                      | `s(c) + tau(c) + e1`                    |
//! | `logistic`       | `Bernoulli(sigmoid(m(c)))`       | `Bernoulli(sigmoid(m(c) + tau(c)))`     |
//!
//! `m(c) = intercept + sum_j beta_j x_j + gamma * sum_g code_g` and `s(c)`
//! replaces each `x_j` with `sign(x_j) + x_j^2 / 2`, which a linear outcome
//! model cannot fit. `e0` and `e1` are independent `N(0, noise_scale^2)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::sigmoid;
use crate::data::{Column, ColumnData, ColumnRole, Dataset, TableKind};
use crate::rng::TrialRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyntheticError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("expected an all-potential-outcomes table")]
    NotApoTable,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeFamily {
    #[default]
    Linear,
    Logistic,
    StepNonlinear,
}

fn default_units() -> usize {
    2000
}

fn default_covariates() -> usize {
    2
}

fn default_tau() -> f64 {
    2.0
}

fn default_noise() -> f64 {
    1.0
}

fn default_gamma() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_units")]
    pub n_units: usize,
    #[serde(default = "default_covariates")]
    pub n_covariates: usize,
    /// Level count of each categorical covariate.
    #[serde(default)]
    pub categorical_levels: Vec<usize>,
    #[serde(default)]
    pub family: OutcomeFamily,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Effect modification per numeric covariate; shorter lists are zero-padded.
    #[serde(default)]
    pub tau_modifiers: Vec<f64>,
    /// Baseline coefficient per numeric covariate; all ones when absent.
    #[serde(default)]
    pub outcome_coefficients: Option<Vec<f64>>,
    /// Baseline shift per level code of each categorical covariate.
    #[serde(default = "default_gamma")]
    pub categorical_coefficient: f64,
    #[serde(default)]
    pub intercept: f64,
    /// Standard deviation of the outcome noise; ignored by `logistic`.
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_units: default_units(),
            n_covariates: default_covariates(),
            categorical_levels: Vec::new(),
            family: OutcomeFamily::Linear,
            tau: default_tau(),
            tau_modifiers: Vec::new(),
            outcome_coefficients: None,
            categorical_coefficient: default_gamma(),
            intercept: 0.0,
            noise_scale: default_noise(),
            seed: 0,
        }
    }
}

pub const TREATED_OUTCOME: &str = "y1";
pub const CONTROL_OUTCOME: &str = "y0";

pub fn numeric_name(j: usize) -> String {
    format!("x{}", j + 1)
}

pub fn categorical_name(g: usize) -> String {
    format!("g{}", g + 1)
}

fn level_name(code: usize) -> String {
    let letter = (b'a' + (code % 26) as u8) as char;
    if code < 26 {
        letter.to_string()
    } else {
        format!("{letter}{}", code / 26)
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: String| Err(SyntheticError::InvalidConfig(m));
        if self.n_units == 0 {
            return bad("n_units must be positive".into());
        }
        if self.n_covariates == 0 && self.categorical_levels.is_empty() {
            return bad("at least one covariate is required".into());
        }
        if let Some(&k) = self.categorical_levels.iter().find(|&&k| k < 2) {
            return bad(format!(
                "categorical covariates need at least 2 levels, got {k}"
            ));
        }
        if self.tau_modifiers.len() > self.n_covariates {
            return bad(format!(
                "{} tau_modifiers for {} numeric covariates",
                self.tau_modifiers.len(),
                self.n_covariates
            ));
        }
        if let Some(beta) = &self.outcome_coefficients {
            if beta.len() != self.n_covariates {
                return bad(format!(
                    "{} outcome_coefficients for {} numeric covariates",
                    beta.len(),
                    self.n_covariates
                ));
            }
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad(format!(
                "noise_scale must be finite and non-negative, got {}",
                self.noise_scale
            ));
        }
        let finite = [self.tau, self.intercept, self.categorical_coefficient]
            .into_iter()
            .chain(self.tau_modifiers.iter().copied())
            .chain(self.outcome_coefficients.iter().flatten().copied())
            .all(f64::is_finite);
        if !finite {
            return bad("coefficients must be finite".into());
        }
        Ok(())
    }

    fn beta(&self, j: usize) -> f64 {
        self.outcome_coefficients.as_ref().map_or(1.0, |b| b[j])
    }

    fn modifier(&self, j: usize) -> f64 {
        self.tau_modifiers.get(j).copied().unwrap_or(0.0)
    }

    /// Baseline and unit-level effect (on the linear-predictor scale for `logistic`).
    fn baseline_and_effect(&self, x: &[f64], codes: &[usize]) -> (f64, f64) {
        let mut base = self.intercept;
        let mut tau = self.tau;
        for (j, &v) in x.iter().enumerate() {
            let feature = match self.family {
                OutcomeFamily::StepNonlinear => v.signum() + 0.5 * v * v,
                _ => v,
            };
            base += self.beta(j) * feature;
            tau += self.modifier(j) * v;
        }
        base += self.categorical_coefficient * codes.iter().sum::<usize>() as f64;
        (base, tau)
    }
}

/// Generates the APO table for `cfg`; the same config always yields the same table.
///
/// Columns: `id`, `x1..xk`, `g1..gm`, `y0`, `y1`.
pub fn gen_apo(cfg: &SyntheticConfig) -> Result<Dataset, SyntheticError> {
    cfg.validate()?;
    let n = cfg.n_units;
    let k = cfg.n_covariates;
    let m = cfg.categorical_levels.len();
    let mut rng = TrialRng::from_seed(cfg.seed);
    let mut x = vec![Vec::with_capacity(n); k];
    let mut g = vec![Vec::with_capacity(n); m];
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut row_x = vec![0.0; k];
    let mut row_g = vec![0usize; m];
    for _ in 0..n {
        for (j, col) in x.iter_mut().enumerate() {
            row_x[j] = rng.sample(StandardNormal);
            col.push(row_x[j]);
        }
        for (j, col) in g.iter_mut().enumerate() {
            row_g[j] = rng.random_range(0..cfg.categorical_levels[j]);
            col.push(row_g[j] as u32);
        }
        let (base, tau) = cfg.baseline_and_effect(&row_x, &row_g);
        match cfg.family {
            OutcomeFamily::Logistic => {
                let u0: f64 = rng.random();
                let u1: f64 = rng.random();
                y0.push(f64::from(u8::from(u0 < sigmoid(base))));
                y1.push(f64::from(u8::from(u1 < sigmoid(base + tau))));
            }
            _ => {
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                y0.push(base + cfg.noise_scale * e0);
                y1.push(base + tau + cfg.noise_scale * e1);
            }
        }
    }
    let mut columns = vec![Column::integer(
        "id",
        ColumnRole::UnitId,
        (1..=n as i64).collect(),
    )];
    for (j, col) in x.into_iter().enumerate() {
        columns.push(Column::numeric(numeric_name(j), ColumnRole::Covariate, col));
    }
    for (j, codes) in g.into_iter().enumerate() {
        let levels = (0..cfg.categorical_levels[j]).map(level_name).collect();
        columns.push(Column::new(
            categorical_name(j),
            ColumnRole::Covariate,
            ColumnData::Categorical { codes, levels },
        ));
    }
    columns.push(Column::numeric(
        CONTROL_OUTCOME,
        ColumnRole::PotentialOutcome(0),
        y0,
    ));
    columns.push(Column::numeric(
        TREATED_OUTCOME,
        ColumnRole::PotentialOutcome(1),
        y1,
    ));
    Dataset::new(columns, TableKind::Apo).map_err(|e| SyntheticError::InvalidConfig(e.to_string()))
}

/// Mean of `Y(1) - Y(0)` over the table's units.
///
/// For 0/1 outcomes this is the sample risk difference of the realized indicators.
pub fn sample_effect(apo: &Dataset) -> Result<f64, SyntheticError> {
    if apo.kind() != TableKind::Apo || apo.is_empty() {
        return Err(SyntheticError::NotApoTable);
    }
    let (y0, y1) = match (apo.potential_outcome(0), apo.potential_outcome(1)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(SyntheticError::NotApoTable),
    };
    Ok(y1.iter().zip(y0).map(|(a, b)| a - b).sum::<f64>() / y0.len() as f64)
}

/// The effect the generator built into `apo`.
///
/// Continuous families give the sample mean of `Y(1) - Y(0)`. The logistic
/// family gives the average of `sigmoid(m + tau) - sigmoid(m)` over the
/// generated covariates, free of Bernoulli noise.
pub fn true_effect(cfg: &SyntheticConfig, apo: &Dataset) -> Result<f64, SyntheticError> {
    if cfg.family != OutcomeFamily::Logistic {
        return sample_effect(apo);
    }
    if apo.kind() != TableKind::Apo || apo.is_empty() {
        return Err(SyntheticError::NotApoTable);
    }
    let lookup = |name: String| {
        apo.column(&name)
            .map(|c| &c.data)
            .ok_or(SyntheticError::NotApoTable)
    };
    let x: Vec<&ColumnData> = (0..cfg.n_covariates)
        .map(|j| lookup(numeric_name(j)))
        .collect::<Result<_, _>>()?;
    let g: Vec<&ColumnData> = (0..cfg.categorical_levels.len())
        .map(|j| lookup(categorical_name(j)))
        .collect::<Result<_, _>>()?;
    let n = apo.n_rows();
    let mut total = 0.0;
    for i in 0..n {
        let row_x: Vec<f64> = x.iter().map(|c| c.as_f64(i).unwrap_or(f64::NAN)).collect();
        let row_g: Vec<usize> = g
            .iter()
            .map(|c| match c {
                ColumnData::Categorical { codes, .. } => codes[i] as usize,
                other => other.as_f64(i).unwrap_or(0.0) as usize,
            })
            .collect();
        let (base, tau) = cfg.baseline_and_effect(&row_x, &row_g);
        total += sigmoid(base + tau) - sigmoid(base);
    }
    Ok(total / n as f64)
}
