//! The benchmark protocol.
//!
//! A trial, keyed by `(base_seed, trial_index)`:
//!
//! 1. cap the source table at `cap` rows by uniform subsampling (redrawn per
//!    trial unless `fix_subsample` is set);
//! 2. convert an all-potential-outcomes source to a trial by drawing one
//!    treatment per unit;
//! 3. compute the ground truth on that pre-bias table;
//! 4. construct the observational study by biased subsampling or reweighting;
//! 5. hide the configured covariates;
//! 6. run every estimator and score it against the ground truth.
//!
//! Estimator failures are recorded in the trial, never retried.

mod metrics;
mod report;

use std::borrow::Cow;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{compile_bias, BiasError, BiasingSpec, CompiledBias};
use crate::data::{
    load_table, outcome_range, subsample_uniform, DataError, Dataset, OutcomeRange, SchemaConfig,
    TableKind,
};
use crate::estimators::{builtin, Estimator, MatchTarget, Naive, BUILTIN_IDS};
use crate::protocol::{ExternalEstimator, ExternalSpec};
use crate::rng::{trial_seed, TrialRng};
use crate::sampling::{
    apo_to_rct, hide_covariates, osrct_sample, weighted_view, SamplingError, SamplingMode,
};
use crate::synthetic::{gen_apo, true_effect, SyntheticConfig, SyntheticError};

pub use metrics::{
    accepted_outcome_error, complementary_outcome_error, ground_truth_effect, normalized_error,
    weighted_complement_error, ComplementNormalization, MetricError, MAX_COMPLEMENT_PROB,
};
pub use report::{
    aggregate_by_source, write_trials_csv, BenchmarkReport, CorrelationMatrix, EstimatorRecord,
    EstimatorSummary, ReportMetadata, SourceRow, TrialRecord, TRIALS_CSV_HEADER,
};

pub const DEFAULT_TRIALS: usize = 30;
pub const DEFAULT_CAP: usize = 2000;
pub const MIN_CAP: usize = 100;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("cannot read `{path}`: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Write(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceConfig {
    Synthetic(SyntheticConfig),
    Csv { path: PathBuf, schema: SchemaConfig },
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_cap() -> usize {
    DEFAULT_CAP
}

fn default_estimators() -> Vec<String> {
    BUILTIN_IDS.iter().map(|s| s.to_string()).collect()
}

/// The single input document of a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Source tag used when reports are aggregated.
    #[serde(default)]
    pub name: Option<String>,
    pub source: SourceConfig,
    pub bias: BiasingSpec,
    #[serde(default)]
    pub hidden: Vec<String>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default)]
    pub external: Vec<ExternalSpec>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Draw the capped subsample once for all trials instead of once per trial.
    #[serde(default)]
    pub fix_subsample: bool,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub mode: SamplingMode,
    #[serde(default)]
    pub psm_target: MatchTarget,
    /// Worker threads; 0 uses every core. Not echoed into reports, which do not depend on it.
    #[serde(default, skip_serializing)]
    pub workers: usize,
}

impl BenchmarkConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a config file; a relative CSV path is taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let SourceConfig::Csv { path: csv, .. } = &mut cfg.source {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_trials == 0 {
            return Err(HarnessError::Config("n_trials must be at least 1".into()));
        }
        if self.cap < MIN_CAP {
            return Err(HarnessError::Config(format!(
                "cap must be at least {MIN_CAP}"
            )));
        }
        if self.estimators.is_empty() && self.external.is_empty() {
            return Err(HarnessError::Config("no estimators selected".into()));
        }
        let mut ids = Vec::new();
        for id in &self.estimators {
            let est = builtin(id, self.psm_target)
                .ok_or_else(|| HarnessError::Config(format!("unknown estimator `{id}`")))?;
            ids.push(est.id().to_string());
        }
        for ext in &self.external {
            if ext.command.is_empty() {
                return Err(HarnessError::Config(format!(
                    "external estimator `{}` has no command",
                    ext.id
                )));
            }
            if !(ext.timeout_secs > 0.0 && ext.timeout_secs.is_finite()) {
                return Err(HarnessError::Config(format!(
                    "external estimator `{}` needs a positive timeout",
                    ext.id
                )));
            }
            ids.push(ext.id.clone());
        }
        let mut sorted = ids.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(HarnessError::Config(format!(
                "estimator `{}` listed twice",
                w[0]
            )));
        }
        self.bias.validate()?;
        Ok(())
    }
}

/// A validated config with its source table, compiled bias and estimators.
pub struct Benchmark {
    cfg: BenchmarkConfig,
    source: Dataset,
    fixed: Option<Dataset>,
    bias: CompiledBias,
    range: OutcomeRange,
    estimators: Vec<Box<dyn Estimator>>,
    dropped_rows: usize,
    synthetic_effect: Option<f64>,
}

impl std::fmt::Debug for Benchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Benchmark")
            .field("source_rows", &self.source.n_rows())
            .field("estimators", &self.estimator_ids())
            .finish_non_exhaustive()
    }
}

/// Loads the source table described by `cfg`.
pub fn load_source(cfg: &SourceConfig) -> Result<(Dataset, usize), HarnessError> {
    match cfg {
        SourceConfig::Synthetic(s) => Ok((gen_apo(s)?, 0)),
        SourceConfig::Csv { path, schema } => {
            let loaded = load_table(path, schema)?;
            Ok((loaded.dataset, loaded.dropped_rows))
        }
    }
}

impl Benchmark {
    pub fn prepare(cfg: BenchmarkConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let (source, dropped_rows) = load_source(&cfg.source)?;
        Self::with_source(cfg, source, dropped_rows)
    }

    /// Uses an already loaded source table instead of the one in `cfg.source`.
    pub fn with_source(
        cfg: BenchmarkConfig,
        source: Dataset,
        dropped_rows: usize,
    ) -> Result<Self, HarnessError> {
        cfg.validate()?;
        match source.kind() {
            TableKind::Rct => {
                source.binary_treatment()?;
            }
            TableKind::Apo => {}
            TableKind::Observational => {
                return Err(HarnessError::Config(
                    "source must be a randomized trial or an all-potential-outcomes table".into(),
                ))
            }
        }
        let covariates = source.covariate_names();
        for h in &cfg.hidden {
            if !covariates.contains(&h.as_str()) {
                return Err(SamplingError::UnknownCovariate(h.clone()).into());
            }
        }
        let bias = compile_bias(&cfg.bias, &source)?;
        let range = outcome_range(&source)?;
        let fixed = if cfg.fix_subsample && source.n_rows() > cfg.cap {
            let mut rng = TrialRng::from_seed(fixed_subsample_seed(cfg.base_seed));
            Some(subsample_uniform(&source, cfg.cap, &mut rng)?)
        } else {
            None
        };
        let synthetic_effect = match &cfg.source {
            SourceConfig::Synthetic(s) => Some(true_effect(s, &source)?),
            SourceConfig::Csv { .. } => None,
        };
        let mut estimators: Vec<Box<dyn Estimator>> = cfg
            .estimators
            .iter()
            .map(|id| builtin(id, cfg.psm_target).expect("validated"))
            .collect();
        for ext in &cfg.external {
            estimators.push(Box::new(ExternalEstimator::new(ext.clone())));
        }
        Ok(Self {
            cfg,
            source,
            fixed,
            bias,
            range,
            estimators,
            dropped_rows,
            synthetic_effect,
        })
    }

    pub fn config(&self) -> &BenchmarkConfig {
        &self.cfg
    }

    pub fn source(&self) -> &Dataset {
        &self.source
    }

    pub fn bias(&self) -> &CompiledBias {
        &self.bias
    }

    pub fn range(&self) -> OutcomeRange {
        self.range
    }

    pub fn estimator_ids(&self) -> Vec<String> {
        self.estimators.iter().map(|e| e.id().to_string()).collect()
    }

    /// The randomized-trial table a trial starts from, before biasing.
    pub fn trial_table(&self, rng: &mut TrialRng) -> Result<Dataset, HarnessError> {
        let capped: Cow<Dataset> = match &self.fixed {
            Some(d) => Cow::Borrowed(d),
            None if self.source.n_rows() > self.cfg.cap => {
                Cow::Owned(subsample_uniform(&self.source, self.cfg.cap, rng)?)
            }
            None => Cow::Borrowed(&self.source),
        };
        Ok(match capped.kind() {
            TableKind::Apo => apo_to_rct(&capped, rng)?,
            _ => capped.into_owned(),
        })
    }

    /// Runs one trial. Pure in `(config, trial_index)`.
    pub fn run_trial(&self, trial_index: usize) -> TrialRecord {
        let mut rng = TrialRng::for_trial(self.cfg.base_seed, trial_index as u64);
        let seed = rng.seed();
        let ids = self.estimator_ids();
        let fail_all =
            |status: &str, message: String, truth: Option<f64>, n_accepted: usize| TrialRecord {
                trial: trial_index,
                seed,
                truth,
                n_accepted,
                naive_bias: None,
                results: ids
                    .iter()
                    .map(|id| EstimatorRecord::failed(id, status, &message))
                    .collect(),
            };
        let rct = match self.trial_table(&mut rng) {
            Ok(d) => d,
            Err(e) => return fail_all("SourceError", e.to_string(), None, 0),
        };
        let truth = match ground_truth_effect(&rct) {
            Ok(t) => t,
            Err(e) => return fail_all("SingleArm", e.to_string(), None, 0),
        };
        let study = match self.cfg.mode {
            SamplingMode::Subsample => osrct_sample(&rct, &self.bias, &mut rng),
            SamplingMode::Reweight => weighted_view(&rct, &self.bias),
        };
        let study = match study {
            Ok(s) => s,
            Err(SamplingError::DegenerateSample { treated, control }) => {
                return fail_all(
                    "DegenerateSample",
                    format!("accepted sample has {treated} treated and {control} control units"),
                    Some(truth),
                    treated + control,
                )
            }
            Err(e) => return fail_all("SamplingError", e.to_string(), Some(truth), 0),
        };
        let hidden: Vec<&str> = self.cfg.hidden.iter().map(String::as_str).collect();
        let study = hide_covariates(&study, &hidden).expect("hidden covariates checked at prepare");
        let n_accepted = study.accepted().n_rows();
        let span = self.range.span();
        let results = self
            .estimators
            .iter()
            .map(|est| match est.estimate(&study) {
                Ok(e) => EstimatorRecord::scored(e, truth, span),
                Err(err) => EstimatorRecord::failed(est.id(), err.code(), &err.to_string()),
            })
            .collect();
        let naive_bias = Naive.estimate(&study).ok().map(|e| e.value - truth);
        TrialRecord {
            trial: trial_index,
            seed,
            truth: Some(truth),
            n_accepted,
            naive_bias,
            results,
        }
    }

    /// Runs every trial on `cfg.workers` threads; results are in trial order.
    pub fn run(&self) -> Result<BenchmarkReport, HarnessError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build()
            .map_err(|e| HarnessError::Config(format!("cannot start workers: {e}")))?;
        let trials: Vec<TrialRecord> = pool.install(|| {
            (0..self.cfg.n_trials)
                .into_par_iter()
                .map(|i| self.run_trial(i))
                .collect()
        });
        Ok(BenchmarkReport::assemble(
            self.metadata(),
            self.cfg.clone(),
            self.estimator_ids(),
            trials,
        ))
    }

    fn metadata(&self) -> ReportMetadata {
        ReportMetadata::new(
            self.cfg.name.clone(),
            self.bias.summary(),
            self.range,
            self.source.n_rows(),
            self.dropped_rows,
            self.synthetic_effect,
        )
    }
}

/// Seed of the shared subsample when `fix_subsample` is set.
pub fn fixed_subsample_seed(base_seed: u64) -> u64 {
    trial_seed(base_seed, u64::MAX)
}

/// Prepares and runs a benchmark.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport, HarnessError> {
    Benchmark::prepare(cfg.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::BiasTerm;

    fn config(trials: usize) -> BenchmarkConfig {
        BenchmarkConfig {
            name: Some("unit".into()),
            source: SourceConfig::Synthetic(SyntheticConfig {
                n_units: 600,
                seed: 5,
                ..SyntheticConfig::default()
            }),
            bias: BiasingSpec::new(vec![BiasTerm::standardized("x1", 1.0)]),
            hidden: vec![],
            estimators: default_estimators(),
            external: vec![],
            n_trials: trials,
            cap: 400,
            fix_subsample: false,
            base_seed: 99,
            mode: SamplingMode::Subsample,
            psm_target: MatchTarget::Ate,
            workers: 1,
        }
    }

    #[test]
    fn parses_toml() {
        let cfg = BenchmarkConfig::from_toml(
            r#"
            n_trials = 5
            estimators = ["naive", "or"]
            [source.synthetic]
            n_units = 300
            [bias]
            terms = [{ covariate = "x1", coefficient = 1.2 }, { covariate = "g1", transform = { one_hot_level = "b" } }]
            calibrate = true
            "#,
        )
        .unwrap();
        assert_eq!(cfg.n_trials, 5);
        assert_eq!(cfg.cap, DEFAULT_CAP);
        assert!(cfg.bias.calibrate);
        assert!(matches!(cfg.source, SourceConfig::Synthetic(ref s) if s.n_units == 300));
        assert!(BenchmarkConfig::from_toml("n_trials = 1\nbogus = 2").is_err());
    }

    #[test]
    fn validation() {
        let mut c = config(1);
        c.cap = 50;
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
        let mut c = config(1);
        c.estimators = vec!["naive".into(), "bart".into()];
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
        let mut c = config(1);
        c.estimators = vec!["or".into(), "outcome_regression".into()];
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
        let mut c = config(1);
        c.n_trials = 0;
        assert!(c.validate().is_err());
        let mut c = config(1);
        c.hidden = vec!["nope".into()];
        assert!(Benchmark::prepare(c).is_err());
    }

    #[test]
    fn trials_are_deterministic_and_complete() {
        let b = Benchmark::prepare(config(4)).unwrap();
        assert_eq!(b.run_trial(2), b.run_trial(2));
        let report = b.run().unwrap();
        assert_eq!(report.trials.len(), 4);
        for t in &report.trials {
            assert_eq!(t.results.len(), BUILTIN_IDS.len());
            assert!(t.n_accepted > 0 && t.n_accepted < 400);
        }
        let mut par = config(4);
        par.workers = 3;
        let again = Benchmark::prepare(par).unwrap().run().unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn fixed_subsample_shares_units() {
        let mut c = config(3);
        c.fix_subsample = true;
        let b = Benchmark::prepare(c).unwrap();
        let ids = |i| {
            let mut rng = TrialRng::for_trial(99, i);
            b.trial_table(&mut rng)
                .unwrap()
                .column("id")
                .unwrap()
                .data
                .clone()
        };
        assert_eq!(ids(0), ids(1));
        let b = Benchmark::prepare(config(3)).unwrap();
        let ids = |i| {
            let mut rng = TrialRng::for_trial(99, i);
            b.trial_table(&mut rng)
                .unwrap()
                .column("id")
                .unwrap()
                .data
                .clone()
        };
        assert_ne!(ids(0), ids(1));
    }

    #[test]
    fn degenerate_sample_is_recorded() {
        let mut c = config(2);
        c.bias = BiasingSpec {
            clip_epsilon: 0.0,
            allow_positivity_violation: true,
            intercept: 60.0,
            ..BiasingSpec::new(vec![BiasTerm::standardized("x1", 0.1)])
        };
        let report = Benchmark::prepare(c).unwrap().run().unwrap();
        for t in &report.trials {
            assert!(t.results.iter().all(|r| r.status == "DegenerateSample"));
        }
        assert!(report
            .summary
            .iter()
            .all(|s| s.n_failed == 2 && s.mean_abs_norm_error.is_none()));
    }

    #[test]
    fn reweight_mode_keeps_every_unit() {
        let mut c = config(2);
        c.mode = SamplingMode::Reweight;
        let report = Benchmark::prepare(c).unwrap().run().unwrap();
        assert!(report.trials.iter().all(|t| t.n_accepted == 400));
    }
}
