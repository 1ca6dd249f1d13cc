//! The command-line subcommands, as library functions.
//!
//! Exit statuses: 0 success, 2 invalid config or input document, 3 file
//! system error, 4 runtime failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::bias::BiasError;
use crate::data::{write_table, DataError, TableKind};
use crate::harness::{
    aggregate_by_source, load_source, write_trials_csv, Benchmark, BenchmarkConfig,
    BenchmarkReport, HarnessError,
};
use crate::protocol::{conformance_check, ConformanceReport};
use crate::render::{render_boxplot_svg, BoxStats, QUARTILE_CONVENTION};
use crate::rng::{trial_seed, TrialRng};
use crate::sampling::{apo_to_rct, SamplingError};
use crate::synthetic::{gen_apo, sample_effect, true_effect, SyntheticConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
    #[error("malformed report `{path}`: {reason}")]
    MalformedReport { path: PathBuf, reason: String },
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) | CommandError::MalformedReport { .. } => EXIT_CONFIG,
            CommandError::Io(_) => EXIT_IO,
            CommandError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CommandError {
    CommandError::Io(format!("{}: {e}", path.display()))
}

impl From<HarnessError> for CommandError {
    fn from(e: HarnessError) -> Self {
        match &e {
            HarnessError::Read { .. } | HarnessError::Data(DataError::Io(_)) => {
                CommandError::Io(e.to_string())
            }
            HarnessError::Write(_) => CommandError::Io(e.to_string()),
            _ => CommandError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

impl Finding {
    fn new(severity: Severity, code: &str, message: impl Into<String>) -> Self {
        Self {
            severity,
            code: code.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub findings: Vec<Finding>,
    pub source_rows: Option<usize>,
    pub treated: Option<usize>,
    pub control: Option<usize>,
    pub treated_fraction: Option<f64>,
    /// Correlation of each transformed biasing covariate with the outcome.
    pub bias_outcome_correlations: BTreeMap<String, Option<f64>>,
}

fn data_error_code(e: &DataError) -> &'static str {
    match e {
        DataError::MissingColumn(_) => "MissingColumn",
        DataError::TypeParseError { .. } => "TypeParseError",
        DataError::MissingValue { .. } => "MissingValue",
        DataError::UnmappedLevel(_) => "UnmappedLevel",
        DataError::SampleTooLarge { .. } => "SampleTooLarge",
        DataError::EmptyDataset => "EmptyDataset",
        DataError::NonBinaryTreatment => "NonBinaryTreatment",
        DataError::InvalidTable(_) => "InvalidTable",
        DataError::InvalidSchema(_) => "InvalidSchema",
        DataError::Csv(_) => "CsvError",
        DataError::Io(_) => "IoError",
    }
}

fn bias_error_code(e: &BiasError) -> &'static str {
    match e {
        BiasError::UnknownCovariate(_) => "UnknownCovariate",
        BiasError::ConstantCovariate(_) => "ConstantCovariate",
        BiasError::TransformMismatch(_) => "TransformMismatch",
        BiasError::UnknownLevel { .. } => "UnknownLevel",
        BiasError::MissingCovariateValue(_) => "MissingCovariateValue",
        BiasError::CalibrationFailed { .. } => "CalibrationFailed",
        BiasError::InvalidSpec(_) => "InvalidBiasSpec",
        BiasError::EmptyDataset => "EmptyDataset",
    }
}

fn harness_error_code(e: &HarnessError) -> &'static str {
    match e {
        HarnessError::Config(_) => "ConfigError",
        HarnessError::Data(d) => data_error_code(d),
        HarnessError::Bias(b) => bias_error_code(b),
        HarnessError::Synthetic(_) => "InvalidSyntheticConfig",
        HarnessError::Sampling(SamplingError::UnknownCovariate(_)) => "UnknownCovariate",
        HarnessError::Sampling(_) => "SamplingError",
        HarnessError::Read { .. } => "IoError",
        HarnessError::Write(_) => "IoError",
    }
}

/// Loads a config, its data and its bias without running any trial.
///
/// Errors make the status 2; weak biasing covariates (nearly uncorrelated
/// with the outcome) only produce a `WeakConfounding` warning.
pub fn cmd_validate(config_path: &Path) -> (i32, ValidationReport) {
    let mut report = ValidationReport {
        ok: false,
        findings: Vec::new(),
        source_rows: None,
        treated: None,
        control: None,
        treated_fraction: None,
        bias_outcome_correlations: BTreeMap::new(),
    };
    let fail = |mut report: ValidationReport, e: &HarnessError| {
        report.findings.push(Finding::new(
            Severity::Error,
            harness_error_code(e),
            e.to_string(),
        ));
        (EXIT_CONFIG, report)
    };
    let cfg = match BenchmarkConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail(report, &e),
    };
    if let Err(e) = cfg.validate() {
        return fail(report, &e);
    }
    let (source, dropped) = match load_source(&cfg.source) {
        Ok(s) => s,
        Err(e) => return fail(report, &e),
    };
    report.source_rows = Some(source.n_rows());
    if dropped > 0 {
        report.findings.push(Finding::new(
            Severity::Warning,
            "DroppedRows",
            format!("{dropped} rows with missing values were dropped"),
        ));
    }
    let bench = match Benchmark::with_source(cfg.clone(), source, dropped) {
        Ok(b) => b,
        Err(e) => return fail(report, &e),
    };
    let source = bench.source();
    match source.kind() {
        TableKind::Rct => {
            let t = source.binary_treatment().expect("checked by prepare");
            let treated = t.iter().filter(|&&v| v == 1).count();
            report.treated = Some(treated);
            report.control = Some(t.len() - treated);
            let frac = treated as f64 / t.len() as f64;
            report.treated_fraction = Some(frac);
            if (frac - 0.5).abs() > 0.05 && !cfg.bias.calibrate {
                report.findings.push(Finding::new(
                    Severity::Warning,
                    "ImbalancedTreatment",
                    format!(
                        "treated fraction is {frac:.3}; set bias.calibrate = true to keep the expected accepted \
                         size at half the table"
                    ),
                ));
            }
        }
        _ => report.findings.push(Finding::new(
            Severity::Info,
            "PotentialOutcomeSource",
            "all-potential-outcomes source; each trial draws treatment with probability 0.5",
        )),
    }
    for d in bench.bias().diagnostics() {
        report
            .bias_outcome_correlations
            .insert(d.covariate.clone(), d.outcome_correlation);
        if d.weak {
            report.findings.push(Finding::new(
                Severity::Warning,
                "WeakConfounding",
                format!(
                    "biasing covariate `{}` is nearly uncorrelated with the outcome (r = {}); sampling on it \
                     induces little confounding",
                    d.covariate,
                    d.outcome_correlation.map_or("undefined".into(), |r| format!("{r:.4}"))
                ),
            ));
        }
    }
    if bench.bias().clip_epsilon() == 0.0 {
        report.findings.push(Finding::new(
            Severity::Warning,
            "PositivityViolation",
            "clip_epsilon = 0 lets selection probabilities reach 0 or 1",
        ));
    }
    for h in &cfg.hidden {
        if bench.bias().covariates().contains(&h.as_str()) {
            report.findings.push(Finding::new(
                Severity::Info,
                "HiddenConfounder",
                format!("biasing covariate `{h}` is hidden from estimators"),
            ));
        }
    }
    report.ok = true;
    (EXIT_OK, report)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub estimators: Option<Vec<String>>,
    pub workers: Option<usize>,
}

impl RunOverrides {
    pub fn apply(&self, cfg: &mut BenchmarkConfig) {
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(t) = self.trials {
            cfg.n_trials = t;
        }
        if let Some(e) = &self.estimators {
            cfg.estimators = e.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
    }
}

pub const REPORT_FILE: &str = "report.json";
pub const TRIALS_FILE: &str = "trials.csv";
pub const METADATA_FILE: &str = "metadata.json";

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CommandError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

/// Runs a benchmark and writes `report.json`, `trials.csv` and `metadata.json` into `out`.
pub fn cmd_run(
    config_path: &Path,
    out: &Path,
    overrides: &RunOverrides,
) -> Result<BenchmarkReport, CommandError> {
    let mut cfg = BenchmarkConfig::load(config_path)?;
    overrides.apply(&mut cfg);
    let bench = Benchmark::prepare(cfg)?;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let probe = out.join(TRIALS_FILE);
    write_file(&probe, b"")?;
    let report = bench
        .run()
        .map_err(|e| CommandError::Runtime(e.to_string()))?;
    write_outputs(&report, out)?;
    Ok(report)
}

pub fn write_outputs(report: &BenchmarkReport, out: &Path) -> Result<(), CommandError> {
    write_file(&out.join(REPORT_FILE), report.to_json().as_bytes())?;
    let mut csv = Vec::new();
    write_trials_csv(report, &mut csv).map_err(|e| CommandError::Runtime(e.to_string()))?;
    write_file(&out.join(TRIALS_FILE), &csv)?;
    let seeds: Vec<u64> = report.trials.iter().map(|t| t.seed).collect();
    let metadata = serde_json::json!({
        "metadata": report.metadata,
        "base_seed": report.config.base_seed,
        "trial_seeds": seeds,
    });
    write_file(
        &out.join(METADATA_FILE),
        serde_json::to_string_pretty(&metadata)
            .expect("serializes")
            .as_bytes(),
    )
}

fn load_report(path: &Path) -> Result<BenchmarkReport, CommandError> {
    let file = if path.is_dir() {
        path.join(REPORT_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| io_error(&file, e))?;
    BenchmarkReport::from_json(&text).map_err(|e| CommandError::MalformedReport {
        path: file,
        reason: e.to_string(),
    })
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Files written by [`cmd_report`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderedReport {
    pub sources: Vec<String>,
    pub files: Vec<PathBuf>,
    pub boxes: Vec<(String, String, BoxStats)>,
}

/// Renders one or more run reports (directories or `report.json` files).
///
/// Writes `box_stats.csv`, `boxplot.svg`, `correlations.csv`,
/// `by_source.csv` and `render_meta.json`. Every number comes from the
/// trial records.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<RenderedReport, CommandError> {
    if inputs.is_empty() {
        return Err(CommandError::Config(
            "at least one report is required".into(),
        ));
    }
    let reports: Vec<BenchmarkReport> = inputs
        .iter()
        .map(|p| load_report(p))
        .collect::<Result<_, _>>()?;
    let mut tags: Vec<String> = Vec::new();
    for r in &reports {
        let base = r.metadata.source_tag.clone();
        let mut tag = base.clone();
        let mut k = 2;
        while tags.contains(&tag) {
            tag = format!("{base}#{k}");
            k += 1;
        }
        tags.push(tag);
    }
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;

    let mut boxes = Vec::new();
    let mut box_csv = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CommandError::Runtime(e.to_string());
    box_csv
        .write_record([
            "source",
            "estimator",
            "n",
            "min",
            "q1",
            "median",
            "q3",
            "max",
        ])
        .map_err(csv_err)?;
    let mut corr_csv = csv::Writer::from_writer(Vec::new());
    corr_csv
        .write_record(["source", "estimator_a", "estimator_b", "r"])
        .map_err(csv_err)?;
    for (tag, r) in tags.iter().zip(&reports) {
        for est in &r.estimators {
            let errors: Vec<f64> = r
                .trials
                .iter()
                .flat_map(|t| &t.results)
                .filter(|x| &x.estimator == est && x.is_ok())
                .filter_map(|x| x.norm_error)
                .collect();
            if let Some(b) = BoxStats::from_values(&errors) {
                box_csv
                    .write_record([
                        tag.clone(),
                        est.clone(),
                        b.n.to_string(),
                        b.min.to_string(),
                        b.q1.to_string(),
                        b.median.to_string(),
                        b.q3.to_string(),
                        b.max.to_string(),
                    ])
                    .map_err(csv_err)?;
                boxes.push((tag.clone(), est.clone(), b));
            }
        }
        let m = &r.correlations;
        for (i, a) in m.estimators.iter().enumerate() {
            for (j, b) in m.estimators.iter().enumerate() {
                corr_csv
                    .write_record([tag.as_str(), a, b, &fmt(m.values[i][j])])
                    .map_err(csv_err)?;
            }
        }
    }
    let mut by_source = csv::Writer::from_writer(Vec::new());
    by_source
        .write_record(["estimator", "source", "n", "mean_abs_norm_error"])
        .map_err(csv_err)?;
    let tagged: Vec<(&str, &BenchmarkReport)> =
        tags.iter().map(String::as_str).zip(&reports).collect();
    for row in aggregate_by_source(&tagged) {
        by_source
            .write_record([
                row.estimator,
                row.source,
                row.n.to_string(),
                fmt(row.mean_abs_norm_error),
            ])
            .map_err(csv_err)?;
    }

    let labelled: Vec<(String, BoxStats)> = boxes
        .iter()
        .map(|(tag, est, b)| {
            let label = if reports.len() > 1 {
                format!("{tag}: {est}")
            } else {
                est.clone()
            };
            (label, *b)
        })
        .collect();
    let svg = render_boxplot_svg(
        "Absolute normalized error by estimator",
        "|estimate - truth| / range",
        &labelled,
    );

    let finish = |w: csv::Writer<Vec<u8>>| {
        w.into_inner()
            .map_err(|e| CommandError::Runtime(e.to_string()))
    };
    let files = [
        ("box_stats.csv", finish(box_csv)?),
        ("correlations.csv", finish(corr_csv)?),
        ("by_source.csv", finish(by_source)?),
        ("boxplot.svg", svg.into_bytes()),
        (
            "render_meta.json",
            serde_json::to_string_pretty(&serde_json::json!({
                "quartile_convention": QUARTILE_CONVENTION,
                "statistic": "absolute normalized error of successful trials",
                "correlation": "Pearson over per-trial signed errors; empty when an estimator failed in any trial",
                "inputs": inputs,
                "sources": tags,
            }))
            .expect("serializes")
            .into_bytes(),
        ),
    ];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = out.join(name);
        write_file(&path, &bytes)?;
        written.push(path);
    }
    Ok(RenderedReport {
        sources: tags,
        files: written,
        boxes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSummary {
    pub config: SyntheticConfig,
    pub true_effect: f64,
    pub sample_effect: f64,
    pub rct_seed: u64,
    pub files: Vec<PathBuf>,
}

/// Writes `apo.csv`, `rct.csv`, a schema for each, and `synthetic.json`.
///
/// The trial table draws treatment with probability 0.5 from the stream
/// `trial_seed(cfg.seed, 0)`.
pub fn cmd_gen_synthetic(
    cfg: &SyntheticConfig,
    out: &Path,
) -> Result<SyntheticSummary, CommandError> {
    let apo = gen_apo(cfg).map_err(|e| CommandError::Config(e.to_string()))?;
    let rct_seed = trial_seed(cfg.seed, 0);
    let rct = apo_to_rct(&apo, &mut TrialRng::from_seed(rct_seed))
        .map_err(|e| CommandError::Runtime(e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let mut files = Vec::new();
    for (stem, table) in [("apo", &apo), ("rct", &rct)] {
        let csv = out.join(format!("{stem}.csv"));
        write_table(table, &csv).map_err(|e| io_error(&csv, e))?;
        let schema = out.join(format!("{stem}_schema.toml"));
        let text = toml::to_string(&table.schema_config())
            .map_err(|e| CommandError::Runtime(e.to_string()))?;
        write_file(&schema, text.as_bytes())?;
        files.push(csv);
        files.push(schema);
    }
    let summary = SyntheticSummary {
        config: cfg.clone(),
        true_effect: true_effect(cfg, &apo).map_err(|e| CommandError::Runtime(e.to_string()))?,
        sample_effect: sample_effect(&apo).map_err(|e| CommandError::Runtime(e.to_string()))?,
        rct_seed,
        files: files.clone(),
    };
    let meta = out.join("synthetic.json");
    write_file(
        &meta,
        serde_json::to_string_pretty(&summary)
            .expect("serializes")
            .as_bytes(),
    )?;
    let mut summary = summary;
    summary.files.push(meta);
    Ok(summary)
}

/// Reads a synthetic config from a TOML file.
pub fn load_synthetic_config(path: &Path) -> Result<SyntheticConfig, CommandError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    toml::from_str(&text).map_err(|e| CommandError::Config(format!("{}: {e}", path.display())))
}

/// Conformance-tests an adapter; status 0 when every check passes, 4 otherwise.
pub fn cmd_protocol_check(command: &[String], timeout: Duration) -> (i32, ConformanceReport) {
    let report = conformance_check(command, timeout);
    let code = if report.passed() {
        EXIT_OK
    } else {
        EXIT_RUNTIME
    };
    (code, report)
}
