use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::normalized_error;
use super::BenchmarkConfig;
use crate::bias::BiasSummary;
use crate::data::OutcomeRange;
use crate::estimators::EffectEstimate;
use crate::rng::PRNG_DESCRIPTION;
use crate::stats::{mean, pearson, sample_sd};

pub const TRIALS_CSV_HEADER: [&str; 9] = [
    "trial",
    "seed",
    "estimator",
    "estimate",
    "truth",
    "raw_error",
    "norm_error",
    "n_accepted",
    "status",
];

/// One estimator's outcome in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRecord {
    pub estimator: String,
    /// `ok`, or the name of the failure.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub estimate: Option<f64>,
    /// `estimate - truth`.
    pub raw_error: Option<f64>,
    /// `|estimate - truth| / range`; absent when the range is zero.
    pub norm_error: Option<f64>,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimatorRecord {
    pub fn scored(e: EffectEstimate, truth: f64, range: f64) -> Self {
        if !e.value.is_finite() {
            return Self::failed(
                &e.estimator,
                "NonFiniteEstimate",
                &format!("estimate {}", e.value),
            );
        }
        Self {
            raw_error: Some(e.value - truth),
            norm_error: normalized_error(e.value, truth, range).ok(),
            estimate: Some(e.value),
            estimator: e.estimator,
            status: "ok".into(),
            message: None,
            flags: e.flags,
            diagnostics: e
                .diagnostics
                .into_iter()
                .filter(|(_, v)| v.is_finite())
                .collect(),
        }
    }

    pub fn failed(estimator: &str, status: &str, message: &str) -> Self {
        Self {
            estimator: estimator.into(),
            status: status.into(),
            message: Some(message.into()),
            estimate: None,
            raw_error: None,
            norm_error: None,
            flags: Vec::new(),
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    /// Arm-mean difference of the pre-bias trial table.
    pub truth: Option<f64>,
    pub n_accepted: usize,
    /// Naive estimate minus truth: the confounding the sampling induced.
    pub naive_bias: Option<f64>,
    pub results: Vec<EstimatorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_abs_norm_error: Option<f64>,
    pub sd_abs_norm_error: Option<f64>,
    pub mean_raw_error: Option<f64>,
    pub mean_abs_raw_error: Option<f64>,
}

/// Pearson correlation of per-trial signed errors. An entry is `None` when
/// either estimator failed in some trial or an error series is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub estimators: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.estimators.iter().position(|e| e == a)?;
        let j = self.estimators.iter().position(|e| e == b)?;
        self.values[i][j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool: String,
    pub version: String,
    pub prng: String,
    pub source_tag: String,
    pub bias: BiasSummary,
    pub outcome_range: OutcomeRange,
    pub degenerate_range: bool,
    pub source_rows: usize,
    pub dropped_rows: usize,
    /// Effect built into a synthetic source (absent for CSV sources).
    pub synthetic_true_effect: Option<f64>,
    pub error_definition: String,
}

impl ReportMetadata {
    pub fn new(
        source_tag: Option<String>,
        bias: BiasSummary,
        range: OutcomeRange,
        source_rows: usize,
        dropped_rows: usize,
        synthetic_true_effect: Option<f64>,
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            prng: PRNG_DESCRIPTION.into(),
            source_tag: source_tag.unwrap_or_else(|| "default".into()),
            bias,
            outcome_range: range,
            degenerate_range: range.is_degenerate(),
            source_rows,
            dropped_rows,
            synthetic_true_effect,
            error_definition: "raw_error = estimate - truth; norm_error = |raw_error| / (max - min of all outcome \
                               cells of the full pre-bias source table)"
                .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub metadata: ReportMetadata,
    pub config: BenchmarkConfig,
    pub estimators: Vec<String>,
    pub trials: Vec<TrialRecord>,
    pub summary: Vec<EstimatorSummary>,
    pub correlations: CorrelationMatrix,
}

impl BenchmarkReport {
    /// Builds aggregates by folding over `trials` in the given order.
    pub fn assemble(
        metadata: ReportMetadata,
        config: BenchmarkConfig,
        estimators: Vec<String>,
        trials: Vec<TrialRecord>,
    ) -> Self {
        let records = |id: &str| -> Vec<&EstimatorRecord> {
            trials
                .iter()
                .filter_map(|t| t.results.iter().find(|r| r.estimator == id))
                .collect()
        };
        let summary = estimators
            .iter()
            .map(|id| {
                let rs = records(id);
                let ok: Vec<&&EstimatorRecord> = rs.iter().filter(|r| r.is_ok()).collect();
                let norm: Vec<f64> = ok.iter().filter_map(|r| r.norm_error).collect();
                let raw: Vec<f64> = ok.iter().filter_map(|r| r.raw_error).collect();
                let abs_raw: Vec<f64> = raw.iter().map(|e| e.abs()).collect();
                EstimatorSummary {
                    estimator: id.clone(),
                    n_ok: ok.len(),
                    n_failed: rs.len() - ok.len(),
                    mean_abs_norm_error: mean(&norm),
                    sd_abs_norm_error: sample_sd(&norm),
                    mean_raw_error: mean(&raw),
                    mean_abs_raw_error: mean(&abs_raw),
                }
            })
            .collect();
        let series: Vec<Option<Vec<f64>>> = estimators
            .iter()
            .map(|id| {
                let rs = records(id);
                if rs.len() != trials.len() {
                    return None;
                }
                rs.iter().map(|r| r.raw_error).collect()
            })
            .collect();
        let values = series
            .iter()
            .map(|a| {
                series
                    .iter()
                    .map(|b| match (a, b) {
                        (Some(a), Some(b)) => pearson(a, b),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        Self {
            metadata,
            config,
            correlations: CorrelationMatrix {
                estimators: estimators.clone(),
                values,
            },
            estimators,
            trials,
            summary,
        }
    }

    pub fn summary_for(&self, estimator: &str) -> Option<&EstimatorSummary> {
        self.summary.iter().find(|s| s.estimator == estimator)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes one row per trial and estimator.
pub fn write_trials_csv<W: Write>(report: &BenchmarkReport, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRIALS_CSV_HEADER)?;
    for t in &report.trials {
        for r in &t.results {
            w.write_record([
                t.trial.to_string(),
                t.seed.to_string(),
                r.estimator.clone(),
                cell(r.estimate),
                cell(t.truth),
                cell(r.raw_error),
                cell(r.norm_error),
                t.n_accepted.to_string(),
                r.status.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean absolute normalized error of one estimator on one source, or pooled
/// over every source (`source == "all"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRow {
    pub estimator: String,
    pub source: String,
    pub n: usize,
    pub mean_abs_norm_error: Option<f64>,
}

/// Per-estimator, per-source means plus a pooled row weighted by trial count.
pub fn aggregate_by_source(reports: &[(&str, &BenchmarkReport)]) -> Vec<SourceRow> {
    let mut order: Vec<&str> = Vec::new();
    for (_, r) in reports {
        for e in &r.estimators {
            if !order.contains(&e.as_str()) {
                order.push(e);
            }
        }
    }
    let errors = |report: &BenchmarkReport, est: &str| -> Vec<f64> {
        report
            .trials
            .iter()
            .flat_map(|t| &t.results)
            .filter(|r| r.estimator == est && r.is_ok())
            .filter_map(|r| r.norm_error)
            .collect()
    };
    let mut rows = Vec::new();
    for est in order {
        let mut pooled = Vec::new();
        for (tag, report) in reports {
            if !report.estimators.iter().any(|e| e == est) {
                continue;
            }
            let e = errors(report, est);
            rows.push(SourceRow {
                estimator: est.into(),
                source: (*tag).into(),
                n: e.len(),
                mean_abs_norm_error: mean(&e),
            });
            pooled.extend(e);
        }
        rows.push(SourceRow {
            estimator: est.into(),
            source: "all".into(),
            n: pooled.len(),
            mean_abs_norm_error: mean(&pooled),
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::CompiledBias;
    use crate::harness::SourceConfig;
    use crate::synthetic::SyntheticConfig;

    fn record(est: &str, raw: Option<f64>) -> EstimatorRecord {
        match raw {
            Some(e) => EstimatorRecord {
                estimator: est.into(),
                status: "ok".into(),
                message: None,
                estimate: Some(1.0 + e),
                raw_error: Some(e),
                norm_error: Some(e.abs() / 10.0),
                flags: vec![],
                diagnostics: BTreeMap::new(),
            },
            None => EstimatorRecord::failed(est, "NonConvergence", "x"),
        }
    }

    fn report(tag: &str, rows: Vec<Vec<(&str, Option<f64>)>>) -> BenchmarkReport {
        let ests: Vec<String> = rows[0].iter().map(|(e, _)| e.to_string()).collect();
        let trials = rows
            .into_iter()
            .enumerate()
            .map(|(i, rs)| TrialRecord {
                trial: i,
                seed: i as u64,
                truth: Some(1.0),
                n_accepted: 10,
                naive_bias: None,
                results: rs.into_iter().map(|(e, r)| record(e, r)).collect(),
            })
            .collect();
        let range = OutcomeRange {
            min: 0.0,
            max: 10.0,
        };
        let cfg = toml::from_str::<BenchmarkConfig>(
            "[source.synthetic]\n[bias]\nterms = [{ covariate = \"x1\" }]",
        )
        .unwrap();
        assert!(matches!(
            cfg.source,
            SourceConfig::Synthetic(SyntheticConfig { .. })
        ));
        let meta = ReportMetadata::new(
            Some(tag.into()),
            CompiledBias::constant(0.5).summary(),
            range,
            10,
            0,
            None,
        );
        BenchmarkReport::assemble(meta, cfg, ests, trials)
    }

    #[test]
    fn identical_error_series_correlate_exactly() {
        let r = report(
            "a",
            vec![
                vec![("p", Some(0.1)), ("q", Some(0.1)), ("s", Some(-0.3))],
                vec![("p", Some(0.4)), ("q", Some(0.4)), ("s", Some(0.2))],
                vec![("p", Some(-0.2)), ("q", Some(-0.2)), ("s", Some(0.0))],
            ],
        );
        assert_eq!(r.correlations.get("p", "q"), Some(1.0));
        assert_eq!(r.correlations.get("p", "p"), Some(1.0));
        let c = r.correlations.get("p", "s").unwrap();
        assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn failures_mask_correlations_and_are_counted() {
        let r = report(
            "a",
            vec![
                vec![("p", Some(0.1)), ("q", None)],
                vec![("p", Some(0.3)), ("q", Some(0.2))],
                vec![("p", Some(0.2)), ("q", Some(0.5))],
            ],
        );
        assert_eq!(r.correlations.get("p", "q"), None);
        assert_eq!(r.correlations.get("q", "q"), None);
        let q = r.summary_for("q").unwrap();
        assert_eq!((q.n_ok, q.n_failed), (2, 1));
        assert!((q.mean_abs_norm_error.unwrap() - 0.035).abs() < 1e-12);
    }

    #[test]
    fn source_aggregation() {
        let a = report("a", vec![vec![("p", Some(1.0))], vec![("p", Some(3.0))]]);
        let b = report("b", vec![vec![("p", Some(2.0))]]);
        let single = aggregate_by_source(&[("a", &a)]);
        assert_eq!(
            single[0].mean_abs_norm_error,
            a.summary_for("p").unwrap().mean_abs_norm_error
        );
        let rows = aggregate_by_source(&[("a", &a), ("b", &b)]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].source, "all");
        // Pooled over the three flat records: (0.1 + 0.3 + 0.2) / 3.
        assert!((rows[2].mean_abs_norm_error.unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(rows[2].n, 3);
    }

    #[test]
    fn csv_has_one_row_per_trial_and_estimator() {
        let r = report(
            "a",
            vec![
                vec![("p", Some(1.0)), ("q", None)],
                vec![("p", Some(0.5)), ("q", Some(0.25))],
            ],
        );
        let mut buf = Vec::new();
        write_trials_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRIALS_CSV_HEADER.join(","));
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[2], "0,0,q,,1,,,10,NonConvergence");
        assert_eq!(lines[1], "0,0,p,2,1,1,0.1,10,ok");
    }

    #[test]
    fn json_round_trip() {
        let r = report("a", vec![vec![("p", Some(1.0))]]);
        assert_eq!(BenchmarkReport::from_json(&r.to_json()).unwrap(), r);
    }
}
