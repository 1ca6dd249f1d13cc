#![allow(dead_code)]

use std::path::PathBuf;
use std::process::Command;

use osrct::data::{Column, ColumnRole, Dataset, TableKind};
use osrct::sampling::ConstructedStudy;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// `python3` is on the path; adapter tests skip otherwise.
pub fn python_available() -> bool {
    Command::new("python3")
        .arg("--version")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

pub fn mock_command(mode: &str) -> Vec<String> {
    vec![
        "python3".into(),
        fixture("mock_adapter.py").display().to_string(),
        mode.into(),
    ]
}

/// Observational study from treatment, outcome and numeric covariates.
pub fn study(
    t: &[i64],
    y: &[f64],
    covariates: &[(&str, Vec<f64>)],
    weights: Option<Vec<f64>>,
) -> ConstructedStudy {
    let mut cols = vec![
        Column::integer("t", ColumnRole::Treatment, t.to_vec()),
        Column::numeric("y", ColumnRole::Outcome, y.to_vec()),
    ];
    for (name, v) in covariates {
        cols.push(Column::numeric(*name, ColumnRole::Covariate, v.clone()));
    }
    if let Some(w) = weights {
        cols.push(Column::numeric("w", ColumnRole::Weight, w));
    }
    ConstructedStudy::observed(Dataset::new(cols, TableKind::Observational).unwrap())
}
