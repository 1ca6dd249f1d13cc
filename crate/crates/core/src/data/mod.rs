//! Columnar study tables.
//!
//! A [`Dataset`] is an immutable set of equal-length columns, each annotated
//! with the role it plays in a study (treatment, outcome, covariate, ...).
//! Tables come in three kinds: randomized trials with one observed outcome per
//! unit, all-potential-outcomes tables with one outcome column per treatment
//! level, and the observational tables produced by biased sampling.

mod io;
mod schema;

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::TrialRng;

pub use io::{load_table, load_table_from_reader, write_table, write_table_to_writer, LoadedTable};
pub use schema::{LevelTarget, MissingPolicy, SchemaConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("cannot parse `{value}` in row {row}, column `{column}`")]
    TypeParseError {
        row: usize,
        column: String,
        value: String,
    },
    #[error("missing value in row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("treatment level `{0}` is not covered by the binarization rule")]
    UnmappedLevel(String),
    #[error("cannot draw {requested} rows from a table of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("treatment column is not binary (0/1)")]
    NonBinaryTreatment,
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    UnitId,
    Treatment,
    Outcome,
    Covariate,
    /// Outcome under the given treatment level.
    PotentialOutcome(i64),
    Weight,
}

impl fmt::Display for ColumnRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRole::UnitId => f.write_str("unit_id"),
            ColumnRole::Treatment => f.write_str("treatment"),
            ColumnRole::Outcome => f.write_str("outcome"),
            ColumnRole::Covariate => f.write_str("covariate"),
            ColumnRole::PotentialOutcome(level) => write!(f, "potential_outcome:{level}"),
            ColumnRole::Weight => f.write_str("weight"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Rct,
    Apo,
    Observational,
}

/// Typed storage for one column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Integer(Vec<i64>),
    /// Dictionary-encoded levels; `levels` is in first-appearance order.
    Categorical {
        codes: Vec<u32>,
        levels: Vec<String>,
    },
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Integer(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, ColumnData::Categorical { .. })
    }

    /// Value as a real number; `None` for categorical columns.
    pub fn as_f64(&self, row: usize) -> Option<f64> {
        match self {
            ColumnData::Numeric(v) => Some(v[row]),
            ColumnData::Integer(v) => Some(v[row] as f64),
            ColumnData::Categorical { .. } => None,
        }
    }

    /// Whole column as reals; `None` for categorical columns.
    pub fn to_f64_vec(&self) -> Option<Vec<f64>> {
        match self {
            ColumnData::Numeric(v) => Some(v.clone()),
            ColumnData::Integer(v) => Some(v.iter().map(|&x| x as f64).collect()),
            ColumnData::Categorical { .. } => None,
        }
    }

    /// Textual form of a cell, as written to CSV.
    pub fn cell_string(&self, row: usize) -> String {
        match self {
            // Debug formatting is the shortest representation that parses back
            // to the same f64 and always marks the value as non-integer.
            ColumnData::Numeric(v) => format!("{:?}", v[row]),
            ColumnData::Integer(v) => v[row].to_string(),
            ColumnData::Categorical { codes, levels } => levels[codes[row] as usize].clone(),
        }
    }

    pub fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Integer(v) => ColumnData::Integer(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical { codes, levels } => ColumnData::Categorical {
                codes: rows.iter().map(|&r| codes[r]).collect(),
                levels: levels.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub role: ColumnRole,
    pub data: ColumnData,
}

impl Column {
    pub fn new(name: impl Into<String>, role: ColumnRole, data: ColumnData) -> Self {
        Self {
            name: name.into(),
            role,
            data,
        }
    }

    pub fn numeric(name: impl Into<String>, role: ColumnRole, values: Vec<f64>) -> Self {
        Self::new(name, role, ColumnData::Numeric(values))
    }

    pub fn integer(name: impl Into<String>, role: ColumnRole, values: Vec<i64>) -> Self {
        Self::new(name, role, ColumnData::Integer(values))
    }

    /// Dictionary-encodes string values in first-appearance order.
    pub fn categorical<S: AsRef<str>>(
        name: impl Into<String>,
        role: ColumnRole,
        values: &[S],
    ) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let codes = values
            .iter()
            .map(|v| {
                let v = v.as_ref();
                match levels.iter().position(|l| l == v) {
                    Some(code) => code as u32,
                    None => {
                        levels.push(v.to_string());
                        (levels.len() - 1) as u32
                    }
                }
            })
            .collect();
        Self::new(name, role, ColumnData::Categorical { codes, levels })
    }
}

/// Immutable columnar table with role annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    n_rows: usize,
    kind: TableKind,
}

impl Dataset {
    /// Builds a table, checking column lengths and the role layout required by `kind`.
    pub fn new(columns: Vec<Column>, kind: TableKind) -> Result<Self, DataError> {
        let n_rows = columns.first().map(|c| c.data.len()).unwrap_or(0);
        let mut names = BTreeSet::new();
        for c in &columns {
            if c.data.len() != n_rows {
                return Err(DataError::InvalidTable(format!(
                    "column `{}` has {} rows, expected {n_rows}",
                    c.name,
                    c.data.len()
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(DataError::InvalidTable(format!(
                    "duplicate column `{}`",
                    c.name
                )));
            }
        }

        let count = |role: ColumnRole| columns.iter().filter(|c| c.role == role).count();
        let po_levels: Vec<i64> = columns
            .iter()
            .filter_map(|c| match c.role {
                ColumnRole::PotentialOutcome(level) => Some(level),
                _ => None,
            })
            .collect();
        for single in [ColumnRole::UnitId, ColumnRole::Weight] {
            if count(single) > 1 {
                return Err(DataError::InvalidTable(format!(
                    "more than one {single} column"
                )));
            }
        }
        match kind {
            TableKind::Rct | TableKind::Observational => {
                if count(ColumnRole::Treatment) != 1 {
                    return Err(DataError::InvalidTable(
                        "exactly one treatment column required".into(),
                    ));
                }
                if count(ColumnRole::Outcome) != 1 {
                    return Err(DataError::InvalidTable(
                        "exactly one outcome column required".into(),
                    ));
                }
                if !po_levels.is_empty() {
                    return Err(DataError::InvalidTable(
                        "potential-outcome columns are only allowed in APO tables".into(),
                    ));
                }
            }
            TableKind::Apo => {
                if count(ColumnRole::Outcome) != 0 {
                    return Err(DataError::InvalidTable(
                        "APO tables carry no outcome column".into(),
                    ));
                }
                if count(ColumnRole::Treatment) > 1 {
                    return Err(DataError::InvalidTable(
                        "more than one treatment column".into(),
                    ));
                }
                let distinct: BTreeSet<i64> = po_levels.iter().copied().collect();
                if distinct.len() != po_levels.len() {
                    return Err(DataError::InvalidTable(
                        "one potential-outcome column per treatment level".into(),
                    ));
                }
                if !distinct.contains(&0) || !distinct.contains(&1) {
                    return Err(DataError::InvalidTable(
                        "APO tables need potential outcomes for levels 0 and 1".into(),
                    ));
                }
            }
        }
        for c in &columns {
            let must_be_numeric = matches!(
                c.role,
                ColumnRole::Outcome | ColumnRole::PotentialOutcome(_) | ColumnRole::Weight
            );
            if must_be_numeric && !c.data.is_numeric() {
                return Err(DataError::InvalidTable(format!(
                    "{} column `{}` must be numeric",
                    c.role, c.name
                )));
            }
            if let ColumnData::Numeric(v) = &c.data {
                if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                    return Err(DataError::TypeParseError {
                        row,
                        column: c.name.clone(),
                        value: v[row].to_string(),
                    });
                }
            }
        }
        Ok(Self {
            columns,
            n_rows,
            kind,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_by_role(&self, role: ColumnRole) -> Option<&Column> {
        self.columns.iter().find(|c| c.role == role)
    }

    pub fn covariate_names(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::Covariate)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn treatment_column(&self) -> Option<&Column> {
        self.column_by_role(ColumnRole::Treatment)
    }

    /// Treatment as 0/1 integers, or `NonBinaryTreatment`.
    pub fn binary_treatment(&self) -> Result<&[i64], DataError> {
        let col = self
            .treatment_column()
            .ok_or_else(|| DataError::InvalidTable("no treatment column".into()))?;
        match &col.data {
            ColumnData::Integer(v) if v.iter().all(|&t| t == 0 || t == 1) => Ok(v),
            _ => Err(DataError::NonBinaryTreatment),
        }
    }

    pub fn outcome(&self) -> Option<&[f64]> {
        match &self.column_by_role(ColumnRole::Outcome)?.data {
            ColumnData::Numeric(v) => Some(v),
            _ => None,
        }
    }

    pub fn potential_outcome(&self, level: i64) -> Option<&[f64]> {
        match &self
            .column_by_role(ColumnRole::PotentialOutcome(level))?
            .data
        {
            ColumnData::Numeric(v) => Some(v),
            _ => None,
        }
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match &self.column_by_role(ColumnRole::Weight)?.data {
            ColumnData::Numeric(v) => Some(v),
            _ => None,
        }
    }

    /// All outcome cells: the outcome column, or every potential-outcome column.
    pub fn outcome_cells(&self) -> Vec<f64> {
        self.columns
            .iter()
            .filter(|c| {
                matches!(
                    c.role,
                    ColumnRole::Outcome | ColumnRole::PotentialOutcome(_)
                )
            })
            .filter_map(|c| c.data.to_f64_vec())
            .flatten()
            .collect()
    }

    /// True when every outcome cell is 0 or 1.
    pub fn has_binary_outcome(&self) -> bool {
        let cells = self.outcome_cells();
        !cells.is_empty() && cells.iter().all(|&y| y == 0.0 || y == 1.0)
    }

    /// Rows in the given order (indices may repeat).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .map(|c| Column::new(c.name.clone(), c.role, c.data.select(rows)))
                .collect(),
            n_rows: rows.len(),
            kind: self.kind,
        }
    }

    /// Rows whose mask entry is true, in original order.
    pub fn filter_rows(&self, keep: &[bool]) -> Dataset {
        let rows: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(i, _)| i)
            .collect();
        self.select_rows(&rows)
    }

    pub fn with_column(&self, column: Column) -> Result<Dataset, DataError> {
        let mut columns = self.columns.clone();
        columns.push(column);
        Dataset::new(columns, self.kind)
    }

    pub fn without_columns(&self, names: &[&str]) -> Result<Dataset, DataError> {
        let columns = self
            .columns
            .iter()
            .filter(|c| !names.contains(&c.name.as_str()))
            .cloned()
            .collect();
        Dataset::new(columns, self.kind)
    }

    pub fn with_kind(&self, kind: TableKind) -> Result<Dataset, DataError> {
        Dataset::new(self.columns.clone(), kind)
    }

    /// A schema that reloads this table (as written by [`write_table`]) unchanged.
    pub fn schema_config(&self) -> SchemaConfig {
        let mut schema = SchemaConfig {
            table_kind: Some(self.kind),
            covariates: Some(Vec::new()),
            ..SchemaConfig::default()
        };
        for c in &self.columns {
            match c.role {
                ColumnRole::Treatment => schema.treatment = Some(c.name.clone()),
                ColumnRole::Outcome => schema.outcome = Some(c.name.clone()),
                ColumnRole::UnitId => schema.unit_id = Some(c.name.clone()),
                ColumnRole::Weight => schema.weight = Some(c.name.clone()),
                ColumnRole::PotentialOutcome(level) => {
                    schema
                        .potential_outcomes
                        .insert(level.to_string(), c.name.clone());
                }
                ColumnRole::Covariate => {
                    if let Some(covs) = schema.covariates.as_mut() {
                        covs.push(c.name.clone())
                    }
                }
            }
            match c.data {
                ColumnData::Categorical { .. } => schema.categorical.push(c.name.clone()),
                ColumnData::Numeric(_) if c.role == ColumnRole::Covariate => {
                    schema.numeric.push(c.name.clone())
                }
                _ => {}
            }
        }
        schema
    }
}

/// Maps treatment levels to 0/1, dropping rows whose level maps to `Drop`.
///
/// Integer treatment levels are matched by their decimal text.
pub fn binarize_treatment(
    d: &Dataset,
    rule: &std::collections::BTreeMap<String, LevelTarget>,
) -> Result<Dataset, DataError> {
    let col = d
        .treatment_column()
        .ok_or_else(|| DataError::InvalidTable("no treatment column".into()))?;
    let labels: Vec<String> = (0..d.n_rows()).map(|r| col.data.cell_string(r)).collect();
    if let ColumnData::Numeric(_) = col.data {
        return Err(DataError::InvalidTable(
            "treatment must be categorical or integer to binarize".into(),
        ));
    }
    let mut keep = Vec::with_capacity(labels.len());
    let mut coded = Vec::with_capacity(labels.len());
    for label in &labels {
        match rule.get(label) {
            None => return Err(DataError::UnmappedLevel(label.clone())),
            Some(LevelTarget::Drop) => keep.push(false),
            Some(LevelTarget::Treated) => {
                keep.push(true);
                coded.push(1);
            }
            Some(LevelTarget::Control) => {
                keep.push(true);
                coded.push(0);
            }
        }
    }
    let filtered = d.filter_rows(&keep);
    let columns = filtered
        .columns
        .into_iter()
        .map(|c| {
            if c.role == ColumnRole::Treatment {
                Column::integer(c.name, ColumnRole::Treatment, coded.clone())
            } else {
                c
            }
        })
        .collect();
    Dataset::new(columns, d.kind())
}

/// Draws `n` rows uniformly without replacement; survivors keep their original order.
pub fn subsample_uniform(d: &Dataset, n: usize, rng: &mut TrialRng) -> Result<Dataset, DataError> {
    if n > d.n_rows() {
        return Err(DataError::SampleTooLarge {
            requested: n,
            available: d.n_rows(),
        });
    }
    let mut rows = index::sample(rng, d.n_rows(), n).into_vec();
    rows.sort_unstable();
    Ok(d.select_rows(&rows))
}

/// Span of the outcome values of a table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRange {
    pub min: f64,
    pub max: f64,
}

impl OutcomeRange {
    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    /// A zero span cannot normalize errors.
    pub fn is_degenerate(&self) -> bool {
        self.span() <= 0.0
    }
}

/// Range of all outcome cells (every potential-outcome column for APO tables).
pub fn outcome_range(d: &Dataset) -> Result<OutcomeRange, DataError> {
    let cells = d.outcome_cells();
    if cells.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let (min, max) = cells
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
            (lo.min(y), hi.max(y))
        });
    Ok(OutcomeRange { min, max })
}
