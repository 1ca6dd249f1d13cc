use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{DataError, TableKind};

/// What to do with a row that has an empty or `NA` cell in a loaded column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Reject,
    DropRows,
}

/// Destination of a raw treatment level during binarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelTarget {
    Treated,
    Control,
    Drop,
}

impl Serialize for LevelTarget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LevelTarget::Treated => s.serialize_i64(1),
            LevelTarget::Control => s.serialize_i64(0),
            LevelTarget::Drop => s.serialize_str("drop"),
        }
    }
}

impl<'de> Deserialize<'de> for LevelTarget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(1) => Ok(LevelTarget::Treated),
            Raw::Int(0) => Ok(LevelTarget::Control),
            Raw::Text(s) => match s.as_str() {
                "1" => Ok(LevelTarget::Treated),
                "0" => Ok(LevelTarget::Control),
                "drop" => Ok(LevelTarget::Drop),
                other => Err(serde::de::Error::custom(format!(
                    "unknown level target `{other}`"
                ))),
            },
            Raw::Int(other) => Err(serde::de::Error::custom(format!(
                "unknown level target `{other}`"
            ))),
        }
    }
}

/// Role assignments and parsing options for one CSV file.
///
/// When `covariates` is absent every column without another role is loaded
/// as a covariate; when present, unlisted columns are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    /// Treatment level (as text) to column name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub potential_outcomes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    /// Columns forced to dictionary encoding.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categorical: Vec<String>,
    /// Covariates forced to real-valued storage even if every cell is an integer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub missing: MissingPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binarize: Option<BTreeMap<String, LevelTarget>>,
    /// Overrides the kind inferred from the roles present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_kind: Option<TableKind>,
}

impl SchemaConfig {
    pub fn potential_outcome_levels(&self) -> Result<Vec<(i64, String)>, DataError> {
        self.potential_outcomes
            .iter()
            .map(|(level, name)| {
                level
                    .parse::<i64>()
                    .map(|l| (l, name.clone()))
                    .map_err(|_| {
                        DataError::InvalidSchema(format!(
                            "potential-outcome level `{level}` is not an integer"
                        ))
                    })
            })
            .collect()
    }

    /// Every column name the schema refers to, each once.
    pub fn referenced_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        let singles = [&self.treatment, &self.outcome, &self.unit_id, &self.weight];
        for n in singles.into_iter().flatten() {
            names.push(n);
        }
        names.extend(self.potential_outcomes.values().map(String::as_str));
        if let Some(covs) = &self.covariates {
            names.extend(covs.iter().map(String::as_str));
        }
        names.extend(self.categorical.iter().map(String::as_str));
        names.extend(self.numeric.iter().map(String::as_str));
        let mut seen = std::collections::BTreeSet::new();
        names.retain(|n| seen.insert(*n));
        names
    }

    pub fn inferred_kind(&self) -> TableKind {
        if let Some(kind) = self.table_kind {
            kind
        } else if !self.potential_outcomes.is_empty() {
            TableKind::Apo
        } else {
            TableKind::Rct
        }
    }
}
