use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::schema::{MissingPolicy, SchemaConfig};
use super::{binarize_treatment, Column, ColumnData, ColumnRole, DataError, Dataset};

/// A parsed table plus how many incomplete rows were dropped on the way in.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTable {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

pub fn load_table(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<LoadedTable, DataError> {
    let file = File::open(path)?;
    load_table_from_reader(file, schema)
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

/// Parses CSV text (header row required) under `schema`.
pub fn load_table_from_reader<R: Read>(
    reader: R,
    schema: &SchemaConfig,
) -> Result<LoadedTable, DataError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    for name in schema.referenced_names() {
        if !header.iter().any(|h| h == name) {
            return Err(DataError::MissingColumn(name.to_string()));
        }
    }

    let po_levels = schema.potential_outcome_levels()?;
    let role_of = |name: &str| -> Option<ColumnRole> {
        if schema.treatment.as_deref() == Some(name) {
            Some(ColumnRole::Treatment)
        } else if schema.outcome.as_deref() == Some(name) {
            Some(ColumnRole::Outcome)
        } else if schema.unit_id.as_deref() == Some(name) {
            Some(ColumnRole::UnitId)
        } else if schema.weight.as_deref() == Some(name) {
            Some(ColumnRole::Weight)
        } else if let Some((level, _)) = po_levels.iter().find(|(_, n)| n == name) {
            Some(ColumnRole::PotentialOutcome(*level))
        } else {
            match &schema.covariates {
                None => Some(ColumnRole::Covariate),
                Some(list) if list.iter().any(|c| c == name) => Some(ColumnRole::Covariate),
                Some(_) => None,
            }
        }
    };
    let loaded: Vec<(usize, &str, ColumnRole)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, name)| role_of(name).map(|role| (i, name.as_str(), role)))
        .collect();

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); loaded.len()];
    let mut dropped_rows = 0;
    for (row, record) in csv.records().enumerate() {
        let record = record?;
        let missing = loaded
            .iter()
            .find(|(i, _, _)| record.get(*i).is_none_or(is_missing));
        if let Some((_, name, _)) = missing {
            match schema.missing {
                MissingPolicy::Reject => {
                    return Err(DataError::MissingValue {
                        row,
                        column: name.to_string(),
                    })
                }
                MissingPolicy::DropRows => {
                    dropped_rows += 1;
                    continue;
                }
            }
        }
        for (slot, (i, _, _)) in cells.iter_mut().zip(&loaded) {
            slot.push(record[*i].to_string());
        }
    }

    let mut columns = Vec::with_capacity(loaded.len());
    for ((_, name, role), raw) in loaded.iter().zip(cells) {
        let forced_categorical = schema.categorical.iter().any(|c| c == name);
        let forced_numeric = schema.numeric.iter().any(|c| c == name);
        let data = parse_column(name, *role, &raw, forced_categorical, forced_numeric)?;
        columns.push(Column::new(*name, *role, data));
    }
    let mut dataset = Dataset::new(columns, schema.inferred_kind())?;
    if let Some(rule) = &schema.binarize {
        dataset = binarize_treatment(&dataset, rule)?;
    }
    Ok(LoadedTable {
        dataset,
        dropped_rows,
    })
}

fn parse_reals(name: &str, raw: &[String]) -> Result<Vec<f64>, DataError> {
    raw.iter()
        .enumerate()
        .map(|(row, s)| match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(DataError::TypeParseError {
                row,
                column: name.to_string(),
                value: s.clone(),
            }),
        })
        .collect()
}

fn try_integers(raw: &[String]) -> Option<Vec<i64>> {
    raw.iter().map(|s| s.parse::<i64>().ok()).collect()
}

fn parse_column(
    name: &str,
    role: ColumnRole,
    raw: &[String],
    forced_categorical: bool,
    forced_numeric: bool,
) -> Result<ColumnData, DataError> {
    if forced_categorical {
        return Ok(Column::categorical(name, role, raw).data);
    }
    match role {
        ColumnRole::Outcome | ColumnRole::PotentialOutcome(_) | ColumnRole::Weight => {
            Ok(ColumnData::Numeric(parse_reals(name, raw)?))
        }
        ColumnRole::Treatment => {
            if let Some(v) = try_integers(raw) {
                return Ok(ColumnData::Integer(v));
            }
            // "1.0"-style integral reals still count as integer levels.
            let reals: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
            match reals {
                Some(r) if r.iter().all(|x| x.fract() == 0.0 && x.abs() < 1e15) => {
                    Ok(ColumnData::Integer(r.iter().map(|&x| x as i64).collect()))
                }
                _ => Ok(Column::categorical(name, role, raw).data),
            }
        }
        ColumnRole::Covariate | ColumnRole::UnitId => {
            if forced_numeric {
                return Ok(ColumnData::Numeric(parse_reals(name, raw)?));
            }
            if let Some(v) = try_integers(raw) {
                return Ok(ColumnData::Integer(v));
            }
            match parse_reals(name, raw) {
                Ok(v) => Ok(ColumnData::Numeric(v)),
                Err(_) => Ok(Column::categorical(name, role, raw).data),
            }
        }
    }
}

pub fn write_table(d: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = File::create(path)?;
    write_table_to_writer(d, file)
}

/// Writes the table as CSV in column order; categorical cells are written as their level text.
pub fn write_table_to_writer<W: Write>(d: &Dataset, writer: W) -> Result<(), DataError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(d.columns().iter().map(|c| c.name.as_str()))?;
    for row in 0..d.n_rows() {
        csv.write_record(d.columns().iter().map(|c| c.data.cell_string(row)))?;
    }
    csv.flush()?;
    Ok(())
}
