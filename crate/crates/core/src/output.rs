//! Versioned CSV and JSON emission.
//!
//! CSV files start with a `# schema_version=N` comment line followed by a
//! header row. JSON documents are objects carrying a `schema_version` key.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::equilibrium::EquilibriumState;
use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Writes `rows` as CSV with the schema comment and a header row.
pub fn write_csv<W: Write, T: Serialize>(mut out: W, rows: &[T]) -> Result<()> {
    writeln!(out, "# schema_version={SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_csv(BufWriter::new(File::create(path)?), rows)
}

/// Serializes `value` with a leading `schema_version` key. Non-object values
/// are wrapped as `{"schema_version": N, "data": value}`.
pub fn to_json_value<T: Serialize>(value: &T) -> Result<Value> {
    let mut map = Map::new();
    map.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    match serde_json::to_value(value)? {
        Value::Object(obj) => map.extend(obj),
        other => {
            map.insert("data".into(), other);
        }
    }
    Ok(Value::Object(map))
}

pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &to_json_value(value)?)?;
    writeln!(out)?;
    Ok(())
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(BufWriter::new(File::create(path)?), value)
}

/// One node of an equilibrium profile.
#[derive(Debug, Clone, Serialize)]
pub struct FieldRow {
    pub x: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
}

pub fn field_rows(state: &EquilibriumState) -> Vec<FieldRow> {
    let x = state.a.grid().nodes();
    (0..x.len())
        .map(|j| FieldRow {
            x: x[j],
            a: state.a.values()[j],
            i1: state.i[0].values()[j],
            i2: state.i[1].values()[j],
        })
        .collect()
}
