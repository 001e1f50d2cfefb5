//! Tabular result files: CSV plus a JSON-lines mirror.
//!
//! Floats are written with 17 significant digits so `parse(emit(x))`
//! reproduces `x` bit for bit; files end every line with a bare LF and are
//! written atomically (temp file, then rename).

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Int,
    Float,
}

#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn int(name: impl Into<String>) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::Int }
    }

    pub fn float(name: impl Into<String>) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::Float }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
}

impl Value {
    fn kind(&self) -> ColumnKind {
        match self {
            Value::Int(_) => ColumnKind::Int,
            Value::Float(_) => ColumnKind::Float,
        }
    }
}

/// Full round-trip float formatting: 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// A schema-checked result table.
#[derive(Debug, Clone)]
pub struct Table {
    columns: Vec<ColumnSpec>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: Vec<ColumnSpec>) -> Self {
        Table { columns, rows: Vec::new() }
    }

    /// Appends a row after checking it against the schema.
    pub fn push_row(&mut self, row: Vec<Value>) -> Result<(), String> {
        if row.len() != self.columns.len() {
            return Err(format!(
                "row has {} values, schema has {} columns",
                row.len(),
                self.columns.len()
            ));
        }
        for (value, col) in row.iter().zip(&self.columns) {
            if value.kind() != col.kind {
                return Err(format!(
                    "column '{}' expects {:?}, got {:?}",
                    col.name,
                    col.kind,
                    value.kind()
                ));
            }
            if let Value::Float(x) = value {
                if x.is_nan() {
                    return Err(format!("column '{}' received NaN", col.name));
                }
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for value in row {
                if !first {
                    out.push(',');
                }
                first = false;
                match value {
                    Value::Int(i) => {
                        let _ = write!(out, "{i}");
                    }
                    Value::Float(x) => out.push_str(&format_float(*x)),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let mut obj = serde_json::Map::new();
            for (value, col) in row.iter().zip(&self.columns) {
                let v = match value {
                    Value::Int(i) => serde_json::json!(i),
                    Value::Float(x) => serde_json::json!(x),
                };
                obj.insert(col.name.clone(), v);
            }
            out.push_str(&serde_json::Value::Object(obj).to_string());
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.csv` and the `<stem>.jsonl` mirror atomically.
    pub fn write(&self, dir: &Path, stem: &str) -> io::Result<Vec<String>> {
        let csv_name = format!("{stem}.csv");
        let jsonl_name = format!("{stem}.jsonl");
        write_atomic(&dir.join(&csv_name), self.to_csv().as_bytes())?;
        write_atomic(&dir.join(&jsonl_name), self.to_jsonl().as_bytes())?;
        Ok(vec![csv_name, jsonl_name])
    }
}

/// Writes via a temp file in the same directory, then renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<ColumnSpec> {
        vec![ColumnSpec::int("k"), ColumnSpec::float("value")]
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new(schema());
        assert_eq!(t.to_csv(), "k,value\n");
        assert_eq!(t.to_jsonl(), "");
    }

    #[test]
    fn floats_roundtrip_bit_exactly() {
        for x in [
            1.0 / 3.0,
            -0.0,
            1e-300,
            f64::MAX,
            f64::MIN_POSITIVE,
            2.225073858507201e-308, // largest subnormal neighborhood
            -1.2345678901234567e8,
        ] {
            let s = format_float(x);
            let back: f64 = s.parse().unwrap();
            assert!(
                back == x || (back.is_nan() && x.is_nan()),
                "{x:?} -> {s} -> {back:?}"
            );
            assert_eq!(back.to_bits(), x.to_bits(), "{x:?} via {s}");
        }
    }

    #[test]
    fn schema_mismatch_rejected() {
        let mut t = Table::new(schema());
        assert!(t.push_row(vec![Value::Int(1), Value::Float(0.5)]).is_ok());
        assert!(t.push_row(vec![Value::Int(1)]).is_err());
        assert!(t.push_row(vec![Value::Float(0.5), Value::Int(1)]).is_err());
        assert!(t
            .push_row(vec![Value::Int(1), Value::Float(f64::NAN)])
            .is_err());
    }

    #[test]
    fn jsonl_mirror_has_one_object_per_row() {
        let mut t = Table::new(schema());
        t.push_row(vec![Value::Int(1), Value::Float(0.25)]).unwrap();
        t.push_row(vec![Value::Int(2), Value::Float(-1.5)]).unwrap();
        let jsonl = t.to_jsonl();
        let lines: Vec<&str> = jsonl.trim_end().lines().collect();
        assert_eq!(lines.len(), 2);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["k"], 1);
        assert_eq!(first["value"], 0.25);
    }
}
