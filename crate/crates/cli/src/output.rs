//! Rendering of command results as CSV, JSON or an aligned text table.

use std::io::Write;

use serde::Serialize;
use serde_json::Value;

use crate::config::Format;

/// A command result: flat rows for CSV and tables, a full record for JSON.
pub struct Rendered {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub json: Value,
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        other => other.to_string(),
    }
}

impl Rendered {
    /// Rows from a list of flat records; headers are the record's field names.
    pub fn from_rows<R: Serialize, J: Serialize>(rows: &[R], json: &J) -> Self {
        let values: Vec<Value> = rows.iter().map(|r| serde_json::to_value(r).expect("row serializes")).collect();
        let headers: Vec<String> = match values.first() {
            Some(Value::Object(m)) => m.keys().cloned().collect(),
            _ => Vec::new(),
        };
        let rows = values
            .iter()
            .map(|v| headers.iter().map(|h| v.get(h).map(cell).unwrap_or_default()).collect())
            .collect();
        Self { headers, rows, json: serde_json::to_value(json).expect("record serializes") }
    }

    pub fn write(&self, format: Format, out: &mut dyn Write) -> std::io::Result<()> {
        match format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut *out, &self.json)?;
                writeln!(out)
            }
            Format::Csv => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(&self.headers)?;
                for r in &self.rows {
                    w.write_record(r)?;
                }
                w.flush()
            }
            Format::Table => {
                let mut widths: Vec<usize> = self.headers.iter().map(String::len).collect();
                for r in &self.rows {
                    for (w, c) in widths.iter_mut().zip(r) {
                        *w = (*w).max(c.len());
                    }
                }
                let line = |cells: &[String]| {
                    cells.iter().zip(&widths).map(|(c, &w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
                };
                writeln!(out, "{}", line(&self.headers))?;
                for r in &self.rows {
                    writeln!(out, "{}", line(r))?;
                }
                Ok(())
            }
        }
    }
}
