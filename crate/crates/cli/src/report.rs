//! CSV + JSON-lines report files, every row tagged with its run.

use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use nipq::io::write_atomic;

use crate::config::RunConfig;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            run_id: cfg.run_id(),
            config_hash: cfg.hash(),
            seed: cfg.seed(),
        }
    }

    fn fields(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("run_id".into(), self.run_id.clone().into());
        m.insert("config_hash".into(), self.config_hash.clone().into());
        m.insert("seed".into(), self.seed.into());
        m
    }

    /// `value`'s fields after the provenance fields; non-objects go under `value`.
    pub fn tag(&self, value: Value) -> Value {
        let mut m = self.fields();
        match value {
            Value::Object(o) => m.extend(o),
            v => {
                m.insert("value".into(), v);
            }
        }
        Value::Object(m)
    }
}

fn io_err(e: nipq::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Writes `<stem>.csv` and `<stem>.jsonl` under `dir`. CSV columns follow the
/// key order of the first row; nested values are JSON-encoded in their cell.
pub fn write_rows(dir: &Path, stem: &str, prov: &Provenance, rows: &[Value]) -> Result<(), CliError> {
    let tagged: Vec<Value> = rows.iter().cloned().map(|r| prov.tag(r)).collect();
    let mut jsonl = String::new();
    for r in &tagged {
        jsonl.push_str(&serde_json::to_string(r).map_err(|e| CliError::Runtime(e.to_string()))?);
        jsonl.push('\n');
    }
    let header: Vec<String> = match tagged.first() {
        Some(Value::Object(m)) => m.keys().cloned().collect(),
        _ => prov.fields().keys().cloned().collect(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in &tagged {
        let row: Vec<String> = header.iter().map(|k| r.get(k).map(cell).unwrap_or_default()).collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(dir.join(format!("{stem}.csv")), &bytes).map_err(io_err)?;
    write_atomic(dir.join(format!("{stem}.jsonl")), jsonl.as_bytes()).map_err(io_err)
}

/// Pretty JSON object with the provenance fields first.
pub fn write_json(path: &Path, prov: &Provenance, value: impl Serialize) -> Result<(), CliError> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    let text = serde_json::to_string_pretty(&prov.tag(v)).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(path, text.as_bytes()).map_err(io_err)
}

pub fn to_value(v: impl Serialize) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Runtime(e.to_string()))
}
