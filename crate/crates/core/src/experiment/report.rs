//! Tables with a metadata header, written as CSV or JSON.
//!
//! CSV files open with `# key: value` lines, then a header row and the data.
//! JSON files hold `{"metadata": {...}, "columns": [...], "rows": [[...]]}`.
//! Floats use the shortest representation that parses back exactly in both
//! formats, so the two carry identical numbers. Non-finite floats become an
//! empty CSV field and `null` in JSON.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value as Json};

use super::config::ExperimentConfig;
use crate::stats::format_f64;
use crate::{Error, Result};

/// Metadata key whose value changes between otherwise identical runs.
pub const TIMESTAMP_KEY: &str = "timestamp";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::config("format", format!("expected `csv` or `json`, got `{other}`"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Missing,
}

impl Cell {
    fn csv_field(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) if v.is_finite() => format_f64(*v),
            Cell::Float(_) | Cell::Missing => String::new(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Json {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Float(v) if v.is_finite() => json!(v),
            Cell::Float(_) | Cell::Missing => Json::Null,
            Cell::Text(s) => json!(s),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Missing, Into::into)
    }
}

/// Ordered `key: value` pairs written ahead of a table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    pub entries: Vec<(String, String)>,
}

impl Metadata {
    /// Artifact name and version, seed, resolved config and the current time.
    pub fn for_run(cfg: &ExperimentConfig, experiment: &str) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self::default()
            .with("artifact", env!("CARGO_PKG_NAME"))
            .with("version", env!("CARGO_PKG_VERSION"))
            .with("experiment", experiment)
            .with("seed", cfg.seed)
            .with("config", cfg.to_json())
            .with(TIMESTAMP_KEY, timestamp)
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

pub fn write_table<W: Write>(table: &Table, meta: &Metadata, format: Format, mut out: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(e.to_string());
    match format {
        Format::Csv => {
            for (k, v) in &meta.entries {
                writeln!(out, "# {k}: {v}").map_err(io)?;
            }
            let mut w = csv::Writer::from_writer(out);
            let write = |w: &mut csv::Writer<W>, rec: Vec<String>| {
                w.write_record(rec).map_err(|e| Error::Format(e.to_string()))
            };
            write(&mut w, table.columns.clone())?;
            for row in &table.rows {
                write(&mut w, row.iter().map(Cell::csv_field).collect())?;
            }
            w.flush().map_err(io)?;
        }
        Format::Json => {
            let metadata: Map<String, Json> = meta
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Json::String(v.clone())))
                .collect();
            let rows: Vec<Json> = table
                .rows
                .iter()
                .map(|r| Json::Array(r.iter().map(Cell::json).collect()))
                .collect();
            let doc = json!({ "metadata": metadata, "columns": table.columns, "rows": rows });
            serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(out).map_err(io)?;
        }
    }
    Ok(())
}

/// Writes `<out_dir>/<name>.<ext>`, creating the directory if needed.
pub fn emit_report(name: &str, table: &Table, meta: &Metadata, format: Format, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(format!("{name}.{}", format.extension()));
    let mut buf = Vec::new();
    write_table(table, meta, format, &mut buf)?;
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Table, Metadata) {
        let mut t = Table::new(["m", "value", "label"]);
        t.push(vec![10.into(), 0.1.into(), "a,b".into()]);
        t.push(vec![1000.into(), 1.5e-9.into(), Cell::Missing]);
        t.push(vec![3.into(), f64::NAN.into(), "c".into()]);
        (t, Metadata::default().with("seed", 7).with("config", r#"{"d":2}"#))
    }

    #[test]
    fn csv_layout() {
        let (t, meta) = sample();
        let mut out = Vec::new();
        write_table(&t, &meta, Format::Csv, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# seed: 7");
        assert_eq!(lines[1], r#"# config: {"d":2}"#);
        assert_eq!(lines[2], "m,value,label");
        assert_eq!(lines[3], "10,0.1,\"a,b\"");
        assert_eq!(lines[4], "1000,1.5e-9,");
        assert_eq!(lines[5], "3,,c");
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new(["a", "b"]);
        let mut out = Vec::new();
        write_table(&t, &Metadata::default().with("k", 1), Format::Csv, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "# k: 1\na,b\n");
    }

    #[test]
    fn csv_and_json_carry_identical_numbers() {
        let (t, meta) = sample();
        let (mut c, mut j) = (Vec::new(), Vec::new());
        write_table(&t, &meta, Format::Csv, &mut c).unwrap();
        write_table(&t, &meta, Format::Json, &mut j).unwrap();
        let doc: Json = serde_json::from_slice(&j).unwrap();
        assert_eq!(doc["metadata"]["seed"], "7");
        let csv_text = String::from_utf8(c).unwrap();
        let body: String = csv_text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        for (rec, jrow) in rdr.records().zip(doc["rows"].as_array().unwrap()) {
            let rec = rec.unwrap();
            for (k, field) in rec.iter().enumerate() {
                let jv = &jrow[k];
                match jv {
                    Json::Number(num) => assert_eq!(field.parse::<f64>().unwrap(), num.as_f64().unwrap()),
                    Json::Null => assert_eq!(field, ""),
                    Json::String(s) => assert_eq!(field, s),
                    other => panic!("unexpected {other}"),
                }
            }
        }
    }

    #[test]
    fn emit_creates_directory() {
        let dir = tempfile::tempdir().unwrap();
        let (t, meta) = sample();
        let path = emit_report("x", &t, &meta, Format::Json, &dir.path().join("nested")).unwrap();
        assert!(path.ends_with("nested/x.json"));
        assert!(path.exists());
    }

    #[test]
    fn format_parsing() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert!("xml".parse::<Format>().is_err());
    }
}
