//! Result destinations and table serialization.
//!
//! Results go to `--output PATH` with the summary beside it as
//! `PATH.summary.json` (extension replaced). Without `--output`, a set
//! `FILTERSTAB_OUTPUT_DIR` receives `<command>.csv|json` and
//! `<command>.summary.json`; otherwise results go to stdout and the
//! summary to stderr.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::Format;

pub const OUTPUT_DIR_ENV: &str = "FILTERSTAB_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Empty,
}

impl Cell {
    fn csv_text(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Empty => String::new(),
        }
    }

    fn json_value(&self) -> serde_json::Value {
        match self {
            Cell::Int(v) => (*v).into(),
            Cell::Float(v) => serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, Into::into),
            Cell::Empty => serde_json::Value::Null,
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &'static [&'static str]) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv_text))?;
        }
        w.into_inner().context("flushing CSV buffer")
    }

    fn to_json(&self) -> Result<Vec<u8>> {
        let rows: Vec<Vec<serde_json::Value>> =
            self.rows.iter().map(|r| r.iter().map(Cell::json_value).collect()).collect();
        let doc = serde_json::json!({ "columns": self.columns, "rows": rows });
        let mut bytes = serde_json::to_vec(&doc)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

#[derive(Debug, Clone)]
enum Destination {
    File(PathBuf),
    Stdout,
    Stderr,
}

impl Destination {
    fn write(&self, bytes: &[u8]) -> Result<()> {
        match self {
            Destination::File(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                }
                fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
            }
            Destination::Stdout => Ok(io::stdout().lock().write_all(bytes)?),
            Destination::Stderr => Ok(io::stderr().lock().write_all(bytes)?),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sink {
    format: Format,
    results: Destination,
    summary: Destination,
}

fn summary_path(results: &Path) -> PathBuf {
    results.with_extension("summary.json")
}

impl Sink {
    pub fn resolve(command: &str, output: Option<&Path>, format: Format) -> Self {
        let (results, summary) = match output {
            Some(p) => (Destination::File(p.to_path_buf()), Destination::File(summary_path(p))),
            None => match std::env::var_os(OUTPUT_DIR_ENV) {
                Some(dir) => {
                    let ext = match format {
                        Format::Csv => "csv",
                        Format::Json => "json",
                    };
                    let base = Path::new(&dir).join(format!("{command}.{ext}"));
                    (Destination::File(base.clone()), Destination::File(summary_path(&base)))
                }
                None => (Destination::Stdout, Destination::Stderr),
            },
        };
        Self {
            format,
            results,
            summary,
        }
    }

    pub fn table(&self, table: &Table) -> Result<()> {
        let bytes = match self.format {
            Format::Csv => table.to_csv()?,
            Format::Json => table.to_json()?,
        };
        self.results.write(&bytes)
    }

    pub fn summary<T: Serialize>(&self, summary: &T) -> Result<()> {
        self.summary.write(&pretty(summary)?)
    }

    /// Report-only commands write their report as the result.
    pub fn report<T: Serialize>(&self, report: &T) -> Result<()> {
        self.results.write(&pretty(report)?)
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}
