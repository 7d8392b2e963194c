//! Run artifacts: CSV tables, a JSON manifest and a plain-text summary whose
//! numbers are all quoted from CSV cells.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Experiment, RunConfig};

/// Formats a float as written to CSV (shortest round-trip representation).
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// A CSV table with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Reads CSV text produced by the core library (header row, no quoting).
    pub fn from_csv(name: impl Into<String>, text: &str) -> Self {
        let mut lines = text.lines();
        let header = lines
            .next()
            .unwrap_or("")
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Self {
            name: name.into(),
            header,
            rows,
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    /// CSV text; cells containing commas or quotes are quoted.
    pub fn to_csv(&self) -> String {
        let line = |cells: &[String]| cells.iter().map(|c| quote(c)).collect::<Vec<_>>().join(",");
        let mut out = line(&self.header);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    fn column(&self, col: &str) -> usize {
        self.header
            .iter()
            .position(|h| h == col)
            .unwrap_or_else(|| panic!("table {} has no column {col}", self.name))
    }
}

/// Outcome of one check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// The check's hypothesis does not hold for this input.
    NotApplicable,
}

impl Status {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::NotApplicable => "not-applicable",
        }
    }
}

/// Everything a run produces.
pub struct Artifacts {
    pub experiment: Experiment,
    tables: Vec<Table>,
    checks: Table,
    constants: Table,
    /// Extra JSON reports, by file stem.
    reports: BTreeMap<String, Value>,
    timings: Vec<(String, f64)>,
    started: Instant,
}

impl Artifacts {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            tables: Vec::new(),
            checks: Table::new("checks", &["check", "status", "value", "limit"]),
            constants: Table::new("constants", &["name", "value"]),
            reports: BTreeMap::new(),
            timings: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn table(&mut self, table: Table) {
        self.tables.push(table);
    }

    pub fn check(&mut self, name: impl Into<String>, status: Status, value: impl Into<String>, limit: impl Into<String>) {
        self.checks
            .push(vec![name.into(), status.label().to_string(), value.into(), limit.into()]);
    }

    pub fn constant(&mut self, name: impl Into<String>, value: f64) {
        self.constants.push(vec![name.into(), num(value)]);
    }

    pub fn report<T: Serialize>(&mut self, stem: impl Into<String>, value: &T) {
        self.reports
            .insert(stem.into(), serde_json::to_value(value).expect("reports serialize"));
    }

    /// Records the wall time since the previous stage.
    pub fn stage(&mut self, name: impl Into<String>) {
        let total = self.started.elapsed().as_secs_f64();
        let previous: f64 = self.timings.iter().map(|t| t.1).sum();
        self.timings.push((name.into(), total - previous));
    }

    /// Whether any check failed.
    pub fn failed(&self) -> bool {
        self.checks.rows.iter().any(|r| r[1] == Status::Fail.label())
    }

    fn all_tables(&self) -> impl Iterator<Item = &Table> {
        self.tables.iter().chain([&self.checks, &self.constants])
    }

    /// Summary text; each number is quoted with its file, row and column.
    pub fn summary(&self) -> String {
        let mut out = format!("experiment: {}\n", self.experiment.name());
        let checks = &self.checks;
        let failed: Vec<&str> = checks
            .rows
            .iter()
            .filter(|r| r[1] == Status::Fail.label())
            .map(|r| r[0].as_str())
            .collect();
        if failed.is_empty() {
            out.push_str("status: pass\n");
        } else {
            let _ = writeln!(out, "status: fail ({})", failed.join(", "));
        }
        for (i, row) in checks.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "  [{}] {}: value {} (limit {})  <- {}",
                row[1],
                row[0],
                cell_or_dash(&row[2]),
                cell_or_dash(&row[3]),
                cite(checks, i, "value")
            );
        }
        if !self.constants.rows.is_empty() {
            out.push_str("fitted constants:\n");
            for (i, row) in self.constants.rows.iter().enumerate() {
                let _ = writeln!(out, "  {} = {}  <- {}", row[0], row[1], cite(&self.constants, i, "value"));
            }
        }
        out.push_str("data files:\n");
        for t in &self.tables {
            let _ = writeln!(out, "  {}", t.file_name());
        }
        out
    }

    /// Writes every table, the reports, `manifest.json` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path, config: &RunConfig, wall_time: bool) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for table in self.all_tables() {
            let path = dir.join(table.file_name());
            std::fs::write(&path, table.to_csv())?;
            files.push(path);
        }
        for (stem, value) in &self.reports {
            let path = dir.join(format!("{stem}.json"));
            std::fs::write(&path, serde_json::to_string_pretty(value).expect("json") + "\n")?;
            files.push(path);
        }
        let constants: serde_json::Map<String, Value> = self
            .constants
            .rows
            .iter()
            .map(|r| (r[0].clone(), r[1].parse::<f64>().map(Value::from).unwrap_or(Value::Null)))
            .collect();
        let checks: Vec<Value> = self
            .checks
            .rows
            .iter()
            .map(|r| json!({ "check": r[0], "status": r[1] }))
            .collect();
        let timings: serde_json::Map<String, Value> = if wall_time {
            self.timings.iter().map(|(k, v)| (k.clone(), Value::from(*v))).collect()
        } else {
            Default::default()
        };
        let names: Vec<String> = files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        let manifest = json!({
            "experiment": self.experiment.name(),
            "config": config,
            "seed": config.seed,
            "threads": config.threads,
            "versions": {
                "qdyn-core": qdyn_core::VERSION,
                "qdyn-cli": env!("CARGO_PKG_VERSION"),
            },
            "files": names,
            "constants": constants,
            "checks": checks,
            "status": if self.failed() { "fail" } else { "pass" },
            "wall_time_seconds": timings,
        });
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("json") + "\n")?;
        files.push(path);
        let path = dir.join("summary.txt");
        std::fs::write(&path, self.summary())?;
        files.push(path);
        Ok(files)
    }
}

fn quote(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

fn cell_or_dash(s: &str) -> &str {
    if s.is_empty() {
        "-"
    } else {
        s
    }
}

/// `file.csv row r, column c` for data row `row` (1-based after the header).
fn cite(table: &Table, row: usize, col: &str) -> String {
    let c = table.column(col);
    format!("{} row {} column {}", table.file_name(), row + 1, table.header[c])
}
