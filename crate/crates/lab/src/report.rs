//! Run reports, verdicts and on-disk artifacts.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use stochom_core::rothe::LedgerEntry;
use stochom_core::Error;

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    /// Floats carry 17 significant digits.
    pub fn render(&self) -> String {
        match self {
            Cell::Float(v) if v.is_finite() => format!("{v:.16e}"),
            Cell::Float(v) => format!("{v}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
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

/// A named table written to `tables/<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    /// Column of floats by header name.
    pub fn column(&self, name: &str) -> Vec<f64> {
        let Some(i) = self.header.iter().position(|h| h == name) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .filter_map(|r| match r[i] {
                Cell::Float(v) => Some(v),
                Cell::Int(v) => Some(v as f64),
                Cell::Text(_) => None,
            })
            .collect()
    }
}

/// Pass/fail outcome of one check, citing the operation that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub operation: String,
    pub value: f64,
    pub tolerance: f64,
    /// Positive when the check passes with room to spare.
    pub margin: f64,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    /// Passes when `value ≤ tolerance`.
    pub fn at_most(name: &str, operation: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            operation: operation.into(),
            value,
            tolerance,
            margin: tolerance - value,
            pass: value <= tolerance,
            detail: String::new(),
        }
    }

    /// Passes when `value ≥ tolerance`.
    pub fn at_least(name: &str, operation: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            operation: operation.into(),
            value,
            tolerance,
            margin: value - tolerance,
            pass: value >= tolerance,
            detail: String::new(),
        }
    }

    pub fn flag(name: &str, operation: &str, pass: bool) -> Self {
        Self {
            name: name.into(),
            operation: operation.into(),
            value: if pass { 1.0 } else { 0.0 },
            tolerance: 1.0,
            margin: if pass { 0.0 } else { -1.0 },
            pass,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// Outcome class, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    VerdictFailure,
    ConfigError,
    NumericalFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::VerdictFailure => 1,
            Status::ConfigError => 2,
            Status::NumericalFailure => 3,
        }
    }

    /// The worse of two outcomes.
    pub fn combine(self, other: Status) -> Status {
        if other.exit_code() > self.exit_code() {
            other
        } else {
            self
        }
    }

    /// Class of a kernel error.
    pub fn of_error(e: &Error) -> Status {
        match e {
            Error::Config(_) | Error::Resolution { .. } | Error::GridMismatch { .. } | Error::Precondition(_) => Status::ConfigError,
            _ => Status::NumericalFailure,
        }
    }
}

/// Status of one run inside an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStatus {
    pub name: String,
    pub status: Status,
    pub error: Option<String>,
    /// Wall-clock seconds; excluded from every CSV.
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub kind: String,
    pub config_hash: String,
    pub runs: Vec<RunStatus>,
    pub verdicts: Vec<Verdict>,
    /// Extra structured results (effective tensors, summaries).
    pub results: serde_json::Map<String, Value>,
    pub status: Status,
    #[serde(skip)]
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub ledgers: Vec<(String, Vec<LedgerEntry>)>,
}

impl RunReport {
    pub fn new(experiment: &str, kind: &str, config_hash: String) -> Self {
        Self {
            experiment: experiment.into(),
            kind: kind.into(),
            config_hash,
            runs: Vec::new(),
            verdicts: Vec::new(),
            results: serde_json::Map::new(),
            status: Status::Pass,
            tables: Vec::new(),
            ledgers: Vec::new(),
        }
    }

    pub fn record_run(&mut self, name: &str, seconds: f64, outcome: Result<(), &Error>) {
        let (status, error) = match outcome {
            Ok(()) => (Status::Pass, None),
            Err(e) => (Status::of_error(e), Some(e.to_string())),
        };
        self.status = self.status.combine(status);
        self.runs.push(RunStatus {
            name: name.into(),
            status,
            error,
            seconds,
        });
    }

    pub fn verdict(&mut self, v: Verdict) {
        if !v.pass {
            self.status = self.status.combine(Status::VerdictFailure);
        }
        self.verdicts.push(v);
    }

    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }

    /// Writes `report.json`, `tables/*.csv` and `ledgers/*.json` under `dir`.
    pub fn emit(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir.join("tables"))?;
        fs::create_dir_all(dir.join("ledgers"))?;
        let mut tables: Vec<&Table> = self.tables.iter().collect();
        tables.sort_by(|a, b| a.name.cmp(&b.name));
        for t in tables {
            fs::write(dir.join("tables").join(format!("{}.csv", t.name)), t.to_csv())?;
        }
        for (name, entries) in &self.ledgers {
            let json: Vec<Value> = entries.iter().map(ledger_json).collect();
            fs::write(
                dir.join("ledgers").join(format!("{name}.json")),
                serde_json::to_string_pretty(&json).expect("ledger serializes"),
            )?;
        }
        fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(self).expect("report serializes"),
        )
    }
}

fn ledger_json(e: &LedgerEntry) -> Value {
    serde_json::json!({
        "step": e.step,
        "t": e.t,
        "elastic": e.elastic,
        "hardening": e.hardening,
        "regularization": e.regularization,
        "dissipation_cum": e.dissipation_cum,
        "work_cum": e.work_cum,
        "energy_margin": e.energy_margin,
    })
}

/// Ledger as a table with the sidecar keys as columns.
pub fn ledger_table(name: &str, entries: &[LedgerEntry]) -> Table {
    let mut t = Table::new(
        name,
        &["step", "t", "elastic", "hardening", "regularization", "dissipation_cum", "work_cum", "energy_margin"],
    );
    for e in entries {
        t.push(vec![
            e.step.into(),
            e.t.into(),
            e.elastic.into(),
            e.hardening.into(),
            e.regularization.into(),
            e.dissipation_cum.into(),
            e.work_cum.into(),
            e.energy_margin.into(),
        ]);
    }
    t
}

/// Nodal field in the grid CSV schema: node index, coordinates, components.
pub fn nodal_table(name: &str, grid: &stochom_core::fem::Grid, values: &[f64], ncomp: usize) -> Table {
    let d = grid.dim();
    let mut header = vec!["node".to_string()];
    header.extend(["x", "y", "z"][..d].iter().map(|s| s.to_string()));
    header.extend((0..ncomp).map(|k| format!("c{k}")));
    let mut t = Table {
        name: name.into(),
        header,
        rows: Vec::new(),
    };
    for node in 0..grid.n_nodes() {
        let x = grid.node_coords(node);
        let mut row: Vec<Cell> = vec![node.into()];
        row.extend(x[..d].iter().map(|v| Cell::Float(*v)));
        row.extend(values[node * ncomp..(node + 1) * ncomp].iter().map(|v| Cell::Float(*v)));
        t.rows.push(row);
    }
    t
}
