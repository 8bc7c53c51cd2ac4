//! Per-round training traces, their CSV / JSON encodings and the
//! target-accuracy report.
//!
//! CSV schema (version 1): the fixed columns in [`FIXED_COLUMNS`] followed by
//! `size_0 .. size_{N-1}`. Row `t = 0` describes the initial model; row `t`
//! for `t >= 1` is taken after global round `t`. `bytes_per_client`,
//! `cum_latency_s`, `compute_s` and `comm_s` are cumulative.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HistError, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const FIXED_COLUMNS: [&str; 10] = [
    "t",
    "acc",
    "loss",
    "bytes_per_client",
    "cum_latency_s",
    "grad_norm_sq",
    "weight_norm_sq",
    "compute_s",
    "comm_s",
    "aircomp_mse",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    /// Test accuracy of the global model.
    pub acc: f64,
    /// Training loss of the global model, averaged cell by cell.
    pub loss: f64,
    /// Cumulative uplink bytes, averaged over clients.
    pub bytes_per_client: f64,
    pub cum_latency_s: f64,
    pub grad_norm_sq: f64,
    pub weight_norm_sq: f64,
    pub compute_s: f64,
    pub comm_s: f64,
    /// Mean per-element AirComp MSE over the round's edge aggregations.
    pub aircomp_mse: f64,
    /// Mask sizes used in this round.
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub schema_version: u32,
    pub label: String,
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            label: label.into(),
            rows: Vec::new(),
        }
    }

    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn cells(&self) -> usize {
        self.rows.first().map_or(0, |r| r.sizes.len())
    }

    /// Cumulative columns never decrease and rounds are consecutive from 0.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HistError::Trace(format!("unsupported schema version {}", self.schema_version)));
        }
        let cells = self.cells();
        for (k, r) in self.rows.iter().enumerate() {
            if r.t != k {
                return Err(HistError::Trace(format!("row {k} has t = {}", r.t)));
            }
            if r.sizes.len() != cells {
                return Err(HistError::Trace(format!("row {k} has {} sizes, expected {cells}", r.sizes.len())));
            }
        }
        for w in self.rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.bytes_per_client < a.bytes_per_client
                || b.cum_latency_s < a.cum_latency_s
                || b.compute_s < a.compute_s
                || b.comm_s < a.comm_s
            {
                return Err(HistError::Trace(format!("cumulative column decreases at t = {}", b.t)));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> Vec<String> {
        FIXED_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain((0..self.cells()).map(|j| format!("size_{j}")))
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| HistError::Io(e.to_string());
        w.write_record(self.header()).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![
                r.t.to_string(),
                r.acc.to_string(),
                r.loss.to_string(),
                r.bytes_per_client.to_string(),
                r.cum_latency_s.to_string(),
                r.grad_norm_sq.to_string(),
                r.weight_norm_sq.to_string(),
                r.compute_s.to_string(),
                r.comm_s.to_string(),
                r.aircomp_mse.to_string(),
            ];
            rec.extend(r.sizes.iter().map(usize::to_string));
            w.write_record(&rec).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| HistError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HistError::Io(e.to_string()))
    }

    pub fn from_csv(label: impl Into<String>, text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| HistError::Trace(e.to_string()))?.clone();
        let cells = check_header(&header.iter().collect::<Vec<_>>())?;
        let mut trace = Self::new(label);
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| HistError::Trace(format!("row {k}: {e}")))?;
            let f = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| HistError::Trace(format!("row {k}: column {} is not a number", FIXED_COLUMNS[i])))
            };
            let u = |i: usize| -> Result<usize> {
                rec[i]
                    .parse::<usize>()
                    .map_err(|_| HistError::Trace(format!("row {k}: column {i} is not a count")))
            };
            trace.rows.push(TraceRow {
                t: u(0)?,
                acc: f(1)?,
                loss: f(2)?,
                bytes_per_client: f(3)?,
                cum_latency_s: f(4)?,
                grad_norm_sq: f(5)?,
                weight_norm_sq: f(6)?,
                compute_s: f(7)?,
                comm_s: f(8)?,
                aircomp_mse: f(9)?,
                sizes: (0..cells).map(|j| u(FIXED_COLUMNS.len() + j)).collect::<Result<_>>()?,
            });
        }
        trace.validate()?;
        Ok(trace)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HistError::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let trace: Self = serde_json::from_str(text).map_err(|e| HistError::Trace(e.to_string()))?;
        trace.validate()?;
        Ok(trace)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv()?)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()? + "\n")?;
        Ok(())
    }

    /// Reads a trace from a `.csv` or `.json` file.
    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            Some("csv") => Self::from_csv(stem, &text),
            _ => Err(HistError::Trace(format!("{}: expected a .csv or .json trace", path.display()))),
        }
    }
}

/// Checks a CSV header and returns the number of size columns. Unknown,
/// missing or reordered columns are rejected.
pub fn check_header(header: &[&str]) -> Result<usize> {
    if header.len() < FIXED_COLUMNS.len() {
        return Err(HistError::Trace(format!("header has {} columns, expected at least {}", header.len(), FIXED_COLUMNS.len())));
    }
    for (got, want) in header.iter().zip(FIXED_COLUMNS) {
        if *got != want {
            return Err(HistError::Trace(format!("unknown column {got:?} where {want:?} was expected")));
        }
    }
    for (j, got) in header[FIXED_COLUMNS.len()..].iter().enumerate() {
        if *got != format!("size_{j}") {
            return Err(HistError::Trace(format!("unknown column {got:?}")));
        }
    }
    Ok(header.len() - FIXED_COLUMNS.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reached {
    pub round: usize,
    pub bytes_per_client: f64,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub reached: Option<Reached>,
}

/// First round at which each trace's accuracy reaches `target`, with the
/// cumulative per-client bytes and latency spent by then. Rows keep the
/// input order.
pub fn report(traces: &[TrainingTrace], target: f64) -> Vec<ReportRow> {
    traces
        .iter()
        .map(|tr| ReportRow {
            label: tr.label.clone(),
            reached: tr.rows.iter().find(|r| r.acc >= target).map(|r| Reached {
                round: r.t,
                bytes_per_client: r.bytes_per_client,
                latency_s: r.cum_latency_s,
            }),
        })
        .collect()
}

pub fn format_report(rows: &[ReportRow], target: f64) -> String {
    let mut out = format!("target accuracy {target}\nlabel\tround\tMB_per_client\tlatency_s\n");
    for r in rows {
        match &r.reached {
            Some(x) => {
                let _ = writeln!(out, "{}\t{}\t{}\t{}", r.label, x.round, x.bytes_per_client / 1e6, x.latency_s);
            }
            None => {
                let _ = writeln!(out, "{}\tnot reached\t-\t-", r.label);
            }
        }
    }
    out
}
