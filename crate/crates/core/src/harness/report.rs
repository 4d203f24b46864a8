use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, MetricsReport};

pub const SCHEMA_VERSION: u32 = 1;

const SCHEMA: &str = include_str!("../../schema/report.schema.json");

/// One CSV line. Column order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub theta: f64,
    pub total_s_mean: f64,
    pub total_s_std: f64,
    pub cloud_s: f64,
    pub edge_s: f64,
    pub comm_s: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub cloud_req_rate: f64,
    pub disagreement_rate: f64,
}

impl From<&MetricsReport> for ReportRow {
    fn from(m: &MetricsReport) -> Self {
        ReportRow {
            strategy: m.strategy.as_str().to_string(),
            theta: m.theta,
            total_s_mean: m.total_s.mean,
            total_s_std: m.total_s.std,
            cloud_s: m.cloud_s.mean,
            edge_s: m.edge_s.mean,
            comm_s: m.comm_s.mean,
            bytes_up: m.bytes_up,
            bytes_down: m.bytes_down,
            cloud_req_rate: m.cloud_req_rate,
            disagreement_rate: m.disagreement_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub reports: Vec<MetricsReport>,
}

impl ReportFile {
    pub fn new(reports: Vec<MetricsReport>) -> Self {
        ReportFile { schema_version: SCHEMA_VERSION, reports }
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.reports.iter().map(ReportRow::from).collect()
    }

    /// Writes CSV for a `.csv` path and JSON otherwise.
    pub fn export(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut w = BufWriter::new(file);
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            write_csv(&mut w, &self.rows())?;
        } else {
            write_json(&mut w, self)?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))
    }
}

/// The committed JSON schema for [`ReportFile`].
pub fn report_schema() -> serde_json::Value {
    serde_json::from_str(SCHEMA).expect("committed schema is valid JSON")
}

pub fn write_csv<W: Write>(w: W, rows: &[ReportRow]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<ReportRow>, HarnessError> {
    let mut input = csv::Reader::from_reader(r);
    let header: Vec<String> = input.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(HarnessError::Invalid(format!("unexpected CSV header {header:?}")));
    }
    Ok(input.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_json<W: Write>(w: W, file: &ReportFile) -> Result<(), HarnessError> {
    serde_json::to_writer_pretty(w, file)?;
    Ok(())
}

pub fn read_json<R: Read>(r: R) -> Result<ReportFile, HarnessError> {
    let file: ReportFile = serde_json::from_reader(r)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(HarnessError::Invalid(format!("report schema version {} is not {SCHEMA_VERSION}", file.schema_version)));
    }
    Ok(file)
}

pub const CSV_COLUMNS: [&str; 11] = [
    "strategy",
    "theta",
    "total_s_mean",
    "total_s_std",
    "cloud_s",
    "edge_s",
    "comm_s",
    "bytes_up",
    "bytes_down",
    "cloud_req_rate",
    "disagreement_rate",
];
