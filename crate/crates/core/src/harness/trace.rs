use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::edge::RunOutput;

use super::HarnessError;

/// One line of a trace file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub prompt_index: usize,
    pub prompt: Vec<u32>,
    pub output: RunOutput,
}

pub fn write_trace<W: Write>(mut w: W, record: &TraceRecord) -> Result<(), HarnessError> {
    serde_json::to_writer(&mut w, record)?;
    w.write_all(b"\n").map_err(serde_json::Error::io)?;
    Ok(())
}

/// Reads JSON lines, skipping blank ones.
pub fn read_traces<R: BufRead>(r: R) -> Result<Vec<TraceRecord>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(serde_json::Error::io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Invalid(format!("trace line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
