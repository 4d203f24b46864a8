use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::edge::TokenTrace;

use super::HarnessError;

pub const BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitHistogram {
    pub exit_index: usize,
    /// Equal-width bins over [0, 1]; a confidence of exactly 1 lands in the last bin.
    pub counts: Vec<u64>,
    pub evaluated: u64,
    pub p25: Option<f64>,
    pub p50: Option<f64>,
    pub p75: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceHistogram {
    pub exits: Vec<ExitHistogram>,
}

/// Linear interpolation between closest ranks; `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn bin_of(conf: f64) -> usize {
    ((conf * BINS as f64).floor() as usize).min(BINS - 1)
}

/// Per-exit histograms of every confidence evaluated in the traces.
pub fn confidence_histogram<'a>(traces: impl IntoIterator<Item = &'a TokenTrace>) -> Result<ConfidenceHistogram, HarnessError> {
    let mut per_exit: Vec<Vec<f64>> = Vec::new();
    for t in traces {
        for (i, &c) in t.confidences.iter().enumerate() {
            if per_exit.len() <= i {
                per_exit.resize_with(i + 1, Vec::new);
            }
            per_exit[i].push(c);
        }
    }
    if per_exit.is_empty() {
        return Err(HarnessError::EmptyTrace);
    }
    let exits = per_exit
        .into_iter()
        .enumerate()
        .map(|(exit_index, mut values)| {
            let mut counts = vec![0u64; BINS];
            values.iter().for_each(|&c| counts[bin_of(c)] += 1);
            values.sort_by(f64::total_cmp);
            let q = |p| (!values.is_empty()).then(|| quantile(&values, p));
            ExitHistogram { exit_index, counts, evaluated: values.len() as u64, p25: q(0.25), p50: q(0.5), p75: q(0.75) }
        })
        .collect();
    Ok(ConfidenceHistogram { exits })
}

impl ConfidenceHistogram {
    /// One row per (exit, bin); quantiles repeat on every row of their exit.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["exit", "bin_lower", "bin_upper", "count", "evaluated", "p25", "p50", "p75"])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.exits {
            for (b, c) in e.counts.iter().enumerate() {
                out.write_record([
                    e.exit_index.to_string(),
                    (b as f64 / BINS as f64).to_string(),
                    ((b + 1) as f64 / BINS as f64).to_string(),
                    c.to_string(),
                    e.evaluated.to_string(),
                    fmt(e.p25),
                    fmt(e.p50),
                    fmt(e.p75),
                ])?;
            }
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
