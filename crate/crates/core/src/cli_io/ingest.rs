//! Event-log and node-covariate ingestion.
//!
//! `events.csv` has the header `source,target,date` with ISO dates;
//! `covariates.csv` has `node,bin,value`, where `bin` is either a bin label
//! of the window (`2005Q1`, `2005-03`, `2005`) or a 1-based bin index.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::TimeGrid;
use crate::model::{cell_index, CovariateSet, NetworkSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinWidth {
    Month,
    Quarter,
    Year,
}

impl FromStr for BinWidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "month" => Ok(BinWidth::Month),
            "quarter" => Ok(BinWidth::Quarter),
            "year" => Ok(BinWidth::Year),
            other => Err(Error::config(format!(
                "unknown bin width `{other}` (expected month, quarter or year)"
            ))),
        }
    }
}

impl std::fmt::Display for BinWidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BinWidth::Month => "month",
            BinWidth::Quarter => "quarter",
            BinWidth::Year => "year",
        })
    }
}

impl BinWidth {
    /// Absolute ordinal of the bin holding `d`.
    fn ordinal(self, d: NaiveDate) -> i64 {
        let (y, m) = (d.year() as i64, d.month0() as i64);
        match self {
            BinWidth::Month => y * 12 + m,
            BinWidth::Quarter => y * 4 + m / 3,
            BinWidth::Year => y,
        }
    }

    fn label(self, ordinal: i64) -> String {
        match self {
            BinWidth::Month => format!("{}-{:02}", ordinal.div_euclid(12), ordinal.rem_euclid(12) + 1),
            BinWidth::Quarter => format!("{}Q{}", ordinal.div_euclid(4), ordinal.rem_euclid(4) + 1),
            BinWidth::Year => ordinal.to_string(),
        }
    }
}

/// Observation window `[start, end)` cut into bins, with the node whitelist.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSpec {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub bin: BinWidth,
    pub nodes: Vec<String>,
}

impl WindowSpec {
    pub fn new(start: NaiveDate, end: NaiveDate, bin: BinWidth, nodes: Vec<String>) -> Result<Self> {
        if start >= end {
            return Err(Error::config(format!("window start {start} must precede end {end}")));
        }
        if nodes.len() < 2 {
            return Err(Error::config(format!("node whitelist needs at least 2 entries, got {}", nodes.len())));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = nodes.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::config(format!("node `{dup}` listed twice in the whitelist")));
        }
        Ok(Self { start, end, bin, nodes })
    }

    fn first_ordinal(&self) -> i64 {
        self.bin.ordinal(self.start)
    }

    /// Number of bins touched by the window.
    pub fn num_bins(&self) -> usize {
        let last = self.end.pred_opt().unwrap_or(self.end);
        (self.bin.ordinal(last) - self.first_ordinal() + 1) as usize
    }

    pub fn bin_labels(&self) -> Vec<String> {
        (0..self.num_bins())
            .map(|k| self.bin.label(self.first_ordinal() + k as i64))
            .collect()
    }

    /// Bin index of a date, or `None` outside the window.
    pub fn bin_of(&self, d: NaiveDate) -> Option<usize> {
        (d >= self.start && d < self.end).then(|| (self.bin.ordinal(d) - self.first_ordinal()) as usize)
    }
}

/// Row counts from an ingestion pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub kept: usize,
    pub self_loops: usize,
    pub outside_whitelist: usize,
    pub outside_window: usize,
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if found != header {
        return Err(Error::data(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            header.join(","),
            found.join(",")
        )));
    }
    Ok(rdr)
}

fn record_line(rec: &csv::StringRecord, fallback: usize) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(fallback as u64)
}

/// Builds the binary series: a cell is 1 iff at least one retained event
/// falls in its bin. Every cell is observed.
pub fn ingest_events(path: &Path, spec: &WindowSpec) -> Result<(NetworkSeries, IngestReport)> {
    let index: HashMap<&str, usize> = spec.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let v = spec.nodes.len();
    let n = spec.num_bins();
    let mut y = vec![0u8; v * v * n];
    let mut report = IngestReport::default();
    let mut rdr = open_csv(path, &["source", "target", "date"])?;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = record_line(&rec, k + 2);
        report.rows += 1;
        if rec.len() != 3 {
            return Err(Error::data(format!("{} line {line}: expected 3 fields", path.display())));
        }
        let date = NaiveDate::parse_from_str(&rec[2], "%Y-%m-%d").map_err(|_| {
            Error::data(format!("{} line {line}: unparseable date `{}`", path.display(), &rec[2]))
        })?;
        if rec[0].is_empty() || rec[1].is_empty() {
            return Err(Error::data(format!("{} line {line}: empty node label", path.display())));
        }
        if rec[0] == rec[1] {
            report.self_loops += 1;
            continue;
        }
        let (Some(&i), Some(&j)) = (index.get(&rec[0]), index.get(&rec[1])) else {
            report.outside_whitelist += 1;
            continue;
        };
        let Some(t) = spec.bin_of(date) else {
            report.outside_window += 1;
            continue;
        };
        y[cell_index(v, i, j, t)] = 1;
        report.kept += 1;
    }
    if report.kept == 0 {
        return Err(Error::domain(format!(
            "{}: no events fall inside the window and whitelist ({} rows read)",
            path.display(),
            report.rows
        )));
    }
    let data = NetworkSeries::new(spec.nodes.clone(), TimeGrid::integers(n)?, y, vec![true; v * v * n])?;
    Ok((data, report))
}

/// Builds the two lagged log covariates `log x_i(t - lag)` and
/// `log x_j(t - lag)` on the bins `lag..N`.
pub fn ingest_covariates(path: &Path, spec: &WindowSpec, lag: usize) -> Result<CovariateSet> {
    let v = spec.nodes.len();
    let n = spec.num_bins();
    if lag >= n {
        return Err(Error::config(format!("lag {lag} leaves no usable bins out of {n}")));
    }
    let labels = spec.bin_labels();
    let label_index: HashMap<&str, usize> = labels.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect();
    let node_index: HashMap<&str, usize> = spec.nodes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut values: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rdr = open_csv(path, &["node", "bin", "value"])?;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = record_line(&rec, k + 2);
        let Some(&i) = node_index.get(&rec[0]) else { continue };
        let bin = match label_index.get(&rec[1]) {
            Some(&b) => b,
            None => match rec[1].parse::<usize>() {
                Ok(b) if (1..=n).contains(&b) => b - 1,
                Ok(_) => continue,
                Err(_) => {
                    return Err(Error::data(format!(
                        "{} line {line}: bin `{}` is neither a window label nor an index",
                        path.display(),
                        &rec[1]
                    )))
                }
            },
        };
        let x: f64 = rec[2].parse().map_err(|_| {
            Error::data(format!("{} line {line}: unparseable value `{}`", path.display(), &rec[2]))
        })?;
        if values.insert((i, bin), x).is_some() {
            return Err(Error::data(format!(
                "{} line {line}: second value for node `{}` in bin {}",
                path.display(),
                &rec[0],
                labels[bin]
            )));
        }
    }
    let usable = n - lag;
    let mut logs = vec![0.0; v * usable];
    for i in 0..v {
        for t in 0..usable {
            let src = t;
            let x = *values.get(&(i, src)).ok_or_else(|| {
                Error::data(format!("missing covariate for node `{}` in bin {}", spec.nodes[i], labels[src]))
            })?;
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::data(format!(
                    "covariate for node `{}` in bin {} is {x}; its log is undefined",
                    spec.nodes[i], labels[src]
                )));
            }
            logs[i * usable + t] = x.ln();
        }
    }
    CovariateSet::from_fn(v, usable, vec!["log_source".into(), "log_target".into()], |i, j, t, q| {
        if i == j {
            0.0
        } else if q == 0 {
            logs[i * usable + t]
        } else {
            logs[j * usable + t]
        }
    })
}
