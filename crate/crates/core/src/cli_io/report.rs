//! Plot-ready CSV reports.
//!
//! | file | rows |
//! |---|---|
//! | `summary.csv` | one row: draws, fit/pred AUC (posterior-mean and per-draw), ESS min/median |
//! | `tau.csv` | `1/tau_h` per latent dimension |
//! | `trajectories.csv` | `mu(t)` and `beta_q(t)` ribbons |
//! | `ab.csv` | sender and receiver effects per node and bin |
//! | `pi.csv` | posterior-mean probability per ordered pair and bin |
//! | `reciprocity.csv` | lag-1 reciprocity ranking |
//! | `ess.csv` | ESS per monitored scalar |
//!
//! Intervals are the mean with a 95% HPD band.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluate::{Interval, Summary};
use crate::model::{cell_index, NetworkSeries};
use crate::sampler::Trace;

/// Labels used to annotate rows.
#[derive(Debug, Clone)]
pub struct Labels {
    pub nodes: Vec<String>,
    pub bins: Vec<String>,
    pub covariates: Vec<String>,
}

impl Labels {
    /// Labels from a trace, with bin labels falling back to the grid values.
    pub fn from_trace(trace: &Trace, bins: &[String]) -> Self {
        let bins = if bins.len() == trace.n {
            bins.to_vec()
        } else {
            trace.meta.times.iter().map(|t| fmt(*t)).collect()
        };
        Self {
            nodes: trace.meta.node_labels.clone(),
            bins,
            covariates: trace.meta.covariate_labels.clone(),
        }
    }
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else if x == x.trunc() && x.abs() < 1e15 {
        format!("{x:.0}")
    } else {
        format!("{x:.6}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_else(|| "NA".into())
}

struct Table {
    path: PathBuf,
    w: csv::Writer<std::fs::File>,
}

impl Table {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(header).map_err(|e| csv_err(&path, e))?;
        Ok(Self { path, w })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).map_err(|e| csv_err(&self.path, e))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::data(format!("{}: {other:?}", path.display())),
    }
}

fn interval_fields(iv: &Interval) -> [String; 3] {
    [fmt(iv.mean), fmt(iv.lo), fmt(iv.hi)]
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Writes every summary table into `dir`. `per_draw` holds the optional
/// per-draw AUC columns.
pub fn write_summary(
    dir: &Path,
    summary: &Summary,
    labels: &Labels,
    per_draw: Option<(f64, Option<f64>)>,
) -> Result<Vec<PathBuf>> {
    let (v, n) = (labels.nodes.len(), labels.bins.len());
    let mut out = Vec::new();

    let ess: Vec<f64> = summary.ess.iter().map(|(_, e)| *e).collect();
    let mut t = Table::create(
        dir.join("summary.csv"),
        &["draws", "fit_auc", "pred_auc", "fit_auc_per_draw", "pred_auc_per_draw", "ess_min", "ess_median"],
    )?;
    t.row([
        summary.draws.to_string(),
        opt(summary.fit_auc),
        opt(summary.pred_auc),
        opt(per_draw.map(|p| p.0)),
        opt(per_draw.and_then(|p| p.1)),
        opt(ess.iter().copied().reduce(f64::min)),
        opt(median(&ess)),
    ])?;
    out.push(t.finish()?);

    let mut t = Table::create(dir.join("tau.csv"), &["h", "tau_inv_mean", "tau_inv_lo", "tau_inv_hi"])?;
    for (h, iv) in summary.tau_inv.iter().enumerate() {
        let [m, lo, hi] = interval_fields(iv);
        t.row([(h + 1).to_string(), m, lo, hi])?;
    }
    out.push(t.finish()?);

    let mut t = Table::create(dir.join("trajectories.csv"), &["series", "t", "bin", "mean", "lo", "hi"])?;
    for (k, iv) in summary.mu.iter().enumerate() {
        let [m, lo, hi] = interval_fields(iv);
        t.row(["mu".to_string(), (k + 1).to_string(), labels.bins[k].clone(), m, lo, hi])?;
    }
    for (k, iv) in summary.beta.iter().enumerate() {
        let (q, tt) = (k / n, k % n);
        let name = labels.covariates.get(q).cloned().unwrap_or_else(|| format!("z{}", q + 1));
        let [m, lo, hi] = interval_fields(iv);
        t.row([format!("beta:{name}"), (tt + 1).to_string(), labels.bins[tt].clone(), m, lo, hi])?;
    }
    out.push(t.finish()?);

    let mut t = Table::create(
        dir.join("ab.csv"),
        &["node", "t", "bin", "a_mean", "a_lo", "a_hi", "b_mean", "b_lo", "b_hi"],
    )?;
    if !summary.a.is_empty() {
        for i in 0..v {
            for tt in 0..n {
                let k = i * n + tt;
                let [am, alo, ahi] = interval_fields(&summary.a[k]);
                let [bm, blo, bhi] = interval_fields(&summary.b[k]);
                t.row([
                    labels.nodes[i].clone(),
                    (tt + 1).to_string(),
                    labels.bins[tt].clone(),
                    am,
                    alo,
                    ahi,
                    bm,
                    blo,
                    bhi,
                ])?;
            }
        }
    }
    out.push(t.finish()?);

    let mut t = Table::create(dir.join("pi.csv"), &["source", "target", "t", "bin", "pi_mean"])?;
    for i in 0..v {
        for j in (0..v).filter(|&j| j != i) {
            for tt in 0..n {
                t.row([
                    labels.nodes[i].clone(),
                    labels.nodes[j].clone(),
                    (tt + 1).to_string(),
                    labels.bins[tt].clone(),
                    fmt(summary.pi_mean[cell_index(v, i, j, tt)]),
                ])?;
            }
        }
    }
    out.push(t.finish()?);

    let mut t = Table::create(dir.join("reciprocity.csv"), &["rank", "source", "target", "mean", "lo", "hi"])?;
    for (r, row) in summary.reciprocity.iter().enumerate() {
        let [m, lo, hi] = interval_fields(&row.summary);
        t.row([
            (r + 1).to_string(),
            labels.nodes[row.i].clone(),
            labels.nodes[row.j].clone(),
            m,
            lo,
            hi,
        ])?;
    }
    out.push(t.finish()?);

    let mut t = Table::create(dir.join("ess.csv"), &["quantity", "ess"])?;
    for (name, e) in &summary.ess {
        t.row([name.clone(), fmt(*e)])?;
    }
    out.push(t.finish()?);
    Ok(out)
}

/// Held-out cells with their posterior probability band and withheld value.
pub fn write_predictions(
    path: &Path,
    trace: &Trace,
    data_full: &NetworkSeries,
    hidden: &[bool],
    labels: &Labels,
) -> Result<PathBuf> {
    let v = trace.v;
    if !hidden.iter().any(|&h| h) {
        return Err(Error::domain("the trace has no held-out cells to predict"));
    }
    let mut t = Table::create(
        path.to_path_buf(),
        &["source", "target", "t", "bin", "pi_mean", "pi_lo", "pi_hi", "y"],
    )?;
    for tt in 0..trace.n {
        for i in 0..v {
            for j in 0..v {
                let c = cell_index(v, i, j, tt);
                if !hidden[c] {
                    continue;
                }
                let iv = Interval::from_draws(&trace.pi_series(i, j, tt))?;
                let [m, lo, hi] = interval_fields(&iv);
                let y = data_full.get(i, j, tt).map(|y| y.to_string()).unwrap_or_else(|| "NA".into());
                t.row([
                    labels.nodes[i].clone(),
                    labels.nodes[j].clone(),
                    (tt + 1).to_string(),
                    labels.bins[tt].clone(),
                    m,
                    lo,
                    hi,
                    y,
                ])?;
            }
        }
    }
    t.finish()
}
