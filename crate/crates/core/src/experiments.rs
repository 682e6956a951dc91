//! Named simulate → fit → score runs with checkable expectations, and
//! one-axis sensitivity grids over them.
//!
//! Metrics a run can report:
//! - `fit_auc`, `pred_auc`: posterior-mean scoring of the main fit.
//! - `tau_inv_<h>`: posterior mean of `1/tau_h`, `h` counted from 1.
//! - `tau_inv_lead_min`: smallest `1/tau_h` over `h <= H_true`.
//! - `tau_inv_tail_max`: largest over `h > H_true`.
//! - `tau_inv_far_max`: largest over `h > H_true + 1`.
//! - `shrinkage_gap`: `tau_inv_lead_min - tau_inv_far_max`.
//! - with a comparison variant `c`: `c_fit_auc`, `c_pred_auc`,
//!   `fit_auc_gap` and `pred_auc_gap` (main minus comparison).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cli_io::config::{Expectation, RunConfig};
use crate::error::{Error, Result};
use crate::evaluate::score_fit;
use crate::model::Variant;
use crate::sampler::{run_chain, HyperConfig, Trace};
use crate::simulate::{holdout, simulate, DgpConfig, HoldoutRule};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub dgp: DgpConfig,
    pub hyper: HyperConfig,
    pub holdout: HoldoutRule,
    pub compare_variant: Option<Variant>,
    pub expect: Vec<Expectation>,
}

impl ExperimentSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            name: cfg.name.clone(),
            dgp: cfg.dgp.clone(),
            hyper: cfg.hyper.clone(),
            holdout: cfg.holdout,
            compare_variant: cfg.compare_variant,
            expect: cfg.expect.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.hyper.validate()?;
        for e in &self.expect {
            if !is_known_metric(&e.metric, self) {
                return Err(Error::config(format!(
                    "experiment `{}` expects unknown metric `{}`",
                    self.name, e.metric
                )));
            }
        }
        Ok(())
    }
}

fn is_known_metric(m: &str, spec: &ExperimentSpec) -> bool {
    let base = [
        "fit_auc",
        "pred_auc",
        "tau_inv_lead_min",
        "tau_inv_tail_max",
        "tau_inv_far_max",
        "shrinkage_gap",
    ];
    if base.contains(&m) {
        return true;
    }
    if let Some(h) = m.strip_prefix("tau_inv_").and_then(|h| h.parse::<usize>().ok()) {
        return (1..=spec.hyper.h_star).contains(&h);
    }
    match spec.compare_variant {
        Some(c) => {
            let p = format!("{}_", c.as_str());
            m == "fit_auc_gap"
                || m == "pred_auc_gap"
                || m.strip_prefix(&p).is_some_and(|r| r == "fit_auc" || r == "pred_auc")
        }
        None => false,
    }
}

/// Measured value against one expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub expectation: Expectation,
    pub measured: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub name: String,
    /// Metrics in the order they were computed.
    pub metrics: Vec<(String, f64)>,
    pub checks: Vec<Check>,
    /// The main fit, kept for further summaries.
    pub trace: Trace,
}

impl ExperimentReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "experiment {}", self.name)?;
        for (k, v) in &self.metrics {
            writeln!(f, "  {k:<20} {v:.4}")?;
        }
        for c in &self.checks {
            let m = c.measured.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into());
            writeln!(
                f,
                "  {} {:<20} measured {m} expected {}",
                if c.pass { "PASS" } else { "FAIL" },
                c.expectation.metric,
                c.expectation.bound
            )?;
        }
        Ok(())
    }
}

/// Prefixes an error with the experiment it came from, keeping its kind.
fn tagged(name: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("experiment `{name}`: {m}")),
        Error::Data(m) => Error::Data(format!("experiment `{name}`: {m}")),
        Error::Domain(m) => Error::Domain(format!("experiment `{name}`: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("experiment `{name}`: {m}")),
        Error::Step { step, iteration, source } => Error::Step {
            step,
            iteration,
            source: Box::new(tagged(name, *source)),
        },
        other => other,
    }
}

fn shrinkage_metrics(tau_inv: &[f64], h_true: usize) -> Vec<(String, f64)> {
    let max_over = |from: usize| tau_inv.iter().skip(from).copied().reduce(f64::max);
    let mut out = Vec::new();
    let lead = tau_inv.iter().take(h_true).copied().reduce(f64::min);
    if let Some(l) = lead {
        out.push(("tau_inv_lead_min".to_string(), l));
    }
    if let Some(t) = max_over(h_true) {
        out.push(("tau_inv_tail_max".to_string(), t));
    }
    if let Some(far) = max_over(h_true + 1) {
        out.push(("tau_inv_far_max".to_string(), far));
        if let Some(l) = lead {
            out.push(("shrinkage_gap".to_string(), l - far));
        }
    }
    out
}

/// Simulates, masks, fits and scores; then checks every expectation.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let name = spec.name.as_str();
    spec.validate().map_err(|e| tagged(name, e))?;
    let (data, cov, _truth) = simulate(&spec.dgp).map_err(|e| tagged(name, e))?;
    let held = holdout(&data, spec.holdout).map_err(|e| tagged(name, e))?;

    let main = run_chain(&held.data, &cov, &spec.hyper).map_err(|e| tagged(name, e))?.trace;
    let (fit, pred) = score_fit(&main, &data, &held.hidden).map_err(|e| tagged(name, e))?;
    let mut metrics = vec![("fit_auc".to_string(), fit)];
    if let Some(p) = pred {
        metrics.push(("pred_auc".to_string(), p));
    }
    if spec.hyper.variant.has_network_terms() {
        let tau_inv = main.posterior_mean_tau_inv();
        for (h, x) in tau_inv.iter().enumerate() {
            metrics.push((format!("tau_inv_{}", h + 1), *x));
        }
        metrics.extend(shrinkage_metrics(&tau_inv, spec.dgp.h_true));
    }

    if let Some(c) = spec.compare_variant {
        let hyper = HyperConfig {
            variant: c,
            ..spec.hyper.clone()
        };
        let other = run_chain(&held.data, &cov, &hyper).map_err(|e| tagged(name, e))?.trace;
        let (cf, cp) = score_fit(&other, &data, &held.hidden).map_err(|e| tagged(name, e))?;
        metrics.push((format!("{c}_fit_auc"), cf));
        metrics.push(("fit_auc_gap".to_string(), fit - cf));
        if let (Some(p), Some(cp)) = (pred, cp) {
            metrics.push((format!("{c}_pred_auc"), cp));
            metrics.push(("pred_auc_gap".to_string(), p - cp));
        }
    }

    let checks = spec
        .expect
        .iter()
        .map(|e| {
            let measured = metrics.iter().find(|(k, _)| *k == e.metric).map(|(_, v)| *v);
            Check {
                expectation: e.clone(),
                measured,
                pass: measured.is_some_and(|x| e.bound.holds(x)),
            }
        })
        .collect();
    Ok(ExperimentReport {
        name: spec.name.clone(),
        metrics,
        checks,
        trace: main,
    })
}

/// Parameter varied by a sensitivity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAxis {
    HStar(Vec<usize>),
    /// Fitted `rho_ab = rho_x`; the generating correlation stays put.
    Rho(Vec<f64>),
    /// Fitted inverse length scale for every prior.
    K(Vec<f64>),
    /// Generated `(V, N)`.
    Size(Vec<(usize, usize)>),
}

impl GridAxis {
    pub fn name(&self) -> &'static str {
        match self {
            GridAxis::HStar(_) => "h_star",
            GridAxis::Rho(_) => "rho",
            GridAxis::K(_) => "k",
            GridAxis::Size(_) => "size",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GridAxis::HStar(v) => v.len(),
            GridAxis::Rho(v) | GridAxis::K(v) => v.len(),
            GridAxis::Size(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, k: usize) -> String {
        match self {
            GridAxis::HStar(v) => v[k].to_string(),
            GridAxis::Rho(v) | GridAxis::K(v) => v[k].to_string(),
            GridAxis::Size(v) => format!("{}x{}", v[k].0, v[k].1),
        }
    }

    fn apply(&self, k: usize, spec: &mut ExperimentSpec) {
        match self {
            GridAxis::HStar(v) => spec.hyper.h_star = v[k],
            GridAxis::Rho(v) => {
                spec.hyper.rho_ab = v[k];
                spec.hyper.rho_x = v[k];
            }
            GridAxis::K(v) => {
                let h = &mut spec.hyper;
                (h.k_mu, h.k_beta, h.k_ab, h.k_x) = (v[k], v[k], v[k], v[k]);
            }
            GridAxis::Size(v) => (spec.dgp.v, spec.dgp.n) = v[k],
        }
        spec.name = format!("{}[{}={}]", spec.name, self.name(), self.label(k));
    }
}

impl FromStr for GridAxis {
    type Err = Error;

    /// `h_star=2,5,10`, `rho=0.2,0.5`, `k=0.05,0.1`, `size=30x20,40x20`.
    fn from_str(s: &str) -> Result<Self> {
        let (axis, list) = s
            .split_once('=')
            .ok_or_else(|| Error::config(format!("grid `{s}` must look like <axis>=<v1>,<v2>,...")))?;
        let items: Vec<&str> = list.split(',').map(str::trim).filter(|x| !x.is_empty()).collect();
        if items.is_empty() {
            return Err(Error::config(format!("grid `{s}` lists no values")));
        }
        let bad = |x: &str| Error::config(format!("bad {axis} grid value `{x}`"));
        let floats = || -> Result<Vec<f64>> {
            items
                .iter()
                .map(|x| x.parse::<f64>().ok().filter(|f| f.is_finite()).ok_or_else(|| bad(x)))
                .collect()
        };
        match axis.trim() {
            "h_star" => Ok(GridAxis::HStar(
                items.iter().map(|x| x.parse().map_err(|_| bad(x))).collect::<Result<_>>()?,
            )),
            "rho" => Ok(GridAxis::Rho(floats()?)),
            "k" => Ok(GridAxis::K(floats()?)),
            "size" => Ok(GridAxis::Size(
                items
                    .iter()
                    .map(|x| {
                        let (v, n) = x.split_once('x').ok_or_else(|| bad(x))?;
                        Ok((v.parse().map_err(|_| bad(x))?, n.parse().map_err(|_| bad(x))?))
                    })
                    .collect::<Result<_>>()?,
            )),
            other => Err(Error::config(format!(
                "unknown grid axis `{other}` (expected h_star, rho, k or size)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub value: String,
    pub fit_auc: Option<f64>,
    pub pred_auc: Option<f64>,
    /// Set when the cell's run failed; the grid carries on.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    pub axis: &'static str,
    pub rows: Vec<GridRow>,
}

impl fmt::Display for GridTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>8} {:>8}", self.axis, "fit_auc", "pred_auc")?;
        let cell = |x: Option<f64>| x.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into());
        for r in &self.rows {
            write!(f, "{:<12} {:>8} {:>8}", r.value, cell(r.fit_auc), cell(r.pred_auc))?;
            if let Some(e) = &r.error {
                write!(f, "  failed: {e}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// One run per axis value, cells in parallel up to the available cores.
/// Expectations of the base spec are not checked per cell.
pub fn sensitivity_grid(base: &ExperimentSpec, axis: &GridAxis) -> Result<GridTable> {
    if axis.is_empty() {
        return Err(Error::config("sensitivity grid has no values"));
    }
    let specs: Vec<ExperimentSpec> = (0..axis.len())
        .map(|k| {
            let mut s = base.clone();
            s.expect.clear();
            axis.apply(k, &mut s);
            s
        })
        .collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(specs.len());
    let mut results: Vec<Option<Result<ExperimentReport>>> = (0..specs.len()).map(|_| None).collect();
    for chunk_start in (0..specs.len()).step_by(workers) {
        let chunk = &specs[chunk_start..(chunk_start + workers).min(specs.len())];
        let done: Vec<Result<ExperimentReport>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|sp| s.spawn(move || run_experiment(sp))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::numerical("grid cell panicked"))))
                .collect()
        });
        for (k, r) in done.into_iter().enumerate() {
            results[chunk_start + k] = Some(r);
        }
    }
    let rows = results
        .into_iter()
        .enumerate()
        .map(|(k, r)| match r.expect("every cell ran") {
            Ok(rep) => GridRow {
                value: axis.label(k),
                fit_auc: rep.metric("fit_auc"),
                pred_auc: rep.metric("pred_auc"),
                error: None,
            },
            Err(e) => GridRow {
                value: axis.label(k),
                fit_auc: None,
                pred_auc: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(GridTable { axis: axis.name(), rows })
}
