//! Columnar binary container with a JSON sidecar.
//!
//! `<stem>.bin` layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "DLSNCOL1"
//! ncols   u32
//! per column:
//!   name_len u16, name (UTF-8)
//!   dtype    u8    0 = f64, 1 = u8
//!   len      u64   element count
//!   data     len * size_of(dtype) bytes
//! ```
//!
//! `<stem>.json` holds labels, grid, configuration echo and `format_version`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::TimeGrid;
use crate::model::{CovariateSet, NetworkSeries, Variant};
use crate::sampler::{Trace, TraceMeta};
use crate::simulate::DgpConfig;

pub const MAGIC: &[u8; 8] = b"DLSNCOL1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

/// Ordered named columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Columns(pub BTreeMap<String, Column>);

impl Columns {
    pub fn put_f64(&mut self, name: &str, v: Vec<f64>) {
        self.0.insert(name.to_string(), Column::F64(v));
    }

    pub fn put_u8(&mut self, name: &str, v: Vec<u8>) {
        self.0.insert(name.to_string(), Column::U8(v));
    }

    pub fn f64(&self, name: &str) -> Result<Vec<f64>> {
        match self.0.get(name) {
            Some(Column::F64(v)) => Ok(v.clone()),
            Some(_) => Err(Error::data(format!("column `{name}` is not f64"))),
            None => Err(Error::data(format!("missing column `{name}`"))),
        }
    }

    pub fn u8(&self, name: &str) -> Result<Vec<u8>> {
        match self.0.get(name) {
            Some(Column::U8(v)) => Ok(v.clone()),
            Some(_) => Err(Error::data(format!("column `{name}` is not u8"))),
            None => Err(Error::data(format!("missing column `{name}`"))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.0.len() as u32).to_le_bytes());
        for (name, col) in &self.0 {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match col {
                Column::F64(v) => {
                    out.push(0);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Column::U8(v) => {
                    out.push(1);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    out.extend_from_slice(v);
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(Error::data("column container is truncated"));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(Error::data("not a column container (bad magic)"));
        }
        let ncols = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let mut cols = BTreeMap::new();
        for _ in 0..ncols {
            let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(len)?.to_vec())
                .map_err(|_| Error::data("column name is not UTF-8"))?;
            let dtype = take(1)?[0];
            let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let col = match dtype {
                0 => {
                    let raw = take(count.checked_mul(8).ok_or_else(|| Error::data("column too large"))?)?;
                    Column::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
                }
                1 => Column::U8(take(count)?.to_vec()),
                other => return Err(Error::data(format!("column `{name}` has unknown dtype {other}"))),
            };
            cols.insert(name, col);
        }
        Ok(Self(cols))
    }
}

pub fn bin_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

pub fn json_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

/// Writes `<stem>.bin` and `<stem>.json`; returns both paths.
pub fn write_artifact<M: Serialize>(stem: &Path, cols: &Columns, meta: &M) -> Result<Vec<PathBuf>> {
    let bin = bin_path(stem);
    let json = json_path(stem);
    let mut f = fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
    f.write_all(&cols.encode()).map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::data(e.to_string()))?;
    fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
    Ok(vec![bin, json])
}

pub fn read_artifact<M: DeserializeOwned>(stem: &Path) -> Result<(Columns, M)> {
    let bin = bin_path(stem);
    let json = json_path(stem);
    let mut bytes = Vec::new();
    fs::File::open(&bin)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&bin, e))?;
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let meta: M = serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", json.display())))?;
    Ok((Columns::decode(&bytes)?, meta))
}

fn check_kind(path: &Path, found: &str, want: &str, version: u32) -> Result<()> {
    if found != want {
        return Err(Error::data(format!("{} holds a `{found}` artifact, expected `{want}`", path.display())));
    }
    if version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "{} has format version {version}, this build reads {FORMAT_VERSION}",
            path.display()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub kind: String,
    pub format_version: u32,
    pub node_labels: Vec<String>,
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bin_labels: Vec<String>,
}

pub fn write_series(stem: &Path, data: &NetworkSeries, bin_labels: &[String]) -> Result<Vec<PathBuf>> {
    let mut cols = Columns::default();
    cols.put_u8("y", data.raw_values().to_vec());
    cols.put_u8("observed", data.mask().iter().map(|&o| o as u8).collect());
    let meta = SeriesMeta {
        kind: "network".into(),
        format_version: FORMAT_VERSION,
        node_labels: data.node_labels().to_vec(),
        times: data.grid().times().to_vec(),
        bin_labels: bin_labels.to_vec(),
    };
    write_artifact(stem, &cols, &meta)
}

pub fn read_series(stem: &Path) -> Result<(NetworkSeries, Vec<String>)> {
    let (cols, meta): (Columns, SeriesMeta) = read_artifact(stem)?;
    check_kind(stem, &meta.kind, "network", meta.format_version)?;
    let observed = cols.u8("observed")?.into_iter().map(|o| o != 0).collect();
    let data = NetworkSeries::new(meta.node_labels, TimeGrid::new(meta.times)?, cols.u8("y")?, observed)?;
    Ok((data, meta.bin_labels))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateMeta {
    pub kind: String,
    pub format_version: u32,
    pub v: usize,
    pub n: usize,
    pub labels: Vec<String>,
}

pub fn write_covariates(stem: &Path, cov: &CovariateSet) -> Result<Vec<PathBuf>> {
    let mut cols = Columns::default();
    cols.put_f64("z", cov.values().to_vec());
    let meta = CovariateMeta {
        kind: "covariates".into(),
        format_version: FORMAT_VERSION,
        v: cov.num_nodes(),
        n: cov.num_times(),
        labels: cov.labels().to_vec(),
    };
    write_artifact(stem, &cols, &meta)
}

pub fn read_covariates(stem: &Path) -> Result<CovariateSet> {
    let (cols, meta): (Columns, CovariateMeta) = read_artifact(stem)?;
    check_kind(stem, &meta.kind, "covariates", meta.format_version)?;
    if meta.labels.is_empty() {
        return Ok(CovariateSet::empty(meta.v, meta.n));
    }
    CovariateSet::new(meta.v, meta.n, meta.labels, cols.f64("z")?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthMeta {
    pub kind: String,
    pub format_version: u32,
    pub dgp: DgpConfig,
}

pub fn write_truth(stem: &Path, pi: &[f64], predictor: &[f64], dgp: &DgpConfig) -> Result<Vec<PathBuf>> {
    let mut cols = Columns::default();
    cols.put_f64("pi", pi.to_vec());
    cols.put_f64("predictor", predictor.to_vec());
    let meta = TruthMeta {
        kind: "truth".into(),
        format_version: FORMAT_VERSION,
        dgp: dgp.clone(),
    };
    write_artifact(stem, &cols, &meta)
}

pub fn read_truth(stem: &Path) -> Result<(Vec<f64>, DgpConfig)> {
    let (cols, meta): (Columns, TruthMeta) = read_artifact(stem)?;
    check_kind(stem, &meta.kind, "truth", meta.format_version)?;
    Ok((cols.f64("pi")?, meta.dgp))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceFileMeta {
    pub kind: String,
    pub format_version: u32,
    pub variant: Variant,
    pub v: usize,
    pub n: usize,
    pub p: usize,
    pub h: usize,
    pub draws: usize,
    pub holdout: String,
    pub meta: TraceMeta,
}

/// A trace on disk together with the cells its fit withheld.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTrace {
    pub trace: Trace,
    pub hidden: Vec<bool>,
    pub holdout: String,
}

pub fn write_trace(stem: &Path, stored: &StoredTrace) -> Result<Vec<PathBuf>> {
    let t = &stored.trace;
    let mut cols = Columns::default();
    cols.put_f64("mu", t.mu.clone());
    cols.put_f64("beta", t.beta.clone());
    cols.put_f64("a", t.a.clone());
    cols.put_f64("b", t.b.clone());
    cols.put_f64("xs", t.xs.clone());
    cols.put_f64("xr", t.xr.clone());
    cols.put_f64("tau", t.tau.clone());
    cols.put_f64("sigma2_eps", t.sigma2_eps.clone());
    cols.put_f64("predictor", t.predictor.clone());
    cols.put_f64("log_likelihood", t.log_likelihood.clone());
    cols.put_u8("hidden", stored.hidden.iter().map(|&h| h as u8).collect());
    let meta = TraceFileMeta {
        kind: "trace".into(),
        format_version: FORMAT_VERSION,
        variant: t.variant,
        v: t.v,
        n: t.n,
        p: t.p,
        h: t.h,
        draws: t.draws,
        holdout: stored.holdout.clone(),
        meta: t.meta.clone(),
    };
    write_artifact(stem, &cols, &meta)
}

pub fn read_trace(stem: &Path) -> Result<StoredTrace> {
    let (cols, m): (Columns, TraceFileMeta) = read_artifact(stem)?;
    check_kind(stem, &m.kind, "trace", m.format_version)?;
    let trace = Trace {
        variant: m.variant,
        v: m.v,
        n: m.n,
        p: m.p,
        h: m.h,
        draws: m.draws,
        mu: cols.f64("mu")?,
        beta: cols.f64("beta")?,
        a: cols.f64("a")?,
        b: cols.f64("b")?,
        xs: cols.f64("xs")?,
        xr: cols.f64("xr")?,
        tau: cols.f64("tau")?,
        sigma2_eps: cols.f64("sigma2_eps")?,
        predictor: cols.f64("predictor")?,
        log_likelihood: cols.f64("log_likelihood")?,
        meta: m.meta,
    };
    if trace.predictor.len() != trace.draws * trace.cells() || trace.mu.len() != trace.draws * trace.n {
        return Err(Error::data(format!("{} has inconsistent column lengths", stem.display())));
    }
    Ok(StoredTrace {
        trace,
        hidden: cols.u8("hidden")?.into_iter().map(|h| h != 0).collect(),
        holdout: m.holdout,
    })
}
