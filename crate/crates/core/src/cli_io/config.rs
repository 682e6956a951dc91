//! Flat `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, keys may appear once.
//! Unset keys keep the defaults of [`RunConfig::default`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;

use crate::cli_io::ingest::{BinWidth, WindowSpec};
use crate::error::{Error, Result};
use crate::model::Variant;
use crate::sampler::HyperConfig;
use crate::simulate::{DgpConfig, DgpVariant, HoldoutRule};

/// Comparison used by an `expect.*` entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtLeast(f64),
    AtMost(f64),
    Within { target: f64, tol: f64 },
}

impl Bound {
    pub fn holds(&self, x: f64) -> bool {
        match *self {
            Bound::AtLeast(b) => x >= b,
            Bound::AtMost(b) => x <= b,
            Bound::Within { target, tol } => (x - target).abs() <= tol,
        }
    }
}

impl FromStr for Bound {
    type Err = Error;

    /// `>= 0.85`, `<= 0.3`, or `0.9254 +- 0.05`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |x: &str| -> Result<f64> {
            x.trim()
                .parse()
                .map_err(|_| Error::config(format!("bad number `{}` in expectation `{s}`", x.trim())))
        };
        if let Some(rest) = s.strip_prefix(">=") {
            Ok(Bound::AtLeast(num(rest)?))
        } else if let Some(rest) = s.strip_prefix("<=") {
            Ok(Bound::AtMost(num(rest)?))
        } else if let Some((a, b)) = s.split_once("+-") {
            Ok(Bound::Within {
                target: num(a)?,
                tol: num(b)?,
            })
        } else {
            Err(Error::config(format!(
                "expectation `{s}` must look like `>= x`, `<= x` or `x +- tol`"
            )))
        }
    }
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bound::AtLeast(b) => write!(f, ">= {b}"),
            Bound::AtMost(b) => write!(f, "<= {b}"),
            Bound::Within { target, tol } => write!(f, "{target} +- {tol}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expectation {
    pub metric: String,
    pub bound: Bound,
}

/// Everything a command can be configured with.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub hyper: HyperConfig,
    /// One chain per seed; `hyper.seed` is the first.
    pub seeds: Vec<u64>,
    pub holdout: HoldoutRule,
    pub dgp: DgpConfig,
    pub window: Option<WindowSpec>,
    pub lag: usize,
    pub ess_cells: usize,
    /// Variant fitted alongside the main one for gap metrics.
    pub compare_variant: Option<Variant>,
    pub expect: Vec<Expectation>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hyper = HyperConfig::default();
        Self {
            name: "run".into(),
            seeds: vec![hyper.seed],
            hyper,
            holdout: HoldoutRule::None,
            dgp: DgpConfig::default(),
            window: None,
            lag: 1,
            ess_cells: 1000,
            compare_variant: None,
            expect: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn parse_date(key: &str, value: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map_err(|_| Error::config(format!("`{key}` needs a YYYY-MM-DD date, got `{value}`")))
}

/// Splits the text into ordered `(line, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got `{line}`", idx + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::config(format!("line {}: empty key", idx + 1)));
        }
        if let Some(prev) = seen.insert(k.clone(), idx + 1) {
            return Err(Error::config(format!("line {}: `{k}` already set on line {prev}", idx + 1)));
        }
        out.push((idx + 1, k, v));
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seeds_set = false;
        let mut win_start = None;
        let mut win_end = None;
        let mut win_bin = None;
        let mut win_nodes: Option<Vec<String>> = None;
        for (line, k, v) in parse_pairs(text)? {
            let at = |e: Error| match e {
                Error::Config(msg) => Error::config(format!("line {line}: {msg}")),
                other => other,
            };
            let h = &mut cfg.hyper;
            let d = &mut cfg.dgp;
            let res: Result<()> = (|| {
                match k.as_str() {
                    "name" => cfg.name = v.clone(),
                    "h_star" => h.h_star = parse(&k, &v)?,
                    "k_mu" => h.k_mu = parse(&k, &v)?,
                    "k_beta" => h.k_beta = parse(&k, &v)?,
                    "k_ab" => h.k_ab = parse(&k, &v)?,
                    "k_x" => h.k_x = parse(&k, &v)?,
                    "k" => {
                        let x: f64 = parse(&k, &v)?;
                        h.k_mu = x;
                        h.k_beta = x;
                        h.k_ab = x;
                        h.k_x = x;
                    }
                    "rho_ab" => h.rho_ab = parse(&k, &v)?,
                    "rho_x" => h.rho_x = parse(&k, &v)?,
                    "rho" => {
                        let x: f64 = parse(&k, &v)?;
                        h.rho_ab = x;
                        h.rho_x = x;
                    }
                    "shrink_a" => h.shrink_a = parse(&k, &v)?,
                    "iterations" => h.iterations = parse(&k, &v)?,
                    "burn_in" => h.burn_in = parse(&k, &v)?,
                    "thin" => h.thin = parse(&k, &v)?,
                    "seed" => {
                        h.seed = parse(&k, &v)?;
                        if !seeds_set {
                            cfg.seeds = vec![h.seed];
                        }
                    }
                    "seeds" => {
                        let s: Vec<u64> = v
                            .split(',')
                            .map(|x| parse(&k, x.trim()))
                            .collect::<Result<_>>()?;
                        if s.is_empty() {
                            return Err(Error::config("`seeds` is empty"));
                        }
                        h.seed = s[0];
                        cfg.seeds = s;
                        seeds_set = true;
                    }
                    "variant" => h.variant = v.parse()?,
                    "holdout" => cfg.holdout = v.parse()?,
                    "compare_variant" => cfg.compare_variant = Some(v.parse()?),
                    "ess_cells" => cfg.ess_cells = parse(&k, &v)?,
                    "dgp.v" => d.v = parse(&k, &v)?,
                    "dgp.n" => d.n = parse(&k, &v)?,
                    "dgp.h_true" => d.h_true = parse(&k, &v)?,
                    "dgp.p" => d.p = parse(&k, &v)?,
                    "dgp.k_all" => d.k_all = parse(&k, &v)?,
                    "dgp.k_z" => d.k_z = Some(parse(&k, &v)?),
                    "dgp.rho_all" => d.rho_all = parse(&k, &v)?,
                    "dgp.covariate_mean" => d.covariate_mean = parse(&k, &v)?,
                    "dgp.variant" => d.variant = v.parse::<DgpVariant>()?,
                    "dgp.intercept" => d.intercept = parse_bool(&k, &v)?,
                    "dgp.additive" => d.additive = parse_bool(&k, &v)?,
                    "dgp.seed" => d.seed = parse(&k, &v)?,
                    "lsmdn.beta_in" => d.lsmdn.beta_in = parse(&k, &v)?,
                    "lsmdn.beta_out" => d.lsmdn.beta_out = parse(&k, &v)?,
                    "lsmdn.latent_dim" => d.lsmdn.latent_dim = parse(&k, &v)?,
                    "lsmdn.step_variance" => d.lsmdn.step_variance = parse(&k, &v)?,
                    "lsmdn.radii_concentration" => d.lsmdn.radii_concentration = parse(&k, &v)?,
                    "lsmdn.position_scale" => d.lsmdn.position_scale = parse(&k, &v)?,
                    "window.start" => win_start = Some(parse_date(&k, &v)?),
                    "window.end" => win_end = Some(parse_date(&k, &v)?),
                    "window.bin" => win_bin = Some(v.parse::<BinWidth>()?),
                    "window.nodes" => {
                        win_nodes = Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
                    }
                    "lag" => cfg.lag = parse(&k, &v)?,
                    key if key.starts_with("expect.") => cfg.expect.push(Expectation {
                        metric: key["expect.".len()..].to_string(),
                        bound: v.parse()?,
                    }),
                    other => return Err(Error::config(format!("unknown key `{other}`"))),
                }
                Ok(())
            })();
            res.map_err(at)?;
        }
        if win_start.is_some() || win_end.is_some() || win_nodes.is_some() || win_bin.is_some() {
            match (win_start, win_end, win_nodes) {
                (Some(start), Some(end), Some(nodes)) => {
                    cfg.window = Some(WindowSpec::new(start, end, win_bin.unwrap_or(BinWidth::Quarter), nodes)?);
                }
                _ => {
                    return Err(Error::config(
                        "window.start, window.end and window.nodes must be given together",
                    ))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.ess_cells == 0 {
            return Err(Error::config("ess_cells must be positive"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("`seeds` lists a seed twice"));
        }
        Ok(())
    }

    /// Every resolved setting as `key = value` lines, in a fixed order.
    pub fn to_text(&self) -> String {
        let h = &self.hyper;
        let d = &self.dgp;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("name", self.name.clone());
        kv("variant", h.variant.to_string());
        kv("h_star", h.h_star.to_string());
        kv("k_mu", h.k_mu.to_string());
        kv("k_beta", h.k_beta.to_string());
        kv("k_ab", h.k_ab.to_string());
        kv("k_x", h.k_x.to_string());
        kv("rho_ab", h.rho_ab.to_string());
        kv("rho_x", h.rho_x.to_string());
        kv("shrink_a", h.shrink_a.to_string());
        kv("iterations", h.iterations.to_string());
        kv("burn_in", h.burn_in.to_string());
        kv("thin", h.thin.to_string());
        kv("seed", h.seed.to_string());
        kv(
            "seeds",
            self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("holdout", self.holdout.to_string());
        kv("ess_cells", self.ess_cells.to_string());
        if let Some(c) = self.compare_variant {
            kv("compare_variant", c.to_string());
        }
        kv("dgp.variant", d.variant.to_string());
        kv("dgp.v", d.v.to_string());
        kv("dgp.n", d.n.to_string());
        kv("dgp.h_true", d.h_true.to_string());
        kv("dgp.p", d.p.to_string());
        kv("dgp.k_all", d.k_all.to_string());
        if let Some(kz) = d.k_z {
            kv("dgp.k_z", kz.to_string());
        }
        kv("dgp.rho_all", d.rho_all.to_string());
        kv("dgp.covariate_mean", d.covariate_mean.to_string());
        kv("dgp.intercept", d.intercept.to_string());
        kv("dgp.additive", d.additive.to_string());
        kv("dgp.seed", d.seed.to_string());
        kv("lsmdn.beta_in", d.lsmdn.beta_in.to_string());
        kv("lsmdn.beta_out", d.lsmdn.beta_out.to_string());
        kv("lsmdn.latent_dim", d.lsmdn.latent_dim.to_string());
        kv("lsmdn.step_variance", d.lsmdn.step_variance.to_string());
        kv("lsmdn.radii_concentration", d.lsmdn.radii_concentration.to_string());
        kv("lsmdn.position_scale", d.lsmdn.position_scale.to_string());
        if let Some(w) = &self.window {
            kv("window.start", w.start.to_string());
            kv("window.end", w.end.to_string());
            kv("window.bin", w.bin.to_string());
            kv("window.nodes", w.nodes.join(","));
        }
        kv("lag", self.lag.to_string());
        for e in &self.expect {
            kv(&format!("expect.{}", e.metric), e.bound.to_string());
        }
        s
    }
}
