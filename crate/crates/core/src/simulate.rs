//! Synthetic data generators and holdout masking.

use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{check_rho, GpPrior, TimeGrid};
use crate::model::{cell_index, link_probability, CovariateSet, ModelState, NetworkSeries, Variant};
use crate::sampler::sample_pair_prior;

/// Which generating process to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpVariant {
    Dlsn,
    DlsnNocov,
    Lsmdn,
}

impl DgpVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            DgpVariant::Dlsn => "dlsn",
            DgpVariant::DlsnNocov => "dlsn_nocov",
            DgpVariant::Lsmdn => "lsmdn",
        }
    }
}

impl FromStr for DgpVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dlsn" => Ok(DgpVariant::Dlsn),
            "dlsn_nocov" => Ok(DgpVariant::DlsnNocov),
            "lsmdn" => Ok(DgpVariant::Lsmdn),
            other => Err(Error::config(format!(
                "unknown data variant `{other}` (expected dlsn, dlsn_nocov or lsmdn)"
            ))),
        }
    }
}

impl std::fmt::Display for DgpVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameters of the distance-based competitor generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsmdnParams {
    pub beta_in: f64,
    pub beta_out: f64,
    pub latent_dim: usize,
    pub step_variance: f64,
    /// Symmetric Dirichlet concentration of the radii.
    pub radii_concentration: f64,
    /// Standard deviation of initial positions; random-walk steps are scaled alike.
    pub position_scale: f64,
}

impl Default for LsmdnParams {
    fn default() -> Self {
        Self {
            beta_in: 3.0,
            beta_out: 3.0,
            latent_dim: 2,
            step_variance: 0.1,
            radii_concentration: 1.0,
            position_scale: 0.025,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub v: usize,
    pub n: usize,
    pub h_true: usize,
    pub p: usize,
    pub k_all: f64,
    /// Length scale of the covariate paths; `k_all` when unset.
    pub k_z: Option<f64>,
    pub rho_all: f64,
    pub covariate_mean: f64,
    pub variant: DgpVariant,
    /// Draw the intercept path; when false it is held at zero.
    pub intercept: bool,
    /// Draw sender/receiver additive effects; when false they are zero.
    pub additive: bool,
    pub lsmdn: LsmdnParams,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            v: 15,
            n: 40,
            h_true: 2,
            p: 1,
            k_all: 0.01,
            k_z: None,
            rho_all: 0.5,
            covariate_mean: 0.5,
            variant: DgpVariant::Dlsn,
            intercept: true,
            additive: true,
            lsmdn: LsmdnParams::default(),
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.v < 2 || self.n == 0 {
            return Err(Error::config(format!(
                "data dimensions need V >= 2 and N >= 1, got V={} N={}",
                self.v, self.n
            )));
        }
        if !(self.k_all > 0.0 && self.k_all.is_finite()) {
            return Err(Error::config(format!("k_all must be positive, got {}", self.k_all)));
        }
        if let Some(k) = self.k_z {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::config(format!("k_z must be positive, got {k}")));
            }
        }
        check_rho(self.rho_all).map_err(|e| Error::config(e.to_string()))?;
        if self.variant == DgpVariant::Lsmdn {
            let l = &self.lsmdn;
            if l.latent_dim == 0 {
                return Err(Error::config("lsmdn latent dimension must be positive"));
            }
            if !(l.step_variance >= 0.0 && l.position_scale > 0.0 && l.radii_concentration > 0.0) {
                return Err(Error::config(format!(
                    "lsmdn needs step_variance >= 0, position_scale > 0 and radii concentration > 0, got {}, {}, {}",
                    l.step_variance, l.position_scale, l.radii_concentration
                )));
            }
        }
        Ok(())
    }

    /// Covariate count actually generated (zero for the no-covariate variant).
    pub fn effective_p(&self) -> usize {
        match self.variant {
            DgpVariant::Dlsn => self.p,
            DgpVariant::DlsnNocov | DgpVariant::Lsmdn => 0,
        }
    }
}

/// Latent configuration of the distance-based generator.
#[derive(Debug, Clone, PartialEq)]
pub struct LsmdnLatent {
    pub dim: usize,
    /// `positions[((t * V) + i) * dim + d]`.
    pub positions: Vec<f64>,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrueLatent {
    Dlsn(ModelState),
    Lsmdn(LsmdnLatent),
}

/// Generating parameters and true edge probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub latent: TrueLatent,
    pub predictor: Vec<f64>,
    pub pi: Vec<f64>,
}

fn labels(v: usize) -> Vec<String> {
    (1..=v).map(|i| format!("n{i}")).collect()
}

fn draw_outcomes<R: Rng + ?Sized>(v: usize, grid: TimeGrid, pi: &[f64], rng: &mut R) -> Result<NetworkSeries> {
    let n = grid.len();
    let mut y = vec![0u8; v * v * n];
    for t in 0..n {
        for i in 0..v {
            for j in 0..v {
                if i != j {
                    let c = cell_index(v, i, j, t);
                    y[c] = (rng.random::<f64>() < pi[c]) as u8;
                }
            }
        }
    }
    NetworkSeries::from_fn(labels(v), grid, |i, j, t| y[cell_index(v, i, j, t)])
}

/// Draws from the model with GP priors at a shared length scale and correlation.
pub fn simulate_dlsn<R: Rng + ?Sized>(
    cfg: &DgpConfig,
    rng: &mut R,
) -> Result<(NetworkSeries, CovariateSet, GroundTruth)> {
    cfg.validate()?;
    if cfg.variant == DgpVariant::Lsmdn {
        return Err(Error::config("simulate_dlsn called with the lsmdn variant"));
    }
    let (v, n) = (cfg.v, cfg.n);
    let p = cfg.effective_p();
    let grid = TimeGrid::integers(n)?;
    let prior = GpPrior::new(&grid, cfg.k_all)?;

    let cov = if p == 0 {
        CovariateSet::empty(v, n)
    } else {
        let zprior = GpPrior::new(&grid, cfg.k_z.unwrap_or(cfg.k_all))?;
        let mut z = vec![0.0; v * v * n * p];
        for i in 0..v {
            for j in 0..v {
                if i == j {
                    continue;
                }
                for q in 0..p {
                    let path = zprior.sample(rng);
                    for (t, val) in path.iter().enumerate() {
                        z[cell_index(v, i, j, t) * p + q] = cfg.covariate_mean + val;
                    }
                }
            }
        }
        let names = (1..=p).map(|q| format!("z{q}")).collect();
        CovariateSet::new(v, n, names, z)?
    };

    let mut state = ModelState::zeros(Variant::Dlsn, v, n, p, cfg.h_true);
    if cfg.intercept {
        state.mu = prior.sample(rng);
    }
    for q in 0..p {
        let path = prior.sample(rng);
        state.beta[q * n..(q + 1) * n].copy_from_slice(&path);
    }
    if cfg.additive {
        for node in 0..v {
            let (a, b) = sample_pair_prior(&prior, cfg.rho_all, 1.0, rng);
            state.a[node * n..(node + 1) * n].copy_from_slice(&a);
            state.b[node * n..(node + 1) * n].copy_from_slice(&b);
        }
    }
    for node in 0..v {
        for d in 0..cfg.h_true {
            let (xs, xr) = sample_pair_prior(&prior, cfg.rho_all, 1.0, rng);
            let start = state.x_index(node, d, 0);
            state.xs[start..start + n].copy_from_slice(&xs);
            state.xr[start..start + n].copy_from_slice(&xr);
        }
    }

    let predictor = state.predictor_tensor(&cov);
    let pi = off_diagonal_link(v, n, &predictor);
    let data = draw_outcomes(v, grid, &pi, rng)?;
    Ok((
        data,
        cov,
        GroundTruth {
            latent: TrueLatent::Dlsn(state),
            predictor,
            pi,
        },
    ))
}

fn off_diagonal_link(v: usize, n: usize, s: &[f64]) -> Vec<f64> {
    let mut pi = vec![0.0; s.len()];
    for t in 0..n {
        for i in 0..v {
            for j in 0..v {
                if i != j {
                    let c = cell_index(v, i, j, t);
                    pi[c] = link_probability(s[c]);
                }
            }
        }
    }
    pi
}

/// `beta_in (1 - d / r_j) + beta_out (1 - d / r_i)`.
pub fn lsmdn_predictor(beta_in: f64, beta_out: f64, d: f64, r_i: f64, r_j: f64) -> f64 {
    beta_in * (1.0 - d / r_j) + beta_out * (1.0 - d / r_i)
}

/// Draws from the distance model with random-walk positions and Dirichlet radii.
pub fn simulate_lsmdn<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R) -> Result<(NetworkSeries, GroundTruth)> {
    cfg.validate()?;
    if cfg.variant != DgpVariant::Lsmdn {
        return Err(Error::config(format!("simulate_lsmdn called with the {} variant", cfg.variant)));
    }
    let (v, n) = (cfg.v, cfg.n);
    let par = &cfg.lsmdn;
    let dim = par.latent_dim;
    let grid = TimeGrid::integers(n)?;

    let mut positions = vec![0.0; n * v * dim];
    let step_sd = par.position_scale * par.step_variance.sqrt();
    for t in 0..n {
        for i in 0..v {
            for d in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                let idx = (t * v + i) * dim + d;
                positions[idx] = if t == 0 {
                    par.position_scale * z
                } else {
                    positions[((t - 1) * v + i) * dim + d] + step_sd * z
                };
            }
        }
    }

    let g = Gamma::new(par.radii_concentration, 1.0).map_err(|e| Error::config(e.to_string()))?;
    let raw: Vec<f64> = (0..v).map(|_| g.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    let radii: Vec<f64> = raw.iter().map(|r| r / total).collect();
    if let Some(bad) = radii.iter().position(|r| !(*r > 0.0)) {
        return Err(Error::config(format!("radius of node {} is not positive", bad + 1)));
    }

    let mut predictor = vec![0.0; v * v * n];
    for t in 0..n {
        for i in 0..v {
            for j in 0..v {
                if i == j {
                    continue;
                }
                let pi_ = &positions[(t * v + i) * dim..(t * v + i + 1) * dim];
                let pj = &positions[(t * v + j) * dim..(t * v + j + 1) * dim];
                let d = pi_.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                predictor[cell_index(v, i, j, t)] = lsmdn_predictor(par.beta_in, par.beta_out, d, radii[i], radii[j]);
            }
        }
    }
    let pi = off_diagonal_link(v, n, &predictor);
    let data = draw_outcomes(v, grid, &pi, rng)?;
    Ok((
        data,
        GroundTruth {
            latent: TrueLatent::Lsmdn(LsmdnLatent { dim, positions, radii }),
            predictor,
            pi,
        },
    ))
}

/// Runs the generator selected by `cfg.variant`, seeded from `cfg.seed`.
pub fn simulate(cfg: &DgpConfig) -> Result<(NetworkSeries, CovariateSet, GroundTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.variant {
        DgpVariant::Lsmdn => {
            let (data, truth) = simulate_lsmdn(cfg, &mut rng)?;
            Ok((data, CovariateSet::empty(cfg.v, cfg.n), truth))
        }
        _ => simulate_dlsn(cfg, &mut rng),
    }
}

/// Which observed cells to withhold from the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutRule {
    None,
    LastSlice,
    RandomCells { fraction: f64, seed: u64 },
}

impl FromStr for HoldoutRule {
    type Err = Error;

    /// `none`, `last_slice`, or `random_cells:<fraction>[:<seed>]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["none"] => Ok(HoldoutRule::None),
            ["last_slice"] => Ok(HoldoutRule::LastSlice),
            ["random_cells", rest @ ..] if !rest.is_empty() && rest.len() <= 2 => {
                let fraction: f64 = rest[0]
                    .parse()
                    .map_err(|_| Error::config(format!("bad holdout fraction `{}`", rest[0])))?;
                let seed = match rest.get(1) {
                    Some(x) => x
                        .parse()
                        .map_err(|_| Error::config(format!("bad holdout seed `{x}`")))?,
                    None => 0,
                };
                Ok(HoldoutRule::RandomCells { fraction, seed })
            }
            _ => Err(Error::config(format!(
                "unknown holdout rule `{s}` (expected none, last_slice or random_cells:<fraction>[:<seed>])"
            ))),
        }
    }
}

impl std::fmt::Display for HoldoutRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HoldoutRule::None => f.write_str("none"),
            HoldoutRule::LastSlice => f.write_str("last_slice"),
            HoldoutRule::RandomCells { fraction, seed } => write!(f, "random_cells:{fraction}:{seed}"),
        }
    }
}

/// A masked copy of a series plus the cells that were withheld.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    pub data: NetworkSeries,
    /// `true` for each withheld cell, indexed like the tensor.
    pub hidden: Vec<bool>,
}

impl HeldOut {
    pub fn num_hidden(&self) -> usize {
        self.hidden.iter().filter(|&&h| h).count()
    }
}

/// Withholds observed cells according to `rule`; the input keeps the truth.
pub fn holdout(data: &NetworkSeries, rule: HoldoutRule) -> Result<HeldOut> {
    let v = data.num_nodes();
    let n = data.num_times();
    let mask = data.mask();
    let mut hidden = vec![false; mask.len()];
    match rule {
        HoldoutRule::None => {
            return Ok(HeldOut {
                data: data.clone(),
                hidden,
            })
        }
        HoldoutRule::LastSlice => {
            let t = n - 1;
            for i in 0..v {
                for j in 0..v {
                    let c = cell_index(v, i, j, t);
                    hidden[c] = mask[c];
                }
            }
        }
        HoldoutRule::RandomCells { fraction, seed } => {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::config(format!("holdout fraction must lie in [0, 1], got {fraction}")));
            }
            let candidates: Vec<usize> = (0..mask.len()).filter(|&c| mask[c]).collect();
            let count = (fraction * candidates.len() as f64).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked: Vec<usize> = sample_indices(&mut rng, candidates.len(), count).into_vec();
            picked.sort_unstable();
            for k in picked {
                hidden[candidates[k]] = true;
            }
        }
    }
    if !hidden.iter().any(|&h| h) {
        return Err(Error::config(format!("holdout rule {rule} selects no observed cells")));
    }
    Ok(HeldOut {
        data: data.with_hidden(&hidden)?,
        hidden,
    })
}
