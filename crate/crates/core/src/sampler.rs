//! Polya-Gamma augmented Gibbs sampler.
//!
//! One iteration runs, in order: PG weights, intercept, covariate
//! coefficients, (random effects), multiplicative factors, shrinkage,
//! additive effects, imputation of unobserved cells. Conditioned on the PG
//! weights every block except the shrinkage is Gaussian with a GP prior, and
//! all of them go through [`GaussianConditional`].
//!
//! Gaussian blocks are sampled in prior-whitened form: with prior
//! `x = L u`, `u ~ N(0, I)`, the conditional of `u` has precision
//! `I + L^T Lambda L`, which stays well conditioned even when the kernel
//! matrix is numerically singular.

use std::time::{Duration, Instant};

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    check_rho, chol_jitter_lower, corr2_factor, lower_mul, lower_transpose_mul, CholFactor, GpPrior,
    TimeGrid,
};
use crate::model::{cell_index, link_probability, CovariateSet, ModelState, NetworkSeries, Variant};
use crate::polya_gamma::sample_pg1;

/// Shape and scale of the inverse-gamma prior on the random-effect variance.
pub const RANDOM_EFFECT_PRIOR: (f64, f64) = (2.0, 1.0);

/// Hyperparameters and MCMC controls of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub h_star: usize,
    pub k_mu: f64,
    pub k_beta: f64,
    pub k_ab: f64,
    pub k_x: f64,
    pub rho_ab: f64,
    pub rho_x: f64,
    pub shrink_a: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            h_star: 10,
            k_mu: 0.1,
            k_beta: 0.1,
            k_ab: 0.1,
            k_x: 0.1,
            rho_ab: 0.5,
            rho_x: 0.5,
            shrink_a: 2.0,
            iterations: 50_000,
            burn_in: 5_000,
            thin: 10,
            seed: 1,
            variant: Variant::Dlsn,
        }
    }
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h_star == 0 {
            return Err(Error::config("h_star must be at least 1"));
        }
        for (name, k) in [
            ("k_mu", self.k_mu),
            ("k_beta", self.k_beta),
            ("k_ab", self.k_ab),
            ("k_x", self.k_x),
        ] {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {k}")));
            }
        }
        for (name, rho) in [("rho_ab", self.rho_ab), ("rho_x", self.rho_x)] {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {rho}")));
            }
        }
        if !(self.shrink_a > 0.0 && self.shrink_a.is_finite()) {
            return Err(Error::config("shrink_a must be positive"));
        }
        if self.iterations == 0 || self.thin == 0 {
            return Err(Error::config("iterations and thin must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    /// Number of snapshots a chain with this configuration records.
    pub fn trace_len(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// GP priors of every effect family, factored once per run.
#[derive(Debug, Clone)]
pub struct Priors {
    pub mu: GpPrior,
    pub beta: GpPrior,
    pub ab: GpPrior,
    pub x: GpPrior,
    pub rho_ab: f64,
    pub rho_x: f64,
    pub shrink_a: f64,
}

impl Priors {
    pub fn new(grid: &TimeGrid, config: &HyperConfig) -> Result<Self> {
        check_rho(config.rho_ab)?;
        check_rho(config.rho_x)?;
        Ok(Self {
            mu: GpPrior::new(grid, config.k_mu)?,
            beta: GpPrior::new(grid, config.k_beta)?,
            ab: GpPrior::new(grid, config.k_ab)?,
            x: GpPrior::new(grid, config.k_x)?,
            rho_ab: config.rho_ab,
            rho_x: config.rho_x,
            shrink_a: config.shrink_a,
        })
    }

    pub fn jitter_report(&self) -> Vec<(String, f64)> {
        vec![
            ("mu".into(), self.mu.factor.jitter),
            ("beta".into(), self.beta.factor.jitter),
            ("ab".into(), self.ab.factor.jitter),
            ("x".into(), self.x.factor.jitter),
        ]
    }
}

/// Draws a correlated pair of GP paths with covariance
/// `scale * [[K, rho K], [rho K, K]]`.
pub fn sample_pair_prior<R: Rng + ?Sized>(
    prior: &GpPrior,
    rho: f64,
    scale: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let first = prior.sample(rng);
    let second = prior.sample(rng);
    let sd = scale.sqrt();
    let c = corr2_factor(rho);
    let x1 = first.iter().map(|u| sd * u).collect();
    let x2 = first
        .iter()
        .zip(&second)
        .map(|(u1, u2)| sd * (c[1][0] * u1 + c[1][1] * u2))
        .collect();
    (x1, x2)
}

/// Lower factor `L` of a prior covariance `C = L L^T`.
#[derive(Debug, Clone)]
pub enum PriorFactor {
    Dense(Mat<f64>),
    /// `L_K (x) L_M` acting on time-major vectors (index `t * m + a`).
    Kron { lk: Mat<f64>, lm: Mat<f64> },
}

impl PriorFactor {
    pub fn dim(&self) -> usize {
        match self {
            PriorFactor::Dense(l) => l.nrows(),
            PriorFactor::Kron { lk, lm } => lk.nrows() * lm.nrows(),
        }
    }

    /// `L u`.
    pub fn mul(&self, u: &[f64]) -> Vec<f64> {
        match self {
            PriorFactor::Dense(l) => lower_mul(l, u),
            PriorFactor::Kron { lk, lm } => {
                let (n, m) = (lk.nrows(), lm.nrows());
                let um = MatRef::from_column_major_slice(u, m, n);
                let x = lm * um * lk.transpose();
                (0..n).flat_map(|t| x.col_as_slice(t).to_vec()).collect()
            }
        }
    }

    /// `L^T r`.
    pub fn tmul(&self, r: &[f64]) -> Vec<f64> {
        match self {
            PriorFactor::Dense(l) => lower_transpose_mul(l, r),
            PriorFactor::Kron { lk, lm } => {
                let (n, m) = (lk.nrows(), lm.nrows());
                let rm = MatRef::from_column_major_slice(r, m, n);
                let x = lm.transpose() * rm * lk;
                (0..n).flat_map(|t| x.col_as_slice(t).to_vec()).collect()
            }
        }
    }

    pub fn to_dense(&self) -> Mat<f64> {
        match self {
            PriorFactor::Dense(l) => l.clone(),
            PriorFactor::Kron { lk, lm } => {
                let m = lm.nrows();
                Mat::from_fn(self.dim(), self.dim(), |i, j| lk[(i / m, j / m)] * lm[(i % m, j % m)])
            }
        }
    }
}

/// Gaussian full conditional `N(Q^{-1} r, Q^{-1})`, `Q = C^{-1} + Lambda`,
/// stored through the prior factor `C = L L^T` and the whitened precision
/// `I + L^T Lambda L`.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    prior: PriorFactor,
    precision: CholFactor,
    whitened_mean: Vec<f64>,
}

impl GaussianConditional {
    /// From the prior factor, the lower triangle of the whitened precision
    /// `I + L^T Lambda L` and `L^T r`.
    fn from_whitened(prior: PriorFactor, whitened_precision: Mat<f64>, lt_r: Vec<f64>) -> Result<Self> {
        let precision = chol_jitter_lower(whitened_precision)?;
        let whitened_mean = precision.solve(&lt_r);
        Ok(Self {
            prior,
            precision,
            whitened_mean,
        })
    }

    /// Diagonal likelihood precision `Lambda = diag(lambda)`.
    pub fn from_diagonal(prior_l: Mat<f64>, lambda: &[f64], r: &[f64]) -> Result<Self> {
        let n = prior_l.nrows();
        let mut p = Mat::<f64>::identity(n, n);
        for b in 0..n {
            let lb = prior_l.col_as_slice(b);
            for a in b..n {
                let la = prior_l.col_as_slice(a);
                let mut acc = 0.0;
                for k in a..n {
                    acc += la[k] * lambda[k] * lb[k];
                }
                p[(a, b)] += acc;
            }
        }
        let lt_r = lower_transpose_mul(&prior_l, r);
        Self::from_whitened(PriorFactor::Dense(prior_l), p, lt_r)
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.prior.mul(&self.whitened_mean)
    }

    /// Dense conditional covariance `L (I + L^T Lambda L)^{-1} L^T`.
    pub fn covariance(&self) -> Mat<f64> {
        let l = self.prior.to_dense();
        let pinv = self.precision.inverse();
        &l * &pinv * l.transpose()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut u: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.precision.solve_upper_in_place(&mut u);
        for (ui, m) in u.iter_mut().zip(&self.whitened_mean) {
            *ui += m;
        }
        self.prior.mul(&u)
    }
}

/// Dense lower factor of `R2 (x) K` (role-major) given the 2x2 correlation factor.
fn pair_factor(c: [[f64; 2]; 2], lk: &Mat<f64>) -> Mat<f64> {
    let n = lk.nrows();
    Mat::from_fn(2 * n, 2 * n, |i, j| c[i / n][j / n] * lk[(i % n, j % n)])
}

#[inline]
fn kappa(y: u8) -> f64 {
    y as f64 - 0.5
}

/// Wall-clock time spent in each step, for diagnostics only.
#[derive(Debug, Clone, Default)]
pub struct StepTimings {
    pub pg: Duration,
    pub mu: Duration,
    pub beta: Duration,
    pub random_effects: Duration,
    pub latent: Duration,
    pub shrinkage: Duration,
    pub additive: Duration,
    pub impute: Duration,
}

/// The full set of conditional updates for one data set and configuration.
pub struct GibbsSampler<'a> {
    data: &'a NetworkSeries,
    cov: &'a CovariateSet,
    priors: Priors,
    config: HyperConfig,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(data: &'a NetworkSeries, cov: &'a CovariateSet, config: HyperConfig) -> Result<Self> {
        config.validate()?;
        let p = cov.num_covariates();
        if p > 0 && (cov.num_nodes() != data.num_nodes() || cov.num_times() != data.num_times()) {
            return Err(Error::domain(format!(
                "covariates are {}x{} but network is {}x{}",
                cov.num_nodes(),
                cov.num_times(),
                data.num_nodes(),
                data.num_times()
            )));
        }
        let priors = Priors::new(data.grid(), &config)?;
        Ok(Self {
            data,
            cov,
            priors,
            config,
        })
    }

    pub fn priors(&self) -> &Priors {
        &self.priors
    }

    pub fn config(&self) -> &HyperConfig {
        &self.config
    }

    fn dims(&self) -> (usize, usize) {
        (self.data.num_nodes(), self.data.num_times())
    }

    /// Prior draws for every effect and for `nu`, observed outcomes copied,
    /// unobserved outcomes Bernoulli(1/2), then one pass of PG weights.
    pub fn init_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelState> {
        let (v, n) = self.dims();
        let p = self.cov.num_covariates();
        let mut state = ModelState::zeros(self.config.variant, v, n, p, self.config.h_star);
        state.mu = self.priors.mu.sample(rng);
        for q in 0..p {
            let path = self.priors.beta.sample(rng);
            state.beta[q * n..(q + 1) * n].copy_from_slice(&path);
        }
        if state.variant.has_network_terms() {
            // nu from its prior too, so the latent scales start ordered like
            // the shrinkage prior intends
            let g = Gamma::new(self.config.shrink_a, 1.0).map_err(|e| Error::numerical(e.to_string()))?;
            for nu in state.nu.iter_mut() {
                *nu = g.sample(rng);
            }
            state.recompose_tau();
            for node in 0..v {
                let (a, b) = sample_pair_prior(&self.priors.ab, self.priors.rho_ab, 1.0, rng);
                state.a[node * n..(node + 1) * n].copy_from_slice(&a);
                state.b[node * n..(node + 1) * n].copy_from_slice(&b);
            }
            for node in 0..v {
                for d in 0..state.h {
                    let scale = 1.0 / state.tau[d];
                    let (xs, xr) = sample_pair_prior(&self.priors.x, self.priors.rho_x, scale, rng);
                    let start = state.x_index(node, d, 0);
                    state.xs[start..start + n].copy_from_slice(&xs);
                    state.xr[start..start + n].copy_from_slice(&xr);
                }
            }
        }
        if state.variant.has_random_effects() {
            let (shape, scale) = RANDOM_EFFECT_PRIOR;
            let g = Gamma::new(shape, 1.0 / scale).map_err(|e| Error::numerical(e.to_string()))?;
            state.sigma2_eps = 1.0 / g.sample(rng);
            let sd = state.sigma2_eps.sqrt();
            for t in 0..n {
                for i in 0..v {
                    for j in 0..v {
                        if i != j {
                            let z: f64 = rng.sample(StandardNormal);
                            state.eps[cell_index(v, i, j, t)] = sd * z;
                        }
                    }
                }
            }
        }
        for t in 0..n {
            for i in 0..v {
                for j in 0..v {
                    if i == j {
                        continue;
                    }
                    let c = cell_index(v, i, j, t);
                    state.y[c] = match self.data.get(i, j, t) {
                        Some(y) => y,
                        None => rng.random_bool(0.5) as u8,
                    };
                }
            }
        }
        self.step_pg_weights(&mut state, rng)?;
        Ok(state)
    }

    /// Step 1: `w_ij(t) ~ PG(1, S_ij(t))` for every off-diagonal cell.
    pub fn step_pg_weights<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        let (v, n) = self.dims();
        for t in 0..n {
            for i in 0..v {
                for j in 0..v {
                    if i != j {
                        let s = state.predictor(self.cov, i, j, t);
                        state.w[cell_index(v, i, j, t)] = sample_pg1(s, rng)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Conditional of the intercept path.
    pub fn mu_conditional(&self, state: &ModelState) -> Result<GaussianConditional> {
        let (v, n) = self.dims();
        let mut lambda = vec![0.0; n];
        let mut r = vec![0.0; n];
        for t in 0..n {
            for i in 0..v {
                for j in 0..v {
                    if i == j {
                        continue;
                    }
                    let c = cell_index(v, i, j, t);
                    let w = state.w[c];
                    let rest = state.predictor(self.cov, i, j, t) - state.mu[t];
                    lambda[t] += w;
                    r[t] += kappa(state.y[c]) - w * rest;
                }
            }
        }
        GaussianConditional::from_diagonal(self.priors.mu.factor.l.clone(), &lambda, &r)
    }

    /// Step 2.
    pub fn step_mu<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        state.mu = self.mu_conditional(state)?.sample(rng);
        Ok(())
    }

    /// Conditional of covariate path `q` given all other coefficients.
    pub fn beta_conditional(&self, state: &ModelState, q: usize) -> Result<GaussianConditional> {
        let (v, n) = self.dims();
        let mut lambda = vec![0.0; n];
        let mut r = vec![0.0; n];
        for t in 0..n {
            let bq = state.beta[q * n + t];
            for i in 0..v {
                for j in 0..v {
                    if i == j {
                        continue;
                    }
                    let c = cell_index(v, i, j, t);
                    let w = state.w[c];
                    let z = self.cov.get(i, j, t, q);
                    let rest = state.predictor(self.cov, i, j, t) - z * bq;
                    lambda[t] += z * z * w;
                    r[t] += z * (kappa(state.y[c]) - w * rest);
                }
            }
        }
        GaussianConditional::from_diagonal(self.priors.beta.factor.l.clone(), &lambda, &r)
    }

    /// Step 3: sweep `q = 1..P`.
    pub fn step_beta<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        let n = state.n;
        for q in 0..state.p {
            let draw = self.beta_conditional(state, q)?.sample(rng);
            state.beta[q * n..(q + 1) * n].copy_from_slice(&draw);
        }
        Ok(())
    }

    /// Random-effect variant: `eps_ij(t)` cellwise, then `sigma^2_eps`.
    pub fn step_random_effects<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        let (v, n) = self.dims();
        let prior_prec = 1.0 / state.sigma2_eps;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for t in 0..n {
            for i in 0..v {
                for j in 0..v {
                    if i == j {
                        continue;
                    }
                    let c = cell_index(v, i, j, t);
                    let w = state.w[c];
                    let rest = state.predictor(self.cov, i, j, t) - state.eps[c];
                    let prec = w + prior_prec;
                    let mean = (kappa(state.y[c]) - w * rest) / prec;
                    let z: f64 = rng.sample(StandardNormal);
                    let e = mean + z / prec.sqrt();
                    state.eps[c] = e;
                    sum_sq += e * e;
                    count += 1;
                }
            }
        }
        let (shape0, scale0) = RANDOM_EFFECT_PRIOR;
        let shape = shape0 + 0.5 * count as f64;
        let rate = scale0 + 0.5 * sum_sq;
        let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::numerical(e.to_string()))?;
        state.sigma2_eps = 1.0 / g.sample(rng);
        Ok(())
    }

    /// Joint conditional of node `node`'s sender and receiver factor paths.
    ///
    /// The returned vector is ordered time-major: index `(t * 2 + role) * H + h`
    /// with role 0 = sender, 1 = receiver.
    pub fn latent_conditional(&self, state: &ModelState, node: usize) -> Result<GaussianConditional> {
        let (v, n) = self.dims();
        let h = state.h;
        let m = 2 * h;
        let dim = n * m;
        let c = corr2_factor(self.priors.rho_x);
        let inv_sd: Vec<f64> = state.tau.iter().map(|t| t.sqrt()).map(|s| 1.0 / s).collect();

        // L_M = chol(R) (x) diag(tau)^{-1/2}
        let lm = Mat::from_fn(m, m, |a, b| {
            let (ra, ha) = (a / h, a % h);
            let (rb, hb) = (b / h, b % h);
            if ha == hb {
                c[ra][rb] * inv_sd[ha]
            } else {
                0.0
            }
        });

        let lk = &self.priors.x.factor.l;
        let mut gram: Vec<Mat<f64>> = Vec::with_capacity(n);
        let mut r = vec![0.0; dim];
        let mut lam = Mat::<f64>::zeros(m, m);
        for t in 0..n {
            lam.fill(0.0);
            let rt = &mut r[t * m..(t + 1) * m];
            for other in 0..v {
                if other == node {
                    continue;
                }
                // Sender block: cells (node, other), design row x_other^r(t).
                let cs = cell_index(v, node, other, t);
                let w = state.w[cs];
                let offset = state.predictor(self.cov, node, other, t) - state.inner(node, other, t);
                let resid = kappa(state.y[cs]) - w * offset;
                for d1 in 0..h {
                    let x1 = state.xr[state.x_index(other, d1, t)];
                    rt[d1] += x1 * resid;
                    for d2 in 0..=d1 {
                        lam[(d1, d2)] += w * x1 * state.xr[state.x_index(other, d2, t)];
                    }
                }
                // Receiver block: cells (other, node), design row x_other^s(t).
                let cr = cell_index(v, other, node, t);
                let w = state.w[cr];
                let offset = state.predictor(self.cov, other, node, t) - state.inner(other, node, t);
                let resid = kappa(state.y[cr]) - w * offset;
                for d1 in 0..h {
                    let x1 = state.xs[state.x_index(other, d1, t)];
                    rt[h + d1] += x1 * resid;
                    for d2 in 0..=d1 {
                        lam[(h + d1, h + d2)] += w * x1 * state.xs[state.x_index(other, d2, t)];
                    }
                }
            }
            for d1 in 0..m {
                for d2 in 0..d1 {
                    lam[(d2, d1)] = lam[(d1, d2)];
                }
            }
            gram.push(lm.transpose() * &lam * &lm);
        }

        // Whitened precision I + sum_t (l_t l_t^T) (x) G_t, l_t = row t of L_K;
        // only the lower triangle is filled.
        let mut p = Mat::<f64>::identity(dim, dim);
        let mut block = vec![0.0; m * m];
        for s2 in 0..n {
            for s in s2..n {
                block.iter_mut().for_each(|x| *x = 0.0);
                for (t, g) in gram.iter().enumerate().skip(s) {
                    let coef = lk[(t, s)] * lk[(t, s2)];
                    if coef == 0.0 {
                        continue;
                    }
                    for b in 0..m {
                        let gcol = g.col_as_slice(b);
                        let bcol = &mut block[b * m..(b + 1) * m];
                        for (x, gv) in bcol.iter_mut().zip(gcol) {
                            *x += coef * gv;
                        }
                    }
                }
                for b in 0..m {
                    let col = &mut p.col_as_slice_mut(s2 * m + b)[s * m..(s + 1) * m];
                    for (x, v) in col.iter_mut().zip(&block[b * m..(b + 1) * m]) {
                        *x += v;
                    }
                }
            }
        }

        let prior = PriorFactor::Kron { lk: lk.clone(), lm };
        let lt_r = prior.tmul(&r);
        GaussianConditional::from_whitened(prior, p, lt_r)
    }

    /// Step 4: nodes swept in order, each using the already-updated others.
    pub fn step_latent_factors<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        let (v, n) = self.dims();
        let h = state.h;
        for node in 0..v {
            let draw = self.latent_conditional(state, node)?.sample(rng);
            for t in 0..n {
                for d in 0..h {
                    let idx = state.x_index(node, d, t);
                    state.xs[idx] = draw[(t * 2) * h + d];
                    state.xr[idx] = draw[(t * 2 + 1) * h + d];
                }
            }
        }
        Ok(())
    }

    /// `sum_i X*_ih^T B^{-1} X*_ih` per dimension, `B = [[K, rho K], [rho K, K]]`.
    pub fn shrinkage_quad_forms(&self, state: &ModelState) -> Vec<f64> {
        let (v, n) = self.dims();
        let rho = self.priors.rho_x;
        let f = &self.priors.x.factor;
        (0..state.h)
            .map(|d| {
                (0..v)
                    .map(|i| {
                        let start = state.x_index(i, d, 0);
                        let mut ys = state.xs[start..start + n].to_vec();
                        let mut yr = state.xr[start..start + n].to_vec();
                        f.solve_lower_in_place(&mut ys);
                        f.solve_lower_in_place(&mut yr);
                        let qs: f64 = ys.iter().map(|x| x * x).sum();
                        let qr: f64 = yr
                            .iter()
                            .zip(&ys)
                            .map(|(r, s)| (r - rho * s).powi(2))
                            .sum::<f64>()
                            / (1.0 - rho * rho);
                        qs + qr
                    })
                    .sum()
            })
            .collect()
    }

    /// Gamma shape and rate of `nu_l` given the others (0-based `l`).
    pub fn shrinkage_params(&self, nu: &[f64], quad: &[f64], l: usize) -> (f64, f64) {
        let (v, n) = self.dims();
        let h = nu.len();
        let shape = self.priors.shrink_a + (n * v * (h - l)) as f64;
        let mut rate_sum = 0.0;
        let mut prod = nu[..l].iter().product::<f64>();
        for d in l..h {
            if d > l {
                prod *= nu[d];
            }
            rate_sum += prod * quad[d];
        }
        (shape, 1.0 + 0.5 * rate_sum)
    }

    /// Step 5: sweep `nu_1..nu_H`, then `tau` as cumulative products.
    pub fn step_shrinkage<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        let quad = self.shrinkage_quad_forms(state);
        for l in 0..state.h {
            let (shape, rate) = self.shrinkage_params(&state.nu, &quad, l);
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::numerical(format!("shrinkage rate for dimension {} is {rate}", l + 1)));
            }
            let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::numerical(e.to_string()))?;
            state.nu[l] = g.sample(rng);
        }
        state.recompose_tau();
        Ok(())
    }

    /// Joint conditional of `(a_node(t_1..t_N), b_node(t_1..t_N))`.
    pub fn additive_conditional(&self, state: &ModelState, node: usize) -> Result<GaussianConditional> {
        let (v, n) = self.dims();
        let mut lambda = vec![0.0; 2 * n];
        let mut r = vec![0.0; 2 * n];
        for t in 0..n {
            let a_cur = state.a[node * n + t];
            let b_cur = state.b[node * n + t];
            for other in 0..v {
                if other == node {
                    continue;
                }
                let c = cell_index(v, node, other, t);
                let w = state.w[c];
                let rest = state.predictor(self.cov, node, other, t) - a_cur;
                lambda[t] += w;
                r[t] += kappa(state.y[c]) - w * rest;

                let c = cell_index(v, other, node, t);
                let w = state.w[c];
                let rest = state.predictor(self.cov, other, node, t) - b_cur;
                lambda[n + t] += w;
                r[n + t] += kappa(state.y[c]) - w * rest;
            }
        }
        let l = pair_factor(corr2_factor(self.priors.rho_ab), &self.priors.ab.factor.l);
        GaussianConditional::from_diagonal(l, &lambda, &r)
    }

    /// Step 6: nodes swept in order.
    pub fn step_additive<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        let (v, n) = self.dims();
        for node in 0..v {
            let draw = self.additive_conditional(state, node)?.sample(rng);
            state.a[node * n..(node + 1) * n].copy_from_slice(&draw[..n]);
            state.b[node * n..(node + 1) * n].copy_from_slice(&draw[n..]);
        }
        Ok(())
    }

    /// Step 7: every unobserved off-diagonal cell redrawn from its Bernoulli.
    pub fn step_impute<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        let (v, n) = self.dims();
        for t in 0..n {
            for i in 0..v {
                for j in 0..v {
                    if i == j || self.data.is_observed(i, j, t) {
                        continue;
                    }
                    let pi = link_probability(state.predictor(self.cov, i, j, t));
                    state.y[cell_index(v, i, j, t)] = (rng.random::<f64>() < pi) as u8;
                }
            }
        }
        Ok(())
    }

    /// One full scan in the fixed step order.
    pub fn iterate<R: Rng + ?Sized>(
        &self,
        state: &mut ModelState,
        rng: &mut R,
        iteration: usize,
        timings: &mut StepTimings,
    ) -> Result<()> {
        let wrap = |step: &'static str| {
            move |e: Error| Error::Step {
                step,
                iteration,
                source: Box::new(e),
            }
        };
        let mut clock = Instant::now();
        let mut lap = |slot: &mut Duration| {
            let now = Instant::now();
            *slot += now - clock;
            clock = now;
        };

        self.step_pg_weights(state, rng).map_err(wrap("pg_weights"))?;
        lap(&mut timings.pg);
        self.step_mu(state, rng).map_err(wrap("mu"))?;
        lap(&mut timings.mu);
        if state.p > 0 {
            self.step_beta(state, rng).map_err(wrap("beta"))?;
            lap(&mut timings.beta);
        }
        if state.variant.has_random_effects() {
            self.step_random_effects(state, rng).map_err(wrap("random_effects"))?;
            lap(&mut timings.random_effects);
        }
        if state.variant.has_network_terms() {
            self.step_latent_factors(state, rng).map_err(wrap("latent_factors"))?;
            lap(&mut timings.latent);
            self.step_shrinkage(state, rng).map_err(wrap("shrinkage"))?;
            lap(&mut timings.shrinkage);
            self.step_additive(state, rng).map_err(wrap("additive"))?;
            lap(&mut timings.additive);
        }
        self.step_impute(state, rng).map_err(wrap("impute"))?;
        lap(&mut timings.impute);
        Ok(())
    }
}

/// Metadata carried alongside the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub config: HyperConfig,
    pub node_labels: Vec<String>,
    pub covariate_labels: Vec<String>,
    pub times: Vec<f64>,
    /// Diagonal loading used for each prior factor.
    pub jitter: Vec<(String, f64)>,
}

/// Thinned post-burn-in draws.
///
/// Per draw `s`: `mu[s*N..]`, `beta[s*P*N..]`, `a/b[s*V*N..]`,
/// `xs/xr[s*V*H*N..]` (same inner layouts as [`ModelState`]), `tau[s*H..]`,
/// and the linear predictor `predictor[s*V*V*N..]` from which the
/// probabilities are derived.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub variant: Variant,
    pub v: usize,
    pub n: usize,
    pub p: usize,
    pub h: usize,
    pub draws: usize,
    pub mu: Vec<f64>,
    pub beta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub xs: Vec<f64>,
    pub xr: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma2_eps: Vec<f64>,
    pub predictor: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn empty(state: &ModelState, meta: TraceMeta) -> Self {
        Self {
            variant: state.variant,
            v: state.v,
            n: state.n,
            p: state.p,
            h: state.h,
            draws: 0,
            mu: Vec::new(),
            beta: Vec::new(),
            a: Vec::new(),
            b: Vec::new(),
            xs: Vec::new(),
            xr: Vec::new(),
            tau: Vec::new(),
            sigma2_eps: Vec::new(),
            predictor: Vec::new(),
            log_likelihood: Vec::new(),
            meta,
        }
    }

    pub fn record(&mut self, state: &ModelState, data: &NetworkSeries, cov: &CovariateSet) {
        self.mu.extend_from_slice(&state.mu);
        self.beta.extend_from_slice(&state.beta);
        self.a.extend_from_slice(&state.a);
        self.b.extend_from_slice(&state.b);
        self.xs.extend_from_slice(&state.xs);
        self.xr.extend_from_slice(&state.xr);
        self.tau.extend_from_slice(&state.tau);
        if state.variant.has_random_effects() {
            self.sigma2_eps.push(state.sigma2_eps);
        }
        let s = state.predictor_tensor(cov);
        let ll = crate::model::log_likelihood(state, data, cov).unwrap_or(f64::NAN);
        self.predictor.extend_from_slice(&s);
        self.log_likelihood.push(ll);
        self.draws += 1;
    }

    pub fn cells(&self) -> usize {
        self.v * self.v * self.n
    }

    pub fn predictor_draw(&self, s: usize) -> &[f64] {
        let c = self.cells();
        &self.predictor[s * c..(s + 1) * c]
    }

    /// `pi_ij(t)` in draw `s`.
    pub fn pi(&self, s: usize, i: usize, j: usize, t: usize) -> f64 {
        link_probability(self.predictor_draw(s)[cell_index(self.v, i, j, t)])
    }

    pub fn mu_draw(&self, s: usize) -> &[f64] {
        &self.mu[s * self.n..(s + 1) * self.n]
    }

    pub fn tau_draw(&self, s: usize) -> &[f64] {
        &self.tau[s * self.h..(s + 1) * self.h]
    }

    /// Posterior mean of `pi` per cell (diagonal left at 0).
    pub fn posterior_mean_pi(&self) -> Vec<f64> {
        let c = self.cells();
        let mut out = vec![0.0; c];
        if self.draws == 0 {
            return out;
        }
        for s in 0..self.draws {
            for (o, &x) in out.iter_mut().zip(self.predictor_draw(s)) {
                *o += link_probability(x);
            }
        }
        for t in 0..self.n {
            for i in 0..self.v {
                out[cell_index(self.v, i, i, t)] = 0.0;
            }
        }
        out.iter_mut().for_each(|x| *x /= self.draws as f64);
        out
    }

    /// Posterior mean of `1 / tau_h` per dimension.
    pub fn posterior_mean_tau_inv(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.h];
        for s in 0..self.draws {
            for (o, t) in out.iter_mut().zip(self.tau_draw(s)) {
                *o += 1.0 / t;
            }
        }
        out.iter_mut().for_each(|x| *x /= self.draws.max(1) as f64);
        out
    }

    /// Draws of one scalar series, e.g. `pi_ij(t)` across the chain.
    pub fn pi_series(&self, i: usize, j: usize, t: usize) -> Vec<f64> {
        (0..self.draws).map(|s| self.pi(s, i, j, t)).collect()
    }
}

/// Outcome of [`run_chain`]: the trace plus wall-clock diagnostics.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub trace: Trace,
    pub timings: StepTimings,
    pub elapsed: Duration,
}

/// Runs a full chain: initialization, `iterations` scans, thinned recording
/// after burn-in. Deterministic given `config.seed`.
pub fn run_chain(data: &NetworkSeries, cov: &CovariateSet, config: &HyperConfig) -> Result<ChainRun> {
    let start = Instant::now();
    let sampler = GibbsSampler::new(data, cov, config.clone())?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = sampler.init_state(&mut init_rng).map_err(|e| Error::Step {
        step: "init",
        iteration: 0,
        source: Box::new(e),
    })?;

    let meta = TraceMeta {
        config: config.clone(),
        node_labels: data.node_labels().to_vec(),
        covariate_labels: cov.labels().to_vec(),
        times: data.grid().times().to_vec(),
        jitter: sampler.priors().jitter_report(),
    };
    let mut trace = Trace::empty(&state, meta);
    let mut timings = StepTimings::default();
    for it in 1..=config.iterations {
        sampler.iterate(&mut state, &mut rng, it, &mut timings)?;
        if it > config.burn_in && (it - config.burn_in).is_multiple_of(config.thin) {
            trace.record(&state, data, cov);
        }
    }
    Ok(ChainRun {
        trace,
        timings,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn labels(v: usize) -> Vec<String> {
        (0..v).map(|i| format!("n{i}")).collect()
    }

    fn tiny_config(variant: Variant, h: usize) -> HyperConfig {
        HyperConfig {
            h_star: h,
            k_mu: 0.3,
            k_beta: 0.2,
            k_ab: 0.25,
            k_x: 0.4,
            iterations: 30,
            burn_in: 10,
            thin: 2,
            seed: 3,
            variant,
            ..HyperConfig::default()
        }
    }

    fn tiny_data(v: usize, n: usize) -> NetworkSeries {
        NetworkSeries::from_fn(labels(v), TimeGrid::integers(n).unwrap(), |i, j, t| ((i + 2 * j + t) % 3 == 0) as u8)
            .unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = HyperConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.trace_len(), 4500);
        c.burn_in = c.iterations;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = HyperConfig {
            rho_x: 1.0,
            ..HyperConfig::default()
        };
        assert!(c.validate().is_err());
        let c = HyperConfig {
            thin: 0,
            ..HyperConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn tau_is_cumulative_product() {
        let mut s = ModelState::zeros(Variant::Dlsn, 2, 1, 0, 3);
        s.nu = vec![2.0, 0.5, 4.0];
        s.recompose_tau();
        assert_eq!(s.tau, vec![2.0, 1.0, 4.0]);
    }

    #[test]
    fn trace_length_and_determinism() {
        let data = tiny_data(4, 3);
        let cov = CovariateSet::empty(4, 3);
        for variant in [Variant::Dlsn, Variant::Naive, Variant::RandomEffect] {
            let config = tiny_config(variant, 2);
            let a = run_chain(&data, &cov, &config).unwrap().trace;
            let b = run_chain(&data, &cov, &config).unwrap().trace;
            assert_eq!(a.draws, config.trace_len());
            assert_eq!(a, b);
            for s in 0..a.draws {
                for t in 0..3 {
                    for i in 0..4 {
                        for j in 0..4 {
                            if i != j {
                                let p = a.pi(s, i, j, t);
                                assert!(p > 0.0 && p < 1.0);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn variant_irrelevant_fields_stay_zero() {
        let data = tiny_data(3, 2);
        let cov = CovariateSet::empty(3, 2);
        let trace = run_chain(&data, &cov, &tiny_config(Variant::Naive, 3)).unwrap().trace;
        assert_eq!(trace.h, 0);
        assert!(trace.a.iter().chain(&trace.b).all(|&x| x == 0.0));
        assert!(trace.xs.is_empty());
    }

    #[test]
    fn shrinkage_keeps_ratio_identity() {
        let data = tiny_data(3, 2);
        let cov = CovariateSet::empty(3, 2);
        let config = tiny_config(Variant::Dlsn, 3);
        let sampler = GibbsSampler::new(&data, &cov, config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = sampler.init_state(&mut rng).unwrap();
        for _ in 0..20 {
            sampler.step_shrinkage(&mut state, &mut rng).unwrap();
            assert_eq!(state.tau[0], state.nu[0]);
            for h in 1..3 {
                let ratio = state.tau[h] / state.tau[h - 1];
                assert!((ratio - state.nu[h]).abs() <= 1e-12 * state.nu[h]);
            }
        }
    }

    #[test]
    fn impute_only_touches_unobserved_cells() {
        let full = tiny_data(4, 2);
        let mut hide = vec![false; 32];
        hide[cell_index(4, 0, 1, 1)] = true;
        hide[cell_index(4, 2, 3, 0)] = true;
        let data = full.with_hidden(&hide).unwrap();
        let cov = CovariateSet::empty(4, 2);
        let sampler = GibbsSampler::new(&data, &cov, tiny_config(Variant::Dlsn, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut state = sampler.init_state(&mut rng).unwrap();
        for _ in 0..50 {
            sampler.step_impute(&mut state, &mut rng).unwrap();
            for t in 0..2 {
                for i in 0..4 {
                    for j in 0..4 {
                        if let Some(y) = data.get(i, j, t) {
                            assert_eq!(state.y[cell_index(4, i, j, t)], y);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn step_errors_carry_iteration_and_name() {
        let err = Error::Step {
            step: "mu",
            iteration: 17,
            source: Box::new(Error::numerical("boom")),
        };
        let msg = err.to_string();
        assert!(msg.contains("mu") && msg.contains("17"));
        assert_eq!(err.exit_code(), 4);
    }
}
