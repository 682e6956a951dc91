//! Data containers, the linear predictor, the logistic likelihood and the
//! SVD factor split.
//!
//! Dyad tensors are stored flat with index `(t * V + i) * V + j`; the
//! diagonal `i == j` is present in storage but never used.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::TimeGrid;

#[inline]
pub fn cell_index(v: usize, i: usize, j: usize, t: usize) -> usize {
    (t * v + i) * v + j
}

/// Binary directed network observed on a time grid, with an observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSeries {
    v: usize,
    grid: TimeGrid,
    y: Vec<u8>,
    observed: Vec<bool>,
    node_labels: Vec<String>,
}

impl NetworkSeries {
    /// Builds a series from raw cells. Diagonal cells are forced unobserved and
    /// unobserved cells are stored as 0 so hidden values cannot leak.
    pub fn new(
        node_labels: Vec<String>,
        grid: TimeGrid,
        mut y: Vec<u8>,
        mut observed: Vec<bool>,
    ) -> Result<Self> {
        let v = node_labels.len();
        let n = grid.len();
        if v < 2 {
            return Err(Error::data(format!("a network needs at least 2 nodes, got {v}")));
        }
        if y.len() != v * v * n || observed.len() != v * v * n {
            return Err(Error::data(format!(
                "expected {} cells for {v} nodes x {n} times, got y={} mask={}",
                v * v * n,
                y.len(),
                observed.len()
            )));
        }
        for t in 0..n {
            for i in 0..v {
                observed[cell_index(v, i, i, t)] = false;
            }
        }
        for (c, (yv, &o)) in y.iter_mut().zip(&observed).enumerate() {
            if !o {
                *yv = 0;
            } else if *yv > 1 {
                return Err(Error::data(format!("cell {c} holds non-binary value {yv}")));
            }
        }
        Ok(Self {
            v,
            grid,
            y,
            observed,
            node_labels,
        })
    }

    /// Fully observed series from a closure `f(i, j, t) -> {0, 1}`.
    pub fn from_fn(
        node_labels: Vec<String>,
        grid: TimeGrid,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let v = node_labels.len();
        let n = grid.len();
        let mut y = vec![0u8; v * v * n];
        for t in 0..n {
            for i in 0..v {
                for j in 0..v {
                    if i != j {
                        y[cell_index(v, i, j, t)] = f(i, j, t);
                    }
                }
            }
        }
        Self::new(node_labels, grid, y, vec![true; v * v * n])
    }

    pub fn num_nodes(&self) -> usize {
        self.v
    }

    pub fn num_times(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    /// The observed value, or `None` for diagonal and masked cells.
    pub fn get(&self, i: usize, j: usize, t: usize) -> Option<u8> {
        let c = cell_index(self.v, i, j, t);
        self.observed[c].then(|| self.y[c])
    }

    pub fn is_observed(&self, i: usize, j: usize, t: usize) -> bool {
        self.observed[cell_index(self.v, i, j, t)]
    }

    /// Raw cell storage (masked cells read as 0).
    pub fn raw_values(&self) -> &[u8] {
        &self.y
    }

    pub fn mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn num_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Copy with the given cells additionally hidden.
    pub fn with_hidden(&self, hide: &[bool]) -> Result<Self> {
        let observed = self
            .observed
            .iter()
            .zip(hide)
            .map(|(&o, &h)| o && !h)
            .collect();
        Self::new(self.node_labels.clone(), self.grid.clone(), self.y.clone(), observed)
    }

    /// Drops the first `count` time points.
    pub fn drop_leading(&self, count: usize) -> Result<Self> {
        let stride = self.v * self.v;
        let grid = self.grid.tail(count)?;
        Self::new(
            self.node_labels.clone(),
            grid,
            self.y[count * stride..].to_vec(),
            self.observed[count * stride..].to_vec(),
        )
    }
}

/// Dyadic covariates `Z[i, j, t, p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSet {
    v: usize,
    n: usize,
    p: usize,
    z: Vec<f64>,
    labels: Vec<String>,
}

impl CovariateSet {
    pub fn new(v: usize, n: usize, labels: Vec<String>, z: Vec<f64>) -> Result<Self> {
        let p = labels.len();
        if z.len() != v * v * n * p {
            return Err(Error::data(format!(
                "covariate tensor has {} entries, expected {}",
                z.len(),
                v * v * n * p
            )));
        }
        if let Some(pos) = z.iter().position(|x| !x.is_finite()) {
            return Err(Error::data(format!("covariate entry {pos} is not finite")));
        }
        Ok(Self { v, n, p, z, labels })
    }

    /// The `P = 0` covariate set.
    pub fn empty(v: usize, n: usize) -> Self {
        Self {
            v,
            n,
            p: 0,
            z: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_fn(
        v: usize,
        n: usize,
        labels: Vec<String>,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let p = labels.len();
        let mut z = vec![0.0; v * v * n * p];
        for t in 0..n {
            for i in 0..v {
                for j in 0..v {
                    for q in 0..p {
                        z[cell_index(v, i, j, t) * p + q] = f(i, j, t, q);
                    }
                }
            }
        }
        Self::new(v, n, labels, z)
    }

    pub fn num_covariates(&self) -> usize {
        self.p
    }

    pub fn num_nodes(&self) -> usize {
        self.v
    }

    pub fn num_times(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize, q: usize) -> f64 {
        self.z[cell_index(self.v, i, j, t) * self.p + q]
    }

    /// All covariates of one dyad-time.
    #[inline]
    pub fn row(&self, i: usize, j: usize, t: usize) -> &[f64] {
        let c = cell_index(self.v, i, j, t) * self.p;
        &self.z[c..c + self.p]
    }
}

/// Which terms of the linear predictor a fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Intercept, covariates, additive and multiplicative effects.
    Dlsn,
    /// Intercept and covariates only.
    Naive,
    /// Intercept, covariates and iid dyad-time random effects.
    RandomEffect,
}

impl Variant {
    pub fn has_network_terms(self) -> bool {
        matches!(self, Variant::Dlsn)
    }

    pub fn has_random_effects(self) -> bool {
        matches!(self, Variant::RandomEffect)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dlsn => "dlsn",
            Variant::Naive => "naive",
            Variant::RandomEffect => "random_effect",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dlsn" => Ok(Variant::Dlsn),
            "naive" => Ok(Variant::Naive),
            "random_effect" => Ok(Variant::RandomEffect),
            other => Err(Error::config(format!(
                "unknown variant '{other}' (expected dlsn, naive or random_effect)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every latent quantity of one sampler iteration.
///
/// Layouts: `beta[q * N + t]`, `a/b[i * N + t]`,
/// `xs/xr[(i * H + h) * N + t]`, dyad tensors by [`cell_index`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub variant: Variant,
    pub v: usize,
    pub n: usize,
    pub p: usize,
    pub h: usize,
    pub mu: Vec<f64>,
    pub beta: Vec<f64>,
    pub xs: Vec<f64>,
    pub xr: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub nu: Vec<f64>,
    pub tau: Vec<f64>,
    pub w: Vec<f64>,
    /// Working outcomes: observed values where observed, imputations elsewhere.
    pub y: Vec<u8>,
    pub eps: Vec<f64>,
    pub sigma2_eps: f64,
}

impl ModelState {
    pub fn zeros(variant: Variant, v: usize, n: usize, p: usize, h: usize) -> Self {
        let h = if variant.has_network_terms() { h } else { 0 };
        let cells = v * v * n;
        Self {
            variant,
            v,
            n,
            p,
            h,
            mu: vec![0.0; n],
            beta: vec![0.0; p * n],
            xs: vec![0.0; v * h * n],
            xr: vec![0.0; v * h * n],
            a: vec![0.0; v * n],
            b: vec![0.0; v * n],
            nu: vec![1.0; h],
            tau: vec![1.0; h],
            w: vec![0.0; cells],
            y: vec![0; cells],
            eps: if variant.has_random_effects() {
                vec![0.0; cells]
            } else {
                Vec::new()
            },
            sigma2_eps: if variant.has_random_effects() { 1.0 } else { 0.0 },
        }
    }

    #[inline]
    pub fn x_index(&self, i: usize, d: usize, t: usize) -> usize {
        (i * self.h + d) * self.n + t
    }

    /// `x_i^s(t)^T x_j^r(t)`.
    #[inline]
    pub fn inner(&self, i: usize, j: usize, t: usize) -> f64 {
        (0..self.h)
            .map(|d| self.xs[self.x_index(i, d, t)] * self.xr[self.x_index(j, d, t)])
            .sum()
    }

    #[inline]
    pub fn z_beta(&self, cov: &CovariateSet, i: usize, j: usize, t: usize) -> f64 {
        if self.p == 0 {
            return 0.0;
        }
        cov.row(i, j, t)
            .iter()
            .enumerate()
            .map(|(q, z)| z * self.beta[q * self.n + t])
            .sum()
    }

    /// `S_ij(t)` without any dimension or diagonal checks.
    #[inline]
    pub fn predictor(&self, cov: &CovariateSet, i: usize, j: usize, t: usize) -> f64 {
        let mut s = self.mu[t] + self.z_beta(cov, i, j, t);
        match self.variant {
            Variant::Dlsn => {
                s += self.inner(i, j, t) + self.a[i * self.n + t] + self.b[j * self.n + t];
            }
            Variant::RandomEffect => s += self.eps[cell_index(self.v, i, j, t)],
            Variant::Naive => {}
        }
        s
    }

    /// `tau_h = prod_{l <= h} nu_l`.
    pub fn recompose_tau(&mut self) {
        let mut acc = 1.0;
        for (t, nu) in self.tau.iter_mut().zip(&self.nu) {
            acc *= nu;
            *t = acc;
        }
    }

    /// Predictor for every off-diagonal cell, diagonal left at 0.
    pub fn predictor_tensor(&self, cov: &CovariateSet) -> Vec<f64> {
        let mut s = vec![0.0; self.v * self.v * self.n];
        for t in 0..self.n {
            for i in 0..self.v {
                for j in 0..self.v {
                    if i != j {
                        s[cell_index(self.v, i, j, t)] = self.predictor(cov, i, j, t);
                    }
                }
            }
        }
        s
    }

    pub fn check_shapes(&self, data: &NetworkSeries, cov: &CovariateSet) -> Result<()> {
        if data.num_nodes() != self.v || data.num_times() != self.n {
            return Err(Error::domain(format!(
                "state is {}x{} but data is {}x{}",
                self.v,
                self.n,
                data.num_nodes(),
                data.num_times()
            )));
        }
        if cov.num_covariates() != self.p
            || (self.p > 0 && (cov.num_nodes() != self.v || cov.num_times() != self.n))
        {
            return Err(Error::domain(format!(
                "state expects {} covariates on {}x{}, got {} on {}x{}",
                self.p,
                self.v,
                self.n,
                cov.num_covariates(),
                cov.num_nodes(),
                cov.num_times()
            )));
        }
        Ok(())
    }
}

/// `S_ij(t)` for the state's variant.
pub fn linear_predictor(
    state: &ModelState,
    cov: &CovariateSet,
    i: usize,
    j: usize,
    t: usize,
) -> Result<f64> {
    if i == j {
        return Err(Error::domain(format!("linear predictor undefined on the diagonal ({i}, {i})")));
    }
    if i >= state.v || j >= state.v || t >= state.n {
        return Err(Error::domain(format!(
            "cell ({i}, {j}, {t}) outside {}x{}x{}",
            state.v, state.v, state.n
        )));
    }
    Ok(state.predictor(cov, i, j, t))
}

/// Logistic link `1 / (1 + exp(-s))`, never exponentiating a positive argument.
#[inline]
pub fn link_probability(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`link_probability`].
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(s))` without overflow.
#[inline]
pub fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Bernoulli log-likelihood of one cell on the predictor scale.
#[inline]
pub fn cell_log_likelihood(y: u8, s: f64) -> f64 {
    if y == 1 {
        -softplus(-s)
    } else {
        -softplus(s)
    }
}

/// Sum over observed off-diagonal cells of `y log pi + (1 - y) log(1 - pi)`.
pub fn log_likelihood(state: &ModelState, data: &NetworkSeries, cov: &CovariateSet) -> Result<f64> {
    state.check_shapes(data, cov)?;
    let mut ll = 0.0;
    for t in 0..state.n {
        for i in 0..state.v {
            for j in 0..state.v {
                if let Some(y) = data.get(i, j, t) {
                    ll += cell_log_likelihood(y, state.predictor(cov, i, j, t));
                }
            }
        }
    }
    Ok(ll)
}

/// Splits `S = U D V^T` into `Xs = U D^{1/2}` and `Xr = V D^{1/2}` so that
/// `Xs Xr^T = S`.
///
/// Singular values below `max(rows, cols) * eps * sigma_max` are treated as
/// zero so an exactly low-rank input yields exactly zero trailing factors.
pub fn svd_split(s: &Mat<f64>) -> Result<(Mat<f64>, Mat<f64>)> {
    let (rows, cols) = (s.nrows(), s.ncols());
    if (0..cols).any(|j| (0..rows).any(|i| !s[(i, j)].is_finite())) {
        return Err(Error::numerical("SVD input contains non-finite entries"));
    }
    let svd = s
        .thin_svd()
        .map_err(|e| Error::numerical(format!("SVD failed: {e:?}")))?;
    let u = svd.U();
    let vmat = svd.V();
    let sigma = svd.S().column_vector();
    let k = sigma.nrows();
    let smax = (0..k).map(|i| sigma[i]).fold(0.0, f64::max);
    let cutoff = rows.max(cols) as f64 * f64::EPSILON * smax;
    let root: Vec<f64> = (0..k)
        .map(|i| if sigma[i] > cutoff { sigma[i].sqrt() } else { 0.0 })
        .collect();
    let xs = Mat::from_fn(rows, k, |i, c| u[(i, c)] * root[c]);
    let xr = Mat::from_fn(cols, k, |i, c| vmat[(i, c)] * root[c]);
    Ok((xs, xr))
}

/// Sender/receiver factors whose inner products pass through the link to
/// the target probability matrix (off-diagonal entries are used; the
/// diagonal target is taken as 0.5).
pub fn factor_probability_matrix(pi: &Mat<f64>) -> Result<(Mat<f64>, Mat<f64>)> {
    let n = pi.nrows();
    let mut s = Mat::zeros(n, pi.ncols());
    for j in 0..pi.ncols() {
        for i in 0..n {
            let p = if i == j { 0.5 } else { pi[(i, j)] };
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::domain(format!("target probability {p} at ({i}, {j}) not in (0, 1)")));
            }
            s[(i, j)] = logit(p);
        }
    }
    svd_split(&s)
}
