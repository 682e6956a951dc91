//! Squared-exponential Gaussian process covariances and the dense linear
//! algebra around them.
//!
//! Every GP in the model uses the unit-amplitude kernel
//! `c(t, t') = exp(-k (t - t')^2)` on a shared [`TimeGrid`]. Sender/receiver
//! pairs (additive effects, multiplicative factors) use the correlated
//! two-block layout built by [`assemble_block_cov`].

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch, LltParams, LltRegularization};
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, MatMut, Par, Side, Spec};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal loadings tried in order by [`chol_jitter`].
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Ordered evaluation points of every Gaussian process in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::config("time grid must contain at least one point"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("time grid contains a non-finite time stamp"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("time grid must be strictly increasing"));
        }
        Ok(Self { times })
    }

    /// Integer stamps `1..=n`, the default for quarterly data.
    pub fn integers(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|t| t as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Drops the first `count` points.
    pub fn tail(&self, count: usize) -> Result<Self> {
        Self::new(self.times[count.min(self.times.len())..].to_vec())
    }
}

/// Correlation matrix of one squared-exponential GP on a grid.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    values: Mat<f64>,
    length_scale: f64,
}

impl KernelMatrix {
    pub fn values(&self) -> &Mat<f64> {
        &self.values
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }
}

/// `c(t_i, t_j) = exp(-k (t_i - t_j)^2)` evaluated on the whole grid.
pub fn sq_exp_kernel(grid: &TimeGrid, k: f64) -> Result<KernelMatrix> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::config(format!("kernel length scale must be positive, got {k}")));
    }
    let t = grid.times();
    let n = t.len();
    let values = Mat::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            let d = t[i] - t[j];
            (-k * d * d).exp()
        }
    });
    Ok(KernelMatrix {
        values,
        length_scale: k,
    })
}

/// Two-block covariance `scale * [[K, rho K], [rho K, K]]` of a sender/receiver pair.
#[derive(Debug, Clone)]
pub struct BlockCov {
    pub base: KernelMatrix,
    pub rho: f64,
    pub scale: f64,
}

impl BlockCov {
    pub fn new(base: KernelMatrix, rho: f64, scale: f64) -> Result<Self> {
        check_rho(rho)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::config(format!("block scale must be positive, got {scale}")));
        }
        Ok(Self { base, rho, scale })
    }

    pub fn assemble(&self) -> Mat<f64> {
        assemble_block_cov(&self.base, self.rho, self.scale)
            .expect("BlockCov invariants checked at construction")
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return Err(Error::config(format!("correlation must satisfy |rho| < 1, got {rho}")));
    }
    Ok(())
}

/// Builds the `2N x 2N` matrix `[[s K, s rho K], [s rho K, s K]]`.
pub fn assemble_block_cov(base: &KernelMatrix, rho: f64, scale: f64) -> Result<Mat<f64>> {
    check_rho(rho)?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::config(format!("block scale must be positive, got {scale}")));
    }
    let n = base.dim();
    let k = base.values();
    Ok(Mat::from_fn(2 * n, 2 * n, |i, j| {
        let factor = if (i < n) == (j < n) { scale } else { scale * rho };
        factor * k[(i % n, j % n)]
    }))
}

/// Lower Cholesky factor together with the diagonal loading that made it succeed.
#[derive(Debug, Clone)]
pub struct CholFactor {
    pub l: Mat<f64>,
    pub jitter: f64,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_in_place(&self, rhs: &mut [f64]) {
        forward_substitute(&self.l, rhs);
    }

    /// Solves `L^T x = b` in place.
    pub fn solve_upper_in_place(&self, rhs: &mut [f64]) {
        backward_substitute_transpose(&self.l, rhs);
    }

    /// `(L L^T)^{-1} b`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `b^T (L L^T)^{-1} b`, computed as `|L^{-1} b|^2`.
    pub fn quad_form_inv(&self, rhs: &[f64]) -> f64 {
        let mut x = rhs.to_vec();
        self.solve_lower_in_place(&mut x);
        x.iter().map(|v| v * v).sum()
    }

    /// `L z`.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        lower_mul(&self.l, z)
    }

    /// Dense `(L L^T)^{-1}` assembled column by column through triangular solves.
    pub fn inverse(&self) -> Mat<f64> {
        let n = self.dim();
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

pub(crate) fn forward_substitute(l: &Mat<f64>, x: &mut [f64]) {
    let n = x.len();
    let rhs = MatMut::from_column_major_slice_mut(x, n, 1);
    solve_lower_triangular_in_place(l.as_ref(), rhs, Par::Seq);
}

pub(crate) fn backward_substitute_transpose(l: &Mat<f64>, x: &mut [f64]) {
    let n = x.len();
    let rhs = MatMut::from_column_major_slice_mut(x, n, 1);
    solve_upper_triangular_in_place(l.transpose(), rhs, Par::Seq);
}

pub(crate) fn lower_mul(l: &Mat<f64>, z: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut out = vec![0.0; n];
    for (k, &zk) in z.iter().enumerate() {
        let col = &l.col_as_slice(k)[k..];
        for (o, &lik) in out[k..].iter_mut().zip(col) {
            *o += lik * zk;
        }
    }
    out
}

/// `L^T r` for lower-triangular `L`.
pub(crate) fn lower_transpose_mul(l: &Mat<f64>, r: &[f64]) -> Vec<f64> {
    (0..l.ncols())
        .map(|k| {
            l.col_as_slice(k)[k..]
                .iter()
                .zip(&r[k..])
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Cholesky factor of `matrix + jitter I`, trying each rung of [`JITTER_LADDER`].
///
/// A factorization counts as successful only if every pivot clears
/// `n * eps * max|A_ii|`; faer happily returns factors with pivots at
/// round-off level for numerically singular kernels.
pub fn chol_jitter(matrix: &Mat<f64>) -> Result<CholFactor> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::numerical(format!(
            "Cholesky of non-square {}x{} matrix",
            n,
            matrix.ncols()
        )));
    }
    chol_jitter_lower(matrix.clone()).map_err(|e| match e {
        Error::Numerical(msg) => Error::numerical(format!("{msg}, max asymmetry {:e}", asymmetry(matrix))),
        other => other,
    })
}

/// As [`chol_jitter`], reading only the lower triangle and factoring in
/// place; a copy of the input is kept so a failed rung can be undone.
pub(crate) fn chol_jitter_lower(mut a: Mat<f64>) -> Result<CholFactor> {
    let n = a.nrows();
    let original = a.clone();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let pivot_floor = (n as f64) * f64::EPSILON * max_diag.max(f64::MIN_POSITIVE);
    let params: Spec<LltParams, f64> = Default::default();
    let mut mem = MemBuffer::new(cholesky_in_place_scratch::<f64>(n, Par::Seq, params));
    for (rung, &jitter) in JITTER_LADDER.iter().enumerate() {
        if rung > 0 {
            a.copy_from(&original);
        }
        for i in 0..n {
            a[(i, i)] = original[(i, i)] + jitter;
        }
        let ok = cholesky_in_place(
            a.as_mut(),
            LltRegularization::default(),
            Par::Seq,
            MemStack::new(&mut mem),
            params,
        )
        .is_ok()
            && (0..n).all(|i| {
                let d = a[(i, i)];
                d.is_finite() && d * d > pivot_floor
            });
        if ok {
            for j in 1..n {
                a.col_as_slice_mut(j)[..j].iter_mut().for_each(|x| *x = 0.0);
            }
            return Ok(CholFactor { l: a, jitter });
        }
    }
    let full = Mat::from_fn(n, n, |i, j| if i >= j { original[(i, j)] } else { original[(j, i)] });
    Err(Error::numerical(format!(
        "Cholesky failed at jitter {:e}: {}",
        JITTER_LADDER[JITTER_LADDER.len() - 1],
        eigen_diagnostics(&full)
    )))
}

fn asymmetry(matrix: &Mat<f64>) -> f64 {
    let n = matrix.nrows();
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (matrix[(i, j)] - matrix[(j, i)]).abs())
        .fold(0.0, f64::max)
}

fn eigen_diagnostics(lower: &Mat<f64>) -> String {
    let n = lower.nrows();
    match lower.self_adjoint_eigenvalues(Side::Lower) {
        Ok(ev) if !ev.is_empty() => {
            let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            format!("dim {n}, eigenvalues in [{lo:e}, {hi:e}]")
        }
        _ => format!("dim {n}, eigendecomposition unavailable"),
    }
}

/// One draw from `Normal(mean, cov)` as `mean + L z`.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &[f64], cov: &Mat<f64>, rng: &mut R) -> Result<Vec<f64>> {
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::domain(format!(
            "mean has length {n} but covariance is {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let degenerate = (0..n).all(|j| (0..n).all(|i| cov[(i, j)] == 0.0));
    if degenerate {
        return Ok(mean.to_vec());
    }
    let factor = chol_jitter(cov)?;
    Ok(sample_with_factor(mean, &factor, rng))
}

/// `mean + L z` for a precomputed factor.
pub fn sample_with_factor<R: Rng + ?Sized>(mean: &[f64], factor: &CholFactor, rng: &mut R) -> Vec<f64> {
    let z: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
    let lz = factor.mul_lower(&z);
    mean.iter().zip(lz).map(|(m, d)| m + d).collect()
}

/// A GP prior on one grid with its factor computed once.
#[derive(Debug, Clone)]
pub struct GpPrior {
    pub kernel: KernelMatrix,
    pub factor: CholFactor,
}

impl GpPrior {
    pub fn new(grid: &TimeGrid, k: f64) -> Result<Self> {
        let kernel = sq_exp_kernel(grid, k)?;
        let factor = chol_jitter(kernel.values())?;
        Ok(Self { kernel, factor })
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// The covariance the factor actually represents (kernel plus jitter).
    pub fn effective_cov(&self) -> Mat<f64> {
        let mut c = self.kernel.values().clone();
        for i in 0..c.nrows() {
            c[(i, i)] += self.factor.jitter;
        }
        c
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let zero = vec![0.0; self.dim()];
        sample_with_factor(&zero, &self.factor, rng)
    }
}

/// Lower Cholesky factor of the 2x2 correlation `[[1, rho], [rho, 1]]`.
pub(crate) fn corr2_factor(rho: f64) -> [[f64; 2]; 2] {
    [[1.0, 0.0], [rho, (1.0 - rho * rho).sqrt()]]
}
