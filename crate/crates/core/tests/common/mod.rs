//! Independent dense oracles shared by the integration tests.
//!
//! Everything here is written with plain loops over `Vec<f64>` so that it
//! shares no linear algebra with the library.

#![allow(dead_code)]

use dlsn::kernels::TimeGrid;
use dlsn::model::{cell_index, CovariateSet, ModelState, NetworkSeries, Variant};
use dlsn::sampler::{GibbsSampler, HyperConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn labels(v: usize) -> Vec<String> {
    (0..v).map(|i| format!("n{i}")).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        assert!(d.abs() > 1e-300, "singular matrix in oracle");
        for x in m[col].iter_mut() {
            *x /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn sq_exp(k: f64, t1: f64, t2: f64) -> f64 {
    (-k * (t1 - t2) * (t1 - t2)).exp()
}

/// `S_ij(t)` by direct summation over the documented state layouts.
pub fn scalar_predictor(s: &ModelState, cov: &CovariateSet, i: usize, j: usize, t: usize) -> f64 {
    let n = s.n;
    let mut out = s.mu[t];
    for q in 0..s.p {
        out += cov.get(i, j, t, q) * s.beta[q * n + t];
    }
    for h in 0..s.h {
        out += s.xs[(i * s.h + h) * n + t] * s.xr[(j * s.h + h) * n + t];
    }
    out += s.a[i * n + t] + s.b[j * n + t];
    out
}

/// Conditional mean and covariance of the block written by `set`, computed by
/// brute force: design rows by unit perturbation of the scalar predictor,
/// `Sigma = (C^{-1} + X^T Omega X)^{-1}`, `m = Sigma X^T (kappa - Omega offset)`.
pub fn brute_force_conditional(
    state: &ModelState,
    cov: &CovariateSet,
    prior_cov: &Dense,
    set: impl Fn(&mut ModelState, &[f64]),
) -> (Vec<f64>, Dense) {
    let d = prior_cov.len();
    let (v, n) = (state.v, state.n);
    let mut base = state.clone();
    set(&mut base, &vec![0.0; d]);
    let mut rows = Vec::new();
    for t in 0..n {
        for i in 0..v {
            for j in 0..v {
                if i == j {
                    continue;
                }
                let offset = scalar_predictor(&base, cov, i, j, t);
                let x: Vec<f64> = (0..d)
                    .map(|k| {
                        let mut e = vec![0.0; d];
                        e[k] = 1.0;
                        let mut st = base.clone();
                        set(&mut st, &e);
                        scalar_predictor(&st, cov, i, j, t) - offset
                    })
                    .collect();
                let c = cell_index(v, i, j, t);
                rows.push((x, offset, state.w[c], state.y[c] as f64 - 0.5));
            }
        }
    }
    let mut q = invert(prior_cov);
    let mut rhs = vec![0.0; d];
    for (x, offset, w, kappa) in &rows {
        for a in 0..d {
            rhs[a] += x[a] * (kappa - w * offset);
            for b in 0..d {
                q[a][b] += x[a] * w * x[b];
            }
        }
    }
    let sigma = invert(&q);
    let mean = (0..d).map(|a| (0..d).map(|b| sigma[a][b] * rhs[b]).sum()).collect();
    (mean, sigma)
}

/// `max |a - b| / max |b|`.
pub fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn rel_err_mat(a: &faer::Mat<f64>, b: &Dense) -> f64 {
    let n = b.len();
    let flat_a: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| a[(i, j)]).collect();
    let flat_b: Vec<f64> = b.iter().flatten().copied().collect();
    rel_err_vec(&flat_a, &flat_b)
}

/// Reorders an oracle-ordered mean and covariance into library order, where
/// library index `k` holds oracle index `perm[k]`.
pub fn permute(mean: &[f64], cov: &Dense, perm: &[usize]) -> (Vec<f64>, Dense) {
    let m = perm.iter().map(|&p| mean[p]).collect();
    let c = perm.iter().map(|&p| perm.iter().map(|&q| cov[p][q]).collect()).collect();
    (m, c)
}

/// A small fully specified instance with random state, weights and outcomes.
pub struct Instance {
    pub data: NetworkSeries,
    pub cov: CovariateSet,
    pub config: HyperConfig,
    pub state: ModelState,
}

impl Instance {
    pub fn new(v: usize, n: usize, h: usize, p: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = TimeGrid::integers(n).unwrap();
        let data = NetworkSeries::from_fn(labels(v), grid, |_, _, _| 0).unwrap();
        let cov_labels = (0..p).map(|q| format!("z{q}")).collect();
        let cov = CovariateSet::from_fn(v, n, cov_labels, |i, j, _, _| {
            if i == j {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .unwrap();
        let config = HyperConfig {
            h_star: h,
            k_mu: 0.2,
            k_beta: 0.3,
            k_ab: 0.4,
            k_x: 0.5,
            rho_ab: 0.3,
            rho_x: 0.6,
            shrink_a: 2.0,
            iterations: 10,
            burn_in: 0,
            thin: 1,
            seed: 1,
            variant: Variant::Dlsn,
        };
        let mut state = ModelState::zeros(Variant::Dlsn, v, n, p, h);
        let mut fill = |x: &mut Vec<f64>| x.iter_mut().for_each(|e| *e = rng.random_range(-1.0..1.0));
        fill(&mut state.mu);
        fill(&mut state.beta);
        fill(&mut state.a);
        fill(&mut state.b);
        fill(&mut state.xs);
        fill(&mut state.xr);
        for (l, nu) in state.nu.iter_mut().enumerate() {
            *nu = 1.5 + 0.25 * l as f64;
        }
        state.recompose_tau();
        for t in 0..n {
            for i in 0..v {
                for j in 0..v {
                    if i != j {
                        let c = cell_index(v, i, j, t);
                        state.w[c] = rng.random_range(0.2..1.5);
                        state.y[c] = rng.random_bool(0.5) as u8;
                    }
                }
            }
        }
        Self {
            data,
            cov,
            config,
            state,
        }
    }

    pub fn sampler(&self) -> GibbsSampler<'_> {
        GibbsSampler::new(&self.data, &self.cov, self.config.clone()).unwrap()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.state.n).map(|t| (t + 1) as f64).collect()
    }
}

/// Worst relative errors (mean, covariance) of the four Gaussian steps
/// against the brute-force oracle, one entry per checked block.
pub fn gaussian_step_errors(inst: &Instance) -> Vec<(String, f64, f64)> {
    let s = inst.sampler();
    let st = &inst.state;
    let (v, n, h) = (st.v, st.n, st.h);
    let times = inst.times();
    let cfg = &inst.config;
    let mut out = Vec::new();

    // Step 2: mu(t_1..t_N).
    let c_mu: Dense = (0..n).map(|a| (0..n).map(|b| sq_exp(cfg.k_mu, times[a], times[b])).collect()).collect();
    let (m, c) = brute_force_conditional(st, &inst.cov, &c_mu, |x, th| x.mu.copy_from_slice(th));
    let lib = s.mu_conditional(st).unwrap();
    out.push(("mu".into(), rel_err_vec(&lib.mean(), &m), rel_err_mat(&lib.covariance(), &c)));

    // Step 3: beta_q with the other coefficients fixed.
    let c_beta: Dense = (0..n)
        .map(|a| (0..n).map(|b| sq_exp(cfg.k_beta, times[a], times[b])).collect())
        .collect();
    for q in 0..st.p {
        let (m, c) = brute_force_conditional(st, &inst.cov, &c_beta, |x, th| {
            x.beta[q * n..(q + 1) * n].copy_from_slice(th)
        });
        let lib = s.beta_conditional(st, q).unwrap();
        out.push((format!("beta{q}"), rel_err_vec(&lib.mean(), &m), rel_err_mat(&lib.covariance(), &c)));
    }

    // Step 4: node trajectories, oracle order (role, h, t).
    let dim = 2 * h * n;
    let idx = |role: usize, d: usize, t: usize| (role * h + d) * n + t;
    let mut c_x = vec![vec![0.0; dim]; dim];
    for r1 in 0..2 {
        for r2 in 0..2 {
            let r = if r1 == r2 { 1.0 } else { cfg.rho_x };
            for d in 0..h {
                for t1 in 0..n {
                    for t2 in 0..n {
                        c_x[idx(r1, d, t1)][idx(r2, d, t2)] = r / st.tau[d] * sq_exp(cfg.k_x, times[t1], times[t2]);
                    }
                }
            }
        }
    }
    let perm: Vec<usize> = (0..dim)
        .map(|k| {
            let (t, rest) = (k / (2 * h), k % (2 * h));
            idx(rest / h, rest % h, t)
        })
        .collect();
    for node in 0..v {
        let (m, c) = brute_force_conditional(st, &inst.cov, &c_x, |x, th| {
            for d in 0..h {
                for t in 0..n {
                    x.xs[(node * h + d) * n + t] = th[idx(0, d, t)];
                    x.xr[(node * h + d) * n + t] = th[idx(1, d, t)];
                }
            }
        });
        let (m, c) = permute(&m, &c, &perm);
        let lib = s.latent_conditional(st, node).unwrap();
        out.push((format!("x{node}"), rel_err_vec(&lib.mean(), &m), rel_err_mat(&lib.covariance(), &c)));
    }

    // Step 6: (a_v, b_v), order (role, t).
    let mut c_ab = vec![vec![0.0; 2 * n]; 2 * n];
    for r1 in 0..2 {
        for r2 in 0..2 {
            let r = if r1 == r2 { 1.0 } else { cfg.rho_ab };
            for t1 in 0..n {
                for t2 in 0..n {
                    c_ab[r1 * n + t1][r2 * n + t2] = r * sq_exp(cfg.k_ab, times[t1], times[t2]);
                }
            }
        }
    }
    for node in 0..v {
        let (m, c) = brute_force_conditional(st, &inst.cov, &c_ab, |x, th| {
            x.a[node * n..(node + 1) * n].copy_from_slice(&th[..n]);
            x.b[node * n..(node + 1) * n].copy_from_slice(&th[n..]);
        });
        let lib = s.additive_conditional(st, node).unwrap();
        out.push((format!("ab{node}"), rel_err_vec(&lib.mean(), &m), rel_err_mat(&lib.covariance(), &c)));
    }
    out
}

/// Relative error of every Step 5 rate against a scalar-loop evaluation.
pub fn shrinkage_rate_errors(inst: &Instance) -> Vec<f64> {
    let s = inst.sampler();
    let st = &inst.state;
    let (v, n, h) = (st.v, st.n, st.h);
    let times = inst.times();
    let rho = inst.config.rho_x;
    let mut bmat = vec![vec![0.0; 2 * n]; 2 * n];
    for r1 in 0..2 {
        for r2 in 0..2 {
            let r = if r1 == r2 { 1.0 } else { rho };
            for t1 in 0..n {
                for t2 in 0..n {
                    bmat[r1 * n + t1][r2 * n + t2] = r * sq_exp(inst.config.k_x, times[t1], times[t2]);
                }
            }
        }
    }
    let binv = invert(&bmat);
    let quad = |d: usize| -> f64 {
        let mut total = 0.0;
        for i in 0..v {
            let x: Vec<f64> = (0..2 * n)
                .map(|k| {
                    let t = k % n;
                    if k < n {
                        st.xs[(i * h + d) * n + t]
                    } else {
                        st.xr[(i * h + d) * n + t]
                    }
                })
                .collect();
            for a in 0..2 * n {
                for b in 0..2 * n {
                    total += x[a] * binv[a][b] * x[b];
                }
            }
        }
        total
    };
    let lib_quad = s.shrinkage_quad_forms(st);
    (0..h)
        .map(|l| {
            let mut sum = 0.0;
            for d in l..h {
                let mut prod = 1.0;
                for t in 0..=d {
                    if t != l {
                        prod *= st.nu[t];
                    }
                }
                sum += prod * quad(d);
            }
            let oracle = 1.0 + 0.5 * sum;
            let (_, rate) = s.shrinkage_params(&st.nu, &lib_quad, l);
            (rate - oracle).abs() / oracle
        })
        .collect()
}
