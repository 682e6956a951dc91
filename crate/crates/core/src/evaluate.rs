//! Posterior summaries and scoring: AUC, HPD intervals, effective sample
//! size, temporal reciprocity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cell_index, NetworkSeries};
use crate::sampler::Trace;

/// Area under the ROC curve in Mann-Whitney form, ties counted one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::domain(format!(
            "auc got {} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain("auc scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::domain(format!(
            "auc needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks with midranks for ties.
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        let mid = (k + end + 1) as f64 / 2.0;
        let positives = order[k..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum += mid * positives as f64;
        k = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Shortest window holding `ceil(level * n)` of the sorted samples; the first
/// shortest window wins ties.
pub fn hpd(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 20 {
        return Err(Error::domain(format!("hpd needs at least 20 samples, got {n}")));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::domain(format!("hpd level must lie in (0, 1], got {level}")));
    }
    let mut x = samples.to_vec();
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("hpd samples contain NaN"));
    }
    x.sort_by(f64::total_cmp);
    let count = ((level * n as f64).ceil() as usize).clamp(1, n);
    let mut best = 0;
    let mut width = f64::INFINITY;
    for start in 0..=n - count {
        let w = x[start + count - 1] - x[start];
        if w < width {
            width = w;
            best = start;
        }
    }
    Ok((x[best], x[best + count - 1]))
}

/// Effective sample size `n / (1 + 2 sum rho_k)` with the autocorrelation sum
/// truncated by the initial positive sequence of adjacent-lag pair sums.
pub fn ess(chain: &[f64]) -> Result<f64> {
    let n = chain.len();
    if n < 50 {
        return Err(Error::domain(format!("ess needs at least 50 draws, got {n}")));
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = chain.iter().map(|x| x - mean).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return Ok(n as f64);
    }
    let rho = |k: usize| -> f64 {
        centered[..n - k]
            .iter()
            .zip(&centered[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
            / c0
    };
    // tau = -1 + 2 sum_m Gamma_m, Gamma_m = rho_{2m} + rho_{2m+1}, kept while
    // positive and clipped to be non-increasing.
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = if m == 0 { 1.0 } else { rho(2 * m) } + rho(2 * m + 1);
        if gamma <= 0.0 {
            break;
        }
        prev = prev.min(gamma);
        tau += 2.0 * prev;
        m += 1;
    }
    // Antithetic chains can drive tau to zero; cap at n log10(n).
    let cap = n as f64 * (n as f64).log10();
    Ok(if tau > 0.0 { (n as f64 / tau).min(cap) } else { cap })
}

/// Posterior mean with its 95% HPD interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn from_draws(draws: &[f64]) -> Result<Self> {
        let (lo, hi) = hpd(draws, 0.95)?;
        Ok(Self {
            mean: draws.iter().sum::<f64>() / draws.len() as f64,
            lo,
            hi,
        })
    }
}

/// One ordered pair's lag-1 reciprocity summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReciprocityRow {
    pub i: usize,
    pub j: usize,
    pub summary: Interval,
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Per-draw correlation of `S_ij(t_k)` with `S_ji(t_{k-1})` over `k = 2..N`.
pub fn reciprocity_draws(trace: &Trace, i: usize, j: usize) -> Vec<f64> {
    let (v, n) = (trace.v, trace.n);
    (0..trace.draws)
        .map(|s| {
            let sd = trace.predictor_draw(s);
            let x: Vec<f64> = (1..n).map(|t| sd[cell_index(v, i, j, t)]).collect();
            let y: Vec<f64> = (1..n).map(|t| sd[cell_index(v, j, i, t - 1)]).collect();
            pearson(&x, &y)
        })
        .collect()
}

/// Lag-1 temporal reciprocity for every ordered pair, sorted by decreasing
/// posterior mean.
pub fn temporal_reciprocity(trace: &Trace) -> Result<Vec<ReciprocityRow>> {
    if trace.n < 3 {
        return Err(Error::domain(format!(
            "temporal reciprocity needs at least 3 time points, got {}",
            trace.n
        )));
    }
    let mut rows = Vec::with_capacity(trace.v * (trace.v - 1));
    for i in 0..trace.v {
        for j in 0..trace.v {
            if i != j {
                rows.push(ReciprocityRow {
                    i,
                    j,
                    summary: Interval::from_draws(&reciprocity_draws(trace, i, j))?,
                });
            }
        }
    }
    rows.sort_by(|a, b| b.summary.mean.total_cmp(&a.summary.mean));
    Ok(rows)
}

/// Fit AUC over observed cells and prediction AUC over held-out cells, both
/// scored with posterior-mean probabilities.
pub fn score_fit(trace: &Trace, data_full: &NetworkSeries, hidden: &[bool]) -> Result<(f64, Option<f64>)> {
    let pi = trace.posterior_mean_pi();
    score_probabilities(&pi, data_full, hidden)
}

/// As [`score_fit`] for an arbitrary probability tensor.
pub fn score_probabilities(pi: &[f64], data_full: &NetworkSeries, hidden: &[bool]) -> Result<(f64, Option<f64>)> {
    let (fit_s, fit_y, pred_s, pred_y) = split_cells(pi, data_full, hidden);
    let fit = auc(&fit_s, &fit_y)?;
    let pred = if pred_s.is_empty() {
        None
    } else {
        Some(auc(&pred_s, &pred_y)?)
    };
    Ok((fit, pred))
}

/// Per-draw AUCs (fit, prediction) averaged over draws.
pub fn per_draw_auc(trace: &Trace, data_full: &NetworkSeries, hidden: &[bool]) -> Result<(f64, Option<f64>)> {
    let mut fit = 0.0;
    let mut pred = 0.0;
    let mut has_pred = false;
    for s in 0..trace.draws {
        let pi: Vec<f64> = trace.predictor_draw(s).iter().map(|&x| crate::model::link_probability(x)).collect();
        let (f, p) = score_probabilities(&pi, data_full, hidden)?;
        fit += f;
        if let Some(p) = p {
            pred += p;
            has_pred = true;
        }
    }
    let d = trace.draws.max(1) as f64;
    Ok((fit / d, has_pred.then_some(pred / d)))
}

fn split_cells(pi: &[f64], data: &NetworkSeries, hidden: &[bool]) -> (Vec<f64>, Vec<u8>, Vec<f64>, Vec<u8>) {
    let (v, n) = (data.num_nodes(), data.num_times());
    let (mut fs, mut fy, mut ps, mut py) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for t in 0..n {
        for i in 0..v {
            for j in 0..v {
                let Some(y) = data.get(i, j, t) else { continue };
                let c = cell_index(v, i, j, t);
                if hidden.get(c).copied().unwrap_or(false) {
                    ps.push(pi[c]);
                    py.push(y);
                } else {
                    fs.push(pi[c]);
                    fy.push(y);
                }
            }
        }
    }
    (fs, fy, ps, py)
}

/// Posterior summary of a fitted chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub draws: usize,
    /// `mu(t)` per time point.
    pub mu: Vec<Interval>,
    /// `beta_q(t)` at `q * N + t`.
    pub beta: Vec<Interval>,
    /// `a_i(t)`, `b_i(t)` at `i * N + t`.
    pub a: Vec<Interval>,
    pub b: Vec<Interval>,
    /// `1 / tau_h`.
    pub tau_inv: Vec<Interval>,
    /// Posterior-mean probability per cell (diagonal 0).
    pub pi_mean: Vec<f64>,
    pub fit_auc: Option<f64>,
    pub pred_auc: Option<f64>,
    /// `(label, ess)` for monitored scalars.
    pub ess: Vec<(String, f64)>,
    pub reciprocity: Vec<ReciprocityRow>,
}

fn intervals(values: &[f64], draws: usize, width: usize) -> Result<Vec<Interval>> {
    (0..width)
        .map(|k| {
            let series: Vec<f64> = (0..draws).map(|s| values[s * width + k]).collect();
            Interval::from_draws(&series)
        })
        .collect()
}

/// Off-diagonal cells to monitor for ESS: all of them up to `limit`, otherwise
/// an evenly strided subset.
pub fn monitored_cells(v: usize, n: usize, limit: usize) -> Vec<(usize, usize, usize)> {
    let all: Vec<(usize, usize, usize)> = (0..n)
        .flat_map(|t| (0..v).flat_map(move |i| (0..v).map(move |j| (i, j, t))))
        .filter(|(i, j, _)| i != j)
        .collect();
    if all.len() <= limit {
        return all;
    }
    (0..limit).map(|k| all[k * all.len() / limit]).collect()
}

/// Summarizes a trace. Scores are computed when the full data are supplied;
/// ESS is computed over at most `ess_cells` probability cells.
pub fn summarize(
    trace: &Trace,
    scoring: Option<(&NetworkSeries, &[bool])>,
    ess_cells: usize,
) -> Result<Summary> {
    let d = trace.draws;
    if d < 20 {
        return Err(Error::domain(format!("summaries need at least 20 draws, got {d}")));
    }
    let (v, n, h, p) = (trace.v, trace.n, trace.h, trace.p);
    let tau_inv: Vec<f64> = trace.tau.iter().map(|t| 1.0 / t).collect();
    let (fit_auc, pred_auc) = match scoring {
        Some((data, hidden)) => {
            let (f, p) = score_fit(trace, data, hidden)?;
            (Some(f), p)
        }
        None => (None, None),
    };
    let mut ess_rows = Vec::new();
    if d >= 50 {
        for (i, j, t) in monitored_cells(v, n, ess_cells) {
            ess_rows.push((format!("pi[{i},{j},{t}]"), ess(&trace.pi_series(i, j, t))?));
        }
        ess_rows.push(("mu[0]".to_string(), ess(&(0..d).map(|s| trace.mu_draw(s)[0]).collect::<Vec<_>>())?));
    }
    let reciprocity = if trace.variant.has_network_terms() && n >= 3 {
        temporal_reciprocity(trace)?
    } else {
        Vec::new()
    };
    Ok(Summary {
        draws: d,
        mu: intervals(&trace.mu, d, n)?,
        beta: intervals(&trace.beta, d, p * n)?,
        a: intervals(&trace.a, d, if trace.a.is_empty() { 0 } else { v * n })?,
        b: intervals(&trace.b, d, if trace.b.is_empty() { 0 } else { v * n })?,
        tau_inv: intervals(&tau_inv, d, h)?,
        pi_mean: trace.posterior_mean_pi(),
        fit_auc,
        pred_auc,
        ess: ess_rows,
        reciprocity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn brute_auc(s: &[f64], l: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, la) in s.iter().zip(l) {
            for (b, lb) in s.iter().zip(l) {
                if *la == 1 && *lb == 0 {
                    den += 1.0;
                    num += if a > b {
                        1.0
                    } else if a == b {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.6, 0.4, 0.2], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::Domain(_))));
    }

    #[test]
    fn auc_matches_pair_count_and_is_rank_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let mut l: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
            l[0] = 1;
            l[1] = 0;
            // coarse scores force ties
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
            let a = auc(&s, &l).unwrap();
            assert_eq!(a, brute_auc(&s, &l));
            let e: Vec<f64> = s.iter().map(|x| x.exp()).collect();
            let f: Vec<f64> = s.iter().map(|x| 3.0 * x - 1.0).collect();
            assert_eq!(auc(&e, &l).unwrap(), a);
            assert_eq!(auc(&f, &l).unwrap(), a);
        }
    }

    #[test]
    fn hpd_examples() {
        let x: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(hpd(&x, 0.95).unwrap(), (1.0, 95.0));
        assert_eq!(hpd(&[2.5; 30], 0.95).unwrap(), (2.5, 2.5));
        assert!(matches!(hpd(&[1.0; 19], 0.95), Err(Error::Domain(_))));
    }

    #[test]
    fn hpd_of_normal_and_equal_tail_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let (lo, hi) = hpd(&x, 0.95).unwrap();
        assert!((lo + 1.96).abs() < 0.05 && (hi - 1.96).abs() < 0.05, "{lo} {hi}");

        let skew: Vec<f64> = x.iter().take(2000).map(|v: &f64| v.exp()).collect();
        let mut sorted = skew.clone();
        sorted.sort_by(f64::total_cmp);
        let k = (0.95f64 * 2000.0).ceil() as usize;
        let tail = (2000 - k) / 2;
        let (lo, hi) = hpd(&skew, 0.95).unwrap();
        assert!(hi - lo <= sorted[tail + k - 1] - sorted[tail]);
    }

    #[test]
    fn ess_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let white: Vec<f64> = (0..4500).map(|_| rng.sample(StandardNormal)).collect();
        let e = ess(&white).unwrap();
        assert!((e - 4500.0).abs() < 0.15 * 4500.0, "{e}");

        let alt: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(ess(&alt).unwrap() > 1000.0);

        assert_eq!(ess(&[3.0; 80]).unwrap(), 80.0);
        assert!(ess(&[1.0; 49]).is_err());
    }

    #[test]
    fn ess_of_ar1() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = 0.9;
        let n = 10_000;
        let mut x = vec![0.0; n];
        for t in 1..n {
            let z: f64 = rng.sample(StandardNormal);
            x[t] = rho * x[t - 1] + z;
        }
        let e = ess(&x).unwrap();
        let want = n as f64 * (1.0 - rho) / (1.0 + rho);
        assert!((e - want).abs() < 0.2 * want, "{e} vs {want}");
    }

    #[test]
    fn pearson_degenerate_is_zero() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
    }

    fn trace_from_predictors(v: usize, n: usize, draws: &[Vec<f64>]) -> Trace {
        use crate::model::{ModelState, Variant};
        use crate::sampler::{HyperConfig, TraceMeta};
        let state = ModelState::zeros(Variant::Dlsn, v, n, 0, 1);
        let meta = TraceMeta {
            config: HyperConfig::default(),
            node_labels: (0..v).map(|i| format!("n{i}")).collect(),
            covariate_labels: Vec::new(),
            times: (1..=n).map(|t| t as f64).collect(),
            jitter: Vec::new(),
        };
        let mut tr = Trace::empty(&state, meta);
        for d in draws {
            tr.predictor.extend_from_slice(d);
            tr.mu.extend_from_slice(&vec![0.0; n]);
            tr.tau.push(1.0);
            tr.draws += 1;
        }
        tr
    }

    #[test]
    fn reciprocity_of_exact_lag_copy_is_one() {
        let (v, n) = (3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let mut s = vec![0.0; v * v * n];
                for t in 0..n {
                    for i in 0..v {
                        for j in 0..v {
                            if i != j {
                                s[cell_index(v, i, j, t)] = rng.sample(StandardNormal);
                            }
                        }
                    }
                }
                // S_01(t) = S_10(t - 1)
                for t in 1..n {
                    s[cell_index(v, 0, 1, t)] = s[cell_index(v, 1, 0, t - 1)];
                }
                s
            })
            .collect();
        let tr = trace_from_predictors(v, n, &draws);
        let rows = temporal_reciprocity(&tr).unwrap();
        assert_eq!((rows[0].i, rows[0].j), (0, 1));
        assert!((rows[0].summary.mean - 1.0).abs() < 1e-12);
        assert!((rows[0].summary.hi - rows[0].summary.lo).abs() < 1e-12);
    }

    #[test]
    fn reciprocity_null_and_relabeling() {
        let (v, n) = (3, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..v * v * n).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let tr = trace_from_predictors(v, n, &draws);
        for row in temporal_reciprocity(&tr).unwrap() {
            let d = reciprocity_draws(&tr, row.i, row.j);
            let m = row.summary.mean;
            let sd = (d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
            assert!(m.abs() < 3.0 * sd / (d.len() as f64).sqrt(), "{m}");
        }

        // reversing time and swapping the roles of i and j maps the pair (i, j)
        // onto (j, i) of the reversed trace
        let reversed: Vec<Vec<f64>> = draws
            .iter()
            .map(|s| {
                let mut r = vec![0.0; s.len()];
                for t in 0..n {
                    for i in 0..v {
                        for j in 0..v {
                            r[cell_index(v, j, i, n - 1 - t)] = s[cell_index(v, i, j, t)];
                        }
                    }
                }
                r
            })
            .collect();
        let tr2 = trace_from_predictors(v, n, &reversed);
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            let a = reciprocity_draws(&tr, i, j);
            let b = reciprocity_draws(&tr2, i, j);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn monitored_cells_are_capped() {
        assert_eq!(monitored_cells(3, 2, 1000).len(), 12);
        let m = monitored_cells(15, 40, 1000);
        assert_eq!(m.len(), 1000);
        assert!(m.iter().all(|(i, j, _)| i != j));
    }
}
