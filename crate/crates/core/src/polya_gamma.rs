//! Exact sampling of the Polya-Gamma PG(1, z) distribution.
//!
//! Uses Devroye's alternating-series accept/reject scheme as laid out by
//! Polson, Scott and Windle: a PG(1, z) draw is `J*(1, |z|/2) / 4`, and
//! `J*` is sampled from a two-piece proposal (truncated inverse Gaussian
//! below [`TRUNCATION`], exponential above) with acceptance decided by
//! partial sums of the series density.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};

/// Switch point between the inverse-Gaussian and exponential proposals.
pub const TRUNCATION: f64 = 0.64;

/// A PG(1, z) draw. Always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PgDraw(f64);

impl PgDraw {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// One exact PG(1, z) draw.
pub fn sample_pg1<R: Rng + ?Sized>(z: f64, rng: &mut R) -> Result<f64> {
    sample_pg1_counted(z, rng).map(|(x, _)| x)
}

/// Like [`sample_pg1`] but also returns the number of proposals consumed.
pub fn sample_pg1_counted<R: Rng + ?Sized>(z: f64, rng: &mut R) -> Result<(f64, u32)> {
    if !z.is_finite() {
        return Err(Error::numerical(format!("PG(1, z) requested with non-finite z = {z}")));
    }
    let (j, proposals) = sample_jstar(0.5 * z.abs(), rng);
    Ok((0.25 * j, proposals))
}

/// `E[PG(1, z)] = tanh(z/2) / (2z)`, with the series `1/4 - z^2/48` near zero.
pub fn pg1_mean(z: f64) -> f64 {
    let z = z.abs();
    if z < 1e-4 {
        0.25 - z * z / 48.0
    } else {
        (0.5 * z).tanh() / (2.0 * z)
    }
}

/// `Var[PG(1, z)] = (sinh z - z) / (4 z^3 cosh^2(z/2))`, by its Taylor series near zero.
pub fn pg1_variance(z: f64) -> f64 {
    let z = z.abs();
    if z < 1e-2 {
        let z2 = z * z;
        1.0 / 24.0 - z2 / 120.0 + 17.0 * z2 * z2 / 13440.0 - 31.0 * z2 * z2 * z2 / 181440.0
    } else {
        let c = (0.5 * z).cosh();
        (z.sinh() - z) / (4.0 * z * z * z * c * c)
    }
}

/// Draws `J*(1, c)`; returns the value and the proposal count.
fn sample_jstar<R: Rng + ?Sized>(c: f64, rng: &mut R) -> (f64, u32) {
    let t = TRUNCATION;
    let k = PI * PI / 8.0 + 0.5 * c * c;
    let p = FRAC_PI_2 / k * (-k * t).exp();
    let q = 2.0 * (-c).exp() * inverse_gaussian_cdf(t, c);
    let left_mass = p / (p + q);

    let mut proposals = 0;
    loop {
        proposals += 1;
        let x = if rng.random::<f64>() < left_mass {
            let e: f64 = rng.sample(Exp1);
            t + e / k
        } else {
            truncated_inverse_gaussian(c, t, rng)
        };

        let mut s = series_coefficient(0, x, t);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coefficient(n, x, t);
                if y <= s {
                    return (x, proposals);
                }
            } else {
                s += series_coefficient(n, x, t);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Piecewise coefficient `a_n(x)` of the `J*(1, 0)` density series.
fn series_coefficient(n: u32, x: f64, t: f64) -> f64 {
    let m = n as f64 + 0.5;
    if x > t {
        PI * m * (-0.5 * m * m * PI * PI * x).exp()
    } else {
        (2.0 / (PI * x)).powf(1.5) * PI * m * (-2.0 * m * m / x).exp()
    }
}

/// CDF at `x` of the inverse Gaussian with mean `1/c` and shape 1.
fn inverse_gaussian_cdf(x: f64, c: f64) -> f64 {
    let sx = x.sqrt();
    let b = (x * c - 1.0) / sx;
    let a = -(x * c + 1.0) / sx;
    // exp(2c) Phi(a) evaluated in log space; Phi(a) underflows before exp(2c) overflows.
    let tail = std_normal_cdf(a);
    let tail_term = if tail > 0.0 {
        (2.0 * c + tail.ln()).exp()
    } else {
        0.0
    };
    std_normal_cdf(b) + tail_term
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse Gaussian (mean `1/c`, shape 1) restricted to `(0, t)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(c: f64, t: f64, rng: &mut R) -> f64 {
    let mu = if c > 0.0 { 1.0 / c } else { f64::INFINITY };
    if mu > t {
        // Scaled inverse chi-square proposal, accepted with prob exp(-c^2 x / 2).
        loop {
            let x = loop {
                let e1: f64 = rng.sample(Exp1);
                let e2: f64 = rng.sample(Exp1);
                if e1 * e1 <= 2.0 * e2 / t {
                    let d = 1.0 + t * e1;
                    break t / (d * d);
                }
            };
            let accept = (-0.5 * c * c * x).exp();
            if rng.random::<f64>() <= accept {
                return x;
            }
        }
    } else {
        loop {
            let n: f64 = rng.sample(StandardNormal);
            let y = n * n;
            let my = mu * y;
            let mut x = mu + 0.5 * mu * my - 0.5 * mu * (4.0 * my + my * my).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < t {
                return x;
            }
        }
    }
}
