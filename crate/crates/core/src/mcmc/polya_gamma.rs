//! Exact Pólya-Gamma `PG(1, c)` draws (Devroye's alternating-series method).

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::PI;

const TRUNC: f64 = 0.64;

/// n-th coefficient of the alternating series for the `J*(1, z)` density.
fn a_n(n: usize, x: f64) -> f64 {
    let k = n as f64 + 0.5;
    if x < TRUNC {
        PI * k * (2.0 / (PI * x)).powf(1.5) * (-2.0 * k * k / x).exp()
    } else {
        PI * k * (-k * k * PI * PI * x / 2.0).exp()
    }
}

/// CDF at `t` of the inverse Gaussian with mean `mu` and shape 1.
fn inverse_gaussian_cdf(t: f64, mu: f64) -> f64 {
    let n = Normal::standard();
    let r = (1.0 / t).sqrt();
    n.cdf(r * (t / mu - 1.0)) + (2.0 / mu).exp() * n.cdf(-r * (t / mu + 1.0))
}

/// Inverse Gaussian (mean `1/z`, shape 1) truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let mu = 1.0 / z;
    if mu > TRUNC {
        loop {
            let x = loop {
                let e1: f64 = rng.sample(Exp1);
                let e2: f64 = rng.sample(Exp1);
                if e1 * e1 <= 2.0 * e2 / TRUNC {
                    let d = 1.0 + e1 * TRUNC;
                    break TRUNC / (d * d);
                }
            };
            let u: f64 = rng.random();
            if u <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    } else {
        loop {
            let n: f64 = rng.sample(StandardNormal);
            let y = n * n;
            let mut x =
                mu + 0.5 * mu * mu * y - 0.5 * mu * (4.0 * mu * y + (mu * y).powi(2)).sqrt();
            let u: f64 = rng.random();
            if u > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= TRUNC {
                return x;
            }
        }
    }
}

/// One draw from `PG(1, c)`.
pub fn sample_pg1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    let z = c.abs() / 2.0;
    let k = PI * PI / 8.0 + z * z / 2.0;
    let p = PI / (2.0 * k) * (-k * TRUNC).exp();
    let q = if z > 0.0 {
        2.0 * (-z).exp() * inverse_gaussian_cdf(TRUNC, 1.0 / z)
    } else {
        // z → 0 limit of the same mass
        2.0 * Normal::standard().cdf(-(1.0 / TRUNC).sqrt()) * 2.0
    };
    loop {
        let u: f64 = rng.random();
        let x = if u < p / (p + q) {
            let e: f64 = rng.sample(Exp1);
            TRUNC + e / k
        } else if z > 0.0 {
            truncated_inverse_gaussian(z, rng)
        } else {
            // z = 0: inverse chi-square(1) truncated to (0, TRUNC)
            loop {
                let n: f64 = rng.sample(StandardNormal);
                let x = 1.0 / (n * n);
                if x < TRUNC {
                    break x;
                }
            }
        };
        let mut s = a_n(0, x);
        let w: f64 = rng.random();
        let y = w * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= a_n(n, x);
                if y <= s {
                    return x / 4.0;
                }
            } else {
                s += a_n(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}
