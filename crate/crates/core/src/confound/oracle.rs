use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, rng_for, spd_inverse, standard_normals};

/// Monte Carlo mean of the generalized-least-squares slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlsBiasResult {
    pub mean: f64,
    /// Monte Carlo standard error of `mean`.
    pub mc_se: f64,
    pub reps: usize,
}

/// Simulates `A ~ N(0, Σ₂)`, `U | A ~ N(φA, Σ₁)`, `Y = βA + U + N(0, τ²I)`
/// and averages `β̂ = (AᵀΣ⁻¹A)⁻¹AᵀΣ⁻¹Y` for an assumed covariance `Σ`.
#[allow(clippy::too_many_arguments)]
pub fn gls_bias_oracle(
    sigma_assumed: &DMatrix<f64>,
    phi: f64,
    beta: f64,
    sigma1: &DMatrix<f64>,
    sigma2: &DMatrix<f64>,
    tau2: f64,
    reps: usize,
    seed: u64,
) -> Result<GlsBiasResult> {
    let n = sigma_assumed.nrows();
    if sigma1.nrows() != n || sigma2.nrows() != n || !sigma_assumed.is_square() {
        return Err(Error::InvalidInput(
            "covariances must be square and of equal size".into(),
        ));
    }
    if reps < 2 || tau2 < 0.0 {
        return Err(Error::InvalidInput(
            "need at least two replications and tau2 >= 0".into(),
        ));
    }
    let prec = spd_inverse(sigma_assumed, "assumed covariance")?;
    let l1 = cholesky(sigma1, "Sigma1")?.l();
    let l2 = cholesky(sigma2, "Sigma2")?.l();
    let tau = tau2.sqrt();
    let mut rng = rng_for(seed, 0);
    let mut est = Vec::with_capacity(reps);
    for _ in 0..reps {
        let a: DVector<f64> = &l2 * standard_normals(n, &mut rng);
        let u: DVector<f64> = &a * phi + &l1 * standard_normals(n, &mut rng);
        let y: DVector<f64> = &a * beta + u + standard_normals(n, &mut rng) * tau;
        let w = &prec * &a;
        est.push(w.dot(&y) / w.dot(&a));
    }
    let mean = est.iter().sum::<f64>() / reps as f64;
    let var = est.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    Ok(GlsBiasResult {
        mean,
        mc_se: (var / reps as f64).sqrt(),
        reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_confounding_recovers_beta() {
        let n = 10;
        let i = DMatrix::<f64>::identity(n, n);
        let r = gls_bias_oracle(&i, 0.0, 0.5, &i, &i, 1.0, 2000, 3).unwrap();
        assert!((r.mean - 0.5).abs() < 3.0 * r.mc_se, "{r:?}");
    }
}
