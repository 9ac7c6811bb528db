use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::PriorSpec;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::linalg::{self, log1pexp};

/// Errors unless `design` has full column rank.
pub fn check_full_rank(design: &DMatrix<f64>, what: &str) -> Result<()> {
    let r = linalg::rank(design);
    if r < design.ncols() {
        return Err(Error::RankDeficient(format!(
            "{what}: rank {r} < {} columns",
            design.ncols()
        )));
    }
    Ok(())
}

/// Conjugate draw given the cross products `XᵀX` and `Xᵀy`.
pub fn draw_coefficients<R: Rng + ?Sized>(
    xtx: &DMatrix<f64>,
    xty: &DVector<f64>,
    resid_var: f64,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let p = xty.len();
    let mut prec = xtx / resid_var;
    for j in 0..p {
        prec[(j, j)] += 1.0 / prior.coef_var;
    }
    let lin = xty / resid_var;
    linalg::sample_canonical_normal(&prec, &lin, rng)
}

/// Exact draw of `θ` from `y ~ N(Dθ, σ²I)`, `θ_j ~ N(0, coef_var)`.
pub fn gibbs_normal_coefficients<R: Rng + ?Sized>(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    resid_var: f64,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if design.nrows() != response.len() {
        return Err(Error::InvalidInput(
            "design/response length mismatch".into(),
        ));
    }
    let xtx = design.transpose() * design;
    let xty = design.transpose() * response;
    draw_coefficients(&xtx, &xty, resid_var, prior, rng)
}

/// Draw of `σ² ~ InvGamma(shape + n/2, rate + SSR/2)`.
/// Shape and rate of the inverse-gamma full conditional of a residual
/// variance.
pub fn variance_posterior(residuals: &[f64], prior: &PriorSpec) -> (f64, f64) {
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    (
        prior.var_shape + residuals.len() as f64 / 2.0,
        prior.var_rate + ssr / 2.0,
    )
}

pub fn gibbs_variance<R: Rng + ?Sized>(residuals: &[f64], prior: &PriorSpec, rng: &mut R) -> f64 {
    let (shape, rate) = variance_posterior(residuals, prior);
    inv_gamma(shape, rate, rng)
}

pub(crate) fn inv_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
    1.0 / g.sample(rng)
}

fn rho_log_target(lattice: &Lattice, rho: f64, wu: f64, sigma2: f64) -> f64 {
    // log CAR density in rho (terms free of rho dropped) plus the logit Jacobian
    0.5 * lattice
        .spectrum()
        .iter()
        .map(|l| (1.0 - rho * l).ln())
        .sum::<f64>()
        + 0.5 * rho * wu / sigma2
        + rho.ln()
        + (1.0 - rho).ln()
}

/// Random-walk Metropolis step for the CAR dependence parameter on the logit
/// scale under a `Uniform(0, 1)` prior. Returns the new value and whether the
/// proposal was accepted.
pub fn mh_car_rho<R: Rng + ?Sized>(
    current: f64,
    field: &[f64],
    lattice: &Lattice,
    sigma: f64,
    proposal_sd: f64,
    rng: &mut R,
) -> (f64, bool) {
    let (_, wu) = lattice.car_quadratic_parts(field);
    let sigma2 = sigma * sigma;
    let z = linalg::logit(current);
    let step: f64 = rng.sample(StandardNormal);
    let prop = linalg::expit(z + proposal_sd * step);
    if !(prop > 0.0 && prop < 1.0) {
        return (current, false);
    }
    let log_ratio =
        rho_log_target(lattice, prop, wu, sigma2) - rho_log_target(lattice, current, wu, sigma2);
    let u: f64 = rng.random();
    if log_ratio.is_finite() && u.ln() < log_ratio {
        (prop, true)
    } else {
        (current, false)
    }
}

/// Bernoulli-logit outcomes with a fixed design.
#[derive(Debug, Clone)]
pub struct LogisticData<'a> {
    pub design: &'a DMatrix<f64>,
    pub outcomes: &'a [f64],
}

fn bernoulli_loglik(outcomes: &[f64], eta: &[f64]) -> f64 {
    outcomes
        .iter()
        .zip(eta)
        .map(|(a, e)| a * e - log1pexp(*e))
        .sum()
}

/// One sweep of component-wise random-walk Metropolis over the logistic
/// coefficients with an exact Bernoulli-logit likelihood ratio. `offset`
/// carries the latent-field contribution of each observation. Returns the
/// acceptance indicator of each component.
pub fn mh_logistic_block<R: Rng + ?Sized>(
    coefficients: &mut DVector<f64>,
    offset: &[f64],
    data: &LogisticData<'_>,
    proposal_sd: &[f64],
    prior: &PriorSpec,
    rng: &mut R,
) -> Vec<bool> {
    let n = data.outcomes.len();
    let x = data.design;
    let mut eta: Vec<f64> = (0..n)
        .map(|i| {
            offset[i]
                + (0..x.ncols())
                    .map(|j| x[(i, j)] * coefficients[j])
                    .sum::<f64>()
        })
        .collect();
    let mut current = bernoulli_loglik(data.outcomes, &eta);
    let mut accepted = Vec::with_capacity(coefficients.len());
    let mut prop_eta = vec![0.0; n];
    for j in 0..coefficients.len() {
        let step: f64 = rng.sample(StandardNormal);
        let delta = proposal_sd[j] * step;
        let old = coefficients[j];
        let new = old + delta;
        for i in 0..n {
            prop_eta[i] = eta[i] + delta * x[(i, j)];
        }
        let proposed = bernoulli_loglik(data.outcomes, &prop_eta);
        let log_ratio = proposed - current + (old * old - new * new) / (2.0 * prior.coef_var);
        let u: f64 = rng.random();
        if u.ln() < log_ratio {
            coefficients[j] = new;
            std::mem::swap(&mut eta, &mut prop_eta);
            current = proposed;
            accepted.push(true);
        } else {
            accepted.push(false);
        }
    }
    accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_rook_grid;
    use crate::linalg::{mean, rng_for, variance};

    #[test]
    fn zero_observations_recover_prior() {
        let prior = PriorSpec::default();
        let d = DMatrix::<f64>::zeros(0, 1);
        let y = DVector::<f64>::zeros(0);
        let mut rng = rng_for(1, 0);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| gibbs_normal_coefficients(&d, &y, 1.0, &prior, &mut rng).unwrap()[0])
            .collect();
        assert!(mean(&draws).abs() < 4.0 * (10.0f64 / 20_000.0).sqrt());
        assert!((variance(&draws) - 10.0).abs() < 0.4);
    }

    #[test]
    fn huge_prior_variance_approaches_ols() {
        let prior = PriorSpec {
            coef_var: 1e12,
            ..Default::default()
        };
        let d = DMatrix::from_row_slice(4, 2, &[1., 0., 1., 1., 1., 2., 1., 3.]);
        let y = DVector::from_vec(vec![1.0, 2.9, 5.1, 7.0]);
        let ols = (d.transpose() * &d).try_inverse().unwrap() * d.transpose() * &y;
        let mut rng = rng_for(2, 0);
        let mut acc = DVector::zeros(2);
        let n = 4000;
        for _ in 0..n {
            acc += gibbs_normal_coefficients(&d, &y, 1e-6, &prior, &mut rng).unwrap();
        }
        acc /= n as f64;
        assert!((acc - ols).abs().max() < 1e-4);
    }

    #[test]
    fn variance_with_zero_ssr_uses_shifted_shape() {
        // InvGamma(1.5, 0.005): mean = 0.005 / 0.5 = 0.01
        let prior = PriorSpec::default();
        let mut rng = rng_for(4, 0);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| gibbs_variance(&[0.0, 0.0], &prior, &mut rng))
            .collect();
        // the variance of InvGamma(1.5, ·) is infinite; compare the median instead
        let med = crate::linalg::quantile(&draws, 0.5);
        // median of InvGamma(1.5, 0.005) = 0.005 / median(Gamma(1.5, 1))
        let gamma_median = 1.182_986_942_187_669;
        assert!((med - 0.005 / gamma_median).abs() < 1e-4, "median {med}");
    }

    #[test]
    fn tiny_rho_proposal_always_accepts() {
        let l = build_rook_grid(4, 4).unwrap();
        let u: Vec<f64> = (0..16).map(|i| (i as f64).cos()).collect();
        let mut rng = rng_for(5, 0);
        let mut rho = 0.5;
        let mut acc = 0;
        for _ in 0..200 {
            let (r, a) = mh_car_rho(rho, &u, &l, 1.0, 1e-9, &mut rng);
            rho = r;
            acc += a as usize;
        }
        assert_eq!(acc, 200);
    }

    #[test]
    fn null_logistic_model_gives_half() {
        let x = DMatrix::from_element(10, 1, 1.0);
        let coef = DVector::from_vec(vec![0.0]);
        let eta: Vec<f64> = (0..10).map(|i| x[(i, 0)] * coef[0]).collect();
        assert!(eta.iter().all(|e| crate::linalg::expit(*e) == 0.5));
    }
}
