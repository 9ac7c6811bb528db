use rand::Rng;
use rand_distr::StandardNormal;

use super::updates::{inv_gamma, mh_car_rho};
use super::PriorSpec;
use crate::lattice::Lattice;

/// Prior on a region-level latent field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldPrior {
    /// `CAR(ρ, σ)` with `ρ ~ Uniform(0, 1)`.
    Car,
    /// Independent `Normal(0, σ²)` effects per region.
    Iid,
}

/// Random-walk proposal scale that adapts toward a target acceptance rate
/// during burn-in and is frozen afterwards.
#[derive(Debug, Clone)]
pub struct Tuner {
    pub sd: f64,
    target: f64,
    batch_accept: usize,
    batch_total: usize,
    batches: usize,
    accepted: usize,
    total: usize,
}

const BATCH: usize = 50;

impl Tuner {
    pub fn new(sd: f64) -> Self {
        Tuner {
            sd,
            target: 0.44,
            batch_accept: 0,
            batch_total: 0,
            batches: 0,
            accepted: 0,
            total: 0,
        }
    }

    pub fn record(&mut self, accepted: bool, adapt: bool) {
        if adapt {
            self.batch_total += 1;
            self.batch_accept += accepted as usize;
            if self.batch_total == BATCH {
                self.batches += 1;
                let rate = self.batch_accept as f64 / BATCH as f64;
                let delta = (0.01f64).max(1.0 / (self.batches as f64).sqrt()).min(0.5);
                self.sd *= if rate > self.target {
                    delta.exp()
                } else {
                    (-delta).exp()
                };
                self.batch_total = 0;
                self.batch_accept = 0;
            }
        } else {
            self.total += 1;
            self.accepted += accepted as usize;
        }
    }

    /// Post burn-in acceptance rate (NaN before any sampling-phase step).
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.total as f64
        }
    }
}

/// Region-level latent field with its variance and (for CAR) dependence.
#[derive(Debug, Clone)]
pub struct LatentField {
    pub values: Vec<f64>,
    pub rho: f64,
    pub sigma2: f64,
    pub prior: FieldPrior,
    pub rho_tuner: Tuner,
    site_accepted: usize,
    site_total: usize,
}

impl LatentField {
    pub fn new(n_regions: usize, prior: FieldPrior) -> Self {
        LatentField {
            values: vec![0.0; n_regions],
            rho: 0.5,
            sigma2: 1.0,
            prior,
            rho_tuner: Tuner::new(0.5),
            site_accepted: 0,
            site_total: 0,
        }
    }

    /// Mean and precision of the prior full conditional of region `i`.
    pub fn prior_conditional(&self, lattice: Option<&Lattice>, i: usize) -> (f64, f64) {
        match self.prior {
            FieldPrior::Car => {
                let nb = lattice.expect("CAR field requires a lattice").neighbors(i);
                let bar = nb.iter().map(|&k| self.values[k]).sum::<f64>() / nb.len() as f64;
                (self.rho * bar, nb.len() as f64 / self.sigma2)
            }
            FieldPrior::Iid => (0.0, 1.0 / self.sigma2),
        }
    }

    /// Exact single-site Gibbs sweep. Region `i` receives Gaussian information
    /// `obs_prec[i]·x² − 2·obs_lin[i]·x` from the data (halved in the log density).
    pub fn gibbs_sites<R: Rng + ?Sized>(
        &mut self,
        lattice: Option<&Lattice>,
        obs_prec: &[f64],
        obs_lin: &[f64],
        rng: &mut R,
    ) {
        for i in 0..self.values.len() {
            let (m0, p0) = self.prior_conditional(lattice, i);
            let prec = p0 + obs_prec[i];
            let mean = (p0 * m0 + obs_lin[i]) / prec;
            let z: f64 = rng.sample(StandardNormal);
            self.values[i] = mean + z / prec.sqrt();
        }
    }

    /// Single-site Metropolis sweep for non-Gaussian data. The proposal is the
    /// Gaussian part of the full conditional (prior plus `obs_prec`/`obs_lin`),
    /// so acceptance depends only on the remaining log-likelihood `loglik(i, x)`.
    pub fn mh_sites<R, F>(
        &mut self,
        lattice: Option<&Lattice>,
        obs_prec: &[f64],
        obs_lin: &[f64],
        mut loglik: F,
        adapt: bool,
        rng: &mut R,
    ) where
        R: Rng + ?Sized,
        F: FnMut(usize, f64) -> f64,
    {
        for i in 0..self.values.len() {
            let (m0, p0) = self.prior_conditional(lattice, i);
            let prec = p0 + obs_prec[i];
            let mean = (p0 * m0 + obs_lin[i]) / prec;
            let z: f64 = rng.sample(StandardNormal);
            let prop = mean + z / prec.sqrt();
            let cur = self.values[i];
            let log_ratio = loglik(i, prop) - loglik(i, cur);
            let u: f64 = rng.random();
            let ok = u.ln() < log_ratio;
            if ok {
                self.values[i] = prop;
            }
            self.record_site(ok, adapt);
        }
    }

    /// Counts a site-level Metropolis decision after burn-in.
    pub fn record_site(&mut self, accepted: bool, adapt: bool) {
        if !adapt {
            self.site_total += 1;
            self.site_accepted += accepted as usize;
        }
    }

    pub fn update_sigma2<R: Rng + ?Sized>(
        &mut self,
        lattice: Option<&Lattice>,
        prior: &PriorSpec,
        rng: &mut R,
    ) {
        let q = match self.prior {
            FieldPrior::Car => {
                let (mu, wu) = lattice
                    .expect("CAR field requires a lattice")
                    .car_quadratic_parts(&self.values);
                mu - self.rho * wu
            }
            FieldPrior::Iid => self.values.iter().map(|v| v * v).sum(),
        };
        let n = self.values.len() as f64;
        self.sigma2 = inv_gamma(prior.var_shape + n / 2.0, prior.var_rate + q / 2.0, rng);
    }

    pub fn update_rho<R: Rng + ?Sized>(&mut self, lattice: &Lattice, adapt: bool, rng: &mut R) {
        if self.prior != FieldPrior::Car {
            return;
        }
        let (rho, ok) = mh_car_rho(
            self.rho,
            &self.values,
            lattice,
            self.sigma2.sqrt(),
            self.rho_tuner.sd,
            rng,
        );
        self.rho = rho;
        self.rho_tuner.record(ok, adapt);
    }

    /// Subtracts the field mean and returns it.
    pub fn recenter(&mut self) -> f64 {
        let m = self.values.iter().sum::<f64>() / self.values.len() as f64;
        for v in &mut self.values {
            *v -= m;
        }
        m
    }

    pub fn site_acceptance(&self) -> f64 {
        if self.site_total == 0 {
            f64::NAN
        } else {
            self.site_accepted as f64 / self.site_total as f64
        }
    }
}
