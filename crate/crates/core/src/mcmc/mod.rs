//! Metropolis-within-Gibbs engine shared by every Bayesian fit.
//!
//! Regression coefficients and variances are drawn from their conjugate
//! full conditionals; CAR dependence parameters and logistic coefficients use
//! random-walk Metropolis steps whose proposal scales adapt during burn-in
//! only. Latent spatial fields are updated one region at a time.

mod blocks;
mod chain;
mod field;
mod polya_gamma;
mod updates;

pub use blocks::{GaussianBlock, LogisticBlock};
pub use chain::{run_chain, ChainModel, Interval, McmcConfig, Phase, PosteriorSummary};
pub use field::{FieldPrior, LatentField, Tuner};
pub use polya_gamma::sample_pg1;
pub use updates::{
    check_full_rank, draw_coefficients, gibbs_normal_coefficients, gibbs_variance, mh_car_rho,
    mh_logistic_block, variance_posterior, LogisticData,
};

/// Prior family used by every model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    /// Variance of the independent mean-zero normal prior on each mean parameter.
    pub coef_var: f64,
    /// Inverse-gamma shape for every variance.
    pub var_shape: f64,
    /// Inverse-gamma rate for every variance.
    pub var_rate: f64,
}

impl Default for PriorSpec {
    /// `Normal(0, 10)` means, `InvGamma(0.5, 0.005)` variances; CAR
    /// dependence parameters are `Uniform(0, 1)`.
    fn default() -> Self {
        PriorSpec {
            coef_var: 10.0,
            var_shape: 0.5,
            var_rate: 0.005,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> crate::Result<()> {
        if self.coef_var > 0.0 && self.var_shape > 0.0 && self.var_rate > 0.0 {
            Ok(())
        } else {
            Err(crate::Error::ParameterOutOfRange(
                "prior hyperparameters must be strictly positive".into(),
            ))
        }
    }
}

/// Chain settings and priors shared by every Bayesian fit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitConfig {
    pub mcmc: McmcConfig,
    pub prior: PriorSpec,
}

impl FitConfig {
    pub fn new(iterations: usize, burn_in: usize, thin: usize, seed: u64) -> Self {
        FitConfig {
            mcmc: McmcConfig {
                iterations,
                burn_in,
                thin,
                seed,
            },
            prior: PriorSpec::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.mcmc.seed = seed;
        self
    }
}
