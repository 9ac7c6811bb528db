use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{mean, quantile_sorted};

/// Length, thinning and seed of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 5000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidInput("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidInput(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    pub fn n_kept(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Whether proposal scales may adapt during this sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    BurnIn,
    Sampling,
}

impl Phase {
    pub fn adapt(self) -> bool {
        self == Phase::BurnIn
    }
}

/// A model whose state can be advanced by one sweep.
pub trait ChainModel {
    fn parameter_names(&self) -> Vec<String>;
    fn step(&mut self, rng: &mut ChaCha8Rng, phase: Phase) -> Result<()>;
    /// Appends the tracked parameters, in `parameter_names` order.
    fn state(&self, out: &mut Vec<f64>);
    /// Post-burn-in acceptance rate of each Metropolis update, by name.
    fn acceptance_rates(&self) -> Vec<(String, f64)> {
        Vec::new()
    }
}

/// Point estimate with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn excludes_zero(&self) -> bool {
        !self.covers(0.0)
    }
}

/// Kept draws with per-parameter summaries.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorSummary {
    pub names: Vec<String>,
    /// `draws[k]` holds every kept draw of parameter `k`.
    pub draws: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub acceptance: Vec<(String, f64)>,
}

impl PosteriorSummary {
    pub fn from_draws(
        names: Vec<String>,
        draws: Vec<Vec<f64>>,
        acceptance: Vec<(String, f64)>,
    ) -> Self {
        let mut means = Vec::with_capacity(draws.len());
        let mut lower = Vec::with_capacity(draws.len());
        let mut upper = Vec::with_capacity(draws.len());
        for d in &draws {
            let mut s = d.clone();
            s.sort_by(f64::total_cmp);
            means.push(mean(d));
            lower.push(quantile_sorted(&s, 0.025));
            upper.push(quantile_sorted(&s, 0.975));
        }
        PosteriorSummary {
            names,
            draws,
            means,
            lower,
            upper,
            acceptance,
        }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn draws_of(&self, name: &str) -> Option<&[f64]> {
        self.index(name).map(|k| self.draws[k].as_slice())
    }

    /// `(mean, lower 2.5%, upper 97.5%)`.
    pub fn interval(&self, name: &str) -> Option<(f64, f64, f64)> {
        self.index(name)
            .map(|k| (self.means[k], self.lower[k], self.upper[k]))
    }

    pub fn estimate(&self, name: &str) -> Option<Interval> {
        self.interval(name)
            .map(|(estimate, lower, upper)| Interval {
                estimate,
                lower,
                upper,
            })
    }

    pub fn n_draws(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    /// One JSON object per kept draw, keyed by parameter name.
    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        for s in 0..self.n_draws() {
            let obj: serde_json::Map<String, serde_json::Value> = self
                .names
                .iter()
                .zip(&self.draws)
                .map(|(n, d)| (n.clone(), serde_json::json!(d[s])))
                .collect();
            serde_json::to_writer(&mut w, &obj).map_err(|e| Error::InvalidInput(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs `model` for `config.iterations` sweeps and keeps every `thin`-th
/// post-burn-in state.
pub fn run_chain<M: ChainModel + ?Sized>(
    model: &mut M,
    config: &McmcConfig,
) -> Result<PosteriorSummary> {
    config.validate()?;
    let names = model.parameter_names();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draws = vec![Vec::with_capacity(config.n_kept()); names.len()];
    let mut buf = Vec::with_capacity(names.len());
    for it in 0..config.iterations {
        let phase = if it < config.burn_in {
            Phase::BurnIn
        } else {
            Phase::Sampling
        };
        model.step(&mut rng, phase)?;
        if phase == Phase::Sampling && (it - config.burn_in).is_multiple_of(config.thin) {
            buf.clear();
            model.state(&mut buf);
            if buf.len() != names.len() {
                return Err(Error::InvalidInput(format!(
                    "model reported {} values for {} parameters",
                    buf.len(),
                    names.len()
                )));
            }
            for (d, v) in draws.iter_mut().zip(&buf) {
                d.push(*v);
            }
        }
    }
    Ok(PosteriorSummary::from_draws(
        names,
        draws,
        model.acceptance_rates(),
    ))
}
