//! Benchmark generator and simulation harness for the confounding study.
//!
//! Each dataset has one observation per region of a rook grid:
//! `U ~ CAR(ρ_U, 2)`, `V ~ CAR(ρ_V, 2)`, `A ~ Bernoulli(expit g(V, φU))`,
//! `Y ~ Normal(Aβ + U, 1)`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::confound::{fit_estimator, CausalEstimate, Estimator, ModelSpec};
use crate::data::{fmt_f64, ArealDataset, RunConfig, TreatmentKind};
use crate::error::{Error, Result};
use crate::lattice::{build_rook_grid, car_precision, CarParams, GmrfSampler, Lattice};
use crate::linalg::{derive_seed, expit, mean, rng_for};
use crate::mcmc::FitConfig;
use crate::propensity::fit_binary_propensity;

/// How the confounder enters the treatment logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// `V + φU`.
    Linear,
    /// `V + φ{U·1(U > 0) − 0.63}`.
    Nonlinear,
    /// `V + φU·c`, with `c` rising linearly from 0 to 1 across grid columns.
    Nonstationary,
}

/// Centering constant of the nonlinear link.
pub const NONLINEAR_SHIFT: f64 = 0.63;

/// Field standard deviation used for both `U` and `V`.
pub const FIELD_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub rho_u: f64,
    pub rho_v: f64,
    pub link: Link,
    pub beta: f64,
    pub phi: f64,
    pub nrows: usize,
    pub ncols: usize,
}

pub const SCENARIO_NAMES: [&str; 6] = ["a", "b", "c", "d", "nonlinear", "nonstationary"];

impl Scenario {
    /// Named scenario with `β = φ = 0.5` on a 20×20 grid.
    pub fn named(name: &str) -> Result<Scenario> {
        let (rho_u, rho_v, link) = match name {
            "a" => (0.99, 0.99, Link::Linear),
            "b" => (0.90, 0.99, Link::Linear),
            "c" => (0.99, 0.90, Link::Linear),
            "d" => (0.90, 0.90, Link::Linear),
            "nonlinear" => (0.99, 0.99, Link::Nonlinear),
            "nonstationary" => (0.99, 0.99, Link::Nonstationary),
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown scenario `{other}`; expected one of {}",
                    SCENARIO_NAMES.join(", ")
                )))
            }
        };
        Ok(Scenario {
            name: name.to_string(),
            rho_u,
            rho_v,
            link,
            beta: 0.5,
            phi: 0.5,
            nrows: 20,
            ncols: 20,
        })
    }

    pub fn with_grid(mut self, nrows: usize, ncols: usize) -> Self {
        self.nrows = nrows;
        self.ncols = ncols;
        self
    }

    pub fn with_effects(mut self, beta: f64, phi: f64) -> Self {
        self.beta = beta;
        self.phi = phi;
        self
    }

    pub fn from_config(config: &RunConfig) -> Result<Scenario> {
        Ok(Scenario::named(&config.scenario)?
            .with_grid(config.grid.0, config.grid.1)
            .with_effects(config.beta, config.phi))
    }

    /// Treatment logit for region `i`.
    pub fn logit(&self, i: usize, u: f64, v: f64) -> f64 {
        match self.link {
            Link::Linear => v + self.phi * u,
            Link::Nonlinear => v + self.phi * (if u > 0.0 { u } else { 0.0 } - NONLINEAR_SHIFT),
            Link::Nonstationary => {
                let col = i % self.ncols;
                let c = if self.ncols > 1 {
                    col as f64 / (self.ncols - 1) as f64
                } else {
                    0.0
                };
                v + self.phi * u * c
            }
        }
    }
}

/// Latent quantities behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Treatment probability of each region.
    pub prob: Vec<f64>,
}

/// Scenario with its lattice and field samplers factored once.
#[derive(Debug, Clone)]
pub struct Generator {
    pub scenario: Scenario,
    pub lattice: Lattice,
    sampler_u: GmrfSampler,
    sampler_v: GmrfSampler,
}

impl Generator {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let lattice = build_rook_grid(scenario.nrows, scenario.ncols)?;
        let pu = car_precision(&lattice, CarParams::new(scenario.rho_u, FIELD_SIGMA)?)?;
        let pv = car_precision(&lattice, CarParams::new(scenario.rho_v, FIELD_SIGMA)?)?;
        Ok(Generator {
            sampler_u: GmrfSampler::new(&pu)?,
            sampler_v: GmrfSampler::new(&pv)?,
            scenario,
            lattice,
        })
    }

    /// Latent fields and treatment probabilities for `seed`.
    pub fn fields(&self, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = rng_for(seed, 0);
        let u = self.sampler_u.draw(&mut rng);
        let v = self.sampler_v.draw(&mut rng);
        let prob = (0..u.len())
            .map(|i| expit(self.scenario.logit(i, u[i], v[i])))
            .collect();
        (u, v, prob)
    }

    pub fn generate(&self, seed: u64) -> Result<(ArealDataset, Truth)> {
        let (u, v, prob) = self.fields(seed);
        let mut rng = rng_for(seed, 1);
        let n = u.len();
        let a: Vec<f64> = prob
            .iter()
            .map(|p| (rng.random::<f64>() < *p) as u8 as f64)
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = rng.sample(StandardNormal);
                a[i] * self.scenario.beta + u[i] + e
            })
            .collect();
        let ds = ArealDataset::new((0..n).collect(), y, a, vec![], n, TreatmentKind::Binary)?;
        Ok((
            ds,
            Truth {
                beta: self.scenario.beta,
                u,
                v,
                prob,
            },
        ))
    }
}

pub fn generate_dataset(scenario: &Scenario, seed: u64) -> Result<(ArealDataset, Truth)> {
    Generator::new(scenario.clone())?.generate(seed)
}

/// Seeds used for dataset `index` of a study with master seed `master`:
/// `(data seed, fit seed)`.
pub fn dataset_seeds(master: u64, index: usize) -> (u64, u64) {
    let s = derive_seed(master, index as u64);
    (derive_seed(s, 0), derive_seed(s, 1))
}

/// Outcome of one estimator on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetResult {
    pub index: usize,
    pub estimates: Vec<(Estimator, std::result::Result<CausalEstimate, String>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub n_datasets: usize,
    pub mean_bias: f64,
    pub coverage95: f64,
    pub mean_ci_width: f64,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub scenario: Scenario,
    pub truth: f64,
    pub datasets: Vec<DatasetResult>,
    pub summaries: Vec<EstimatorSummary>,
}

impl StudyResult {
    pub fn summary(&self, e: Estimator) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == e)
    }

    pub fn write_estimates<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", crate::confound::ESTIMATE_HEADER)?;
        for d in &self.datasets {
            for (e, r) in &d.estimates {
                match r {
                    Ok(est) => writeln!(w, "{}", est.csv_row(&d.index.to_string()))?,
                    Err(msg) => writeln!(
                        w,
                        "{},{},NaN,NaN,NaN,failed: {}",
                        d.index,
                        e,
                        msg.replace([',', '\n'], " ")
                    )?,
                }
            }
        }
        Ok(())
    }
}

pub const SUMMARY_HEADER: &str =
    "scenario,estimator,n_datasets,mean_bias,coverage95,mean_ci_width,n_failed";

pub fn write_summary<W: Write>(mut w: W, results: &[StudyResult]) -> Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in results {
        for s in &r.summaries {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.scenario.name,
                s.estimator,
                s.n_datasets,
                fmt_f64(s.mean_bias),
                fmt_f64(s.coverage95),
                fmt_f64(s.mean_ci_width),
                s.n_failed
            )?;
        }
    }
    Ok(())
}

fn parse_estimators(names: &[String]) -> Result<Vec<Estimator>> {
    let allowed = [
        Estimator::Ns,
        Estimator::NsP,
        Estimator::S,
        Estimator::SP,
        Estimator::SAipw,
        Estimator::Joint,
        Estimator::Cut,
    ];
    names
        .iter()
        .map(|n| {
            let e: Estimator = n.parse()?;
            if allowed.contains(&e) {
                Ok(e)
            } else {
                Err(Error::InvalidInput(format!(
                    "estimator {e} is not part of the benchmark"
                )))
            }
        })
        .collect()
}

/// Fits every requested estimator on one generated dataset.
pub fn fit_dataset(
    data: &ArealDataset,
    lattice: &Lattice,
    estimators: &[Estimator],
    fit: &FitConfig,
) -> Vec<(Estimator, std::result::Result<CausalEstimate, String>)> {
    let needs = estimators.iter().any(|e| e.needs_propensity());
    let prop = if needs {
        Some(
            fit_binary_propensity(data, lattice, &fit.with_seed(derive_seed(fit.mcmc.seed, 1)))
                .map_err(|e| e.to_string()),
        )
    } else {
        None
    };
    estimators
        .iter()
        .map(|&e| {
            let r = match (&prop, e.needs_propensity()) {
                (Some(Err(msg)), true) => Err(format!("propensity fit failed: {msg}")),
                (Some(Ok(p)), true) => {
                    fit_estimator(&ModelSpec::new(e), data, lattice, Some(p), fit)
                        .map_err(|x| x.to_string())
                }
                _ => fit_estimator(&ModelSpec::new(e), data, lattice, None, fit)
                    .map_err(|x| x.to_string()),
            };
            (e, r)
        })
        .collect()
}

/// Runs the benchmark described by `config`; datasets run in parallel and
/// results are a pure function of the configuration.
pub fn run_study(config: &RunConfig) -> Result<StudyResult> {
    config.validate()?;
    let estimators = parse_estimators(&config.estimators)?;
    let scenario = Scenario::from_config(config)?;
    let generator = Generator::new(scenario.clone())?;
    let datasets: Vec<DatasetResult> = (0..config.datasets)
        .into_par_iter()
        .map(|index| {
            let (data_seed, fit_seed) = dataset_seeds(config.seed, index);
            let fit = FitConfig::new(config.iterations, config.burn_in, config.thin, fit_seed);
            let estimates = match generator.generate(data_seed) {
                Ok((data, _)) => fit_dataset(&data, &generator.lattice, &estimators, &fit),
                Err(e) => estimators
                    .iter()
                    .map(|&x| (x, Err(e.to_string())))
                    .collect(),
            };
            DatasetResult { index, estimates }
        })
        .collect();
    let truth = scenario.beta;
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let ok: Vec<&CausalEstimate> = datasets
                .iter()
                .filter_map(|d| d.estimates[k].1.as_ref().ok())
                .collect();
            let bias: Vec<f64> = ok.iter().map(|x| x.point - truth).collect();
            let cover: Vec<f64> = ok.iter().map(|x| x.covers(truth) as u8 as f64).collect();
            let width: Vec<f64> = ok.iter().map(|x| x.width()).collect();
            EstimatorSummary {
                estimator: e,
                n_datasets: ok.len(),
                mean_bias: mean(&bias),
                coverage95: mean(&cover),
                mean_ci_width: mean(&width),
                n_failed: datasets.len() - ok.len(),
            }
        })
        .collect();
    Ok(StudyResult {
        scenario,
        truth,
        datasets,
        summaries,
    })
}
