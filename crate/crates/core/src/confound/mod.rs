//! Average-treatment-effect estimators under unmeasured spatial confounding.
//!
//! Every estimator returns a [`CausalEstimate`] for the coefficient of the
//! treatment. Bayesian fits summarize posterior draws; closed-form fits
//! (matching, conditional logistic) use large-sample intervals.

mod bayes;
mod iv;
mod matching;
mod oracle;
mod sar;
mod schnell;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

pub use bayes::{
    aipw_adjust, aipw_delta, fit_cut, fit_joint, fit_joint_with, fit_ns, fit_s, fit_s_posterior,
    fit_strata, fit_with_propensity, JointOptions, OutcomePosterior,
};
pub(crate) use bayes::{run_outcome, run_regression};
pub use iv::fit_iv;
pub use matching::{fit_cond_logit, match_difference, MatchedPair};
pub use oracle::{gls_bias_oracle, GlsBiasResult};
pub use sar::{fit_sar, sar_log_likelihood};
pub use schnell::{fit_schnell, schnell_bias_term, SchnellParams};

use crate::data::{fmt_f64, ArealDataset};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::mcmc::{FieldPrior, FitConfig, PosteriorSummary};
use crate::propensity::{build_strata, fit_binary_propensity, PropensityFit, DEFAULT_STRATA};

/// Estimator tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Ns,
    NsP,
    S,
    SP,
    SStrata,
    SAipw,
    Joint,
    Cut,
    Sem,
    Sar,
    Schnell,
    Iv,
    MatchDiff,
    CondLogit,
}

impl Estimator {
    pub const ALL: [Estimator; 14] = [
        Estimator::Ns,
        Estimator::NsP,
        Estimator::S,
        Estimator::SP,
        Estimator::SStrata,
        Estimator::SAipw,
        Estimator::Joint,
        Estimator::Cut,
        Estimator::Sem,
        Estimator::Sar,
        Estimator::Schnell,
        Estimator::Iv,
        Estimator::MatchDiff,
        Estimator::CondLogit,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Estimator::Ns => "NS",
            Estimator::NsP => "NS+P",
            Estimator::S => "S",
            Estimator::SP => "S+P",
            Estimator::SStrata => "S+Strata",
            Estimator::SAipw => "S+AIPW",
            Estimator::Joint => "Joint",
            Estimator::Cut => "Cut",
            Estimator::Sem => "SEM",
            Estimator::Sar => "SAR",
            Estimator::Schnell => "Schnell",
            Estimator::Iv => "IV",
            Estimator::MatchDiff => "MatchDiff",
            Estimator::CondLogit => "CondLogit",
        }
    }

    /// Whether the estimator consumes a binary propensity fit.
    pub fn needs_propensity(self) -> bool {
        matches!(
            self,
            Estimator::NsP | Estimator::SP | Estimator::SStrata | Estimator::SAipw
        )
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .iter()
            .copied()
            .find(|e| e.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let known: Vec<&str> = Estimator::ALL.iter().map(|e| e.tag()).collect();
                Error::InvalidInput(format!(
                    "unknown estimator `{s}`; expected one of {}",
                    known.join(", ")
                ))
            })
    }
}

/// Estimator tag plus the options that apply to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub estimator: Estimator,
    /// Number of propensity strata for `S+Strata`.
    pub strata: usize,
    /// Covariate used as the instrument for `IV`.
    pub instrument: Option<String>,
}

impl ModelSpec {
    pub fn new(estimator: Estimator) -> Self {
        ModelSpec {
            estimator,
            strata: DEFAULT_STRATA,
            instrument: None,
        }
    }

    pub fn with_strata(mut self, l: usize) -> Self {
        self.strata = l;
        self
    }

    pub fn with_instrument(mut self, name: impl Into<String>) -> Self {
        self.instrument = Some(name.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.instrument.is_some() && self.estimator != Estimator::Iv {
            return Err(Error::InvalidInput(format!(
                "an instrument only applies to IV, not {}",
                self.estimator
            )));
        }
        if self.estimator == Estimator::Iv && self.instrument.is_none() {
            return Err(Error::InvalidInput(
                "IV requires an instrument column".into(),
            ));
        }
        if self.estimator == Estimator::SStrata && self.strata < 1 {
            return Err(Error::InvalidInput(
                "strata count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Fitting diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Post-burn-in acceptance rates of Metropolis updates.
    pub acceptance: Vec<(String, f64)>,
    /// Observations (or contrasts / pairs) used by the fit.
    pub n_used: usize,
}

/// Treatment-effect estimate with a 95% interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalEstimate {
    pub estimator: String,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub flags: Vec<String>,
    pub diagnostics: Diagnostics,
}

impl CausalEstimate {
    pub(crate) fn new(
        estimator: impl Into<String>,
        point: f64,
        lower: f64,
        upper: f64,
        n_used: usize,
    ) -> Self {
        CausalEstimate {
            estimator: estimator.into(),
            point,
            lower: lower.min(upper),
            upper: upper.max(lower),
            flags: Vec::new(),
            diagnostics: Diagnostics {
                acceptance: Vec::new(),
                n_used,
            },
        }
    }

    pub(crate) fn from_summary(
        estimator: &str,
        summary: &PosteriorSummary,
        param: &str,
        n_used: usize,
    ) -> Self {
        let (m, lo, hi) = summary
            .interval(param)
            .expect("parameter tracked by the chain");
        let mut est = CausalEstimate::new(estimator, m, lo, hi, n_used);
        est.diagnostics.acceptance = summary.acceptance.clone();
        est
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.lower <= truth && truth <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn flag(&mut self, f: impl Into<String>) {
        self.flags.push(f.into());
    }

    pub fn csv_row(&self, dataset_id: &str) -> String {
        format!(
            "{},{},{},{},{},{}",
            dataset_id,
            self.estimator,
            fmt_f64(self.point),
            fmt_f64(self.lower),
            fmt_f64(self.upper),
            self.flags.join(";")
        )
    }
}

pub const ESTIMATE_HEADER: &str = "dataset_id,estimator,point,lo95,hi95,flags";

pub fn write_estimates<W: Write>(mut w: W, rows: &[(String, CausalEstimate)]) -> Result<()> {
    writeln!(w, "{ESTIMATE_HEADER}")?;
    for (id, e) in rows {
        writeln!(w, "{}", e.csv_row(id))?;
    }
    Ok(())
}

/// Fits `spec` on areal data. Estimators that need a binary propensity
/// score fit it first unless `propensity` is supplied.
pub fn fit_estimator(
    spec: &ModelSpec,
    data: &ArealDataset,
    lattice: &Lattice,
    propensity: Option<&PropensityFit>,
    config: &FitConfig,
) -> Result<CausalEstimate> {
    spec.validate()?;
    let owned;
    let prop = if spec.estimator.needs_propensity() {
        match propensity {
            Some(p) => Some(p),
            None => {
                let stage = config.with_seed(crate::linalg::derive_seed(config.mcmc.seed, 1));
                owned = fit_binary_propensity(data, lattice, &stage)?;
                Some(&owned)
            }
        }
    } else {
        None
    };
    let mut est = match spec.estimator {
        Estimator::Ns => fit_ns(data, config)?,
        Estimator::S => fit_s(data, lattice, config)?,
        Estimator::NsP => fit_with_propensity(data, None, &prop.unwrap().scores, config)?,
        Estimator::SP => fit_with_propensity(data, Some(lattice), &prop.unwrap().scores, config)?,
        Estimator::SStrata => {
            let strata = if spec.strata == 1 {
                crate::propensity::StrataSpec::single(data.n(), 1.0)
            } else {
                build_strata(&prop.unwrap().scores, spec.strata)?
            };
            fit_strata(data, lattice, &strata, config)?
        }
        Estimator::SAipw => {
            let post = fit_s_posterior(data, lattice, config)?;
            aipw_adjust(&post, data, &prop.unwrap().scores)?
        }
        Estimator::Joint => fit_joint(data, lattice, FieldPrior::Car, config)?,
        Estimator::Sem => fit_joint(data, lattice, FieldPrior::Iid, config)?,
        Estimator::Cut => fit_cut(data, lattice, config)?,
        Estimator::Sar => fit_sar(data, lattice, config)?,
        Estimator::Schnell => fit_schnell(data, lattice, config)?,
        Estimator::Iv => fit_iv(data, lattice, spec.instrument.as_deref().unwrap(), config)?,
        Estimator::MatchDiff => match_difference(data)?,
        Estimator::CondLogit => {
            return Err(Error::InvalidInput(
                "CondLogit needs matched case-control pairs; call fit_cond_logit".into(),
            ))
        }
    };
    est.estimator = spec.estimator.tag().to_string();
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.tag().parse::<Estimator>().unwrap(), e);
        }
        assert!("XYZ".parse::<Estimator>().is_err());
    }

    #[test]
    fn spec_options_must_match_tag() {
        assert!(ModelSpec::new(Estimator::S)
            .with_instrument("z")
            .validate()
            .is_err());
        assert!(ModelSpec::new(Estimator::Iv).validate().is_err());
        assert!(ModelSpec::new(Estimator::Iv)
            .with_instrument("z")
            .validate()
            .is_ok());
    }

    #[test]
    fn csv_row_layout() {
        let mut e = CausalEstimate::new("NS", 0.5, 0.25, 0.75, 10);
        e.flag("weak-instrument");
        assert_eq!(e.csv_row("3"), "3,NS,0.5,0.25,0.75,weak-instrument");
        assert!(e.covers(0.5) && !e.covers(0.8));
    }
}
