use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::CausalEstimate;
use crate::data::{ArealDataset, TreatmentKind};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::linalg::{derive_seed, quantile, rng_for, variance};
use crate::mcmc::{
    run_chain, ChainModel, FieldPrior, FitConfig, GaussianBlock, LogisticBlock, Phase,
    PosteriorSummary,
};
use crate::propensity::{fit_binary_propensity, spline_transform, SplineBasis, StrataSpec};

/// Outcome design `[1, A, X..., extra...]` and its coefficient names.
fn outcome_design(
    data: &ArealDataset,
    extra: &[(String, Vec<f64>)],
) -> (DMatrix<f64>, Vec<String>) {
    let n = data.n();
    let x = data.x();
    let p = x.ncols() + 1 + extra.len();
    let mut d = DMatrix::zeros(n, p);
    let mut names = vec!["gamma0".to_string(), "beta".to_string()];
    for i in 0..n {
        d[(i, 0)] = 1.0;
        d[(i, 1)] = data.a()[i];
        for j in 1..x.ncols() {
            d[(i, j + 1)] = x[(i, j)];
        }
        for (k, (_, col)) in extra.iter().enumerate() {
            d[(i, x.ncols() + 1 + k)] = col[i];
        }
    }
    names.extend(data.covariate_names().iter().map(|c| format!("gamma[{c}]")));
    names.extend(extra.iter().map(|(n, _)| n.clone()));
    (d, names)
}

fn require_contrast(data: &ArealDataset) -> Result<()> {
    if !(variance(data.a()) > 0.0) {
        return Err(Error::Unidentified(
            "treatment is constant; the effect has no contrast".into(),
        ));
    }
    Ok(())
}

fn require_binary(data: &ArealDataset, what: &str) -> Result<()> {
    if data.treatment_kind() != TreatmentKind::Binary {
        return Err(Error::InvalidInput(format!(
            "{what} requires a binary treatment"
        )));
    }
    Ok(())
}

struct OutcomeModel<'a> {
    block: GaussianBlock<'a>,
    coef_names: Vec<String>,
    track_field: bool,
}

impl OutcomeModel<'_> {
    fn names(&self) -> Vec<String> {
        let mut names = self.coef_names.clone();
        names.push("tau2".into());
        if let Some(f) = &self.block.field {
            names.push("rho_u".into());
            names.push("sigma2_u".into());
            if self.track_field {
                names.extend((0..f.values.len()).map(|i| format!("u[{i}]")));
            }
        }
        names
    }

    fn push_state(&self, out: &mut Vec<f64>) {
        out.extend(self.block.coef.iter());
        out.push(self.block.tau2);
        if let Some(f) = &self.block.field {
            out.push(f.rho);
            out.push(f.sigma2);
            if self.track_field {
                out.extend(&f.values);
            }
        }
    }

    fn rates(&self) -> Vec<(String, f64)> {
        match &self.block.field {
            Some(f) if f.prior == FieldPrior::Car => vec![("rho_u".into(), f.rho_tuner.rate())],
            _ => Vec::new(),
        }
    }
}

impl ChainModel for OutcomeModel<'_> {
    fn parameter_names(&self) -> Vec<String> {
        self.names()
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, phase: Phase) -> Result<()> {
        self.block.sweep(phase.adapt(), rng)
    }

    fn state(&self, out: &mut Vec<f64>) {
        self.push_state(out)
    }

    fn acceptance_rates(&self) -> Vec<(String, f64)> {
        self.rates()
    }
}

pub(crate) fn run_outcome(
    data: &ArealDataset,
    lattice: Option<&Lattice>,
    extra: &[(String, Vec<f64>)],
    track_field: bool,
    config: &FitConfig,
) -> Result<PosteriorSummary> {
    require_contrast(data)?;
    let (design, coef_names) = outcome_design(data, extra);
    run_regression(
        data.y(),
        design,
        coef_names,
        data.region(),
        data.n_regions(),
        lattice.map(|l| (FieldPrior::Car, Some(l))),
        track_field,
        config,
    )
}

/// Bayesian linear regression of `y` on an arbitrary design, optionally with
/// a region-level latent field (`(prior, lattice)`; CAR needs the lattice).
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_regression(
    y: &[f64],
    design: DMatrix<f64>,
    coef_names: Vec<String>,
    region: &[usize],
    n_regions: usize,
    field: Option<(FieldPrior, Option<&Lattice>)>,
    track_field: bool,
    config: &FitConfig,
) -> Result<PosteriorSummary> {
    let block = GaussianBlock::new(
        y.to_vec(),
        design,
        region.to_vec(),
        n_regions,
        field.map(|f| f.0),
        field.and_then(|f| f.1),
        config.prior,
    )?;
    let mut model = OutcomeModel {
        block,
        coef_names,
        track_field,
    };
    run_chain(&mut model, &config.mcmc)
}

/// Non-spatial Bayesian regression `Y = Xγ + Aβ + ε`.
pub fn fit_ns(data: &ArealDataset, config: &FitConfig) -> Result<CausalEstimate> {
    let s = run_outcome(data, None, &[], false, config)?;
    Ok(CausalEstimate::from_summary("NS", &s, "beta", data.n()))
}

/// Spatial regression with a CAR region effect `U`.
pub fn fit_s(data: &ArealDataset, lattice: &Lattice, config: &FitConfig) -> Result<CausalEstimate> {
    let s = run_outcome(data, Some(lattice), &[], false, config)?;
    Ok(CausalEstimate::from_summary("S", &s, "beta", data.n()))
}

/// Posterior draws of the spatial regression, including the field, as
/// needed for augmented inverse probability weighting.
#[derive(Debug, Clone)]
pub struct OutcomePosterior {
    pub summary: PosteriorSummary,
    n_coef: usize,
    n_regions: usize,
}

impl OutcomePosterior {
    /// Coefficients `[γ0, β, γ...]` of draw `s`.
    pub fn coefficients(&self, s: usize) -> Vec<f64> {
        (0..self.n_coef).map(|j| self.summary.draws[j][s]).collect()
    }

    /// Field values of draw `s`.
    pub fn field(&self, s: usize) -> Vec<f64> {
        let off = self.n_coef + 3;
        (0..self.n_regions)
            .map(|i| self.summary.draws[off + i][s])
            .collect()
    }

    pub fn n_draws(&self) -> usize {
        self.summary.n_draws()
    }
}

pub fn fit_s_posterior(
    data: &ArealDataset,
    lattice: &Lattice,
    config: &FitConfig,
) -> Result<OutcomePosterior> {
    let summary = run_outcome(data, Some(lattice), &[], true, config)?;
    Ok(OutcomePosterior {
        summary,
        n_coef: data.x().ncols() + 1,
        n_regions: data.n_regions(),
    })
}

/// Outcome regression with a spline of the propensity score added to the
/// mean; `lattice` toggles the CAR field.
pub fn fit_with_propensity(
    data: &ArealDataset,
    lattice: Option<&Lattice>,
    scores: &[f64],
    config: &FitConfig,
) -> Result<CausalEstimate> {
    if scores.len() != data.n() {
        return Err(Error::InvalidInput(
            "one score per observation is required".into(),
        ));
    }
    let basis = SplineBasis::from_scores(scores)?;
    let spline = spline_transform(scores, &basis);
    let extra: Vec<(String, Vec<f64>)> = (0..spline.columns.ncols())
        .map(|k| {
            (
                format!("f[{k}]"),
                spline.columns.column(k).iter().cloned().collect(),
            )
        })
        .collect();
    let s = run_outcome(data, lattice, &extra, false, config)?;
    let tag = if lattice.is_some() { "S+P" } else { "NS+P" };
    let mut est = CausalEstimate::from_summary(tag, &s, "beta", data.n());
    if spline.clamped > 0 {
        est.flag(format!("clamped-scores={}", spline.clamped));
    }
    Ok(est)
}

/// Spatial regression with one intercept per propensity stratum.
pub fn fit_strata(
    data: &ArealDataset,
    lattice: &Lattice,
    strata: &StrataSpec,
    config: &FitConfig,
) -> Result<CausalEstimate> {
    if strata.labels.len() != data.n() {
        return Err(Error::InvalidInput(
            "one stratum label per observation is required".into(),
        ));
    }
    if let Some(l) = strata.counts().iter().position(|c| *c == 0) {
        return Err(Error::InvalidInput(format!("stratum {} is empty", l + 1)));
    }
    let extra: Vec<(String, Vec<f64>)> = (1..strata.n_strata())
        .map(|l| {
            let col = strata
                .labels
                .iter()
                .map(|s| (*s == l) as u8 as f64)
                .collect();
            (format!("S[{}]", l + 1), col)
        })
        .collect();
    let s = run_outcome(data, Some(lattice), &extra, false, config)?;
    Ok(CausalEstimate::from_summary(
        "S+Strata",
        &s,
        "beta",
        data.n(),
    ))
}

/// Mean of the augmented inverse-probability-weighted contrasts
/// `(1/ê)(AY − (A−ê)Ỹ₁) − (1/(1−ê))((1−A)Y − (ê−A)Ỹ₀)` over all observations.
pub fn aipw_delta(a: &[f64], y: &[f64], y1: &[f64], y0: &[f64], e: &[f64]) -> Result<f64> {
    let n = a.len();
    if [y.len(), y1.len(), y0.len(), e.len()]
        .iter()
        .any(|l| *l != n)
        || n == 0
    {
        return Err(Error::InvalidInput(
            "AIPW inputs must be non-empty and of equal length".into(),
        ));
    }
    if let Some(i) = e.iter().position(|v| !(*v > 0.0 && *v < 1.0)) {
        return Err(Error::Positivity(format!(
            "propensity score {} at observation {i} is not strictly between 0 and 1",
            e[i]
        )));
    }
    let total: f64 = (0..n)
        .map(|i| {
            (a[i] * y[i] - (a[i] - e[i]) * y1[i]) / e[i]
                - ((1.0 - a[i]) * y[i] - (e[i] - a[i]) * y0[i]) / (1.0 - e[i])
        })
        .sum();
    Ok(total / n as f64)
}

/// Per-draw AIPW effect from the spatial-regression posterior.
pub fn aipw_adjust(
    post: &OutcomePosterior,
    data: &ArealDataset,
    scores: &[f64],
) -> Result<CausalEstimate> {
    require_binary(data, "AIPW")?;
    if scores.len() != data.n() {
        return Err(Error::InvalidInput(
            "one score per observation is required".into(),
        ));
    }
    let n = data.n();
    let x = data.x();
    let mut deltas = Vec::with_capacity(post.n_draws());
    let mut y1 = vec![0.0; n];
    let mut y0 = vec![0.0; n];
    for s in 0..post.n_draws() {
        let c = post.coefficients(s);
        let u = post.field(s);
        for i in 0..n {
            let mut base = c[0] + u[data.region()[i]];
            for j in 1..x.ncols() {
                base += x[(i, j)] * c[j + 1];
            }
            y1[i] = base + c[1];
            y0[i] = base;
        }
        deltas.push(aipw_delta(data.a(), data.y(), &y1, &y0, scores)?);
    }
    let m = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let mut est = CausalEstimate::new(
        "S+AIPW",
        m,
        quantile(&deltas, 0.025),
        quantile(&deltas, 0.975),
        n,
    );
    est.diagnostics.acceptance = post.summary.acceptance.clone();
    Ok(est)
}

/// Options for the joint outcome/treatment model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointOptions {
    /// Prior on both latent fields; `Iid` gives the replicated-data variant.
    pub prior: FieldPrior,
    /// Fix the loading of the treatment field in the outcome mean at zero.
    pub psi_zero: bool,
}

impl Default for JointOptions {
    fn default() -> Self {
        JointOptions {
            prior: FieldPrior::Car,
            psi_zero: false,
        }
    }
}

struct JointModel<'a> {
    outcome: OutcomeModel<'a>,
    treatment: LogisticBlock<'a>,
    treat_rng: ChaCha8Rng,
    psi_col: Option<usize>,
    region: Vec<usize>,
    y: Vec<f64>,
    p_alpha: usize,
}

impl JointModel<'_> {
    /// Exact Gibbs update of `(u_r, v_r)` together for each region. Given
    /// Pólya-Gamma weights the treatment likelihood is Gaussian in `v_r`, so
    /// the bivariate full conditional (both field priors, the outcome
    /// likelihood through `u + ψv`, the treatment likelihood) is normal.
    fn joint_sites(&mut self, j: usize, omega: &[f64]) {
        let psi = self.outcome.block.coef[j];
        let tau2 = self.outcome.block.tau2;
        let (t_prec, t_lin) = self.treatment.pg_field_info(omega);
        let mut uf = self.outcome.block.field.take().expect("outcome field");
        let mut vf = self.treatment.field.take().expect("treatment field");
        let nr = uf.values.len();
        let mean = self.outcome.block.linear_predictor();
        let mut sum = vec![0.0; nr];
        let mut count = vec![0.0; nr];
        for (i, r) in self.region.iter().enumerate() {
            sum[*r] += self.y[i] - (mean[i] - psi * vf.values[*r]);
            count[*r] += 1.0;
        }
        let ul = self.outcome.block.lattice();
        let vl = self.treatment.lattice();
        for k in 0..nr {
            let (mu, pu) = uf.prior_conditional(ul, k);
            let (mv, pv) = vf.prior_conditional(vl, k);
            let c = count[k] / tau2;
            let s = sum[k] / tau2;
            let (p11, p12, p22) = (pu + c, c * psi, pv + c * psi * psi + t_prec[k]);
            let (b1, b2) = (pu * mu + s, pv * mv + psi * s + t_lin[k]);
            let det = p11 * p22 - p12 * p12;
            let m1 = (p22 * b1 - p12 * b2) / det;
            let m2 = (p11 * b2 - p12 * b1) / det;
            let l11 = p11.sqrt();
            let l21 = p12 / l11;
            let l22 = (p22 - l21 * l21).sqrt();
            let z1: f64 = self.treat_rng.sample(StandardNormal);
            let z2: f64 = self.treat_rng.sample(StandardNormal);
            let x2 = z2 / l22;
            let x1 = (z1 - l21 * x2) / l11;
            uf.values[k] = m1 + x1;
            vf.values[k] = m2 + x2;
        }
        self.outcome.block.field = Some(uf);
        self.treatment.field = Some(vf);
    }
}

impl ChainModel for JointModel<'_> {
    fn parameter_names(&self) -> Vec<String> {
        let mut names = self.outcome.names();
        names.extend((0..self.p_alpha).map(|j| format!("alpha[{j}]")));
        names.push("rho_v".into());
        names.push("sigma2_v".into());
        names
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, phase: Phase) -> Result<()> {
        let adapt = phase.adapt();
        let Some(j) = self.psi_col else {
            // ψ fixed at zero: the blocks decouple and the outcome block sees
            // exactly the random numbers the spatial regression would
            self.treatment.sweep(None, adapt, &mut self.treat_rng);
            return self.outcome.block.sweep(adapt, rng);
        };
        self.outcome.block.update_coefficients(rng)?;
        let omega = self.treatment.draw_pg_weights(&mut self.treat_rng);
        self.treatment
            .gibbs_coefficients_pg(&omega, &mut self.treat_rng)?;
        self.joint_sites(j, &omega);
        let psi = self.outcome.block.coef[j];
        let mu = self
            .outcome
            .block
            .field
            .as_mut()
            .expect("outcome field")
            .recenter();
        let mv = self
            .treatment
            .field
            .as_mut()
            .expect("treatment field")
            .recenter();
        if let Some(k) = self.outcome.block.intercept() {
            self.outcome.block.coef[k] += mu + psi * mv;
        }
        if let Some(k) = self.treatment.intercept() {
            self.treatment.coef[k] += mv;
        }
        self.outcome.block.update_field_hyper(adapt, rng);
        self.treatment
            .update_field_hyper(adapt, &mut self.treat_rng);
        let v = &self
            .treatment
            .field
            .as_ref()
            .expect("treatment field")
            .values;
        let col: Vec<f64> = self.region.iter().map(|r| v[*r]).collect();
        self.outcome.block.set_column(j, &col);
        self.outcome.block.update_tau2(rng);
        Ok(())
    }

    fn state(&self, out: &mut Vec<f64>) {
        self.outcome.push_state(out);
        out.extend(self.treatment.coef.iter());
        let f = self.treatment.field.as_ref().expect("treatment field");
        out.push(f.rho);
        out.push(f.sigma2);
    }

    fn acceptance_rates(&self) -> Vec<(String, f64)> {
        let mut out = self.outcome.rates();
        if self.psi_col.is_none() {
            out.extend(
                self.treatment
                    .coefficient_acceptance()
                    .into_iter()
                    .enumerate()
                    .map(|(j, r)| (format!("alpha[{j}]"), r)),
            );
        }
        if let Some(f) = &self.treatment.field {
            if self.psi_col.is_none() {
                out.push(("v sites".into(), f.site_acceptance()));
            }
            if f.prior == FieldPrior::Car {
                out.push(("rho_v".into(), f.rho_tuner.rate()));
            }
        }
        out
    }
}

/// Joint model: outcome `Xγ + Aβ + u + ψv`, treatment `logit e = Xα + v`,
/// with `u` and `v` both CAR (or both independent normal).
pub fn fit_joint(
    data: &ArealDataset,
    lattice: &Lattice,
    prior: FieldPrior,
    config: &FitConfig,
) -> Result<CausalEstimate> {
    fit_joint_with(
        data,
        lattice,
        JointOptions {
            prior,
            psi_zero: false,
        },
        config,
    )
    .map(|(e, _)| e)
}

/// As [`fit_joint`] with all options, also returning the posterior summary.
pub fn fit_joint_with(
    data: &ArealDataset,
    lattice: &Lattice,
    options: JointOptions,
    config: &FitConfig,
) -> Result<(CausalEstimate, PosteriorSummary)> {
    require_binary(data, "the joint model")?;
    require_contrast(data)?;
    if options.prior == FieldPrior::Iid && !data.has_replication() {
        return Err(Error::InvalidInput(
            "independent region effects require replication within regions".into(),
        ));
    }
    crate::mcmc::check_full_rank(&outcome_design(data, &[]).0, "outcome design")?;
    let field_lattice = (options.prior == FieldPrior::Car).then_some(lattice);
    let extra = if options.psi_zero {
        Vec::new()
    } else {
        vec![("psi".to_string(), vec![0.0; data.n()])]
    };
    let (design, coef_names) = outcome_design(data, &extra);
    let psi_col = (!options.psi_zero).then(|| design.ncols() - 1);
    let outcome = GaussianBlock::new_unchecked(
        data.y().to_vec(),
        design,
        data.region().to_vec(),
        data.n_regions(),
        Some(options.prior),
        field_lattice,
        config.prior,
    )?;
    let treatment = LogisticBlock::new(
        data.a().to_vec(),
        data.x().clone(),
        data.region().to_vec(),
        data.n_regions(),
        Some(options.prior),
        field_lattice,
        config.prior,
    )?;
    let mut model = JointModel {
        outcome: OutcomeModel {
            block: outcome,
            coef_names,
            track_field: false,
        },
        treatment,
        treat_rng: rng_for(config.mcmc.seed, 1),
        psi_col,
        region: data.region().to_vec(),
        y: data.y().to_vec(),
        p_alpha: data.x().ncols(),
    };
    let summary = run_chain(&mut model, &config.mcmc)?;
    let tag = if options.prior == FieldPrior::Iid {
        "SEM"
    } else {
        "Joint"
    };
    Ok((
        CausalEstimate::from_summary(tag, &summary, "beta", data.n()),
        summary,
    ))
}

struct CutModel<'a> {
    outcome: OutcomeModel<'a>,
    v_draws: Vec<Vec<f64>>,
    psi_col: usize,
    region: Vec<usize>,
    next: usize,
}

impl ChainModel for CutModel<'_> {
    fn parameter_names(&self) -> Vec<String> {
        self.outcome.names()
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, phase: Phase) -> Result<()> {
        let v = &self.v_draws[self.next % self.v_draws.len()];
        self.next += 1;
        let col: Vec<f64> = self.region.iter().map(|r| v[*r]).collect();
        self.outcome.block.set_column(self.psi_col, &col);
        self.outcome.block.sweep(phase.adapt(), rng)
    }

    fn state(&self, out: &mut Vec<f64>) {
        self.outcome.push_state(out)
    }

    fn acceptance_rates(&self) -> Vec<(String, f64)> {
        self.outcome.rates()
    }
}

/// Two-stage joint model with the outcome-to-treatment feedback cut: the
/// treatment model is fitted alone, then the outcome chain cycles through
/// the stored draws of `v`.
pub fn fit_cut(
    data: &ArealDataset,
    lattice: &Lattice,
    config: &FitConfig,
) -> Result<CausalEstimate> {
    require_binary(data, "the cut model")?;
    require_contrast(data)?;
    let stage1 = fit_binary_propensity(
        data,
        lattice,
        &config.with_seed(derive_seed(config.mcmc.seed, 1)),
    )?;
    fit_cut_with_draws(data, lattice, stage1.v_draws, config)
}

pub(crate) fn fit_cut_with_draws(
    data: &ArealDataset,
    lattice: &Lattice,
    v_draws: Vec<Vec<f64>>,
    config: &FitConfig,
) -> Result<CausalEstimate> {
    if v_draws.is_empty() || v_draws.iter().any(|v| v.len() != data.n_regions()) {
        return Err(Error::InvalidInput(
            "stage-one draws must hold one value per region".into(),
        ));
    }
    crate::mcmc::check_full_rank(&outcome_design(data, &[]).0, "outcome design")?;
    let extra = vec![("psi".to_string(), vec![0.0; data.n()])];
    let (design, coef_names) = outcome_design(data, &extra);
    let psi_col = design.ncols() - 1;
    let block = GaussianBlock::new_unchecked(
        data.y().to_vec(),
        design,
        data.region().to_vec(),
        data.n_regions(),
        Some(FieldPrior::Car),
        Some(lattice),
        config.prior,
    )?;
    let mut model = CutModel {
        outcome: OutcomeModel {
            block,
            coef_names,
            track_field: false,
        },
        v_draws,
        psi_col,
        region: data.region().to_vec(),
        next: 0,
    };
    let s = run_chain(&mut model, &config.mcmc)?;
    Ok(CausalEstimate::from_summary("Cut", &s, "beta", data.n()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aipw_four_unit_hand_evaluation() {
        let a = [1.0, 0.0, 1.0, 0.0];
        let y = [3.0, 1.0, 2.0, 0.5];
        let y1 = [2.5, 2.0, 2.2, 1.5];
        let y0 = [1.0, 0.8, 1.2, 0.4];
        let e = [0.6, 0.3, 0.5, 0.2];
        // unit by unit
        let d1 = (3.0 - 0.4 * 2.5) / 0.6 - (0.0 - (0.6 - 1.0) * 1.0) / 0.4;
        let d2 = (0.0 - (-0.3) * 2.0) / 0.3 - (1.0 - 0.3 * 0.8) / 0.7;
        let d3 = (2.0 - 0.5 * 2.2) / 0.5 - (0.0 - (-0.5) * 1.2) / 0.5;
        let d4 = (0.0 - (-0.2) * 1.5) / 0.2 - (0.5 - 0.2 * 0.4) / 0.8;
        let want = (d1 + d2 + d3 + d4) / 4.0;
        let got = aipw_delta(&a, &y, &y1, &y0, &e).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn aipw_group_means_with_constant_score() {
        let a = [1.0, 1.0, 0.0, 0.0, 0.0];
        let y = [4.0, 6.0, 1.0, 2.0, 3.0];
        let p = 0.4;
        let y1 = [5.0; 5];
        let y0 = [2.0; 5];
        let got = aipw_delta(&a, &y, &y1, &y0, &[p; 5]).unwrap();
        assert!((got - 3.0).abs() < 1e-12);
    }

    #[test]
    fn aipw_rejects_boundary_scores() {
        let err = aipw_delta(&[1.0], &[1.0], &[1.0], &[0.0], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::Positivity(_)));
    }
}
