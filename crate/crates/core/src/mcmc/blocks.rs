use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::field::{FieldPrior, LatentField, Tuner};
use super::polya_gamma::sample_pg1;
use super::updates::{
    check_full_rank, draw_coefficients, gibbs_variance, mh_logistic_block, LogisticData,
};
use super::PriorSpec;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::linalg::{self, log1pexp, sample_canonical_normal};

fn intercept_column(design: &DMatrix<f64>) -> Option<usize> {
    (0..design.ncols()).find(|&j| design.column(j).iter().all(|v| *v == 1.0))
}

fn check_field(
    prior: Option<FieldPrior>,
    lattice: Option<&Lattice>,
    region: &[usize],
    n_regions: usize,
) -> Result<Option<LatentField>> {
    if let Some(i) = region.iter().position(|r| *r >= n_regions) {
        return Err(Error::InvalidInput(format!(
            "observation {i} has region outside 0..{n_regions}"
        )));
    }
    match prior {
        None => Ok(None),
        Some(FieldPrior::Car) => {
            let l = lattice
                .ok_or_else(|| Error::InvalidInput("CAR field requires a lattice".into()))?;
            if l.n_regions() != n_regions {
                return Err(Error::InvalidInput(format!(
                    "lattice has {} regions, data expect {n_regions}",
                    l.n_regions()
                )));
            }
            Ok(Some(LatentField::new(n_regions, FieldPrior::Car)))
        }
        Some(FieldPrior::Iid) => Ok(Some(LatentField::new(n_regions, FieldPrior::Iid))),
    }
}

/// Gaussian linear model `y = Dθ + U[region] + ε`, `ε ~ N(0, τ²)`, with an
/// optional region-level latent field `U`.
///
/// When the design has an all-ones column the field is recentered to sum to
/// zero after each sweep and its mean moved into that intercept.
#[derive(Debug, Clone)]
pub struct GaussianBlock<'a> {
    y: DVector<f64>,
    design: DMatrix<f64>,
    xtx: DMatrix<f64>,
    region: Vec<usize>,
    lattice: Option<&'a Lattice>,
    intercept: Option<usize>,
    prior: PriorSpec,
    pub coef: DVector<f64>,
    pub tau2: f64,
    pub field: Option<LatentField>,
}

impl<'a> GaussianBlock<'a> {
    pub fn new(
        y: Vec<f64>,
        design: DMatrix<f64>,
        region: Vec<usize>,
        n_regions: usize,
        field: Option<FieldPrior>,
        lattice: Option<&'a Lattice>,
        prior: PriorSpec,
    ) -> Result<Self> {
        prior.validate()?;
        if design.nrows() != y.len() || region.len() != y.len() {
            return Err(Error::InvalidInput(
                "design, response and region lengths differ".into(),
            ));
        }
        check_full_rank(&design, "outcome design")?;
        let field = check_field(field, lattice, &region, n_regions)?;
        let tau2 = {
            let v = linalg::variance(&y);
            if v.is_finite() && v > 0.0 {
                v
            } else {
                1.0
            }
        };
        Ok(GaussianBlock {
            xtx: design.transpose() * &design,
            intercept: intercept_column(&design),
            coef: DVector::zeros(design.ncols()),
            y: DVector::from_vec(y),
            design,
            region,
            lattice,
            prior,
            tau2,
            field,
        })
    }

    /// Same as [`GaussianBlock::new`] without the rank check, for designs with
    /// columns that are replaced before the first sweep.
    pub(crate) fn new_unchecked(
        y: Vec<f64>,
        design: DMatrix<f64>,
        region: Vec<usize>,
        n_regions: usize,
        field: Option<FieldPrior>,
        lattice: Option<&'a Lattice>,
        prior: PriorSpec,
    ) -> Result<Self> {
        prior.validate()?;
        let field = check_field(field, lattice, &region, n_regions)?;
        let tau2 = {
            let v = linalg::variance(&y);
            if v.is_finite() && v > 0.0 {
                v
            } else {
                1.0
            }
        };
        Ok(GaussianBlock {
            xtx: design.transpose() * &design,
            intercept: intercept_column(&design),
            coef: DVector::zeros(design.ncols()),
            y: DVector::from_vec(y),
            design,
            region,
            lattice,
            prior,
            tau2,
            field,
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn region(&self) -> &[usize] {
        &self.region
    }

    pub fn intercept(&self) -> Option<usize> {
        self.intercept
    }

    /// Replaces design column `j` (e.g. a latent covariate that changes each sweep).
    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self.design[(i, j)] = *v;
        }
        self.xtx = self.design.transpose() * &self.design;
    }

    fn field_at(&self, i: usize) -> f64 {
        self.field
            .as_ref()
            .map_or(0.0, |f| f.values[self.region[i]])
    }

    /// `Dθ` for the current coefficients.
    pub fn linear_predictor(&self) -> DVector<f64> {
        &self.design * &self.coef
    }

    /// Conjugate draw of the coefficients given the field and `τ²`.
    pub fn update_coefficients<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let n = self.y.len();
        let target = DVector::from_iterator(n, (0..n).map(|i| self.y[i] - self.field_at(i)));
        let xty = self.design.transpose() * target;
        self.coef = draw_coefficients(&self.xtx, &xty, self.tau2, &self.prior, rng)?;
        Ok(())
    }

    /// Field variance and (for CAR) dependence.
    pub fn update_field_hyper<R: Rng + ?Sized>(&mut self, adapt: bool, rng: &mut R) {
        if let Some(field) = self.field.as_mut() {
            field.update_sigma2(self.lattice, &self.prior, rng);
            if let Some(l) = self.lattice {
                field.update_rho(l, adapt, rng);
            }
        }
    }

    pub fn update_tau2<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.y.len();
        let mean = self.linear_predictor();
        let resid: Vec<f64> = (0..n)
            .map(|i| self.y[i] - mean[i] - self.field_at(i))
            .collect();
        self.tau2 = gibbs_variance(&resid, &self.prior, rng);
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn lattice(&self) -> Option<&'a Lattice> {
        self.lattice
    }

    /// One full Gibbs/Metropolis sweep.
    pub fn sweep<R: Rng + ?Sized>(&mut self, adapt: bool, rng: &mut R) -> Result<()> {
        self.update_coefficients(rng)?;
        let n = self.y.len();
        let mean = self.linear_predictor();
        if let Some(field) = self.field.as_mut() {
            let nr = field.values.len();
            let mut prec = vec![0.0; nr];
            let mut lin = vec![0.0; nr];
            for i in 0..n {
                let r = self.region[i];
                prec[r] += 1.0 / self.tau2;
                lin[r] += (self.y[i] - mean[i]) / self.tau2;
            }
            field.gibbs_sites(self.lattice, &prec, &lin, rng);
            if let Some(j) = self.intercept {
                let m = field.recenter();
                self.coef[j] += m;
            }
        }
        self.update_field_hyper(adapt, rng);
        self.update_tau2(rng);
        Ok(())
    }
}

/// Bernoulli-logit model `logit P(a = 1) = Xα + v[region]` with an optional
/// latent field `v`.
#[derive(Debug, Clone)]
pub struct LogisticBlock<'a> {
    a: Vec<f64>,
    design: DMatrix<f64>,
    region: Vec<usize>,
    obs_by_region: Vec<Vec<usize>>,
    lattice: Option<&'a Lattice>,
    intercept: Option<usize>,
    prior: PriorSpec,
    tuners: Vec<Tuner>,
    pub coef: DVector<f64>,
    pub field: Option<LatentField>,
}

impl<'a> LogisticBlock<'a> {
    pub fn new(
        a: Vec<f64>,
        design: DMatrix<f64>,
        region: Vec<usize>,
        n_regions: usize,
        field: Option<FieldPrior>,
        lattice: Option<&'a Lattice>,
        prior: PriorSpec,
    ) -> Result<Self> {
        prior.validate()?;
        if design.nrows() != a.len() || region.len() != a.len() {
            return Err(Error::InvalidInput(
                "design, outcome and region lengths differ".into(),
            ));
        }
        if a.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::InvalidInput(
                "logistic outcomes must be 0 or 1".into(),
            ));
        }
        check_full_rank(&design, "treatment design")?;
        let field = check_field(field, lattice, &region, n_regions)?;
        let mut obs_by_region = vec![Vec::new(); n_regions];
        for (i, r) in region.iter().enumerate() {
            obs_by_region[*r].push(i);
        }
        let p = design.ncols();
        Ok(LogisticBlock {
            intercept: intercept_column(&design),
            tuners: (0..p).map(|_| Tuner::new(0.2)).collect(),
            coef: DVector::zeros(p),
            a,
            design,
            region,
            obs_by_region,
            lattice,
            prior,
            field,
        })
    }

    pub fn intercept(&self) -> Option<usize> {
        self.intercept
    }

    /// `Xα + v[region]` per observation.
    pub fn linear_predictor(&self) -> Vec<f64> {
        let xb = &self.design * &self.coef;
        (0..self.a.len())
            .map(|i| {
                xb[i]
                    + self
                        .field
                        .as_ref()
                        .map_or(0.0, |f| f.values[self.region[i]])
            })
            .collect()
    }

    /// Component-wise Metropolis update of the coefficients.
    pub fn update_coefficients<R: Rng + ?Sized>(&mut self, adapt: bool, rng: &mut R) {
        let offset: Vec<f64> = (0..self.a.len())
            .map(|i| {
                self.field
                    .as_ref()
                    .map_or(0.0, |f| f.values[self.region[i]])
            })
            .collect();
        let sds: Vec<f64> = self.tuners.iter().map(|t| t.sd).collect();
        let data = LogisticData {
            design: &self.design,
            outcomes: &self.a,
        };
        let acc = mh_logistic_block(&mut self.coef, &offset, &data, &sds, &self.prior, rng);
        for (t, ok) in self.tuners.iter_mut().zip(acc) {
            t.record(ok, adapt);
        }
    }

    pub fn update_field_hyper<R: Rng + ?Sized>(&mut self, adapt: bool, rng: &mut R) {
        if let Some(field) = self.field.as_mut() {
            field.update_sigma2(self.lattice, &self.prior, rng);
            if let Some(l) = self.lattice {
                field.update_rho(l, adapt, rng);
            }
        }
    }

    /// Bernoulli log-likelihood of region `r` with field value `v` and fixed
    /// coefficient contribution `xb`.
    pub fn region_loglik(&self, xb: &DVector<f64>, r: usize, v: f64) -> f64 {
        self.obs_by_region[r]
            .iter()
            .map(|&i| {
                let eta = xb[i] + v;
                self.a[i] * eta - log1pexp(eta)
            })
            .sum()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn lattice(&self) -> Option<&'a Lattice> {
        self.lattice
    }

    /// One sweep. `extra` adds Gaussian information `(precision, linear)` per
    /// region to the field conditional (used when the field also enters an
    /// outcome model). Returns the mean removed from the field by recentering.
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        extra: Option<(&[f64], &[f64])>,
        adapt: bool,
        rng: &mut R,
    ) -> f64 {
        self.update_coefficients(adapt, rng);
        let mut removed = 0.0;
        if let Some(mut field) = self.field.take() {
            let xb = &self.design * &self.coef;
            let nr = field.values.len();
            let zeros = vec![0.0; nr];
            let (prec, lin) = extra.unwrap_or((&zeros, &zeros));
            field.mh_sites(
                self.lattice,
                prec,
                lin,
                |r, v| self.region_loglik(&xb, r, v),
                adapt,
                rng,
            );
            if let Some(j) = self.intercept {
                removed = field.recenter();
                self.coef[j] += removed;
            }
            self.field = Some(field);
        }
        self.update_field_hyper(adapt, rng);
        removed
    }

    /// Pólya-Gamma weights `ω_i ~ PG(1, η_i)` at the current linear predictor.
    pub fn draw_pg_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.linear_predictor()
            .into_iter()
            .map(|eta| sample_pg1(eta, rng))
            .collect()
    }

    /// Exact Gibbs draw of the coefficients given Pólya-Gamma weights.
    pub fn gibbs_coefficients_pg<R: Rng + ?Sized>(
        &mut self,
        omega: &[f64],
        rng: &mut R,
    ) -> Result<()> {
        let p = self.design.ncols();
        let mut prec = DMatrix::zeros(p, p);
        let mut lin = DVector::zeros(p);
        for i in 0..self.a.len() {
            let v = self
                .field
                .as_ref()
                .map_or(0.0, |f| f.values[self.region[i]]);
            let row = self.design.row(i);
            let target = self.a[i] - 0.5 - omega[i] * v;
            for j in 0..p {
                lin[j] += row[j] * target;
                for k in 0..p {
                    prec[(j, k)] += omega[i] * row[j] * row[k];
                }
            }
        }
        for j in 0..p {
            prec[(j, j)] += 1.0 / self.prior.coef_var;
        }
        self.coef = sample_canonical_normal(&prec, &lin, rng)?;
        Ok(())
    }

    /// Gaussian information about each field value carried by the treatment
    /// likelihood given Pólya-Gamma weights: `(Σω, Σ(a − ½ − ω·xα))` per region.
    pub fn pg_field_info(&self, omega: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let xb = &self.design * &self.coef;
        let nr = self.obs_by_region.len();
        let mut prec = vec![0.0; nr];
        let mut lin = vec![0.0; nr];
        for (i, r) in self.region.iter().enumerate() {
            prec[*r] += omega[i];
            lin[*r] += self.a[i] - 0.5 - omega[i] * xb[i];
        }
        (prec, lin)
    }

    pub fn coefficient_acceptance(&self) -> Vec<f64> {
        self.tuners.iter().map(Tuner::rate).collect()
    }
}
