use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::CausalEstimate;
use crate::data::ArealDataset;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::linalg::{expit, logit};
use crate::mcmc::{
    check_full_rank, draw_coefficients, gibbs_variance, run_chain, ChainModel, FitConfig, Phase,
    PriorSpec, Tuner,
};

/// Reorders observations so that row `r` belongs to region `r`.
fn region_order(data: &ArealDataset) -> Result<Vec<usize>> {
    let by_region = data.obs_by_region();
    if by_region.iter().any(|o| o.len() != 1) {
        return Err(Error::InvalidInput(
            "the SAR model needs exactly one observation per region (no replication)".into(),
        ));
    }
    Ok(by_region.into_iter().map(|o| o[0]).collect())
}

fn neighbor_mean_rows(lattice: &Lattice, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        let col: Vec<f64> = m.column(j).iter().cloned().collect();
        for (i, v) in lattice.neighbor_mean(&col).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

/// Log-likelihood of `(I − φC)(y − Dθ) ~ N(0, τ²I)` including the Jacobian
/// `log det(I − φC)`. Rows of `y` and `design` are in region order.
pub fn sar_log_likelihood(
    lattice: &Lattice,
    y: &[f64],
    design: &DMatrix<f64>,
    theta: &[f64],
    phi: f64,
    tau2: f64,
) -> f64 {
    let e = DVector::from_column_slice(y) - design * DVector::from_column_slice(theta);
    let e: Vec<f64> = e.iter().cloned().collect();
    let ce = lattice.neighbor_mean(&e);
    let ss: f64 = e.iter().zip(&ce).map(|(a, b)| (a - phi * b).powi(2)).sum();
    let n = y.len() as f64;
    lattice.sar_log_det(phi)
        - 0.5 * n * (2.0 * std::f64::consts::PI * tau2).ln()
        - ss / (2.0 * tau2)
}

struct SarModel<'a> {
    lattice: &'a Lattice,
    y: Vec<f64>,
    ybar: Vec<f64>,
    d: DMatrix<f64>,
    dbar: DMatrix<f64>,
    prior: PriorSpec,
    theta: DVector<f64>,
    tau2: f64,
    phi: f64,
    tuner: Tuner,
}

impl SarModel<'_> {
    fn transformed(&self, phi: f64) -> (DMatrix<f64>, DVector<f64>) {
        let d = &self.d - &self.dbar * phi;
        let y = DVector::from_iterator(
            self.y.len(),
            self.y.iter().zip(&self.ybar).map(|(a, b)| a - phi * b),
        );
        (d, y)
    }

    fn log_post_phi(&self, phi: f64, e: &[f64], ce: &[f64]) -> f64 {
        let ss: f64 = e.iter().zip(ce).map(|(a, b)| (a - phi * b).powi(2)).sum();
        self.lattice.sar_log_det(phi) - ss / (2.0 * self.tau2) + phi.ln() + (1.0 - phi).ln()
    }
}

impl ChainModel for SarModel<'_> {
    fn parameter_names(&self) -> Vec<String> {
        let mut names = vec!["gamma0".to_string(), "beta".to_string()];
        names.extend((2..self.d.ncols()).map(|j| format!("gamma[{}]", j - 1)));
        names.push("tau2".into());
        names.push("phi".into());
        names
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, phase: Phase) -> Result<()> {
        let (d, y) = self.transformed(self.phi);
        let xtx = d.transpose() * &d;
        let xty = d.transpose() * &y;
        self.theta = draw_coefficients(&xtx, &xty, self.tau2, &self.prior, rng)?;
        let resid = &y - &d * &self.theta;
        self.tau2 = gibbs_variance(resid.as_slice(), &self.prior, rng);

        let e: Vec<f64> = (DVector::from_column_slice(&self.y) - &self.d * &self.theta)
            .iter()
            .cloned()
            .collect();
        let ce = self.lattice.neighbor_mean(&e);
        let z: f64 = rng.sample(StandardNormal);
        let prop = expit(logit(self.phi) + self.tuner.sd * z);
        let ok = if prop > 0.0 && prop < 1.0 {
            let log_ratio = self.log_post_phi(prop, &e, &ce) - self.log_post_phi(self.phi, &e, &ce);
            let u: f64 = rng.random();
            u.ln() < log_ratio
        } else {
            false
        };
        if ok {
            self.phi = prop;
        }
        self.tuner.record(ok, phase.adapt());
        Ok(())
    }

    fn state(&self, out: &mut Vec<f64>) {
        out.extend(self.theta.iter());
        out.push(self.tau2);
        out.push(self.phi);
    }

    fn acceptance_rates(&self) -> Vec<(String, f64)> {
        vec![("phi".into(), self.tuner.rate())]
    }
}

/// Bayesian neighborhood-differenced regression
/// `Y − φȲ = (A − φĀ)β + (X − φX̄)γ + ε` with `φ ~ Uniform(0, 1)`.
pub fn fit_sar(
    data: &ArealDataset,
    lattice: &Lattice,
    config: &FitConfig,
) -> Result<CausalEstimate> {
    if lattice.n_regions() != data.n_regions() {
        return Err(Error::InvalidInput(
            "lattice and data disagree on the number of regions".into(),
        ));
    }
    let order = region_order(data)?;
    let n = order.len();
    let x = data.x();
    let mut d = DMatrix::zeros(n, x.ncols() + 1);
    let mut y = vec![0.0; n];
    for (r, &i) in order.iter().enumerate() {
        y[r] = data.y()[i];
        d[(r, 0)] = 1.0;
        d[(r, 1)] = data.a()[i];
        for j in 1..x.ncols() {
            d[(r, j + 1)] = x[(i, j)];
        }
    }
    check_full_rank(&d, "SAR design")?;
    let ybar = lattice.neighbor_mean(&y);
    let dbar = neighbor_mean_rows(lattice, &d);
    let mut model = SarModel {
        lattice,
        tau2: crate::linalg::variance(&y).max(1e-8),
        y,
        ybar,
        dbar,
        prior: config.prior,
        theta: DVector::zeros(d.ncols()),
        d,
        phi: 0.5,
        tuner: Tuner::new(0.5),
    };
    let s = run_chain(&mut model, &config.mcmc)?;
    let mut est = CausalEstimate::from_summary("SAR", &s, "beta", n);
    est.diagnostics.acceptance = s.acceptance.clone();
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_rook_grid, sar_error_covariance, SarForm, SarParams};
    use crate::linalg::mvn_log_density;

    #[test]
    fn row_form_matches_joint_form() {
        let l = build_rook_grid(3, 3).unwrap();
        let y: Vec<f64> = (0..9)
            .map(|i| (i as f64 * 0.7).sin() + 0.3 * i as f64)
            .collect();
        let mut d = DMatrix::from_element(9, 2, 1.0);
        for i in 0..9 {
            d[(i, 1)] = (i % 2) as f64;
        }
        let theta = [0.2, -0.4];
        for &(phi, tau2) in &[(0.3, 1.0), (0.8, 0.5), (0.05, 2.0)] {
            let row = sar_log_likelihood(&l, &y, &d, &theta, phi, tau2);
            let cov = sar_error_covariance(
                &l,
                SarParams::new(phi, tau2.sqrt()).unwrap(),
                SarForm::Transposed,
            )
            .unwrap();
            let e = DVector::from_column_slice(&y) - &d * DVector::from_column_slice(&theta);
            let joint = mvn_log_density(&e, &cov).unwrap();
            assert!((row - joint).abs() < 1e-9, "{row} vs {joint}");
        }
    }

    #[test]
    fn replication_rejected() {
        let l = build_rook_grid(2, 2).unwrap();
        let ds = ArealDataset::new(
            vec![0, 0, 1, 2, 3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            vec![0.0, 1.0, 0.0, 1.0, 0.0],
            vec![],
            4,
            crate::data::TreatmentKind::Binary,
        )
        .unwrap();
        assert!(fit_sar(&ds, &l, &FitConfig::new(20, 10, 1, 1)).is_err());
    }
}
