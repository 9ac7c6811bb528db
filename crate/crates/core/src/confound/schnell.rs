use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::CausalEstimate;
use crate::data::{ArealDataset, TreatmentKind};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::linalg::{chol_log_det, expit, logit, sample_canonical_normal};
use crate::mcmc::{check_full_rank, run_chain, ChainModel, FitConfig, Phase, PriorSpec, Tuner};

/// Dependence and scale parameters of the joint confounder/treatment field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchnellParams {
    /// Cross-dependence in `(-1, 1)`.
    pub rho: f64,
    pub rho_u: f64,
    pub rho_a: f64,
    pub sigma_u: f64,
    pub sigma_a: f64,
    pub tau: f64,
}

impl Default for SchnellParams {
    fn default() -> Self {
        SchnellParams {
            rho: 0.0,
            rho_u: 0.5,
            rho_a: 0.5,
            sigma_u: 1.0,
            sigma_a: 1.0,
            tau: 1.0,
        }
    }
}

fn m_minus(lattice: &Lattice, rho: f64) -> DMatrix<f64> {
    let n = lattice.n_regions();
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        q[(i, i)] = lattice.m(i) as f64;
        for &k in lattice.neighbors(i) {
            q[(i, k)] = -rho;
        }
    }
    q
}

fn m_diag(lattice: &Lattice) -> DVector<f64> {
    DVector::from_iterator(
        lattice.n_regions(),
        (0..lattice.n_regions()).map(|i| lattice.m(i) as f64),
    )
}

/// `(M − ρ_U W)⁻¹`.
fn ku(lattice: &Lattice, rho_u: f64) -> Result<DMatrix<f64>> {
    crate::linalg::spd_inverse(&m_minus(lattice, rho_u), "M - rho_U W")
}

/// Bias term `B(A) = −Q_U⁻¹ Q_UA A` with `Q_U = σ_U⁻²(M − ρ_U W)` and
/// `Q_UA = −ρ σ_U σ_A M`.
pub fn schnell_bias_term(lattice: &Lattice, params: &SchnellParams, a: &[f64]) -> Result<Vec<f64>> {
    let k = ku(lattice, params.rho_u)?;
    Ok(bias_with(&k, &m_diag(lattice), params, a))
}

fn bias_with(k: &DMatrix<f64>, m: &DVector<f64>, p: &SchnellParams, a: &[f64]) -> Vec<f64> {
    let ma = DVector::from_iterator(a.len(), a.iter().zip(m.iter()).map(|(x, mi)| x * mi));
    let s = p.rho * p.sigma_u.powi(3) * p.sigma_a;
    (k * ma * s).iter().cloned().collect()
}

struct Cache {
    rho_u: f64,
    k: DMatrix<f64>,
}

struct SchnellModel<'a> {
    lattice: &'a Lattice,
    y: DVector<f64>,
    a: Vec<f64>,
    d: DMatrix<f64>,
    m: DVector<f64>,
    prior: PriorSpec,
    theta: DVector<f64>,
    params: SchnellParams,
    tuners: Vec<Tuner>,
    cache: Cache,
}

const NAMES: [&str; 6] = ["rho", "rho_u", "rho_a", "sigma2_u", "sigma2_a", "tau2"];

fn to_vec(p: &SchnellParams) -> [f64; 6] {
    [
        logit((p.rho + 1.0) / 2.0),
        logit(p.rho_u),
        logit(p.rho_a),
        (p.sigma_u * p.sigma_u).ln(),
        (p.sigma_a * p.sigma_a).ln(),
        (p.tau * p.tau).ln(),
    ]
}

fn from_vec(v: &[f64; 6]) -> SchnellParams {
    SchnellParams {
        rho: 2.0 * expit(v[0]) - 1.0,
        rho_u: expit(v[1]),
        rho_a: expit(v[2]),
        sigma_u: (v[3] / 2.0).exp(),
        sigma_a: (v[4] / 2.0).exp(),
        tau: (v[5] / 2.0).exp(),
    }
}

/// Log prior on the transformed scale, Jacobians included.
fn log_prior(v: &[f64; 6], prior: &PriorSpec) -> f64 {
    let unit = |x: f64| -> f64 {
        let p = expit(x);
        p.ln() + (1.0 - p).ln()
    };
    let var = |eta: f64| -> f64 { -prior.var_shape * eta - prior.var_rate * (-eta).exp() };
    unit(v[0]) + unit(v[1]) + unit(v[2]) + var(v[3]) + var(v[4]) + var(v[5])
}

struct Factored {
    chol_y: Cholesky<f64, Dyn>,
    shift: Vec<f64>,
    loglik_a: f64,
}

impl SchnellModel<'_> {
    fn k_for(&mut self, rho_u: f64) -> Result<DMatrix<f64>> {
        if rho_u != self.cache.rho_u {
            return ku(self.lattice, rho_u);
        }
        Ok(self.cache.k.clone())
    }

    /// Pieces that depend only on the dependence/scale parameters. `None`
    /// when a covariance is not positive definite.
    fn factor(&self, p: &SchnellParams, k: &DMatrix<f64>) -> Option<Factored> {
        let n = self.a.len();
        let mut cov_y = k * (p.sigma_u * p.sigma_u);
        for i in 0..n {
            cov_y[(i, i)] += p.tau * p.tau;
        }
        let chol_y = Cholesky::new(cov_y)?;
        // M K M has entries m_i K_ik m_k
        let mut prec_a = m_minus(self.lattice, p.rho_a);
        for i in 0..n {
            for j in 0..n {
                prec_a[(i, j)] -= p.rho * p.rho * self.m[i] * k[(i, j)] * self.m[j];
            }
        }
        prec_a /= p.sigma_a * p.sigma_a;
        let chol_a = Cholesky::new(prec_a.clone())?;
        let av = DVector::from_column_slice(&self.a);
        let quad = av.dot(&(&prec_a * &av));
        let loglik_a = 0.5 * chol_log_det(&chol_a) - 0.5 * quad;
        let shift = bias_with(k, &self.m, p, &self.a);
        Some(Factored {
            chol_y,
            shift,
            loglik_a,
        })
    }

    fn loglik(&self, f: &Factored) -> f64 {
        let mean = &self.d * &self.theta;
        // outcome mean is Dθ − B(A)
        let r = DVector::from_iterator(
            self.y.len(),
            (0..self.y.len()).map(|i| self.y[i] - mean[i] + f.shift[i]),
        );
        let sol = f.chol_y.solve(&r);
        -0.5 * chol_log_det(&f.chol_y) - 0.5 * r.dot(&sol) + f.loglik_a
    }
}

impl ChainModel for SchnellModel<'_> {
    fn parameter_names(&self) -> Vec<String> {
        let mut names = vec!["gamma0".to_string(), "beta".to_string()];
        names.extend((2..self.d.ncols()).map(|j| format!("gamma[{}]", j - 1)));
        names.extend(NAMES.iter().map(|s| s.to_string()));
        names
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, phase: Phase) -> Result<()> {
        let k = self.cache.k.clone();
        let f = self
            .factor(&self.params, &k)
            .ok_or_else(|| Error::NotPositiveDefinite("current Schnell parameters".into()))?;
        // coefficients given the covariance: generalized least squares with the normal prior
        let target = DVector::from_iterator(
            self.y.len(),
            (0..self.y.len()).map(|i| self.y[i] + f.shift[i]),
        );
        let sd = f.chol_y.solve(&self.d);
        let mut prec = self.d.transpose() * &sd;
        for j in 0..prec.nrows() {
            prec[(j, j)] += 1.0 / self.prior.coef_var;
        }
        let lin = sd.transpose() * target;
        self.theta = sample_canonical_normal(&prec, &lin, rng)?;

        let mut current_v = to_vec(&self.params);
        let mut current_lp = self.loglik(&f) + log_prior(&current_v, &self.prior);
        for j in 0..6 {
            let z: f64 = rng.sample(StandardNormal);
            let mut v = current_v;
            v[j] += self.tuners[j].sd * z;
            let p = from_vec(&v);
            let mut ok = false;
            if p.rho.abs() < 1.0 && p.rho_u > 0.0 && p.rho_u < 1.0 && p.rho_a > 0.0 && p.rho_a < 1.0
            {
                let k = self.k_for(p.rho_u);
                if let Ok(k) = k {
                    if let Some(f) = self.factor(&p, &k) {
                        let lp = self.loglik(&f) + log_prior(&v, &self.prior);
                        let u: f64 = rng.random();
                        if u.ln() < lp - current_lp {
                            ok = true;
                            current_v = v;
                            current_lp = lp;
                            self.params = p;
                            if p.rho_u != self.cache.rho_u {
                                self.cache = Cache { rho_u: p.rho_u, k };
                            }
                        }
                    }
                }
            }
            self.tuners[j].record(ok, phase.adapt());
        }
        Ok(())
    }

    fn state(&self, out: &mut Vec<f64>) {
        out.extend(self.theta.iter());
        let p = &self.params;
        out.extend([
            p.rho,
            p.rho_u,
            p.rho_a,
            p.sigma_u * p.sigma_u,
            p.sigma_a * p.sigma_a,
            p.tau * p.tau,
        ]);
    }

    fn acceptance_rates(&self) -> Vec<(String, f64)> {
        NAMES
            .iter()
            .zip(&self.tuners)
            .map(|(n, t)| (n.to_string(), t.rate()))
            .collect()
    }
}

/// Joint Gaussian model of a continuous treatment and the outcome in which
/// the unmeasured confounder and the treatment share a bivariate CAR field.
/// Dense algebra throughout, so suited to lattices of a few hundred regions.
pub fn fit_schnell(
    data: &ArealDataset,
    lattice: &Lattice,
    config: &FitConfig,
) -> Result<CausalEstimate> {
    if data.treatment_kind() != TreatmentKind::Continuous {
        return Err(Error::InvalidInput(
            "the Schnell model requires a continuous treatment".into(),
        ));
    }
    if lattice.n_regions() != data.n_regions() {
        return Err(Error::InvalidInput(
            "lattice and data disagree on the number of regions".into(),
        ));
    }
    let by_region = data.obs_by_region();
    if by_region.iter().any(|o| o.len() != 1) {
        return Err(Error::InvalidInput(
            "the Schnell model needs exactly one observation per region".into(),
        ));
    }
    let n = by_region.len();
    let x = data.x();
    let mut d = DMatrix::zeros(n, x.ncols() + 1);
    let mut y = DVector::zeros(n);
    let mut a = vec![0.0; n];
    for (r, o) in by_region.iter().enumerate() {
        let i = o[0];
        y[r] = data.y()[i];
        a[r] = data.a()[i];
        d[(r, 0)] = 1.0;
        d[(r, 1)] = a[r];
        for j in 1..x.ncols() {
            d[(r, j + 1)] = x[(i, j)];
        }
    }
    check_full_rank(&d, "Schnell design")?;
    let params = SchnellParams::default();
    let mut model = SchnellModel {
        lattice,
        cache: Cache {
            rho_u: params.rho_u,
            k: ku(lattice, params.rho_u)?,
        },
        m: m_diag(lattice),
        y,
        a,
        prior: config.prior,
        theta: DVector::zeros(d.ncols()),
        d,
        params,
        tuners: (0..6).map(|_| Tuner::new(0.5)).collect(),
    };
    let s = run_chain(&mut model, &config.mcmc)?;
    Ok(CausalEstimate::from_summary("Schnell", &s, "beta", n))
}
