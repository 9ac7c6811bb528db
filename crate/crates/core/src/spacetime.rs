//! Estimators for region-by-time panels: the global/local treatment-effect
//! comparison that flags missing spatial confounders, difference in
//! differences with optional neighbour spillovers, and the lagged (Granger)
//! regression with spatial errors that are independent over time.

use nalgebra::DMatrix;

use crate::confound::run_regression;
use crate::data::PanelDataset;
use crate::error::{invalid, Error, Result};
use crate::lattice::Lattice;
use crate::linalg::{mean, quantile_sorted, variance};
use crate::mcmc::{FieldPrior, FitConfig, Interval, PosteriorSummary};
use crate::propensity::bspline_values;

/// Row of every `(region, t)` cell; `rows[t - 1][i]`.
fn complete_rows(panel: &PanelDataset) -> Result<Vec<Vec<usize>>> {
    let index = panel.index();
    (1..=panel.n_times())
        .map(|t| {
            (0..panel.n_regions())
                .map(|i| {
                    index
                        .get(&(i, t))
                        .copied()
                        .ok_or_else(|| invalid(format!("panel is missing region {i} at t = {t}")))
                })
                .collect()
        })
        .collect()
}

fn check_lattice(panel: &PanelDataset, lattice: &Lattice) -> Result<()> {
    if lattice.n_regions() != panel.n_regions() {
        return Err(invalid(format!(
            "panel has {} regions, lattice has {}",
            panel.n_regions(),
            lattice.n_regions()
        )));
    }
    Ok(())
}

fn estimate(s: &PosteriorSummary, name: &str) -> Interval {
    s.estimate(name)
        .unwrap_or_else(|| panic!("parameter `{name}` is tracked"))
}

/// Covariate columns of the panel other than the intercept.
fn covariate_columns(panel: &PanelDataset) -> Vec<(String, Vec<f64>)> {
    let x = panel.x();
    panel
        .covariate_names()
        .iter()
        .enumerate()
        .map(|(j, name)| (name.clone(), x.column(j + 1).iter().copied().collect()))
        .collect()
}

fn design_from_columns(n: usize, columns: &[(String, Vec<f64>)]) -> (DMatrix<f64>, Vec<String>) {
    let mut d = DMatrix::zeros(n, columns.len());
    for (j, (_, col)) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            d[(i, j)] = *v;
        }
    }
    (d, columns.iter().map(|(n, _)| n.clone()).collect())
}

/// Default flexibility of the smooth time trend for `t ∈ 1..=T`.
pub fn default_time_df(n_times: usize) -> usize {
    6.min(n_times.saturating_sub(2))
}

/// `df` smooth functions of time on `1..=n_times` with no intercept: a
/// B-spline of degree `min(3, df)` with `df − degree` interior knots at
/// equally spaced quantiles of the time steps, first function dropped.
pub fn time_basis(t: &[usize], n_times: usize, df: usize) -> Result<DMatrix<f64>> {
    if df == 0 || n_times < 2 {
        return Err(invalid(
            "time basis needs df ≥ 1 and at least two time steps",
        ));
    }
    let degree = df.min(3);
    let n_interior = df - degree;
    let steps: Vec<f64> = (1..=n_times).map(|t| t as f64).collect();
    let (lo, hi) = (1.0, n_times as f64);
    let mut knots = vec![lo; degree + 1];
    for k in 1..=n_interior {
        knots.push(quantile_sorted(&steps, k as f64 / (n_interior + 1) as f64));
    }
    knots.extend(std::iter::repeat_n(hi, degree + 1));
    if knots.windows(2).any(|w| w[1] < w[0]) || n_interior > 0 && knots[degree + 1] <= lo {
        return Err(invalid(format!("{df} time functions need more time steps")));
    }
    let mut out = DMatrix::zeros(t.len(), df);
    for (i, ti) in t.iter().enumerate() {
        let b = bspline_values(&knots, degree, *ti as f64);
        for j in 0..df {
            out[(i, j)] = b[j + 1];
        }
    }
    Ok(out)
}

/// Global (`η₁`, on the time-`t` mean treatment) and local (`η₂`, on the
/// deviation from it) treatment effects; a difference suggests a missing
/// spatial confounder.
#[derive(Debug, Clone)]
pub struct JanesFit {
    pub eta_global: Interval,
    pub eta_local: Interval,
    /// Posterior of `η₁ − η₂`.
    pub difference: Interval,
    pub time_df: usize,
    pub summary: PosteriorSummary,
}

/// Fits `Y_it = γ₀ + η₁Ā_t + η₂(A_it − Ā_t) + X_itγ + f(t) + ε` with `f` a
/// smooth time trend of `time_df` functions (default [`default_time_df`]).
pub fn janes_test(
    panel: &PanelDataset,
    time_df: Option<usize>,
    config: &FitConfig,
) -> Result<JanesFit> {
    let nt = panel.n_times();
    if nt < 3 {
        return Err(invalid(format!("need at least 3 time steps, found {nt}")));
    }
    let df = time_df.unwrap_or_else(|| default_time_df(nt));
    if df == 0 || df > nt - 2 {
        return Err(invalid(format!(
            "time trend with {df} functions leaves the global effect unidentified for T = {nt}"
        )));
    }
    let n = panel.n();
    let mut sum = vec![0.0; nt];
    let mut count = vec![0usize; nt];
    for (a, t) in panel.a().iter().zip(panel.t()) {
        sum[t - 1] += a;
        count[t - 1] += 1;
    }
    let a_bar: Vec<f64> = panel
        .t()
        .iter()
        .map(|t| sum[t - 1] / count[t - 1] as f64)
        .collect();
    let local: Vec<f64> = panel.a().iter().zip(&a_bar).map(|(a, m)| a - m).collect();
    if local.iter().all(|d| *d == 0.0) {
        return Err(Error::Unidentified(
            "treatment does not vary within any time step; the local effect is not identified"
                .into(),
        ));
    }
    if !(variance(&a_bar) > 0.0) {
        return Err(Error::Unidentified(
            "mean treatment is constant over time; the global effect is not identified".into(),
        ));
    }
    let mut columns = vec![
        ("gamma0".to_string(), vec![1.0; n]),
        ("eta1".to_string(), a_bar),
        ("eta2".to_string(), local),
    ];
    columns.extend(
        covariate_columns(panel)
            .into_iter()
            .map(|(c, v)| (format!("gamma[{c}]"), v)),
    );
    let basis = time_basis(panel.t(), nt, df)?;
    for j in 0..df {
        columns.push((
            format!("time[{j}]"),
            basis.column(j).iter().copied().collect(),
        ));
    }
    let (design, names) = design_from_columns(n, &columns);
    let s = run_regression(
        panel.y(),
        design,
        names,
        panel.region(),
        panel.n_regions(),
        None,
        false,
        config,
    )?;
    let k1 = s.index("eta1").expect("eta1 is tracked");
    let k2 = s.index("eta2").expect("eta2 is tracked");
    let diff: Vec<f64> = s.draws[k1]
        .iter()
        .zip(&s.draws[k2])
        .map(|(a, b)| a - b)
        .collect();
    let mut sorted = diff.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(JanesFit {
        eta_global: estimate(&s, "eta1"),
        eta_local: estimate(&s, "eta2"),
        difference: Interval {
            estimate: mean(&diff),
            lower: quantile_sorted(&sorted, 0.025),
            upper: quantile_sorted(&sorted, 0.975),
        },
        time_df: df,
        summary: s,
    })
}

/// How the two-period model is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DidMethod {
    /// Regress the period-2 minus period-1 change on treatment; removes any
    /// additive region effect exactly. Treatment must be constant within
    /// region.
    Differenced,
    /// Fit both periods with a region-level random effect (CAR when a lattice
    /// is given, independent otherwise).
    Levels,
}

/// Difference-in-differences coefficients. `beta3` is the effect on the
/// change over time; `beta4`/`beta5` are the neighbour-spillover terms.
#[derive(Debug, Clone)]
pub struct DidFit {
    pub method: DidMethod,
    /// Level difference between groups; absorbed by differencing.
    pub beta1: Option<Interval>,
    pub beta2: Interval,
    pub beta3: Interval,
    pub beta4: Option<Interval>,
    pub beta5: Option<Interval>,
    pub summary: PosteriorSummary,
}

/// `Y_it = β₁A_it + β₂t + β₃tA_it [+ β₄Ā_it + β₅tĀ_it] + X_itγ + U_i + ε`
/// for a two-period panel, `Ā_it` being the neighbour mean of treatment.
///
/// The spillover form needs `lattice` and the levels fit, because `β₄` is
/// removed by differencing when treatment is constant within region.
pub fn fit_did(
    panel: &PanelDataset,
    spillover: bool,
    lattice: Option<&Lattice>,
    method: DidMethod,
    config: &FitConfig,
) -> Result<DidFit> {
    if panel.n_times() != 2 {
        return Err(invalid(format!(
            "difference in differences needs exactly two time steps, found {}",
            panel.n_times()
        )));
    }
    if let Some(l) = lattice {
        check_lattice(panel, l)?;
    }
    if spillover && lattice.is_none() {
        return Err(invalid("spillover terms need a lattice"));
    }
    let a = panel.a();
    if !a.iter().any(|v| *v != 0.0) {
        return Err(Error::Positivity("no treated units".into()));
    }
    if !a.contains(&0.0) {
        return Err(Error::Positivity("no control units".into()));
    }
    let rows = complete_rows(panel)?;
    match method {
        DidMethod::Differenced => {
            if spillover {
                return Err(invalid(
                    "the spillover model needs the levels fit: differencing removes the \
                     neighbour-mean main effect",
                ));
            }
            did_differenced(panel, &rows, config)
        }
        DidMethod::Levels => did_levels(panel, &rows, spillover, lattice, config),
    }
}

fn did_differenced(
    panel: &PanelDataset,
    rows: &[Vec<usize>],
    config: &FitConfig,
) -> Result<DidFit> {
    let nr = panel.n_regions();
    let (y, a, x) = (panel.y(), panel.a(), panel.x());
    let mut treat = Vec::with_capacity(nr);
    let mut dy = Vec::with_capacity(nr);
    for i in 0..nr {
        let (r1, r2) = (rows[0][i], rows[1][i]);
        if a[r1] != a[r2] {
            return Err(invalid(format!(
                "region {i} changes treatment between periods; use the levels fit"
            )));
        }
        treat.push(a[r1]);
        dy.push(y[r2] - y[r1]);
    }
    let mut columns = vec![
        ("beta2".to_string(), vec![1.0; nr]),
        ("beta3".to_string(), treat),
    ];
    for (j, name) in panel.covariate_names().iter().enumerate() {
        let dx: Vec<f64> = (0..nr)
            .map(|i| x[(rows[1][i], j + 1)] - x[(rows[0][i], j + 1)])
            .collect();
        if dx.iter().any(|v| *v != 0.0) {
            columns.push((format!("gamma[{name}]"), dx));
        }
    }
    let (design, names) = design_from_columns(nr, &columns);
    let region: Vec<usize> = (0..nr).collect();
    let s = run_regression(&dy, design, names, &region, nr, None, false, config)?;
    Ok(DidFit {
        method: DidMethod::Differenced,
        beta1: None,
        beta2: estimate(&s, "beta2"),
        beta3: estimate(&s, "beta3"),
        beta4: None,
        beta5: None,
        summary: s,
    })
}

fn did_levels(
    panel: &PanelDataset,
    rows: &[Vec<usize>],
    spillover: bool,
    lattice: Option<&Lattice>,
    config: &FitConfig,
) -> Result<DidFit> {
    let n = panel.n();
    let a = panel.a();
    let t: Vec<f64> = panel.t().iter().map(|t| *t as f64).collect();
    let mut columns = vec![
        ("gamma0".to_string(), vec![1.0; n]),
        ("beta1".to_string(), a.to_vec()),
        ("beta2".to_string(), t.clone()),
        (
            "beta3".to_string(),
            a.iter().zip(&t).map(|(a, t)| a * t).collect(),
        ),
    ];
    if let (true, Some(l)) = (spillover, lattice) {
        let mut nb = vec![0.0; n];
        for r in rows {
            let at: Vec<f64> = r.iter().map(|k| a[*k]).collect();
            for (i, m) in l.neighbor_mean(&at).into_iter().enumerate() {
                nb[r[i]] = m;
            }
        }
        columns.push((
            "beta5".to_string(),
            nb.iter().zip(&t).map(|(m, t)| m * t).collect(),
        ));
        columns.insert(4, ("beta4".to_string(), nb));
    }
    columns.extend(
        covariate_columns(panel)
            .into_iter()
            .map(|(c, v)| (format!("gamma[{c}]"), v)),
    );
    let (design, names) = design_from_columns(n, &columns);
    let field = match lattice {
        Some(l) => (FieldPrior::Car, Some(l)),
        None => (FieldPrior::Iid, None),
    };
    let s = run_regression(
        panel.y(),
        design,
        names,
        panel.region(),
        panel.n_regions(),
        Some(field),
        false,
        config,
    )?;
    Ok(DidFit {
        method: DidMethod::Levels,
        beta1: Some(estimate(&s, "beta1")),
        beta2: estimate(&s, "beta2"),
        beta3: estimate(&s, "beta3"),
        beta4: spillover.then(|| estimate(&s, "beta4")),
        beta5: spillover.then(|| estimate(&s, "beta5")),
        summary: s,
    })
}

/// Lag-`l` coefficients of the Granger regression, `l = 1..=L` in order.
#[derive(Debug, Clone)]
pub struct GrangerFit {
    pub lags: usize,
    pub beta: Vec<Interval>,
    pub rho: Vec<Interval>,
    /// `gamma[l - 1]` holds `(covariate, interval)` pairs for lag `l`.
    pub gamma: Vec<Vec<(String, Interval)>>,
    /// Neighbour-mean treatment coefficients, when requested.
    pub spillover: Option<Vec<Interval>>,
    pub summary: PosteriorSummary,
}

impl GrangerFit {
    /// Treatment is declared to Granger-cause the response when any lag's 95%
    /// interval excludes zero.
    pub fn granger_causes(&self) -> bool {
        self.beta.iter().any(Interval::excludes_zero)
    }
}

/// `Y_it = γ₀ + Σ_l (A_{i,t−l}β_l + X_{i,t−l}γ_l + Y_{i,t−l}ρ_l [+ Ā_{i,t−l}δ_l])
/// + U_it + ε` over `t = L+1..=T`, with `U_·t` CAR fields on `lattice` that
/// share `(ρ, σ²)` and are independent over time.
pub fn fit_granger(
    panel: &PanelDataset,
    lags: usize,
    spillover: bool,
    lattice: &Lattice,
    config: &FitConfig,
) -> Result<GrangerFit> {
    let nt = panel.n_times();
    if lags == 0 {
        return Err(invalid("at least one lag is required"));
    }
    if nt < lags + 2 {
        return Err(invalid(format!(
            "{lags} lags need at least {} time steps, found {nt}",
            lags + 2
        )));
    }
    check_lattice(panel, lattice)?;
    let rows = complete_rows(panel)?;
    let nr = panel.n_regions();
    let steps = nt - lags;
    let n = nr * steps;
    let (y, a, x) = (panel.y(), panel.a(), panel.x());
    // fitted cells in time-major order: t = lags+1.., then region
    let cell = |s: usize, i: usize, back: usize| rows[s + lags - back][i];
    let mut response = Vec::with_capacity(n);
    let mut region = Vec::with_capacity(n);
    for s in 0..steps {
        for i in 0..nr {
            response.push(y[cell(s, i, 0)]);
            region.push(s * nr + i);
        }
    }
    let lagged = |back: usize, f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        (0..steps)
            .flat_map(|s| (0..nr).map(move |i| (s, i)))
            .map(|(s, i)| f(cell(s, i, back)))
            .collect()
    };
    let mut columns = vec![("gamma0".to_string(), vec![1.0; n])];
    for l in 1..=lags {
        columns.push((format!("beta[{l}]"), lagged(l, &|k| a[k])));
        columns.push((format!("rho[{l}]"), lagged(l, &|k| y[k])));
        for (j, name) in panel.covariate_names().iter().enumerate() {
            columns.push((format!("gamma[{l}][{name}]"), lagged(l, &|k| x[(k, j + 1)])));
        }
        if spillover {
            let mut col = Vec::with_capacity(n);
            for s in 0..steps {
                let at: Vec<f64> = (0..nr).map(|i| a[cell(s, i, l)]).collect();
                col.extend(lattice.neighbor_mean(&at));
            }
            columns.push((format!("delta[{l}]"), col));
        }
    }
    let (design, names) = design_from_columns(n, &columns);
    lattice.spectrum();
    let stacked = lattice.disjoint_copies(steps)?;
    let s = run_regression(
        &response,
        design,
        names,
        &region,
        n,
        Some((FieldPrior::Car, Some(&stacked))),
        false,
        config,
    )?;
    let per_lag = |prefix: &str| -> Vec<Interval> {
        (1..=lags)
            .map(|l| estimate(&s, &format!("{prefix}[{l}]")))
            .collect()
    };
    let gamma = (1..=lags)
        .map(|l| {
            panel
                .covariate_names()
                .iter()
                .map(|c| (c.clone(), estimate(&s, &format!("gamma[{l}][{c}]"))))
                .collect()
        })
        .collect();
    Ok(GrangerFit {
        lags,
        beta: per_lag("beta"),
        rho: per_lag("rho"),
        gamma,
        spillover: spillover.then(|| per_lag("delta")),
        summary: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_rook_grid;
    use crate::linalg::rng_for;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn panel(
        nr: usize,
        nt: usize,
        y: impl Fn(usize, usize) -> f64,
        a: impl Fn(usize, usize) -> f64,
    ) -> PanelDataset {
        let mut cols = (vec![], vec![], vec![], vec![]);
        for t in 1..=nt {
            for i in 0..nr {
                cols.0.push(i);
                cols.1.push(t);
                cols.2.push(y(i, t));
                cols.3.push(a(i, t));
            }
        }
        PanelDataset::new(cols.0, cols.1, cols.2, cols.3, vec![], nr).unwrap()
    }

    #[test]
    fn time_basis_is_partition_of_unity_minus_first() {
        for (nt, df) in [(3, 1), (5, 3), (10, 6)] {
            let t: Vec<usize> = (1..=nt).collect();
            let b = time_basis(&t, nt, df).unwrap();
            assert_eq!(b.ncols(), df);
            // at t = T only the last function is non-zero
            assert!((b[(nt - 1, df - 1)] - 1.0).abs() < 1e-12);
            for i in 0..nt {
                let s: f64 = b.row(i).iter().sum();
                assert!((-1e-12..=1.0 + 1e-12).contains(&s));
            }
        }
        assert_eq!(default_time_df(4), 2);
        assert_eq!(default_time_df(20), 6);
    }

    #[test]
    fn janes_rejects_constant_mean_treatment() {
        let p = panel(4, 5, |i, t| (i + t) as f64, |i, _| (i % 2) as f64);
        let err = janes_test(&p, None, &FitConfig::new(200, 50, 1, 1)).unwrap_err();
        assert!(matches!(err, Error::Unidentified(_)), "{err}");
    }

    #[test]
    fn did_needs_both_groups_and_two_periods() {
        let cfg = FitConfig::new(200, 50, 1, 1);
        let p = panel(4, 2, |i, t| (i * t) as f64, |_, _| 1.0);
        assert!(matches!(
            fit_did(&p, false, None, DidMethod::Differenced, &cfg),
            Err(Error::Positivity(_))
        ));
        let p = panel(4, 3, |i, t| (i * t) as f64, |i, _| (i % 2) as f64);
        assert!(fit_did(&p, false, None, DidMethod::Differenced, &cfg).is_err());
    }

    #[test]
    fn differencing_ignores_region_constants() {
        let mut rng = rng_for(5, 0);
        let noise: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let base = |i: usize, t: usize| 0.4 * (i % 2) as f64 * t as f64 + noise[i * 2 + t - 1];
        let p1 = panel(20, 2, base, |i, _| (i % 2) as f64);
        // dyadic shifts keep the period differences bit-identical
        let p2 = panel(
            20,
            2,
            |i, t| base(i, t) + 8.0 * i as f64,
            |i, _| (i % 2) as f64,
        );
        let cfg = FitConfig::new(600, 100, 1, 3);
        let f1 = fit_did(&p1, false, None, DidMethod::Differenced, &cfg).unwrap();
        let f2 = fit_did(&p2, false, None, DidMethod::Differenced, &cfg).unwrap();
        assert!((f1.beta3.estimate - f2.beta3.estimate).abs() < 1e-9);
        assert!(f1.beta1.is_none());
    }

    #[test]
    fn spillover_flag_adds_two_coefficients() {
        let lattice = build_rook_grid(3, 3).unwrap();
        let cfg = FitConfig::new(300, 100, 1, 2);
        let treated = [1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        let p = panel(9, 2, |i, t| (i as f64).sin() + t as f64, |i, _| treated[i]);
        let plain = fit_did(&p, false, Some(&lattice), DidMethod::Levels, &cfg).unwrap();
        let spill = fit_did(&p, true, Some(&lattice), DidMethod::Levels, &cfg).unwrap();
        let coefs = |f: &DidFit| {
            f.summary
                .names
                .iter()
                .filter(|n| n.starts_with("beta"))
                .count()
        };
        assert_eq!(coefs(&spill), coefs(&plain) + 2);
        assert!(spill.beta4.is_some() && plain.beta5.is_none());
        assert!(fit_did(&p, true, Some(&lattice), DidMethod::Differenced, &cfg).is_err());
    }

    #[test]
    fn granger_needs_time_depth() {
        let lattice = build_rook_grid(2, 2).unwrap();
        let p = panel(4, 3, |i, t| (i + t) as f64, |i, t| ((i + t) % 2) as f64);
        let cfg = FitConfig::new(200, 50, 1, 1);
        assert!(fit_granger(&p, 2, false, &lattice, &cfg).is_err());
        assert!(fit_granger(&p, 0, false, &lattice, &cfg).is_err());
    }
}
