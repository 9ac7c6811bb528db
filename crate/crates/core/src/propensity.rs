//! Spatial propensity scores, their spline expansion and strata.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;

use crate::data::{ArealDataset, TreatmentKind};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::linalg::{expit, quantile_sorted};
use crate::mcmc::{
    run_chain, ChainModel, FieldPrior, FitConfig, GaussianBlock, LogisticBlock, Phase,
    PosteriorSummary,
};

/// Fitted propensity model.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub kind: TreatmentKind,
    /// Point score per observation: a probability for binary treatments, a
    /// squared residual for continuous ones.
    pub scores: Vec<f64>,
    /// Posterior mean of the treatment-model coefficients.
    pub alpha: Vec<f64>,
    /// Posterior mean of the spatial field, one value per region.
    pub v: Vec<f64>,
    /// Kept draws of the spatial field (`v_draws[s][region]`).
    pub v_draws: Vec<Vec<f64>>,
    /// Kept draws of the coefficients (`alpha_draws[s][j]`).
    pub alpha_draws: Vec<Vec<f64>>,
    pub summary: PosteriorSummary,
}

struct BinaryModel<'a> {
    block: LogisticBlock<'a>,
    p: usize,
}

impl ChainModel for BinaryModel<'_> {
    fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.p).map(|j| format!("alpha[{j}]")).collect();
        names.push("rho_v".into());
        names.push("sigma2_v".into());
        let r = self.block.field.as_ref().map_or(0, |f| f.values.len());
        names.extend((0..r).map(|i| format!("v[{i}]")));
        names
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, phase: Phase) -> Result<()> {
        self.block.sweep(None, phase.adapt(), rng);
        Ok(())
    }

    fn state(&self, out: &mut Vec<f64>) {
        out.extend(self.block.coef.iter());
        let f = self.block.field.as_ref().expect("propensity field");
        out.push(f.rho);
        out.push(f.sigma2);
        out.extend(&f.values);
    }

    fn acceptance_rates(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .block
            .coefficient_acceptance()
            .into_iter()
            .enumerate()
            .map(|(j, r)| (format!("alpha[{j}]"), r))
            .collect();
        if let Some(f) = &self.block.field {
            out.push(("v sites".into(), f.site_acceptance()));
            out.push(("rho_v".into(), f.rho_tuner.rate()));
        }
        out
    }
}

fn split_draws(
    summary: &PosteriorSummary,
    p: usize,
    n_regions: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let s = summary.n_draws();
    let off = p + 2;
    let alpha = (0..s)
        .map(|k| (0..p).map(|j| summary.draws[j][k]).collect())
        .collect();
    let v = (0..s)
        .map(|k| (0..n_regions).map(|i| summary.draws[off + i][k]).collect())
        .collect();
    (alpha, v)
}

/// Spatial logistic propensity model `logit e = Xα + v`, `v ~ CAR`.
pub fn fit_binary_propensity(
    data: &ArealDataset,
    lattice: &Lattice,
    config: &FitConfig,
) -> Result<PropensityFit> {
    if data.treatment_kind() != TreatmentKind::Binary {
        return Err(Error::InvalidInput(
            "binary propensity requires a binary treatment".into(),
        ));
    }
    let frac = data.fraction_treated();
    if frac == 0.0 || frac == 1.0 {
        return Err(Error::Positivity(format!(
            "every observation has A = {}; treatment probabilities are not positive for both arms",
            frac
        )));
    }
    let block = LogisticBlock::new(
        data.a().to_vec(),
        data.x().clone(),
        data.region().to_vec(),
        data.n_regions(),
        Some(FieldPrior::Car),
        Some(lattice),
        config.prior,
    )?;
    let p = data.x().ncols();
    let mut model = BinaryModel { block, p };
    let summary = run_chain(&mut model, &config.mcmc)?;
    let alpha: Vec<f64> = summary.means[..p].to_vec();
    let v: Vec<f64> = summary.means[p + 2..].to_vec();
    let xa = data.x() * nalgebra::DVector::from_column_slice(&alpha);
    let scores = data
        .region()
        .iter()
        .enumerate()
        .map(|(i, r)| expit(xa[i] + v[*r]).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
        .collect();
    let (alpha_draws, v_draws) = split_draws(&summary, p, data.n_regions());
    Ok(PropensityFit {
        kind: TreatmentKind::Binary,
        scores,
        alpha,
        v,
        v_draws,
        alpha_draws,
        summary,
    })
}

struct GaussianModel<'a> {
    block: GaussianBlock<'a>,
    p: usize,
}

impl ChainModel for GaussianModel<'_> {
    fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.p).map(|j| format!("alpha[{j}]")).collect();
        names.push("rho_v".into());
        names.push("sigma2_v".into());
        let r = self.block.field.as_ref().map_or(0, |f| f.values.len());
        names.extend((0..r).map(|i| format!("v[{i}]")));
        names.push("tau2".into());
        names
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, phase: Phase) -> Result<()> {
        self.block.sweep(phase.adapt(), rng)
    }

    fn state(&self, out: &mut Vec<f64>) {
        out.extend(self.block.coef.iter());
        let f = self.block.field.as_ref().expect("propensity field");
        out.push(f.rho);
        out.push(f.sigma2);
        out.extend(&f.values);
        out.push(self.block.tau2);
    }

    fn acceptance_rates(&self) -> Vec<(String, f64)> {
        self.block
            .field
            .as_ref()
            .map(|f| vec![("rho_v".to_string(), f.rho_tuner.rate())])
            .unwrap_or_default()
    }
}

/// Gaussian spatial regression of a continuous treatment; the score of each
/// observation is its squared fitted residual `(A − Xα̂ − v̂)²`.
pub fn fit_generalized_propensity(
    data: &ArealDataset,
    lattice: &Lattice,
    config: &FitConfig,
) -> Result<PropensityFit> {
    if data.treatment_kind() != TreatmentKind::Continuous {
        return Err(Error::InvalidInput(
            "generalized propensity requires a continuous treatment".into(),
        ));
    }
    if !(crate::linalg::variance(data.a()) > 0.0) {
        return Err(Error::InvalidInput("treatment has zero variance".into()));
    }
    let block = GaussianBlock::new(
        data.a().to_vec(),
        data.x().clone(),
        data.region().to_vec(),
        data.n_regions(),
        Some(FieldPrior::Car),
        Some(lattice),
        config.prior,
    )?;
    let p = data.x().ncols();
    let mut model = GaussianModel { block, p };
    let summary = run_chain(&mut model, &config.mcmc)?;
    let alpha: Vec<f64> = summary.means[..p].to_vec();
    let v: Vec<f64> = summary.means[p + 2..p + 2 + data.n_regions()].to_vec();
    let scores = generalized_scores(data.a(), data.x(), data.region(), &alpha, &v);
    let (alpha_draws, v_draws) = split_draws(&summary, p, data.n_regions());
    Ok(PropensityFit {
        kind: TreatmentKind::Continuous,
        scores,
        alpha,
        v,
        v_draws,
        alpha_draws,
        summary,
    })
}

/// `(A_i − X_i α − v_{region(i)})²` per observation.
pub fn generalized_scores(
    a: &[f64],
    x: &DMatrix<f64>,
    region: &[usize],
    alpha: &[f64],
    v: &[f64],
) -> Vec<f64> {
    (0..a.len())
        .map(|i| {
            let fit: f64 = (0..x.ncols()).map(|j| x[(i, j)] * alpha[j]).sum::<f64>() + v[region[i]];
            (a[i] - fit).powi(2)
        })
        .collect()
}

/// Cubic B-spline basis with five degrees of freedom: two interior knots at
/// the score tertiles and boundary knots at the score range.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    pub lower: f64,
    pub upper: f64,
    pub interior: [f64; 2],
    knots: Vec<f64>,
}

pub const SPLINE_DEGREE: usize = 3;
pub const SPLINE_DF: usize = 5;

impl SplineBasis {
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        let mut s: Vec<f64> = scores.to_vec();
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("scores must be finite".into()));
        }
        s.sort_by(f64::total_cmp);
        let mut distinct = s.clone();
        distinct.dedup();
        if distinct.len() < SPLINE_DF + 1 {
            return Err(Error::InvalidInput(format!(
                "spline basis needs at least {} distinct scores, found {}",
                SPLINE_DF + 1,
                distinct.len()
            )));
        }
        let lower = s[0];
        let upper = s[s.len() - 1];
        let interior = [
            quantile_sorted(&s, 1.0 / 3.0),
            quantile_sorted(&s, 2.0 / 3.0),
        ];
        if !(lower < interior[0] && interior[0] < interior[1] && interior[1] < upper) {
            return Err(Error::InvalidInput(
                "degenerate spline knots: scores too heavily tied".into(),
            ));
        }
        Self::with_knots(lower, upper, interior)
    }

    pub fn with_knots(lower: f64, upper: f64, interior: [f64; 2]) -> Result<Self> {
        if !(lower < interior[0] && interior[0] < interior[1] && interior[1] < upper) {
            return Err(Error::InvalidInput(
                "spline knots must be strictly increasing".into(),
            ));
        }
        let mut knots = vec![lower; SPLINE_DEGREE + 1];
        knots.extend(interior);
        knots.extend(std::iter::repeat_n(upper, SPLINE_DEGREE + 1));
        Ok(SplineBasis {
            lower,
            upper,
            interior,
            knots,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// All `SPLINE_DF + 1` basis functions at `x`, which must lie in the
    /// boundary range.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        bspline_values(&self.knots, SPLINE_DEGREE, x)
    }
}

/// Every B-spline of `degree` on the clamped knot vector `knots` at `x`
/// (de Boor's triangular scheme). `x` must lie within the boundary knots; the
/// last interval is closed on the right.
pub fn bspline_values(knots: &[f64], degree: usize, x: f64) -> Vec<f64> {
    let t = knots;
    let nb = t.len() - degree - 1;
    let k = if x >= t[nb] {
        nb - 1
    } else {
        (degree..nb).rev().find(|&k| t[k] <= x).unwrap_or(degree)
    };
    let mut n = vec![0.0; degree + 1];
    n[0] = 1.0;
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for j in 1..=degree {
        left[j] = x - t[k + 1 - j];
        right[j] = t[k + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    let mut out = vec![0.0; nb];
    for (r, v) in n.into_iter().enumerate() {
        out[k - degree + r] = v;
    }
    out
}

/// Non-intercept spline design: `SPLINE_DF` columns (the first basis
/// function is dropped since the outcome model has its own intercept).
#[derive(Debug, Clone)]
pub struct SplineDesign {
    pub columns: DMatrix<f64>,
    /// Number of scores clamped into the boundary range.
    pub clamped: usize,
}

pub fn spline_transform(scores: &[f64], basis: &SplineBasis) -> SplineDesign {
    let mut columns = DMatrix::zeros(scores.len(), SPLINE_DF);
    let mut clamped = 0;
    for (i, s) in scores.iter().enumerate() {
        let x = if *s < basis.lower || *s > basis.upper {
            clamped += 1;
            s.clamp(basis.lower, basis.upper)
        } else {
            *s
        };
        let b = basis.evaluate(x);
        for j in 0..SPLINE_DF {
            columns[(i, j)] = b[j + 1];
        }
    }
    SplineDesign { columns, clamped }
}

/// Propensity-score strata: `L + 1` increasing cut points and one label per
/// observation. Stratum `l` holds scores in `(T_l, T_{l+1}]` (the first one
/// also holds `T_1`).
#[derive(Debug, Clone, PartialEq)]
pub struct StrataSpec {
    pub cuts: Vec<f64>,
    pub labels: Vec<usize>,
}

pub const DEFAULT_STRATA: usize = 5;

impl StrataSpec {
    pub fn n_strata(&self) -> usize {
        self.cuts.len() - 1
    }

    pub fn assign(&self, score: f64) -> usize {
        let interior = &self.cuts[1..self.cuts.len() - 1];
        interior.iter().filter(|c| score > **c).count()
    }

    /// Observation count per stratum.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_strata()];
        for l in &self.labels {
            c[*l] += 1;
        }
        c
    }

    /// A single stratum covering everything.
    pub fn single(n: usize, upper: f64) -> Self {
        StrataSpec {
            cuts: vec![0.0, upper],
            labels: vec![0; n],
        }
    }
}

/// Strata with interior cuts at the empirical `l/L` quantiles of `scores`.
/// Outer cuts are 0 and `max(1, max score)`.
pub fn build_strata(scores: &[f64], l: usize) -> Result<StrataSpec> {
    if l < 2 {
        return Err(Error::InvalidInput(
            "at least two strata are required".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidInput(
            "scores must be finite and nonnegative".into(),
        ));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let mut distinct = s.clone();
    distinct.dedup();
    if distinct.len() < l {
        return Err(Error::InvalidInput(format!(
            "{l} strata need at least {l} distinct scores, found {}",
            distinct.len()
        )));
    }
    let mut cuts = vec![0.0];
    for k in 1..l {
        cuts.push(quantile_sorted(&s, k as f64 / l as f64));
    }
    cuts.push(s[s.len() - 1].max(1.0));
    let mut spec = StrataSpec {
        cuts,
        labels: Vec::new(),
    };
    spec.labels = scores.iter().map(|v| spec.assign(*v)).collect();
    if let Some(empty) = spec.counts().iter().position(|c| *c == 0) {
        return Err(Error::InvalidInput(format!(
            "stratum {} is empty",
            empty + 1
        )));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook recursive Cox–de Boor definition.
    fn bspline(t: &[f64], i: usize, k: usize, x: f64, last: bool) -> f64 {
        if k == 0 {
            let inside = t[i] <= x && x < t[i + 1];
            let at_end = last
                && x == t[i + 1]
                && t[i] < t[i + 1]
                && t[i + 1..].iter().all(|v| *v == t[i + 1]);
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        if t[i + k] > t[i] {
            v += (x - t[i]) / (t[i + k] - t[i]) * bspline(t, i, k - 1, x, last);
        }
        if t[i + k + 1] > t[i + 1] {
            v += (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * bspline(t, i + 1, k - 1, x, last);
        }
        v
    }

    #[test]
    fn matches_recursive_definition() {
        let b = SplineBasis::with_knots(0.05, 0.95, [0.3, 0.62]).unwrap();
        let grid: Vec<f64> = (0..40)
            .map(|k| 0.05 + 0.9 * k as f64 / 40.0)
            .chain([0.3, 0.62, 0.95])
            .collect();
        for x in grid {
            let fast = b.evaluate(x);
            for (i, f) in fast.iter().enumerate() {
                let slow = bspline(b.knots(), i, 3, x, true);
                assert!((f - slow).abs() < 1e-12, "x={x} i={i} {f} vs {slow}");
            }
        }
    }

    #[test]
    fn partition_of_unity_and_nonnegative() {
        let scores: Vec<f64> = (0..50)
            .map(|i| ((i * 37 % 50) as f64 + 0.5) / 51.0)
            .collect();
        let b = SplineBasis::from_scores(&scores).unwrap();
        for s in &scores {
            let v = b.evaluate(*s);
            assert_eq!(v.len(), 6);
            assert!(v.iter().all(|x| *x >= 0.0));
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let d = spline_transform(&scores, &b);
        assert_eq!(d.columns.ncols(), 5);
        assert_eq!(d.clamped, 0);
        let again = spline_transform(&scores, &b);
        assert_eq!(d.columns, again.columns);
    }

    #[test]
    fn constant_scores_rejected() {
        assert!(SplineBasis::from_scores(&[0.4; 20]).is_err());
        assert!(SplineBasis::from_scores(&[0.1, 0.2, 0.3, 0.4, 0.5]).is_err());
    }

    #[test]
    fn out_of_range_scores_are_clamped() {
        let b = SplineBasis::with_knots(0.1, 0.9, [0.4, 0.6]).unwrap();
        let d = spline_transform(&[0.0, 0.5, 1.0], &b);
        assert_eq!(d.clamped, 2);
        let top = b.evaluate(0.9);
        assert!((top[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_split_for_two_strata() {
        let scores = [0.1, 0.9, 0.3, 0.7, 0.5, 0.2];
        let s = build_strata(&scores, 2).unwrap();
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        assert!((s.cuts[1] - (sorted[2] + sorted[3]) / 2.0).abs() < 1e-15);
        assert_eq!(s.labels, vec![0, 1, 0, 1, 1, 0]);
    }

    #[test]
    fn quintiles_put_two_per_stratum() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 11.0).collect();
        let s = build_strata(&scores, DEFAULT_STRATA).unwrap();
        assert_eq!(s.counts(), vec![2; 5]);
        // type-7 quantile at 0.2 of 10 points: position 1.8 between the 2nd and 3rd values
        let q = scores[1] + 0.8 * (scores[2] - scores[1]);
        assert!((s.cuts[1] - q).abs() < 1e-15);
        assert_eq!(s.cuts[0], 0.0);
        assert_eq!(s.cuts[5], 1.0);
    }

    #[test]
    fn ties_that_empty_a_stratum_are_reported() {
        let scores = [0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.5, 0.6, 0.7, 0.8];
        let err = build_strata(&scores, 5).unwrap_err().to_string();
        assert_eq!(err, "invalid input: stratum 2 is empty");
    }

    #[test]
    fn labels_monotone_in_scores() {
        let scores: Vec<f64> = (0..40)
            .map(|i| ((i * 13 % 40) as f64 + 0.3) / 41.0)
            .collect();
        let s = build_strata(&scores, 4).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                if scores[i] < scores[j] {
                    assert!(s.labels[i] <= s.labels[j]);
                }
            }
        }
    }

    #[test]
    fn squared_residual_scores() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, -1.0]);
        let s = generalized_scores(&[5.0, 0.0], &x, &[0, 1], &[1.0, 2.0], &[0.0, 1.0]);
        assert_eq!(s, vec![0.0, 0.0]);
    }
}
