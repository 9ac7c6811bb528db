//! Methods for point-referenced data.
//!
//! The unmeasured confounder is a Gaussian process with exponential covariance
//! `σ² exp(−d/ρ)` plus a nugget `τ²`. Regressions with a GP error are fitted
//! by empirical Bayes: `(ρ, σ², τ²)` maximise the restricted likelihood over a
//! fixed grid, after which the coefficients have a closed-form normal
//! posterior. On top of that sit distance-adjusted propensity score matching,
//! spatial regression discontinuity, simple kriging onto a grid and
//! kernel-weighted spillover summaries.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::data::PointDataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::{chol_log_det, cholesky, rng_for, standard_normals, variance};
use crate::mcmc::{check_full_rank, Interval, PriorSpec};

/// Imputations drawn by the multiple-imputation spillover fit by default.
pub const DEFAULT_IMPUTATIONS: usize = 10;

const RANGE_FRACTIONS: [f64; 8] = [0.02, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0];
const SIGNAL_FRACTIONS: [f64; 10] = [0.05, 0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9, 0.95, 0.99];

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Largest pairwise distance.
pub fn max_distance(coords: &[[f64; 2]]) -> f64 {
    let mut m = 0.0_f64;
    for (i, a) in coords.iter().enumerate() {
        for b in &coords[i + 1..] {
            m = m.max(distance(*a, *b));
        }
    }
    m
}

/// Mean that is exact when every value is equal.
fn anchored_mean(xs: &[f64]) -> f64 {
    let x0 = xs[0];
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

/// Exponential covariance `σ² exp(−d/ρ)` with nugget `τ²` on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpParams {
    pub range: f64,
    pub sigma: f64,
    pub nugget: f64,
}

impl GpParams {
    pub fn new(range: f64, sigma: f64, nugget: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) || !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::ParameterOutOfRange(format!(
                "GP range ({range}) and scale ({sigma}) must be positive"
            )));
        }
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(Error::ParameterOutOfRange(format!(
                "nugget {nugget} must be non-negative"
            )));
        }
        Ok(GpParams {
            range,
            sigma,
            nugget,
        })
    }

    /// Covariance of the noise-free process at distance `d`.
    pub fn covariance_at(&self, d: f64) -> f64 {
        self.sigma * self.sigma * (-d / self.range).exp()
    }
}

/// Covariance of observations at `coords`, nugget included.
pub fn exp_covariance(params: &GpParams, coords: &[[f64; 2]]) -> DMatrix<f64> {
    let n = coords.len();
    DMatrix::from_fn(n, n, |i, j| {
        params.covariance_at(distance(coords[i], coords[j]))
            + if i == j { params.nugget } else { 0.0 }
    })
}

/// Noise-free cross-covariance between two point sets.
pub fn cross_covariance(params: &GpParams, a: &[[f64; 2]], b: &[[f64; 2]]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        params.covariance_at(distance(a[i], b[j]))
    })
}

/// Mean-zero draw of the process plus nugget noise at `coords`.
pub fn sample_gp<R: Rng + ?Sized>(
    params: &GpParams,
    coords: &[[f64; 2]],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let chol = cholesky(&exp_covariance(params, coords), "GP covariance")?;
    let z = standard_normals(coords.len(), rng);
    Ok((chol.l() * z).iter().copied().collect())
}

/// Regression with a GP error. Each point of a fixed `(range, signal share)`
/// grid is weighted by its restricted likelihood with the scale profiled out,
/// and the coefficient posteriors are averaged over the grid.
#[derive(Debug, Clone)]
pub struct GpRegression {
    /// Grid point with the largest restricted likelihood.
    pub params: GpParams,
    pub names: Vec<String>,
    /// Mean and covariance of the averaged coefficient posterior.
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub reml: f64,
    /// Degrees of freedom for the reported intervals.
    pub df: f64,
}

impl GpRegression {
    pub fn coefficient(&self, name: &str) -> Option<Interval> {
        let k = self.names.iter().position(|n| n == name)?;
        let q = StudentsT::new(0.0, 1.0, self.df)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        let (m, h) = (self.mean[k], q * self.cov[(k, k)].sqrt());
        Some(Interval {
            estimate: m,
            lower: m - h,
            upper: m + h,
        })
    }
}

struct GridPoint {
    range: f64,
    signal: f64,
    scale2: f64,
    reml: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

fn reml_at(
    dist: &DMatrix<f64>,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    range: f64,
    signal: f64,
    coef_var: f64,
) -> Option<GridPoint> {
    let n = y.len();
    let p = x.ncols();
    let r = DMatrix::from_fn(n, n, |i, j| {
        signal * (-dist[(i, j)] / range).exp() + if i == j { 1.0 - signal } else { 0.0 }
    });
    let chol = Cholesky::new(r)?;
    let rx = chol.solve(x);
    let ry = chol.solve(y);
    let xtrx = x.transpose() * &rx;
    let xtry = x.transpose() * &ry;
    let c2 = Cholesky::new(xtrx.clone())?;
    let beta = c2.solve(&xtry);
    let resid = y - x * &beta;
    let q = resid.dot(&chol.solve(&resid));
    let scale2 = q / (n - p) as f64;
    if !(scale2 > 0.0) {
        return None;
    }
    let reml = -0.5 * ((n - p) as f64 * scale2.ln() + chol_log_det(&chol) + chol_log_det(&c2));
    let precision = xtrx / scale2 + DMatrix::identity(p, p) / coef_var;
    let pc = Cholesky::new(precision)?;
    let mean = pc.solve(&(xtry / scale2));
    Some(GridPoint {
        range,
        signal,
        scale2,
        reml,
        mean,
        cov: pc.inverse(),
    })
}

/// GP regression of `y` on `design`; `names` label the design columns.
pub fn fit_gp_regression(
    coords: &[[f64; 2]],
    y: &[f64],
    design: DMatrix<f64>,
    names: Vec<String>,
    prior: PriorSpec,
) -> Result<GpRegression> {
    prior.validate()?;
    let n = y.len();
    let p = design.ncols();
    if coords.len() != n || design.nrows() != n || names.len() != p {
        return Err(invalid("coordinates, response and design disagree in size"));
    }
    if n <= p + 1 {
        return Err(invalid(format!(
            "{n} observations cannot support {p} coefficients"
        )));
    }
    check_full_rank(&design, "GP regression design")?;
    let m = max_distance(coords);
    if !(m > 0.0) {
        return Err(invalid("all observations share one location"));
    }
    let dist = DMatrix::from_fn(n, n, |i, j| distance(coords[i], coords[j]));
    let yv = DVector::from_column_slice(y);
    let grid: Vec<(f64, f64)> = RANGE_FRACTIONS
        .iter()
        .flat_map(|r| SIGNAL_FRACTIONS.iter().map(move |f| (r * m, *f)))
        .collect();
    let fits: Vec<GridPoint> = grid
        .par_iter()
        .map(|(r, f)| reml_at(&dist, &yv, &design, *r, *f, prior.coef_var))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let best = fits
        .iter()
        .fold(None::<&GridPoint>, |best, g| match best {
            Some(b) if b.reml >= g.reml => Some(b),
            _ => Some(g),
        })
        .ok_or_else(|| Error::NotPositiveDefinite("no GP grid point gave a valid fit".into()))?;
    let weights: Vec<f64> = fits.iter().map(|g| (g.reml - best.reml).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut mean = DVector::zeros(p);
    let mut second = DMatrix::zeros(p, p);
    for (g, w) in fits.iter().zip(&weights) {
        let w = w / total;
        mean += &g.mean * w;
        second += (&g.cov + &g.mean * g.mean.transpose()) * w;
    }
    let cov = second - &mean * mean.transpose();
    Ok(GpRegression {
        params: GpParams::new(
            best.range,
            (best.signal * best.scale2).sqrt(),
            (1.0 - best.signal) * best.scale2,
        )?,
        names,
        mean,
        cov,
        reml: best.reml,
        df: (n - p) as f64,
    })
}

/// GP regression on an intercept alone.
pub fn fit_gp_mean(coords: &[[f64; 2]], values: &[f64], prior: PriorSpec) -> Result<GpRegression> {
    let n = values.len();
    fit_gp_regression(
        coords,
        values,
        DMatrix::from_element(n, 1, 1.0),
        vec!["mean".into()],
        prior,
    )
}

/// `[1, extra..., X...]` design for a point dataset.
fn point_design(data: &PointDataset, extra: &[(String, Vec<f64>)]) -> (DMatrix<f64>, Vec<String>) {
    let n = data.n();
    let x = data.x();
    let mut names = vec!["gamma0".to_string()];
    names.extend(extra.iter().map(|(n, _)| n.clone()));
    names.extend(data.covariate_names().iter().map(|c| format!("gamma[{c}]")));
    let mut d = DMatrix::zeros(n, names.len());
    for i in 0..n {
        d[(i, 0)] = 1.0;
        for (k, (_, col)) in extra.iter().enumerate() {
            d[(i, 1 + k)] = col[i];
        }
        for j in 1..x.ncols() {
            d[(i, extra.len() + j)] = x[(i, j)];
        }
    }
    (d, names)
}

/// One treated/control pair chosen by [`dapsm_match`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DapsmPair {
    pub treated: usize,
    pub control: usize,
    pub distance: f64,
}

/// Pairs matched without replacement; indices refer to the input slices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<DapsmPair>,
    pub unmatched: Vec<usize>,
    pub weight: f64,
}

impl MatchSet {
    /// Mean treated-minus-control difference of `y` over the pairs.
    pub fn mean_difference(&self, y_treated: &[f64], y_control: &[f64]) -> f64 {
        self.pairs
            .iter()
            .map(|p| y_treated[p.treated] - y_control[p.control])
            .sum::<f64>()
            / self.pairs.len() as f64
    }
}

/// Distance-adjusted propensity score matching with
/// `D = w|ê_i − ê_j| + (1 − w) d_ij / m`, `m` the largest distance between any
/// two units. Each unit is `(score, location)`.
///
/// Pairs are chosen greedily: repeatedly take the treated unit whose best
/// available control is closest, so treated units are handled in ascending
/// order of their minimum `D`. Ties go to the lower index.
pub fn dapsm_match(
    treated: &[(f64, [f64; 2])],
    controls: &[(f64, [f64; 2])],
    w: f64,
) -> Result<MatchSet> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::ParameterOutOfRange(format!(
            "matching weight {w} outside [0, 1]"
        )));
    }
    if treated.is_empty() || controls.is_empty() {
        return Err(invalid(
            "matching needs at least one treated and one control unit",
        ));
    }
    if let Some((e, _)) = treated
        .iter()
        .chain(controls)
        .find(|(e, _)| !(*e > 0.0 && *e < 1.0))
    {
        return Err(invalid(format!("propensity score {e} outside (0, 1)")));
    }
    let all: Vec<[f64; 2]> = treated.iter().chain(controls).map(|u| u.1).collect();
    let m = max_distance(&all);
    let d = |t: usize, c: usize| {
        let geo = if m > 0.0 {
            distance(treated[t].1, controls[c].1) / m
        } else {
            0.0
        };
        w * (treated[t].0 - controls[c].0).abs() + (1.0 - w) * geo
    };
    let mut t_free = vec![true; treated.len()];
    let mut c_free = vec![true; controls.len()];
    let mut pairs = Vec::new();
    while pairs.len() < treated.len().min(controls.len()) {
        let mut best: Option<DapsmPair> = None;
        for t in (0..treated.len()).filter(|t| t_free[*t]) {
            for c in (0..controls.len()).filter(|c| c_free[*c]) {
                let dist = d(t, c);
                if best.is_none_or(|b| dist < b.distance) {
                    best = Some(DapsmPair {
                        treated: t,
                        control: c,
                        distance: dist,
                    });
                }
            }
        }
        let b = best.expect("free units remain");
        t_free[b.treated] = false;
        c_free[b.control] = false;
        pairs.push(b);
    }
    Ok(MatchSet {
        pairs,
        unmatched: (0..treated.len()).filter(|t| t_free[*t]).collect(),
        weight: w,
    })
}

/// Treated area for a spatial discontinuity design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreatedRegion {
    /// `{s : normal · s ≥ offset}`.
    HalfPlane {
        normal: [f64; 2],
        offset: f64,
    },
    Disc {
        center: [f64; 2],
        radius: f64,
    },
}

impl TreatedRegion {
    pub fn contains(&self, s: [f64; 2]) -> bool {
        match self {
            TreatedRegion::HalfPlane { normal, offset } => {
                normal[0] * s[0] + normal[1] * s[1] >= *offset
            }
            TreatedRegion::Disc { center, radius } => distance(*center, s) <= *radius,
        }
    }

    /// Distance from `s` to the border of the region.
    pub fn border_distance(&self, s: [f64; 2]) -> f64 {
        match self {
            TreatedRegion::HalfPlane { normal, offset } => {
                (normal[0] * s[0] + normal[1] * s[1] - offset).abs() / normal[0].hypot(normal[1])
            }
            TreatedRegion::Disc { center, radius } => (distance(*center, s) - radius).abs(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            TreatedRegion::HalfPlane { normal, offset } => {
                normal[0].hypot(normal[1]) > 0.0 && offset.is_finite()
            }
            TreatedRegion::Disc { radius, .. } => *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("degenerate treated region"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscontinuityFit {
    pub beta: Interval,
    pub n_used: usize,
    pub fit: GpRegression,
}

/// GP regression of `Y` on `A = 1{s ∈ region}` and the covariates, optionally
/// restricted to points within `band` of the border. The dataset's own
/// treatment column is ignored.
pub fn fit_discontinuity(
    data: &PointDataset,
    region: &TreatedRegion,
    band: Option<f64>,
    prior: PriorSpec,
) -> Result<DiscontinuityFit> {
    region.validate()?;
    if let Some(h) = band {
        if !(h > 0.0) {
            return Err(invalid(format!("band half-width {h} must be positive")));
        }
    }
    let keep: Vec<usize> = (0..data.n())
        .filter(|i| band.is_none_or(|h| region.border_distance(data.coords()[*i]) <= h))
        .collect();
    let inside = keep
        .iter()
        .filter(|i| region.contains(data.coords()[**i]))
        .count();
    let outside = keep.len() - inside;
    if band.is_none() && (inside == 0 || outside == 0) {
        return Err(Error::Positivity(
            "every observation lies on one side of the border".into(),
        ));
    }
    let p = 2 + data.covariate_names().len();
    if inside < 2 || outside < 2 || keep.len() < p + 3 {
        return Err(invalid(format!(
            "insufficient data near the border: {inside} inside and {outside} outside the band"
        )));
    }
    let sub = data.subset(&keep)?;
    let a: Vec<f64> = sub
        .coords()
        .iter()
        .map(|s| if region.contains(*s) { 1.0 } else { 0.0 })
        .collect();
    let (design, names) = point_design(&sub, &[("beta".into(), a)]);
    let fit = fit_gp_regression(sub.coords(), sub.y(), design, names, prior)?;
    Ok(DiscontinuityFit {
        beta: fit.coefficient("beta").expect("beta is in the design"),
        n_used: keep.len(),
        fit,
    })
}

/// Regular grid; node `k` sits at column `k % nx`, row `k / nx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(origin: [f64; 2], spacing: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(spacing > 0.0) || nx == 0 || ny == 0 {
            return Err(invalid("grid needs positive spacing and at least one node"));
        }
        Ok(Grid {
            origin,
            spacing,
            nx,
            ny,
        })
    }

    /// Smallest grid with the given spacing whose nodes span `coords`.
    pub fn covering(coords: &[[f64; 2]], spacing: f64) -> Result<Self> {
        if coords.is_empty() {
            return Err(invalid("no coordinates to cover"));
        }
        let lo = |k: usize| coords.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
        let hi = |k: usize| {
            coords
                .iter()
                .map(|c| c[k])
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let count = |k: usize| ((hi(k) - lo(k)) / spacing - 1e-9).ceil().max(0.0) as usize + 1;
        Grid::new([lo(0), lo(1)], spacing, count(0), count(1))
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node(&self, k: usize) -> [f64; 2] {
        [
            self.origin[0] + (k % self.nx) as f64 * self.spacing,
            self.origin[1] + (k / self.nx) as f64 * self.spacing,
        ]
    }

    pub fn nodes(&self) -> Vec<[f64; 2]> {
        (0..self.n_nodes()).map(|k| self.node(k)).collect()
    }

    pub fn cell_area(&self) -> f64 {
        self.spacing * self.spacing
    }

    /// Nearest node to `s`, if `s` lies within half a spacing of the grid.
    pub fn nearest(&self, s: [f64; 2]) -> Option<usize> {
        let ix = ((s[0] - self.origin[0]) / self.spacing).round();
        let iy = ((s[1] - self.origin[1]) / self.spacing).round();
        let inside = |i: f64, n: usize| i >= 0.0 && i < n as f64;
        (inside(ix, self.nx) && inside(iy, self.ny)).then(|| iy as usize * self.nx + ix as usize)
    }
}

/// Values at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GriddedField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(invalid(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        Ok(GriddedField { grid, values })
    }

    /// `s1,s2,value`, one row per node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "s1,s2,value")?;
        for (k, v) in self.values.iter().enumerate() {
            let [x, y] = self.grid.node(k);
            writeln!(w, "{x},{y},{v}")?;
        }
        Ok(())
    }
}

/// Simple-kriging weights for one set of observations. The mean is the
/// observations' average.
struct Kriging {
    coords: Vec<[f64; 2]>,
    params: GpParams,
    mean: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl Kriging {
    fn new(coords: &[[f64; 2]], values: &[f64], params: &GpParams) -> Result<Self> {
        if coords.len() < 2 || coords.len() != values.len() {
            return Err(invalid("kriging needs at least two located observations"));
        }
        let chol = Cholesky::new(exp_covariance(params, coords)).ok_or_else(|| {
            Error::Singular("kriging covariance (duplicate sites without a nugget?)".into())
        })?;
        let mean = anchored_mean(values);
        let centred = DVector::from_iterator(values.len(), values.iter().map(|v| v - mean));
        let alpha = chol.solve(&centred);
        Ok(Kriging {
            coords: coords.to_vec(),
            params: *params,
            mean,
            chol,
            alpha,
        })
    }

    fn predict(&self, targets: &[[f64; 2]]) -> Vec<f64> {
        targets
            .par_iter()
            .map(|t| {
                self.mean
                    + self
                        .coords
                        .iter()
                        .zip(self.alpha.iter())
                        .map(|(c, a)| self.params.covariance_at(distance(*c, *t)) * a)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Simple-kriging predictions of the noise-free process at `targets`.
pub fn krige(
    coords: &[[f64; 2]],
    values: &[f64],
    params: &GpParams,
    targets: &[[f64; 2]],
) -> Result<Vec<f64>> {
    Ok(Kriging::new(coords, values, params)?.predict(targets))
}

/// Kriged treatment surface on every node of `grid`.
pub fn krige_impute(
    coords: &[[f64; 2]],
    values: &[f64],
    params: &GpParams,
    grid: &Grid,
) -> Result<GriddedField> {
    GriddedField::new(*grid, krige(coords, values, params, &grid.nodes())?)
}

/// Draws of the noise-free process on a grid given the observations.
pub struct ConditionalSimulator {
    grid: Grid,
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl ConditionalSimulator {
    pub fn new(
        coords: &[[f64; 2]],
        values: &[f64],
        params: &GpParams,
        grid: &Grid,
    ) -> Result<Self> {
        let k = Kriging::new(coords, values, params)?;
        let nodes = grid.nodes();
        let mean = DVector::from_vec(k.predict(&nodes));
        let cross = cross_covariance(params, &nodes, coords);
        let solved = k.chol.solve(&cross.transpose());
        let mut cov = exp_covariance(
            &GpParams {
                nugget: 0.0,
                ..*params
            },
            &nodes,
        ) - &cross * solved;
        cov = (&cov + cov.transpose()) * 0.5;
        let jitter = 1e-9 * params.sigma * params.sigma;
        for i in 0..cov.nrows() {
            cov[(i, i)] += jitter;
        }
        let factor = cholesky(&cov, "conditional grid covariance")?.l();
        Ok(ConditionalSimulator {
            grid: *grid,
            mean,
            factor,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> GriddedField {
        let z = standard_normals(self.mean.len(), rng);
        let v = &self.mean + &self.factor * z;
        GriddedField {
            grid: self.grid,
            values: v.iter().copied().collect(),
        }
    }
}

/// Weight given to treatment at distance `d` when summarising spillover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpilloverKernel {
    /// Uniform within `radius`.
    Disc { radius: f64 },
    /// `exp{−½(d/φ)²} / √(2πφ²)`.
    Gaussian { bandwidth: f64 },
}

impl SpilloverKernel {
    pub fn weight(&self, d: f64) -> f64 {
        match self {
            SpilloverKernel::Disc { radius } => {
                if d <= *radius {
                    1.0 / (std::f64::consts::PI * radius * radius)
                } else {
                    0.0
                }
            }
            SpilloverKernel::Gaussian { bandwidth } => {
                (-0.5 * (d / bandwidth).powi(2)).exp()
                    / (2.0 * std::f64::consts::PI * bandwidth * bandwidth).sqrt()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let scale = match self {
            SpilloverKernel::Disc { radius } => *radius,
            SpilloverKernel::Gaussian { bandwidth } => *bandwidth,
        };
        if scale > 0.0 && scale.is_finite() {
            Ok(())
        } else {
            Err(Error::ParameterOutOfRange(format!(
                "kernel scale {scale} must be positive"
            )))
        }
    }
}

/// Kernel-weighted average of the gridded treatment around each target,
/// `Σ w a Δ / Σ w Δ`; truncation at the grid edge is renormalised. A target
/// whose kernel covers no node takes the value of its nearest node when it
/// lies on the grid.
pub fn spillover_summary(
    field: &GriddedField,
    kernel: &SpilloverKernel,
    targets: &[[f64; 2]],
) -> Result<Vec<f64>> {
    kernel.validate()?;
    let grid = &field.grid;
    targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut anchor = None;
            let mut num = 0.0;
            let mut den = 0.0;
            for (k, v) in field.values.iter().enumerate() {
                let w = kernel.weight(distance(grid.node(k), *t));
                if w > 0.0 {
                    let a0 = *anchor.get_or_insert(*v);
                    num += w * (v - a0);
                    den += w;
                }
            }
            match anchor {
                Some(a0) => Ok(a0 + num / den),
                None => grid.nearest(*t).map(|k| field.values[k]).ok_or_else(|| {
                    invalid(format!("kernel around target {i} covers no grid node"))
                }),
            }
        })
        .collect()
}

/// How the spillover exposure is built for [`fit_geostat_interference`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpilloverDesign {
    pub kernel: SpilloverKernel,
    pub grid: Grid,
    /// Covariance of the treatment surface; estimated from the observed
    /// treatments when absent.
    pub treatment_params: Option<GpParams>,
    /// `0` plugs in the kriged surface; otherwise the number of conditional
    /// draws pooled by Rubin's rules.
    pub imputations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GeoInterferenceFit {
    pub direct: Interval,
    pub spillover: Interval,
    pub treatment_params: GpParams,
    pub outcome_params: GpParams,
    pub imputations: usize,
    /// Spillover exposure from the kriged surface.
    pub exposure: Vec<f64>,
}

/// Rubin's rules for one scalar: pooled mean and t interval.
fn rubin_pool(estimates: &[f64], variances: &[f64]) -> Interval {
    let k = estimates.len() as f64;
    let q = estimates.iter().sum::<f64>() / k;
    let within = variances.iter().sum::<f64>() / k;
    let between = variance(estimates);
    let total = within + (1.0 + 1.0 / k) * between;
    let b = (1.0 + 1.0 / k) * between;
    let quantile = if b > 0.0 {
        let df = (k - 1.0) * (1.0 + within / b).powi(2);
        StudentsT::new(0.0, 1.0, df)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975)
    } else {
        Normal::new(0.0, 1.0)
            .expect("unit normal")
            .inverse_cdf(0.975)
    };
    let h = quantile * total.sqrt();
    Interval {
        estimate: q,
        lower: q - h,
        upper: q + h,
    }
}

/// `Y = γ₀ + a(s)β₁ + āβ₂ + Xγ + U + ε` with `U` a GP and `ā` the kernel
/// summary of the treatment surface kriged from the observed treatments.
pub fn fit_geostat_interference(
    data: &PointDataset,
    design: &SpilloverDesign,
    prior: PriorSpec,
) -> Result<GeoInterferenceFit> {
    design.kernel.validate()?;
    if design.imputations == 1 {
        return Err(invalid("multiple imputation needs at least two draws"));
    }
    if !(variance(data.a()) > 0.0) {
        return Err(Error::Unidentified(
            "treatment is constant; direct and spillover effects are not identified".into(),
        ));
    }
    let coords = data.coords();
    let treatment_params = match design.treatment_params {
        Some(p) => p,
        None => fit_gp_mean(coords, data.a(), prior)?.params,
    };
    let surface = krige_impute(coords, data.a(), &treatment_params, &design.grid)?;
    let exposure = spillover_summary(&surface, &design.kernel, coords)?;
    let fit_with = |abar: Vec<f64>| -> Result<GpRegression> {
        let (d, names) = point_design(
            data,
            &[("beta1".into(), data.a().to_vec()), ("beta2".into(), abar)],
        );
        fit_gp_regression(coords, data.y(), d, names, prior)
    };
    if design.imputations == 0 {
        let fit = fit_with(exposure.clone())?;
        return Ok(GeoInterferenceFit {
            direct: fit.coefficient("beta1").expect("beta1 in design"),
            spillover: fit.coefficient("beta2").expect("beta2 in design"),
            treatment_params,
            outcome_params: fit.params,
            imputations: 0,
            exposure,
        });
    }
    let sim = ConditionalSimulator::new(coords, data.a(), &treatment_params, &design.grid)?;
    let fits: Vec<GpRegression> = (0..design.imputations)
        .into_par_iter()
        .map(|k| {
            let draw = sim.draw(&mut rng_for(design.seed, k as u64));
            fit_with(spillover_summary(&draw, &design.kernel, coords)?)
        })
        .collect::<Result<_>>()?;
    let pool = |k: usize| {
        let est: Vec<f64> = fits.iter().map(|f| f.mean[k]).collect();
        let var: Vec<f64> = fits.iter().map(|f| f.cov[(k, k)]).collect();
        rubin_pool(&est, &var)
    };
    Ok(GeoInterferenceFit {
        direct: pool(1),
        spillover: pool(2),
        treatment_params,
        outcome_params: fits[0].params,
        imputations: design.imputations,
        exposure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_matches_hand_values() {
        let p = GpParams::new(2.0, 1.5, 0.3).unwrap();
        let c = exp_covariance(&p, &[[0.0, 0.0], [3.0, 4.0], [0.0, 1.0]]);
        assert!((c[(0, 0)] - (2.25 + 0.3)).abs() < 1e-15);
        assert!((c[(0, 1)] - 2.25 * (-2.5f64).exp()).abs() < 1e-15);
        assert!((c[(1, 2)] - 2.25 * (-(18f64).sqrt() / 2.0).exp()).abs() < 1e-15);
        assert_eq!(c[(2, 0)], c[(0, 2)]);
        assert!(p.covariance_at(0.5) > p.covariance_at(0.6));
        let q = GpParams::new(1.0, 2.0, 0.0).unwrap();
        assert_eq!(q.covariance_at(0.0), 4.0);
    }

    #[test]
    fn kriging_matches_dense_solve() {
        let coords = [[0.0, 0.0], [1.0, 0.2], [0.3, 0.9], [1.4, 1.1], [0.7, 0.5]];
        let v = [0.2, 1.0, -0.5, 0.4, 0.9];
        let p = GpParams::new(0.8, 1.0, 0.05).unwrap();
        let t = [[0.5, 0.5], [2.0, -1.0]];
        let got = krige(&coords, &v, &p, &t).unwrap();
        let k = exp_covariance(&p, &coords);
        let mu = v.iter().sum::<f64>() / 5.0;
        let r = DVector::from_iterator(5, v.iter().map(|x| x - mu));
        let w = k.clone().lu().solve(&r).unwrap();
        for (j, target) in t.iter().enumerate() {
            let c = DVector::from_iterator(
                5,
                coords
                    .iter()
                    .map(|s| p.covariance_at(distance(*s, *target))),
            );
            assert!((got[j] - (mu + c.dot(&w))).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_field_kriges_to_constant() {
        let coords = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let p = GpParams::new(0.5, 1.0, 0.0).unwrap();
        let g = Grid::new([-0.5, -0.5], 0.25, 9, 9).unwrap();
        let f = krige_impute(&coords, &[0.7; 3], &p, &g).unwrap();
        assert!(f.values.iter().all(|v| *v == 0.7));
    }

    #[test]
    fn dapsm_weight_bounds() {
        let t = [(0.5, [0.0, 0.0])];
        assert!(dapsm_match(&t, &t, 1.5).is_err());
        assert!(dapsm_match(&t, &[(1.0, [0.0, 0.0])], 0.5).is_err());
    }

    #[test]
    fn dapsm_greedy_small_instance() {
        let treated = [(0.40, [0.0, 0.0]), (0.70, [1.0, 1.0])];
        let controls = [(0.45, [1.0, 0.9]), (0.68, [0.1, 0.0]), (0.20, [0.0, 1.0])];
        let m = dapsm_match(&treated, &controls, 0.5).unwrap();
        // every (t, c) D value, sorted; greedy takes the smallest disjoint ones
        let mx = max_distance(&[[0.0, 0.0], [1.0, 1.0], [1.0, 0.9], [0.1, 0.0], [0.0, 1.0]]);
        let mut all = Vec::new();
        for (i, (et, st)) in treated.iter().enumerate() {
            for (j, (ec, sc)) in controls.iter().enumerate() {
                all.push((0.5 * (et - ec).abs() + 0.5 * distance(*st, *sc) / mx, i, j));
            }
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut used = (vec![], vec![]);
        let mut expect = vec![];
        for (d, i, j) in all {
            if !used.0.contains(&i) && !used.1.contains(&j) {
                used.0.push(i);
                used.1.push(j);
                expect.push((i, j, d));
            }
        }
        let got: Vec<_> = m
            .pairs
            .iter()
            .map(|p| (p.treated, p.control, p.distance))
            .collect();
        assert_eq!(got, expect);
        assert!(m.unmatched.is_empty());
    }

    #[test]
    fn disc_below_spacing_takes_node_value() {
        let g = Grid::new([0.0, 0.0], 1.0, 4, 4).unwrap();
        let f = GriddedField::new(g, (0..16).map(|k| k as f64).collect()).unwrap();
        let k = SpilloverKernel::Disc { radius: 0.2 };
        let s = spillover_summary(&f, &k, &[[2.0, 1.0], [2.3, 1.1]]).unwrap();
        assert_eq!(s, vec![6.0, 6.0]);
        assert!(spillover_summary(&f, &k, &[[9.0, 9.0]]).is_err());
    }

    #[test]
    fn rubin_pooling_without_between_variance_is_normal() {
        let i = rubin_pool(&[1.0, 1.0, 1.0], &[0.04, 0.04, 0.04]);
        assert!((i.upper - 1.0 - 1.959963984540054 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn discontinuity_guards() {
        let coords: Vec<[f64; 2]> = (0..20)
            .map(|i| [i as f64 / 20.0, (i % 7) as f64 / 7.0])
            .collect();
        let d = PointDataset::new(coords, vec![0.0; 20], vec![0.0; 20], vec![]).unwrap();
        let left = TreatedRegion::HalfPlane {
            normal: [1.0, 0.0],
            offset: 2.0,
        };
        assert!(matches!(
            fit_discontinuity(&d, &left, None, PriorSpec::default()),
            Err(Error::Positivity(_))
        ));
        let mid = TreatedRegion::HalfPlane {
            normal: [1.0, 0.0],
            offset: 0.52,
        };
        assert!(fit_discontinuity(&d, &mid, Some(1e-6), PriorSpec::default()).is_err());
    }
}
