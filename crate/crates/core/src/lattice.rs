//! Region adjacency structures and CAR/SAR Gaussian Markov random fields.
//!
//! A [`Lattice`] stores symmetric neighbor lists. The CAR model with
//! dependence `rho` and scale `sigma` has precision `σ⁻²(M − ρW)`, where `M`
//! holds the neighbor counts on its diagonal and `W` is the 0/1 adjacency
//! matrix. Dense factorizations are used throughout; lattices up to a few
//! thousand regions are handled comfortably.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, rng_for};

/// Symmetric region adjacency with at least one neighbor per region.
#[derive(Debug, Clone)]
pub struct Lattice {
    neighbors: Vec<Vec<usize>>,
    // eigenvalues of M^{-1/2} W M^{-1/2}, filled on first use
    spectrum: OnceLock<Vec<f64>>,
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.neighbors == other.neighbors
    }
}

impl Lattice {
    /// Builds a lattice from per-region neighbor lists, validating symmetry,
    /// absence of self-neighbors and `m_i ≥ 1`.
    pub fn from_neighbors(mut neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        if n < 2 {
            return Err(Error::InvalidLattice(format!(
                "need at least two regions, got {n}"
            )));
        }
        for (i, nb) in neighbors.iter_mut().enumerate() {
            nb.sort_unstable();
            nb.dedup();
            if nb.is_empty() {
                return Err(Error::InvalidLattice(format!(
                    "region {i} has no neighbors"
                )));
            }
            if let Some(&k) = nb.iter().find(|&&k| k >= n) {
                return Err(Error::InvalidLattice(format!(
                    "region {i} lists unknown neighbor {k}"
                )));
            }
            if nb.binary_search(&i).is_ok() {
                return Err(Error::InvalidLattice(format!("region {i} lists itself")));
            }
        }
        for i in 0..n {
            for &k in &neighbors[i] {
                if neighbors[k].binary_search(&i).is_err() {
                    return Err(Error::InvalidLattice(format!(
                        "adjacency not symmetric: {i} -> {k} but not {k} -> {i}"
                    )));
                }
            }
        }
        Ok(Lattice {
            neighbors,
            spectrum: OnceLock::new(),
        })
    }

    pub fn n_regions(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Neighbor count `m_i`.
    pub fn m(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_adjacent(&self, i: usize, k: usize) -> bool {
        self.neighbors[i].binary_search(&k).is_ok()
    }

    /// Mean of `values` over the neighbors of each region.
    pub fn neighbor_mean(&self, values: &[f64]) -> Vec<f64> {
        self.neighbors
            .iter()
            .map(|nb| nb.iter().map(|&k| values[k]).sum::<f64>() / nb.len() as f64)
            .collect()
    }

    /// `copies` disjoint copies of this lattice; copy `c` occupies regions
    /// `c·N .. (c+1)·N`.
    pub fn disjoint_copies(&self, copies: usize) -> Result<Lattice> {
        if copies == 0 {
            return Err(Error::InvalidLattice("zero copies".into()));
        }
        let n = self.n_regions();
        let mut neighbors = Vec::with_capacity(n * copies);
        for c in 0..copies {
            for nb in &self.neighbors {
                neighbors.push(nb.iter().map(|k| k + c * n).collect());
            }
        }
        let lattice = Lattice::from_neighbors(neighbors)?;
        if let Some(spec) = self.spectrum.get() {
            let mut all = Vec::with_capacity(n * copies);
            for _ in 0..copies {
                all.extend_from_slice(spec);
            }
            let _ = lattice.spectrum.set(all);
        }
        Ok(lattice)
    }

    /// Dense adjacency matrix `W`.
    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let n = self.n_regions();
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for &k in &self.neighbors[i] {
                w[(i, k)] = 1.0;
            }
        }
        w
    }

    /// Row-normalized weights `C` with `C_ik = 1/m_i` for adjacent pairs.
    pub fn row_normalized_weights(&self) -> DMatrix<f64> {
        let n = self.n_regions();
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            let mi = self.m(i) as f64;
            for &k in &self.neighbors[i] {
                c[(i, k)] = 1.0 / mi;
            }
        }
        c
    }

    /// Eigenvalues of `M^{-1/2} W M^{-1/2}`, which are also the eigenvalues of
    /// `C = M⁻¹W`. They lie in `[-1, 1]` and give `log det(M − ρW)` in O(N).
    pub fn spectrum(&self) -> &[f64] {
        self.spectrum.get_or_init(|| {
            let n = self.n_regions();
            let mut s = DMatrix::zeros(n, n);
            for i in 0..n {
                for &k in &self.neighbors[i] {
                    s[(i, k)] = 1.0 / ((self.m(i) * self.m(k)) as f64).sqrt();
                }
            }
            let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().cloned().collect();
            ev.sort_by(f64::total_cmp);
            ev
        })
    }

    /// `log det(M − ρW)`.
    pub fn car_log_det(&self, rho: f64) -> f64 {
        let log_m: f64 = (0..self.n_regions()).map(|i| (self.m(i) as f64).ln()).sum();
        log_m
            + self
                .spectrum()
                .iter()
                .map(|l| (1.0 - rho * l).ln())
                .sum::<f64>()
    }

    /// `log det(I − ψC)` for the row-normalized weights.
    pub fn sar_log_det(&self, psi: f64) -> f64 {
        self.spectrum().iter().map(|l| (1.0 - psi * l).ln()).sum()
    }

    /// `(uᵀMu, uᵀWu)`, the two pieces of the CAR quadratic form.
    pub fn car_quadratic_parts(&self, u: &[f64]) -> (f64, f64) {
        let mut mu = 0.0;
        let mut wu = 0.0;
        for (i, nb) in self.neighbors.iter().enumerate() {
            mu += nb.len() as f64 * u[i] * u[i];
            wu += u[i] * nb.iter().map(|&k| u[k]).sum::<f64>();
        }
        (mu, wu)
    }

    /// Adjacency text: one line per region, `region_id: k1 k2 ...`.
    pub fn to_adjacency_text(&self) -> String {
        let mut out = String::new();
        for (i, nb) in self.neighbors.iter().enumerate() {
            let _ = write!(out, "{i}:");
            for k in nb {
                let _ = write!(out, " {k}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_adjacency_text(text: &str) -> Result<Lattice> {
        let mut entries: Vec<(usize, Vec<usize>)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, rest) = line.split_once(':').ok_or_else(|| {
                Error::InvalidLattice(format!("line {}: expected `id: neighbors`", lineno + 1))
            })?;
            let id: usize = id.trim().parse().map_err(|_| {
                Error::InvalidLattice(format!(
                    "line {}: bad region id `{}`",
                    lineno + 1,
                    id.trim()
                ))
            })?;
            let nb = rest
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| {
                        Error::InvalidLattice(format!("line {}: bad neighbor `{t}`", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            entries.push((id, nb));
        }
        let n = entries.len();
        let mut neighbors = vec![None; n];
        for (id, nb) in entries {
            if id >= n {
                return Err(Error::InvalidLattice(format!(
                    "region id {id} out of range for {n} regions"
                )));
            }
            if neighbors[id].replace(nb).is_some() {
                return Err(Error::InvalidLattice(format!("region {id} listed twice")));
            }
        }
        Lattice::from_neighbors(neighbors.into_iter().map(|o| o.unwrap()).collect())
    }

    pub fn read_adjacency(path: impl AsRef<Path>) -> Result<Lattice> {
        Self::parse_adjacency_text(&std::fs::read_to_string(path)?)
    }

    pub fn write_adjacency(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_adjacency_text())?;
        Ok(())
    }
}

/// Rook-adjacency grid with row-major region indexing.
pub fn build_rook_grid(nrows: usize, ncols: usize) -> Result<Lattice> {
    if nrows == 0 || ncols == 0 || nrows * ncols < 2 {
        return Err(Error::InvalidLattice(format!(
            "a {nrows}x{ncols} grid has regions without neighbors"
        )));
    }
    let idx = |r: usize, c: usize| r * ncols + c;
    let mut neighbors = Vec::with_capacity(nrows * ncols);
    for r in 0..nrows {
        for c in 0..ncols {
            let mut nb = Vec::with_capacity(4);
            if r > 0 {
                nb.push(idx(r - 1, c));
            }
            if c > 0 {
                nb.push(idx(r, c - 1));
            }
            if c + 1 < ncols {
                nb.push(idx(r, c + 1));
            }
            if r + 1 < nrows {
                nb.push(idx(r + 1, c));
            }
            neighbors.push(nb);
        }
    }
    Lattice::from_neighbors(neighbors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarParams {
    rho: f64,
    sigma: f64,
}

impl CarParams {
    /// `rho` must lie in the open interval (0, 1) and `sigma` be positive.
    pub fn new(rho: f64, sigma: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::ParameterOutOfRange(format!(
                "CAR rho must be in (0, 1), got {rho}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::ParameterOutOfRange(format!(
                "CAR sigma must be positive, got {sigma}"
            )));
        }
        Ok(CarParams { rho, sigma })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SarParams {
    psi: f64,
    sigma: f64,
}

impl SarParams {
    /// `psi = 0` is accepted as the no-autocorrelation limit.
    pub fn new(psi: f64, sigma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&psi) {
            return Err(Error::ParameterOutOfRange(format!(
                "SAR psi must be in [0, 1), got {psi}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::ParameterOutOfRange(format!(
                "SAR sigma must be positive, got {sigma}"
            )));
        }
        Ok(SarParams { psi, sigma })
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Dense symmetric positive-definite precision matrix.
#[derive(Debug, Clone)]
pub struct PrecisionMatrix {
    matrix: DMatrix<f64>,
}

impl PrecisionMatrix {
    /// Wraps `matrix` after checking symmetry and positive definiteness.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidInput("precision must be square".into()));
        }
        let n = matrix.nrows();
        for i in 0..n {
            for k in 0..i {
                let (a, b) = (matrix[(i, k)], matrix[(k, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::InvalidInput(format!(
                        "precision not symmetric at ({i}, {k})"
                    )));
                }
            }
        }
        linalg::cholesky(&matrix, "precision")?;
        Ok(PrecisionMatrix { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        linalg::spd_inverse(&self.matrix, "precision")
    }
}

/// `σ⁻²(M − ρW)`.
pub fn car_precision(lattice: &Lattice, params: CarParams) -> Result<PrecisionMatrix> {
    let n = lattice.n_regions();
    let s2 = params.sigma * params.sigma;
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        q[(i, i)] = lattice.m(i) as f64 / s2;
        for &k in lattice.neighbors(i) {
            q[(i, k)] = -params.rho / s2;
        }
    }
    PrecisionMatrix::new(q)
}

/// `σ²(M − ρW)⁻¹`.
pub fn car_covariance(lattice: &Lattice, params: CarParams) -> Result<DMatrix<f64>> {
    car_precision(lattice, params)?.covariance()
}

/// Correlation between `U_i` and `U_k` under `CAR(ρ, σ)`; does not depend on σ.
pub fn implied_correlation(
    lattice: &Lattice,
    params: CarParams,
    i: usize,
    k: usize,
) -> Result<f64> {
    let n = lattice.n_regions();
    if i >= n || k >= n {
        return Err(Error::InvalidInput(format!(
            "region index out of range for {n} regions"
        )));
    }
    if i == k {
        return Err(Error::InvalidInput(
            "implied correlation needs two distinct regions".into(),
        ));
    }
    // σ cancels; work with σ = 1
    let unit = CarParams::new(params.rho, 1.0)?;
    let cov = car_covariance(lattice, unit)?;
    Ok(cov[(i, k)] / (cov[(i, i)] * cov[(k, k)]).sqrt())
}

/// Reusable sampler for mean-zero Gaussian draws with a fixed precision.
#[derive(Debug, Clone)]
pub struct GmrfSampler {
    upper: DMatrix<f64>,
}

impl GmrfSampler {
    pub fn new(precision: &PrecisionMatrix) -> Result<Self> {
        let chol = linalg::cholesky(precision.matrix(), "GMRF precision")?;
        Ok(GmrfSampler {
            upper: chol.l().transpose(),
        })
    }

    /// Solves `Lᵀ x = z` so that `Cov(x) = Q⁻¹`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = linalg::standard_normals(self.upper.nrows(), rng);
        self.upper
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal")
            .as_slice()
            .to_vec()
    }
}

/// One mean-zero draw with the given precision; deterministic in `seed`.
pub fn sample_gmrf(precision: &PrecisionMatrix, seed: u64) -> Result<Vec<f64>> {
    let sampler = GmrfSampler::new(precision)?;
    Ok(sampler.draw(&mut rng_for(seed, 0)))
}

/// Which product form to use for the SAR error covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SarForm {
    /// `σ²(I − ψC)⁻¹(I − ψC)⁻¹`, taken literally.
    #[default]
    Literal,
    /// `σ²(I − ψC)⁻¹(I − ψCᵀ)⁻¹`, the covariance implied by the row form.
    Transposed,
}

pub fn sar_error_covariance(
    lattice: &Lattice,
    params: SarParams,
    form: SarForm,
) -> Result<DMatrix<f64>> {
    let n = lattice.n_regions();
    let b = DMatrix::<f64>::identity(n, n) - lattice.row_normalized_weights() * params.psi;
    let inv = b
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("I - psi*C is singular".into()))?;
    let second = match form {
        SarForm::Literal => inv.clone(),
        SarForm::Transposed => inv.transpose(),
    };
    Ok((&inv * second) * (params.sigma * params.sigma))
}

/// Applies `(I − ψC)` to a vector: `x_i − ψ x̄_i`.
pub fn sar_filter(lattice: &Lattice, psi: f64, x: &[f64]) -> Vec<f64> {
    let nb = lattice.neighbor_mean(x);
    x.iter().zip(nb).map(|(v, m)| v - psi * m).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_grid_has_single_neighbors() {
        let l = build_rook_grid(1, 2).unwrap();
        assert_eq!(l.n_regions(), 2);
        assert_eq!(l.m(0), 1);
        assert_eq!(l.m(1), 1);
    }

    #[test]
    fn one_by_one_grid_rejected() {
        assert!(build_rook_grid(1, 1).is_err());
        assert!(build_rook_grid(0, 4).is_err());
    }

    #[test]
    fn three_by_three_counts() {
        let l = build_rook_grid(3, 3).unwrap();
        assert_eq!(l.m(4), 4);
        for edge in [1, 3, 5, 7] {
            assert_eq!(l.m(edge), 3);
        }
        for corner in [0, 2, 6, 8] {
            assert_eq!(l.m(corner), 2);
        }
    }

    #[test]
    fn thirty_grid_interior_and_corners() {
        let l = build_rook_grid(30, 30).unwrap();
        assert_eq!(l.m(15 * 30 + 15), 4);
        assert_eq!(l.m(0), 2);
        assert_eq!(l.m(29), 2);
        assert_eq!(l.m(899), 2);
    }

    #[test]
    fn asymmetric_lists_rejected() {
        let err = Lattice::from_neighbors(vec![vec![1], vec![2], vec![1]]).unwrap_err();
        assert!(matches!(err, Error::InvalidLattice(_)));
        assert!(Lattice::from_neighbors(vec![vec![0, 1], vec![0]]).is_err());
    }

    #[test]
    fn two_region_precision_closed_form() {
        let l = build_rook_grid(1, 2).unwrap();
        let (rho, sigma) = (0.3, 1.5);
        let q = car_precision(&l, CarParams::new(rho, sigma).unwrap()).unwrap();
        let s2 = sigma * sigma;
        let expected = [1.0 / s2, -rho / s2, -rho / s2, 1.0 / s2];
        for (a, b) in q.matrix().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rho_bounds_rejected() {
        assert!(CarParams::new(0.0, 1.0).is_err());
        assert!(CarParams::new(1.0, 1.0).is_err());
        assert!(CarParams::new(0.5, 0.0).is_err());
    }

    #[test]
    fn small_rho_gives_diagonal_precision() {
        let l = build_rook_grid(3, 3).unwrap();
        let q = car_precision(&l, CarParams::new(1e-12, 2.0).unwrap()).unwrap();
        for i in 0..9 {
            assert!((q.matrix()[(i, i)] - l.m(i) as f64 / 4.0).abs() < 1e-12);
            for k in 0..9 {
                if k != i {
                    assert!(q.matrix()[(i, k)].abs() < 1e-12);
                }
            }
        }
        let c = implied_correlation(&l, CarParams::new(1e-9, 1.0).unwrap(), 3, 4).unwrap();
        assert!(c.abs() < 1e-8);
    }

    #[test]
    fn log_det_from_spectrum_matches_cholesky() {
        let l = build_rook_grid(4, 5).unwrap();
        for rho in [0.1, 0.7, 0.99] {
            let q = car_precision(&l, CarParams::new(rho, 1.0).unwrap()).unwrap();
            let chol = linalg::cholesky(q.matrix(), "q").unwrap();
            assert!((linalg::chol_log_det(&chol) - l.car_log_det(rho)).abs() < 1e-9);
        }
        let c = DMatrix::<f64>::identity(20, 20) - l.row_normalized_weights() * 0.6;
        assert!((c.determinant().ln() - l.sar_log_det(0.6)).abs() < 1e-9);
    }

    #[test]
    fn quadratic_parts_match_dense() {
        let l = build_rook_grid(3, 4).unwrap();
        let u: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let (mu, wu) = l.car_quadratic_parts(&u);
        let v = nalgebra::DVector::from_column_slice(&u);
        let w = l.adjacency_matrix();
        assert!((wu - v.dot(&(&w * &v))).abs() < 1e-12);
        let m: f64 = (0..12).map(|i| l.m(i) as f64 * u[i] * u[i]).sum();
        assert!((mu - m).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_scales() {
        let l = build_rook_grid(3, 3).unwrap();
        let q = car_precision(&l, CarParams::new(0.9, 1.0).unwrap()).unwrap();
        assert_eq!(sample_gmrf(&q, 11).unwrap(), sample_gmrf(&q, 11).unwrap());
        assert_ne!(sample_gmrf(&q, 11).unwrap(), sample_gmrf(&q, 12).unwrap());
        let tiny = car_precision(&l, CarParams::new(0.9, 1e-9).unwrap()).unwrap();
        assert!(sample_gmrf(&tiny, 5)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-7));
    }

    #[test]
    fn sar_zero_psi_is_scaled_identity() {
        let l = build_rook_grid(3, 3).unwrap();
        let cov =
            sar_error_covariance(&l, SarParams::new(0.0, 2.0).unwrap(), SarForm::Literal).unwrap();
        assert!((cov - DMatrix::<f64>::identity(9, 9) * 4.0).abs().max() < 1e-14);
    }

    #[test]
    fn sar_two_region_hand_algebra() {
        // C = [[0,1],[1,0]]; (I - ψC)^{-1} = [[1,ψ],[ψ,1]]/(1-ψ²); squared gives
        // [[1+ψ², 2ψ],[2ψ, 1+ψ²]]/(1-ψ²)².
        let l = build_rook_grid(2, 1).unwrap();
        let (psi, sigma) = (0.4, 1.3);
        let cov = sar_error_covariance(&l, SarParams::new(psi, sigma).unwrap(), SarForm::Literal)
            .unwrap();
        let d = (1.0 - psi * psi) * (1.0 - psi * psi);
        let s2 = sigma * sigma;
        assert!((cov[(0, 0)] - s2 * (1.0 + psi * psi) / d).abs() < 1e-13);
        assert!((cov[(0, 1)] - s2 * 2.0 * psi / d).abs() < 1e-13);
    }

    #[test]
    fn sar_literal_form_is_not_symmetric_on_irregular_lattice() {
        let l = build_rook_grid(3, 3).unwrap();
        let p = SarParams::new(0.5, 1.0).unwrap();
        let lit = sar_error_covariance(&l, p, SarForm::Literal).unwrap();
        let tr = sar_error_covariance(&l, p, SarForm::Transposed).unwrap();
        assert!((&lit - lit.transpose()).abs().max() > 1e-3);
        assert!((&tr - tr.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn adjacency_text_round_trip() {
        let l = build_rook_grid(3, 4).unwrap();
        let text = l.to_adjacency_text();
        assert!(text.starts_with("0: 1 4\n"));
        let back = Lattice::parse_adjacency_text(&text).unwrap();
        assert_eq!(back, l);
        assert!(Lattice::parse_adjacency_text("0: 1\n1 0\n").is_err());
    }

    #[test]
    fn disjoint_copies_keep_blocks_separate() {
        let l = build_rook_grid(2, 2).unwrap();
        let _ = l.spectrum();
        let c = l.disjoint_copies(3).unwrap();
        assert_eq!(c.n_regions(), 12);
        assert_eq!(c.neighbors(4), &[5, 6]);
        assert!((c.car_log_det(0.5) - 3.0 * l.car_log_det(0.5)).abs() < 1e-12);
    }
}
