use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::CausalEstimate;
use crate::data::ArealDataset;
use crate::error::{Error, Result};
use crate::linalg::{expit, log1pexp};

/// Orthonormal within-region contrasts of `z`: for the `j`-th observation of
/// a region (0-based, `j ≥ 1`), `(z_j − mean(z_0..z_{j−1}))·√(j/(j+1))`.
fn helmert(groups: &[Vec<usize>], z: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    for g in groups {
        let mut sum = 0.0;
        for (j, &i) in g.iter().enumerate() {
            if j > 0 {
                let jf = j as f64;
                out.push((z(i) - sum / jf) * (jf / (jf + 1.0)).sqrt());
            }
            sum += z(i);
        }
    }
    out
}

/// Drops all-zero columns after the first; returns kept column indices.
fn nonzero_columns(cols: &[Vec<f64>]) -> Vec<usize> {
    (0..cols.len())
        .filter(|&j| j == 0 || cols[j].iter().any(|v| *v != 0.0))
        .collect()
}

/// Least squares on within-region contrasts. Region effects cancel, so the
/// fit needs no model for them.
pub fn match_difference(data: &ArealDataset) -> Result<CausalEstimate> {
    let groups: Vec<Vec<usize>> = data
        .obs_by_region()
        .into_iter()
        .filter(|g| g.len() > 1)
        .collect();
    if groups.is_empty() {
        return Err(Error::InvalidInput(
            "differencing needs at least one region with two observations".into(),
        ));
    }
    let x = data.x();
    let y = helmert(&groups, |i| data.y()[i]);
    let mut cols = vec![helmert(&groups, |i| data.a()[i])];
    for j in 1..x.ncols() {
        cols.push(helmert(&groups, |i| x[(i, j)]));
    }
    if cols[0].iter().all(|v| *v == 0.0) {
        return Err(Error::Unidentified(
            "no region contains a treatment contrast; the effect is not identified by differencing"
                .into(),
        ));
    }
    let keep = nonzero_columns(&cols);
    let dropped = cols.len() - keep.len();
    let m = y.len();
    let p = keep.len();
    if m <= p {
        return Err(Error::Unidentified(format!(
            "{m} contrasts cannot estimate {p} coefficients"
        )));
    }
    let d = DMatrix::from_fn(m, p, |i, j| cols[keep[j]][i]);
    let yv = DVector::from_vec(y);
    let xtx = d.transpose() * &d;
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("differenced design is rank deficient".into()))?;
    let coef = &inv * d.transpose() * &yv;
    let resid = &yv - &d * &coef;
    let s2 = resid.dot(&resid) / (m - p) as f64;
    let se = (s2 * inv[(0, 0)]).sqrt();
    let t = StudentsT::new(0.0, 1.0, (m - p) as f64)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .inverse_cdf(0.975);
    let mut est = CausalEstimate::new("MatchDiff", coef[0], coef[0] - t * se, coef[0] + t * se, m);
    if dropped > 0 {
        est.flag(format!("dropped-constant-covariates={dropped}"));
    }
    Ok(est)
}

/// Case/control indices of a 1:1 matched pair from the same region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchedPair {
    pub case: usize,
    pub control: usize,
}

/// Conditional logistic regression for 1:1 matched pairs. The pair
/// likelihood is `expit(η)` with `η = (A_case − A_ctrl)β + (X_case − X_ctrl)γ`.
pub fn fit_cond_logit(data: &ArealDataset, pairs: &[MatchedPair]) -> Result<CausalEstimate> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no matched pairs".into()));
    }
    let n = data.n();
    let x = data.x();
    let mut cols = vec![Vec::with_capacity(pairs.len()); x.ncols()];
    for (k, pr) in pairs.iter().enumerate() {
        if pr.case >= n || pr.control >= n {
            return Err(Error::InvalidInput(format!(
                "pair {k} refers to a missing observation"
            )));
        }
        if data.region()[pr.case] != data.region()[pr.control] {
            return Err(Error::InvalidInput(format!(
                "pair {k} crosses regions {} and {}; pairs must share a region so the region effect cancels",
                data.region()[pr.case],
                data.region()[pr.control]
            )));
        }
        if data.y()[pr.case] != 1.0 || data.y()[pr.control] != 0.0 {
            return Err(Error::InvalidInput(format!(
                "pair {k} must have a case with Y = 1 and a control with Y = 0"
            )));
        }
        cols[0].push(data.a()[pr.case] - data.a()[pr.control]);
        for j in 1..x.ncols() {
            cols[j].push(x[(pr.case, j)] - x[(pr.control, j)]);
        }
    }
    if cols[0].iter().all(|v| *v == 0.0) {
        return Err(Error::Unidentified(
            "no pair is discordant in treatment".into(),
        ));
    }
    let keep = nonzero_columns(&cols);
    let dropped = cols.len() - keep.len();
    let m = pairs.len();
    let p = keep.len();
    let d = DMatrix::from_fn(m, p, |i, j| cols[keep[j]][i]);

    let loglik = |theta: &DVector<f64>| -> f64 { (&d * theta).iter().map(|e| -log1pexp(-e)).sum() };
    let mut theta = DVector::zeros(p);
    let mut ll = loglik(&theta);
    let mut converged = false;
    let mut hess = DMatrix::zeros(p, p);
    for _ in 0..200 {
        let eta = &d * &theta;
        let mut grad = DVector::zeros(p);
        hess.fill(0.0);
        for i in 0..m {
            let pr = expit(eta[i]);
            let row = d.row(i).transpose();
            grad += &row * (1.0 - pr);
            hess -= &row * row.transpose() * (pr * (1.0 - pr));
        }
        if grad.amax() < 1e-8 {
            converged = true;
            break;
        }
        let step = match (-&hess).cholesky() {
            Some(c) => c.solve(&grad),
            None => break,
        };
        let mut t = 1.0;
        loop {
            let cand = &theta + &step * t;
            let cl = loglik(&cand);
            if cl >= ll || t < 1e-10 {
                theta = cand;
                ll = cl;
                break;
            }
            t /= 2.0;
        }
    }
    // with separation the gradient vanishes only as η → ∞, so a converged fit
    // that pushes some pair probability to within 3e-7 of 0 or 1 is divergent
    let divergent = (&d * &theta).amax() > 15.0;
    if !converged || divergent {
        return Err(Error::Unidentified(
            "conditional likelihood has no finite maximum (complete separation)".into(),
        ));
    }
    let cov = (-hess)
        .try_inverse()
        .ok_or_else(|| Error::Singular("conditional-likelihood information matrix".into()))?;
    let se = cov[(0, 0)].sqrt();
    let z = Normal::standard().inverse_cdf(0.975);
    let mut est = CausalEstimate::new(
        "CondLogit",
        theta[0],
        theta[0] - z * se,
        theta[0] + z * se,
        m,
    );
    if dropped > 0 {
        est.flag(format!("dropped-constant-covariates={dropped}"));
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TreatmentKind;

    #[test]
    fn helmert_rows_are_orthonormal_contrasts() {
        let g = vec![vec![0, 1, 2, 3]];
        // contrasts of the unit vectors give the contrast matrix columns
        let basis: Vec<Vec<f64>> = (0..4)
            .map(|k| helmert(&g, |i| (i == k) as u8 as f64))
            .collect();
        for r in 0..3 {
            let row: Vec<f64> = (0..4).map(|k| basis[k][r]).collect();
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
            assert!((row.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-15);
            for s in 0..r {
                let other: Vec<f64> = (0..4).map(|k| basis[k][s]).collect();
                assert!(
                    row.iter()
                        .zip(&other)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        .abs()
                        < 1e-15
                );
            }
        }
    }

    fn pairs_data(y: Vec<f64>, a: Vec<f64>, region: Vec<usize>) -> ArealDataset {
        let n_regions = region.iter().max().unwrap() + 1;
        ArealDataset::new(region, y, a, vec![], n_regions, TreatmentKind::Binary).unwrap()
    }

    #[test]
    fn concordant_pairs_carry_no_information() {
        let ds = pairs_data(
            vec![1.0, 0.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0, 0, 1, 1],
        );
        let pairs = [
            MatchedPair {
                case: 0,
                control: 1,
            },
            MatchedPair {
                case: 2,
                control: 3,
            },
        ];
        assert!(matches!(
            fit_cond_logit(&ds, &pairs),
            Err(Error::Unidentified(_))
        ));
    }

    #[test]
    fn cross_region_pairs_rejected() {
        let ds = pairs_data(vec![1.0, 0.0], vec![1.0, 0.0], vec![0, 1]);
        assert!(fit_cond_logit(
            &ds,
            &[MatchedPair {
                case: 0,
                control: 1
            }]
        )
        .is_err());
    }

    #[test]
    fn complete_separation_reported() {
        let ds = pairs_data(
            vec![1.0, 0.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0, 0, 1, 1],
        );
        let pairs = [
            MatchedPair {
                case: 0,
                control: 1,
            },
            MatchedPair {
                case: 2,
                control: 3,
            },
        ];
        let err = fit_cond_logit(&ds, &pairs).unwrap_err().to_string();
        assert!(err.contains("separation"), "{err}");
    }

    #[test]
    fn balanced_discordance_gives_zero_effect() {
        // one pair favours treatment, one favours control: MLE is β = 0, pair probability 0.5
        let ds = pairs_data(
            vec![1.0, 0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0, 0, 1, 1],
        );
        let pairs = [
            MatchedPair {
                case: 0,
                control: 1,
            },
            MatchedPair {
                case: 2,
                control: 3,
            },
        ];
        let e = fit_cond_logit(&ds, &pairs).unwrap();
        assert!(e.point.abs() < 1e-12);
        // information 2·(1/4) gives se = √2
        let z = Normal::standard().inverse_cdf(0.975);
        assert!((e.upper - z * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn differencing_needs_contrast() {
        let ds = pairs_data(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0, 0, 1, 1],
        );
        assert!(matches!(match_difference(&ds), Err(Error::Unidentified(_))));
    }
}
