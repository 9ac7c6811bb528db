//! Correctly specified generators shared by the integration and acceptance
//! tests, and the recovery suite built on them.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use spatial_causal::confound::fit_iv;
use spatial_causal::data::{ArealDataset, PanelDataset, PointDataset, TreatmentKind};
use spatial_causal::geostat::{
    fit_discontinuity, fit_geostat_interference, sample_gp, spillover_summary, GpParams, Grid,
    GriddedField, SpilloverDesign, SpilloverKernel, TreatedRegion,
};
use spatial_causal::interference::{fit_network_interference, fit_partial_interference};
use spatial_causal::lattice::{build_rook_grid, car_precision, CarParams, GmrfSampler, Lattice};
use spatial_causal::linalg::rng_for;
use spatial_causal::mcmc::{FitConfig, Interval, PriorSpec};
use spatial_causal::spacetime::{fit_did, fit_granger, DidMethod};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> f64 {
    (rng.random::<f64>() < p) as u8 as f64
}

pub fn car_sampler(lattice: &Lattice, rho: f64, sigma: f64) -> GmrfSampler {
    let q = car_precision(lattice, CarParams::new(rho, sigma).unwrap()).unwrap();
    GmrfSampler::new(&q).unwrap()
}

/// Panel in time-major order from per-cell closures.
pub fn panel(
    nr: usize,
    nt: usize,
    mut y: impl FnMut(usize, usize) -> f64,
    a: impl Fn(usize, usize) -> f64,
) -> PanelDataset {
    let mut cols = (vec![], vec![], vec![], vec![]);
    for t in 1..=nt {
        for i in 0..nr {
            cols.0.push(i);
            cols.1.push(t);
            cols.3.push(a(i, t));
            cols.2.push(y(i, t));
        }
    }
    PanelDataset::new(cols.0, cols.1, cols.2, cols.3, vec![], nr).unwrap()
}

/// Covered-replication counts for one parameter.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub name: &'static str,
    pub covered: usize,
    pub reps: usize,
    pub failed: usize,
}

impl Recovery {
    pub fn rate(&self) -> f64 {
        self.covered as f64 / self.reps as f64
    }
}

fn tally(name: &'static str, results: &[Option<bool>]) -> Recovery {
    Recovery {
        name,
        covered: results.iter().filter(|r| **r == Some(true)).count(),
        reps: results.len(),
        failed: results.iter().filter(|r| r.is_none()).count(),
    }
}

fn replicate<F>(reps: usize, f: F) -> Vec<Vec<Option<bool>>>
where
    F: Fn(u64) -> Option<Vec<bool>> + Sync,
{
    let runs: Vec<Option<Vec<bool>>> = (0..reps as u64).into_par_iter().map(&f).collect();
    let width = runs.iter().flatten().map(Vec::len).max().unwrap_or(0);
    (0..width)
        .map(|k| runs.iter().map(|r| r.as_ref().map(|v| v[k])).collect())
        .collect()
}

const FIT: (usize, usize) = (3000, 1000);

fn fit_config(seed: u64) -> FitConfig {
    FitConfig::new(FIT.0, FIT.1, 1, seed)
}

/// Two-period panel on a 10×10 lattice with CAR region effects;
/// treatment fixed within region.
pub fn did_panel(
    rng: &mut ChaCha8Rng,
    lattice: &Lattice,
    u_sampler: &GmrfSampler,
    spill: bool,
) -> PanelDataset {
    let nr = lattice.n_regions();
    let u = u_sampler.draw(rng);
    let a: Vec<f64> = (0..nr).map(|_| bernoulli(rng, 0.5)).collect();
    let nb = lattice.neighbor_mean(&a);
    let noise: Vec<f64> = (0..2 * nr).map(|_| 0.5 * normal(rng)).collect();
    let (b4, b5) = if spill { (0.6, -0.8) } else { (0.0, 0.0) };
    panel(
        nr,
        2,
        |i, t| {
            let t = t as f64;
            1.0 + 0.3 * a[i]
                + 0.5 * t
                + 1.2 * t * a[i]
                + b4 * nb[i]
                + b5 * t * nb[i]
                + u[i]
                + noise[(t as usize - 1) * nr + i]
        },
        |i, _| a[i],
    )
}

pub fn recovery_suite(reps: usize, master: u64) -> Vec<Recovery> {
    let lattice = build_rook_grid(10, 10).unwrap();
    let u_sampler = car_sampler(&lattice, 0.9, 1.0);
    let small = build_rook_grid(6, 6).unwrap();
    let small_sampler = car_sampler(&small, 0.9, 1.0);
    let mut out = Vec::new();

    let did = replicate(reps, |r| {
        let mut rng = rng_for(master, r);
        let p = did_panel(&mut rng, &lattice, &u_sampler, false);
        let f = fit_did(&p, false, None, DidMethod::Differenced, &fit_config(r)).ok()?;
        Some(vec![f.beta3.covers(1.2)])
    });
    out.push(tally("DID beta3", &did[0]));

    let spill = replicate(reps, |r| {
        let mut rng = rng_for(master + 1, r);
        let p = did_panel(&mut rng, &lattice, &u_sampler, true);
        let f = fit_did(&p, true, Some(&lattice), DidMethod::Levels, &fit_config(r)).ok()?;
        Some(vec![f.beta4?.covers(0.6), f.beta5?.covers(-0.8)])
    });
    out.push(tally("spillover DID beta4", &spill[0]));
    out.push(tally("spillover DID beta5", &spill[1]));

    let granger = replicate(reps, |r| {
        let mut rng = rng_for(master + 2, r);
        let (nr, nt) = (small.n_regions(), 6);
        let a: Vec<Vec<f64>> = (0..nt)
            .map(|_| (0..nr).map(|_| bernoulli(&mut rng, 0.5)).collect())
            .collect();
        let mut y = vec![vec![0.0; nr]; nt];
        for t in 0..nt {
            let u = small_sampler.draw(&mut rng);
            for i in 0..nr {
                let prev = if t == 0 {
                    (0.0, 0.0)
                } else {
                    (a[t - 1][i], y[t - 1][i])
                };
                y[t][i] = 0.5 + 0.8 * prev.0 + 0.4 * prev.1 + 0.7 * u[i] + 0.5 * normal(&mut rng);
            }
        }
        let p = panel(nr, nt, |i, t| y[t - 1][i], |i, t| a[t - 1][i]);
        let f = fit_granger(&p, 1, false, &small, &fit_config(r)).ok()?;
        Some(vec![f.beta[0].covers(0.8)])
    });
    out.push(tally("Granger beta1", &granger[0]));

    let iv = replicate(reps, |r| {
        let mut rng = rng_for(master + 3, r);
        let nr = lattice.n_regions();
        let u = u_sampler.draw(&mut rng);
        let v = u_sampler.draw(&mut rng);
        let z: Vec<f64> = (0..nr).map(|_| normal(&mut rng)).collect();
        let a: Vec<f64> = (0..nr)
            .map(|i| 0.5 + z[i] + v[i] + 0.5 * u[i] + 0.5 * normal(&mut rng))
            .collect();
        let y: Vec<f64> = (0..nr)
            .map(|i| 1.0 + 0.5 * a[i] + u[i] + 0.5 * normal(&mut rng))
            .collect();
        let d = ArealDataset::new(
            (0..nr).collect(),
            y,
            a,
            vec![("z".into(), z)],
            nr,
            TreatmentKind::Continuous,
        )
        .ok()?;
        let e = fit_iv(&d, &lattice, "z", &fit_config(r)).ok()?;
        Some(vec![e.covers(0.5)])
    });
    out.push(tally("IV beta", &iv[0]));

    let partial = replicate(reps, |r| {
        let mut rng = rng_for(master + 4, r);
        let (groups, size) = (40, 5);
        let n = groups * size;
        let a: Vec<f64> = (0..n).map(|_| bernoulli(&mut rng, 0.5)).collect();
        let group: Vec<usize> = (0..n).map(|i| i / size).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let g = group[i];
                let others: f64 = (g * size..(g + 1) * size)
                    .filter(|k| *k != i)
                    .map(|k| a[k])
                    .sum();
                1.0 + 0.7 * a[i] + 1.5 * others / (size - 1) as f64 + normal(&mut rng)
            })
            .collect();
        let d = ArealDataset::new((0..n).collect(), y, a, vec![], n, TreatmentKind::Binary)
            .and_then(|d| d.with_group(group))
            .ok()?;
        let f = fit_partial_interference(&d, &fit_config(r)).ok()?;
        Some(vec![f.direct.covers(0.7), f.spillover.covers(1.5)])
    });
    out.push(tally("partial interference beta1", &partial[0]));
    out.push(tally("partial interference beta2", &partial[1]));

    let network = replicate(reps, |r| {
        let mut rng = rng_for(master + 5, r);
        let nr = lattice.n_regions();
        let a: Vec<f64> = (0..nr).map(|_| bernoulli(&mut rng, 0.5)).collect();
        let nb = lattice.neighbor_mean(&a);
        let y: Vec<f64> = (0..nr)
            .map(|i| 1.0 + 0.7 * a[i] + 1.5 * nb[i] + normal(&mut rng))
            .collect();
        let d =
            ArealDataset::new((0..nr).collect(), y, a, vec![], nr, TreatmentKind::Binary).ok()?;
        let f = fit_network_interference(&d, &lattice, &fit_config(r)).ok()?;
        Some(vec![f.direct.covers(0.7), f.spillover.covers(1.5)])
    });
    out.push(tally("network interference beta1", &network[0]));
    out.push(tally("network interference beta2", &network[1]));

    let gp = GpParams::new(0.3, 0.7, 0.25).unwrap();
    let disc = replicate(reps, |r| {
        let mut rng = rng_for(master + 6, r);
        let pts: Vec<[f64; 2]> = (0..150).map(|_| [rng.random(), rng.random()]).collect();
        let u = sample_gp(&gp, &pts, &mut rng).ok()?;
        let region = TreatedRegion::HalfPlane {
            normal: [1.0, 0.0],
            offset: 0.5,
        };
        let y: Vec<f64> = pts
            .iter()
            .zip(&u)
            .map(|(s, u)| 2.0 + if region.contains(*s) { 0.8 } else { 0.0 } + u)
            .collect();
        let d = PointDataset::new(pts, y, vec![0.0; 150], vec![]).ok()?;
        let f = fit_discontinuity(&d, &region, None, PriorSpec::default()).ok()?;
        Some(vec![f.beta.covers(0.8)])
    });
    out.push(tally("discontinuity beta", &disc[0]));

    let geo = replicate(reps, |r| {
        let (direct, spill) = geostat_replicate(master + 7, r)?;
        Some(vec![direct.covers(0.5), spill.covers(1.0)])
    });
    out.push(tally("geostatistical beta1", &geo[0]));
    out.push(tally("geostatistical beta2", &geo[1]));
    out
}

/// Continuous treatment surface observed at the nodes of an 8×8 grid,
/// `Y = 1 + 0.5a + 1.0ā + U + ε` with `ā` the Gaussian-kernel summary.
pub fn geostat_replicate(seed: u64, r: u64) -> Option<(Interval, Interval)> {
    let mut rng = rng_for(seed, r);
    let grid = Grid::new([0.0, 0.0], 1.0 / 7.0, 8, 8).unwrap();
    let coords = grid.nodes();
    let treatment = GpParams::new(0.3, 1.0, 0.0).unwrap();
    let confounder = GpParams::new(0.3, 0.7, 0.25).unwrap();
    let kernel = SpilloverKernel::Gaussian { bandwidth: 0.15 };
    let a = sample_gp(&treatment, &coords, &mut rng).ok()?;
    let u = sample_gp(&confounder, &coords, &mut rng).ok()?;
    let abar =
        spillover_summary(&GriddedField::new(grid, a.clone()).ok()?, &kernel, &coords).ok()?;
    let y: Vec<f64> = (0..coords.len())
        .map(|i| 1.0 + 0.5 * a[i] + abar[i] + u[i])
        .collect();
    let d = PointDataset::new(coords, y, a, vec![]).ok()?;
    let design = SpilloverDesign {
        kernel,
        grid,
        treatment_params: Some(treatment),
        imputations: 0,
        seed: r,
    };
    let f = fit_geostat_interference(&d, &design, PriorSpec::default()).ok()?;
    Some((f.direct, f.spillover))
}
