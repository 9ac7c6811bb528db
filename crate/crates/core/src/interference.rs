//! Potential outcomes when one unit's treatment can affect another unit's
//! response.
//!
//! A [`PotentialOutcomes`] model gives `E{Y_i(a_i, a_-i)}` for any hypothetical
//! [`TreatmentField`]. Unit-level direct, indirect, total and overall effects
//! are plug-in contrasts of that function, and [`policy_average`] averages them
//! over units and over fields drawn from a treatment [`Policy`], either exactly
//! (enumerating every field) or by Monte Carlo.
//!
//! The regression estimators summarise the other units' treatments by one
//! exposure covariate: the treated share of the unit's group excluding itself
//! (partial interference) or the mean treatment of its lattice neighbours
//! (network interference).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::confound::run_outcome;
use crate::data::{ArealDataset, TreatmentKind};
use crate::error::{invalid, Error, Result};
use crate::lattice::Lattice;
use crate::linalg::{rng_for, variance};
use crate::mcmc::{FitConfig, Interval, PosteriorSummary};

/// Largest number of units for which every treatment field is enumerated.
pub const ENUMERATION_LIMIT: usize = 20;

const MC_BLOCK: usize = 4096;

/// Hypothetical binary treatment of every unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TreatmentField(Vec<bool>);

impl TreatmentField {
    pub fn new(a: Vec<bool>) -> Self {
        TreatmentField(a)
    }

    pub fn constant(n: usize, treated: bool) -> Self {
        TreatmentField(vec![treated; n])
    }

    /// Field from 0/1 values.
    pub fn from_values(a: &[f64]) -> Result<Self> {
        a.iter()
            .enumerate()
            .map(|(i, v)| match *v {
                x if x == 0.0 => Ok(false),
                x if x == 1.0 => Ok(true),
                x => Err(invalid(format!("unit {i}: treatment {x} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(TreatmentField)
    }

    /// Unit `i` is treated when bit `i` of `bits` is set.
    pub fn from_bits(bits: u64, n: usize) -> Self {
        TreatmentField((0..n).map(|i| bits >> i & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// Copy with unit `i` set to `treated`.
    pub fn with(&self, i: usize, treated: bool) -> Self {
        let mut out = self.clone();
        out.0[i] = treated;
        out
    }

    pub fn treated_count(&self) -> usize {
        self.0.iter().filter(|a| **a).count()
    }
}

/// Summary of the other units' treatments that enters a unit's outcome.
#[derive(Debug, Clone, PartialEq)]
pub enum Exposure {
    /// Treated share of the unit's group, excluding the unit.
    GroupShare {
        group: Vec<usize>,
        members: Vec<Vec<usize>>,
    },
    /// Mean treatment over the unit's lattice neighbours.
    NeighborMean { neighbors: Vec<Vec<usize>> },
}

impl Exposure {
    /// Rejects groups with a single member, whose share is undefined.
    pub fn group_share(group: &[usize]) -> Result<Self> {
        let n_groups = group.iter().max().map_or(0, |g| g + 1);
        let mut members = vec![Vec::new(); n_groups];
        for (i, g) in group.iter().enumerate() {
            members[*g].push(i);
        }
        if let Some(g) = members.iter().position(|m| m.len() == 1) {
            return Err(invalid(format!(
                "group {g} has a single unit; its leave-self-out share is undefined"
            )));
        }
        Ok(Exposure::GroupShare {
            group: group.to_vec(),
            members,
        })
    }

    pub fn neighbor_mean(lattice: &Lattice) -> Self {
        Exposure::NeighborMean {
            neighbors: (0..lattice.n_regions())
                .map(|i| lattice.neighbors(i).to_vec())
                .collect(),
        }
    }

    pub fn n_units(&self) -> usize {
        match self {
            Exposure::GroupShare { group, .. } => group.len(),
            Exposure::NeighborMean { neighbors } => neighbors.len(),
        }
    }

    /// Exposure of unit `i`; never depends on `field.get(i)`.
    pub fn value(&self, field: &TreatmentField, i: usize) -> f64 {
        let share = |others: &mut dyn Iterator<Item = usize>, count: usize| {
            others.filter(|k| field.get(*k)).count() as f64 / count as f64
        };
        match self {
            Exposure::GroupShare { group, members } => {
                let m = &members[group[i]];
                share(&mut m.iter().copied().filter(|k| *k != i), m.len() - 1)
            }
            Exposure::NeighborMean { neighbors } => {
                share(&mut neighbors[i].iter().copied(), neighbors[i].len())
            }
        }
    }

    pub fn values(&self, field: &TreatmentField) -> Vec<f64> {
        (0..self.n_units()).map(|i| self.value(field, i)).collect()
    }
}

/// Expected potential outcomes of every unit under any treatment field.
pub trait PotentialOutcomes: Sync {
    fn n_units(&self) -> usize;

    /// `E{Y_i(own, a_-i)}`; the entry of `field` for `unit` is ignored.
    fn expected(&self, unit: usize, own: bool, field: &TreatmentField) -> f64;

    /// `E{Y_i(1, a_-i) - Y_i(0, a_-i)}`.
    fn direct(&self, unit: usize, field: &TreatmentField) -> f64 {
        self.expected(unit, true, field) - self.expected(unit, false, field)
    }
}

/// `E{Y_i} = b_i + a_i β₁ + s_i β₂` with `s_i` the unit's exposure and `b_i`
/// the covariate part.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSpillover {
    pub beta1: f64,
    pub beta2: f64,
    pub baseline: Vec<f64>,
    pub exposure: Exposure,
}

impl LinearSpillover {
    pub fn new(beta1: f64, beta2: f64, baseline: Vec<f64>, exposure: Exposure) -> Result<Self> {
        if baseline.len() != exposure.n_units() {
            return Err(invalid(
                "baseline and exposure cover different numbers of units",
            ));
        }
        Ok(LinearSpillover {
            beta1,
            beta2,
            baseline,
            exposure,
        })
    }
}

impl PotentialOutcomes for LinearSpillover {
    fn n_units(&self) -> usize {
        self.baseline.len()
    }

    fn expected(&self, unit: usize, own: bool, field: &TreatmentField) -> f64 {
        let a = if own { 1.0 } else { 0.0 };
        self.baseline[unit] + a * self.beta1 + self.exposure.value(field, unit) * self.beta2
    }

    fn direct(&self, _unit: usize, _field: &TreatmentField) -> f64 {
        self.beta1
    }
}

/// `E{Y_i} = b_i + a_i β₁ + s_i β₂ + s_i² β₃ + a_i s_i β₄`; the direct effect
/// depends on the other units' treatments through `β₄`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpillover {
    pub beta: [f64; 4],
    pub baseline: Vec<f64>,
    pub exposure: Exposure,
}

impl QuadraticSpillover {
    pub fn new(beta: [f64; 4], baseline: Vec<f64>, exposure: Exposure) -> Result<Self> {
        if baseline.len() != exposure.n_units() {
            return Err(invalid(
                "baseline and exposure cover different numbers of units",
            ));
        }
        Ok(QuadraticSpillover {
            beta,
            baseline,
            exposure,
        })
    }
}

impl PotentialOutcomes for QuadraticSpillover {
    fn n_units(&self) -> usize {
        self.baseline.len()
    }

    fn expected(&self, unit: usize, own: bool, field: &TreatmentField) -> f64 {
        let a = if own { 1.0 } else { 0.0 };
        let s = self.exposure.value(field, unit);
        let [b1, b2, b3, b4] = self.beta;
        self.baseline[unit] + a * b1 + s * b2 + s * s * b3 + a * s * b4
    }
}

/// `DE_i(a_-i)`.
pub fn estimand_de<M: PotentialOutcomes + ?Sized>(
    model: &M,
    unit: usize,
    a_minus: &TreatmentField,
) -> f64 {
    model.direct(unit, a_minus)
}

/// `IE_i(a_-i, a'_-i)`: untreated unit, other units switched from `a'` to `a`.
pub fn estimand_ie<M: PotentialOutcomes + ?Sized>(
    model: &M,
    unit: usize,
    a_minus: &TreatmentField,
    a_minus_prime: &TreatmentField,
) -> f64 {
    model.expected(unit, false, a_minus) - model.expected(unit, false, a_minus_prime)
}

/// `TE_i = DE_i(a_-i) + IE_i(a_-i, a'_-i)`.
pub fn estimand_te<M: PotentialOutcomes + ?Sized>(
    model: &M,
    unit: usize,
    a_minus: &TreatmentField,
    a_minus_prime: &TreatmentField,
) -> f64 {
    estimand_de(model, unit, a_minus) + estimand_ie(model, unit, a_minus, a_minus_prime)
}

/// `OE_i(a, a')`: the unit's own treatment follows each field.
pub fn estimand_oe<M: PotentialOutcomes + ?Sized>(
    model: &M,
    unit: usize,
    a: &TreatmentField,
    a_prime: &TreatmentField,
) -> f64 {
    model.expected(unit, a.get(unit), a) - model.expected(unit, a_prime.get(unit), a_prime)
}

/// Distribution over treatment fields; units are assigned independently.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Every unit treated with probability `p`.
    IidBernoulli { p: f64 },
    /// Untreated units become treated with probability `p0`, treated units
    /// stay treated with probability `p1`.
    Transition {
        p0: f64,
        p1: f64,
        current: TreatmentField,
    },
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::ParameterOutOfRange(format!(
            "{name} = {p} is not a probability"
        )))
    }
}

impl Policy {
    pub fn iid(p: f64) -> Result<Self> {
        check_probability("p", p)?;
        Ok(Policy::IidBernoulli { p })
    }

    pub fn transition(p0: f64, p1: f64, current: TreatmentField) -> Result<Self> {
        check_probability("p0", p0)?;
        check_probability("p1", p1)?;
        Ok(Policy::Transition { p0, p1, current })
    }

    /// Probability that unit `i` is treated.
    pub fn prob(&self, i: usize) -> f64 {
        match self {
            Policy::IidBernoulli { p } => *p,
            Policy::Transition { p0, p1, current } => {
                if current.get(i) {
                    *p1
                } else {
                    *p0
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Policy::IidBernoulli { p } => format!("iid(p={p})"),
            Policy::Transition { p0, p1, .. } => format!("transition(p0={p0};p1={p1})"),
        }
    }

    fn check_units(&self, n: usize) -> Result<()> {
        match self {
            Policy::Transition { current, .. } if current.len() != n => Err(invalid(format!(
                "policy's current field has {} units, model has {n}",
                current.len()
            ))),
            _ => Ok(()),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> TreatmentField {
        TreatmentField((0..n).map(|i| rng.random::<f64>() < self.prob(i)).collect())
    }

    fn weight(&self, field: &TreatmentField) -> f64 {
        field
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let p = self.prob(i);
                if *a {
                    p
                } else {
                    1.0 - p
                }
            })
            .product()
    }
}

/// Policy-averaged estimand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Effect {
    Direct,
    Indirect,
    Total,
    Overall,
}

impl Effect {
    pub const ALL: [Effect; 4] = [
        Effect::Direct,
        Effect::Indirect,
        Effect::Total,
        Effect::Overall,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Effect::Direct => "DE",
            Effect::Indirect => "IE",
            Effect::Total => "TE",
            Effect::Overall => "OE",
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Effect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Effect::ALL
            .into_iter()
            .find(|e| e.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| invalid(format!("unknown effect `{s}` (expected DE, IE, TE or OE)")))
    }
}

/// How the average over treatment fields is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AverageMethod {
    Enumerate,
    MonteCarlo { draws: usize, seed: u64 },
}

impl AverageMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            AverageMethod::Enumerate => "enumerate",
            AverageMethod::MonteCarlo { .. } => "monte-carlo",
        }
    }
}

/// One policy-averaged effect; `mc_se` is zero for exact enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEffect {
    pub effect: Effect,
    pub policy: String,
    pub value: f64,
    pub mc_se: f64,
    pub method: AverageMethod,
}

pub const POLICY_EFFECT_HEADER: &str = "effect,policy,value,mc_se,method";

impl PolicyEffect {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.effect,
            self.policy,
            self.value,
            self.mc_se,
            self.method.tag()
        )
    }
}

pub fn write_policy_effects<W: Write>(mut w: W, effects: &[PolicyEffect]) -> Result<()> {
    writeln!(w, "{POLICY_EFFECT_HEADER}")?;
    for e in effects {
        writeln!(w, "{}", e.csv_row())?;
    }
    Ok(())
}

/// Mean that is exact when every value is equal.
fn anchored_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let mut first = None;
    let mut acc = 0.0;
    let mut n = 0usize;
    for x in xs {
        let x0 = *first.get_or_insert(x);
        acc += x - x0;
        n += 1;
    }
    first.map_or(f64::NAN, |x0| x0 + acc / n as f64)
}

/// Unit average of the first (`primary`) or second term of an effect.
fn unit_average<M: PotentialOutcomes + ?Sized>(
    model: &M,
    effect: Effect,
    primary: bool,
    field: &TreatmentField,
) -> f64 {
    let n = model.n_units();
    let units = 0..n;
    match (effect, primary) {
        (Effect::Direct, true) => anchored_mean(units.map(|i| model.direct(i, field))),
        (Effect::Direct, false) => 0.0,
        (Effect::Indirect, _) | (Effect::Total, false) => {
            anchored_mean(units.map(|i| model.expected(i, false, field)))
        }
        (Effect::Total, true) => anchored_mean(units.map(|i| model.expected(i, true, field))),
        (Effect::Overall, _) => {
            anchored_mean(units.map(|i| model.expected(i, field.get(i), field)))
        }
    }
}

fn enumerate_average<M: PotentialOutcomes + ?Sized>(
    model: &M,
    effect: Effect,
    primary: bool,
    policy: &Policy,
) -> f64 {
    let n = model.n_units();
    let total = 1u64 << n;
    let chunk = 1u64 << n.saturating_sub(6).min(12);
    let n_chunks = total.div_ceil(chunk);
    let evaluate = |bits: u64| {
        let field = TreatmentField::from_bits(bits, n);
        let w = policy.weight(&field);
        (w > 0.0).then(|| (w, unit_average(model, effect, primary, &field)))
    };
    // anchor on the first field with positive weight so degenerate policies
    // return the single reachable value exactly
    let anchor = (0..total).find_map(evaluate).map_or(0.0, |(_, h)| h);
    let partial: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            (c * chunk..((c + 1) * chunk).min(total))
                .filter_map(evaluate)
                .map(|(w, h)| w * (h - anchor))
                .sum()
        })
        .collect();
    anchor + partial.iter().sum::<f64>()
}

/// Policy-averaged effect over units and treatment fields.
///
/// The direct effect averages over fields drawn from `policy` alone. The
/// indirect, total and overall effects contrast `policy` with `baseline`, with
/// the two fields drawn independently.
pub fn policy_average<M: PotentialOutcomes + ?Sized>(
    model: &M,
    policy: &Policy,
    baseline: &Policy,
    effect: Effect,
    method: AverageMethod,
) -> Result<PolicyEffect> {
    let n = model.n_units();
    if n == 0 {
        return Err(invalid("model has no units"));
    }
    policy.check_units(n)?;
    baseline.check_units(n)?;
    let label = if effect == Effect::Direct {
        policy.label()
    } else {
        format!("{} vs {}", policy.label(), baseline.label())
    };
    let (value, mc_se) = match method {
        AverageMethod::Enumerate => {
            if n > ENUMERATION_LIMIT {
                return Err(invalid(format!(
                    "enumeration over 2^{n} fields refused; at most {ENUMERATION_LIMIT} units"
                )));
            }
            let first = enumerate_average(model, effect, true, policy);
            let second = if effect == Effect::Direct {
                0.0
            } else {
                enumerate_average(model, effect, false, baseline)
            };
            (first - second, 0.0)
        }
        AverageMethod::MonteCarlo { draws, seed } => {
            if draws < 2 {
                return Err(invalid("Monte Carlo averaging needs at least two draws"));
            }
            let blocks: Vec<Vec<f64>> = (0..draws.div_ceil(MC_BLOCK))
                .into_par_iter()
                .map(|b| {
                    let mut rng = rng_for(seed, b as u64);
                    let len = MC_BLOCK.min(draws - b * MC_BLOCK);
                    (0..len)
                        .map(|_| {
                            let a = policy.draw(n, &mut rng);
                            let first = unit_average(model, effect, true, &a);
                            if effect == Effect::Direct {
                                first
                            } else {
                                let a_prime = baseline.draw(n, &mut rng);
                                first - unit_average(model, effect, false, &a_prime)
                            }
                        })
                        .collect()
                })
                .collect();
            let values: Vec<f64> = blocks.into_iter().flatten().collect();
            let value = anchored_mean(values.iter().copied());
            let var =
                values.iter().map(|x| (x - value).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
            (value, (var / draws as f64).sqrt())
        }
    };
    Ok(PolicyEffect {
        effect,
        policy: label,
        value,
        mc_se,
        method,
    })
}

/// Fitted linear spillover model with the posterior of its two effects.
#[derive(Debug, Clone)]
pub struct InterferenceFit {
    /// Posterior-mean plug-in model.
    pub model: LinearSpillover,
    pub direct: Interval,
    pub spillover: Interval,
    pub summary: PosteriorSummary,
}

fn fit_linear_spillover(
    data: &ArealDataset,
    exposure: Exposure,
    field: &TreatmentField,
    units: &[usize],
    config: &FitConfig,
) -> Result<InterferenceFit> {
    let values = exposure.values(field);
    let column: Vec<f64> = units.iter().map(|u| values[*u]).collect();
    if !(variance(&column) > 0.0) {
        return Err(Error::Unidentified(
            "spillover exposure is constant; its effect is not identified".into(),
        ));
    }
    let s = run_outcome(data, None, &[("spillover".into(), column)], false, config)?;
    let direct = s.estimate("beta").expect("beta is tracked");
    let spillover = s.estimate("spillover").expect("spillover is tracked");
    let x = data.x();
    let gamma: Vec<f64> = (0..x.ncols())
        .map(|j| {
            let name = if j == 0 {
                "gamma0".to_string()
            } else {
                format!("gamma[{}]", data.covariate_names()[j - 1])
            };
            s.estimate(&name).expect("coefficient is tracked").estimate
        })
        .collect();
    let mut baseline = vec![0.0; exposure.n_units()];
    for (i, u) in units.iter().enumerate() {
        baseline[*u] = (0..x.ncols()).map(|j| x[(i, j)] * gamma[j]).sum();
    }
    Ok(InterferenceFit {
        model: LinearSpillover::new(direct.estimate, spillover.estimate, baseline, exposure)?,
        direct,
        spillover,
        summary: s,
    })
}

fn binary_field(data: &ArealDataset) -> Result<TreatmentField> {
    if data.treatment_kind() != TreatmentKind::Binary {
        return Err(invalid("interference estimators need a binary treatment"));
    }
    TreatmentField::from_values(data.a())
}

/// `Y = γ₀ + Aβ₁ + Ãβ₂ + Xγ + ε` with `Ã` the treated share of the unit's
/// group excluding itself. Units are the observations; groups come from the
/// dataset's group labels.
pub fn fit_partial_interference(
    data: &ArealDataset,
    config: &FitConfig,
) -> Result<InterferenceFit> {
    let group = data
        .group()
        .ok_or_else(|| invalid("partial interference needs group labels"))?;
    let exposure = Exposure::group_share(group)?;
    let field = binary_field(data)?;
    let units: Vec<usize> = (0..data.n()).collect();
    fit_linear_spillover(data, exposure, &field, &units, config)
}

/// The same regression with `Ã` the mean treatment of the region's lattice
/// neighbours. Units are regions; each region needs exactly one observation.
pub fn fit_network_interference(
    data: &ArealDataset,
    lattice: &Lattice,
    config: &FitConfig,
) -> Result<InterferenceFit> {
    if data.n_regions() != lattice.n_regions() {
        return Err(invalid(format!(
            "dataset has {} regions, lattice has {}",
            data.n_regions(),
            lattice.n_regions()
        )));
    }
    let mut seen = vec![false; data.n_regions()];
    for r in data.region() {
        if std::mem::replace(&mut seen[*r], true) {
            return Err(invalid(format!(
                "region {r} has several observations; network interference needs one per region"
            )));
        }
    }
    if let Some(r) = seen.iter().position(|s| !s) {
        return Err(invalid(format!("region {r} has no observation")));
    }
    let obs = binary_field(data)?;
    let mut field = vec![false; data.n_regions()];
    for (i, r) in data.region().iter().enumerate() {
        field[*r] = obs.get(i);
    }
    fit_linear_spillover(
        data,
        Exposure::neighbor_mean(lattice),
        &TreatmentField::new(field),
        data.region(),
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_rook_grid;
    use proptest::prelude::*;

    fn quadratic_on_grid() -> QuadraticSpillover {
        let lattice = build_rook_grid(2, 2).unwrap();
        QuadraticSpillover::new(
            [1.0, 0.7, -0.4, 0.9],
            vec![0.1, -0.2, 0.3, 0.0],
            Exposure::neighbor_mean(&lattice),
        )
        .unwrap()
    }

    #[test]
    fn group_share_leaves_self_out() {
        let e = Exposure::group_share(&[0, 0, 0, 1, 1]).unwrap();
        let f = TreatmentField::new(vec![true, true, false, false, true]);
        assert_eq!(e.values(&f), vec![0.5, 0.5, 1.0, 1.0, 0.0]);
        assert!(Exposure::group_share(&[0, 0, 1]).is_err());
    }

    #[test]
    fn checkerboard_neighbor_mean_is_complement() {
        let lattice = build_rook_grid(5, 5).unwrap();
        let e = Exposure::neighbor_mean(&lattice);
        let f = TreatmentField::new((0..25).map(|i| (i / 5 + i % 5) % 2 == 0).collect());
        for (i, s) in e.values(&f).iter().enumerate() {
            let own = if f.get(i) { 1.0 } else { 0.0 };
            assert_eq!(*s, 1.0 - own);
        }
    }

    #[test]
    fn quadratic_direct_effect_matches_two_outcomes() {
        let m = quadratic_on_grid();
        let f = TreatmentField::new(vec![true, false, true, true]);
        // unit 0 neighbours 1 and 2: exposure 1/2
        let s = 0.5;
        let y1 = 0.1 + 1.0 + 0.7 * s - 0.4 * s * s + 0.9 * s;
        let y0 = 0.1 + 0.7 * s - 0.4 * s * s;
        assert!((estimand_de(&m, 0, &f) - (y1 - y0)).abs() < 1e-12);
        assert!((estimand_de(&m, 0, &f) - (1.0 + 0.9 * s)).abs() < 1e-12);
    }

    #[test]
    fn linear_indirect_all_vs_none_is_beta2() {
        let lattice = build_rook_grid(3, 3).unwrap();
        let m = LinearSpillover::new(0.5, 0.3, vec![0.0; 9], Exposure::neighbor_mean(&lattice))
            .unwrap();
        let ones = TreatmentField::constant(9, true);
        let zeros = TreatmentField::constant(9, false);
        for i in 0..9 {
            assert!((estimand_ie(&m, i, &ones, &zeros) - 0.3).abs() < 1e-15);
            assert_eq!(estimand_de(&m, i, &zeros), 0.5);
        }
    }

    #[test]
    fn overall_with_equal_others_is_total() {
        let m = quadratic_on_grid();
        let a = TreatmentField::new(vec![true, false, true, false]);
        let a0 = a.with(0, false);
        assert_eq!(estimand_oe(&m, 0, &a, &a0), estimand_te(&m, 0, &a, &a0));
        assert_eq!(estimand_oe(&m, 2, &a, &a), 0.0);
        assert_eq!(estimand_ie(&m, 1, &a, &a), 0.0);
    }

    #[test]
    fn enumeration_guard() {
        let lattice = build_rook_grid(3, 7).unwrap();
        let m = LinearSpillover::new(1.0, 0.0, vec![0.0; 21], Exposure::neighbor_mean(&lattice))
            .unwrap();
        let p = Policy::iid(0.5).unwrap();
        let r = policy_average(&m, &p, &p, Effect::Direct, AverageMethod::Enumerate);
        assert!(r.is_err());
    }

    #[test]
    fn linear_direct_effect_is_beta1_for_every_policy() {
        let lattice = build_rook_grid(2, 3).unwrap();
        let m = LinearSpillover::new(
            0.37,
            -1.1,
            vec![0.2, 0.4, -0.3, 1.0, 0.0, 0.5],
            Exposure::neighbor_mean(&lattice),
        )
        .unwrap();
        let current = TreatmentField::new(vec![true, false, false, true, true, false]);
        let policies = [
            Policy::iid(0.2).unwrap(),
            Policy::iid(0.9).unwrap(),
            Policy::transition(0.3, 0.6, current).unwrap(),
        ];
        for p in &policies {
            let exact = policy_average(&m, p, p, Effect::Direct, AverageMethod::Enumerate).unwrap();
            assert_eq!(exact.value, 0.37);
            let mc = AverageMethod::MonteCarlo {
                draws: 500,
                seed: 3,
            };
            let sim = policy_average(&m, p, p, Effect::Direct, mc).unwrap();
            assert_eq!(sim.value, 0.37);
            assert_eq!(sim.mc_se, 0.0);
        }
    }

    #[test]
    fn degenerate_transition_reproduces_observed_field() {
        let m = quadratic_on_grid();
        let current = TreatmentField::new(vec![true, false, false, true]);
        let keep = Policy::transition(0.0, 1.0, current.clone()).unwrap();
        let de = policy_average(&m, &keep, &keep, Effect::Direct, AverageMethod::Enumerate)
            .unwrap()
            .value;
        let direct: f64 = (0..4).map(|i| estimand_de(&m, i, &current)).sum::<f64>() / 4.0;
        assert!((de - direct).abs() < 1e-14);
        let none = Policy::iid(0.0).unwrap();
        let ie = policy_average(&m, &keep, &none, Effect::Indirect, AverageMethod::Enumerate)
            .unwrap()
            .value;
        let zeros = TreatmentField::constant(4, false);
        let unit: f64 = (0..4)
            .map(|i| estimand_ie(&m, i, &current, &zeros))
            .sum::<f64>()
            / 4.0;
        assert!((ie - unit).abs() < 1e-14);
    }

    #[test]
    fn csv_layout() {
        let e = PolicyEffect {
            effect: Effect::Overall,
            policy: "iid(p=0.5)".into(),
            value: 0.25,
            mc_se: 0.0,
            method: AverageMethod::Enumerate,
        };
        let mut out = Vec::new();
        write_policy_effects(&mut out, &[e]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "effect,policy,value,mc_se,method\nOE,iid(p=0.5),0.25,0,enumerate\n"
        );
        assert_eq!("te".parse::<Effect>().unwrap(), Effect::Total);
    }

    proptest! {
        #[test]
        fn own_treatment_never_moves_own_exposure(bits in 0u64..(1 << 12), unit in 0usize..12) {
            let lattice = build_rook_grid(3, 4).unwrap();
            let f = TreatmentField::from_bits(bits, 12);
            let flipped = f.with(unit, !f.get(unit));
            let network = Exposure::neighbor_mean(&lattice);
            prop_assert_eq!(network.value(&f, unit), network.value(&flipped, unit));
            let partial = Exposure::group_share(&[0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 3, 3]).unwrap();
            prop_assert_eq!(partial.value(&f, unit), partial.value(&flipped, unit));
        }
    }
}
