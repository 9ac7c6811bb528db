//! Dataset containers, CSV ingestion and run configuration.
//!
//! CSV files are UTF-8, comma separated, with a mandatory header row. Areal
//! files need `region,y,a`; `rep` and `group` are optional index columns and
//! every other column is a covariate. Panel files add a mandatory `t`
//! column and point files use `s1,s2` coordinates. Numbers are written in
//! shortest round-trip decimal form so `read(write(d)) == d`.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TreatmentKind {
    #[default]
    Binary,
    Continuous,
}

/// Observations indexed by region, optionally replicated within region.
#[derive(Debug, Clone, PartialEq)]
pub struct ArealDataset {
    region: Vec<usize>,
    rep: Option<Vec<usize>>,
    group: Option<Vec<usize>>,
    y: Vec<f64>,
    a: Vec<f64>,
    x: DMatrix<f64>,
    covariate_names: Vec<String>,
    n_regions: usize,
    treatment: TreatmentKind,
}

fn design_with_intercept(n: usize, covariates: &[(String, Vec<f64>)]) -> Result<DMatrix<f64>> {
    let mut x = DMatrix::from_element(n, covariates.len() + 1, 1.0);
    for (j, (name, col)) in covariates.iter().enumerate() {
        if col.len() != n {
            return Err(invalid(format!(
                "covariate `{name}` has {} values, expected {n}",
                col.len()
            )));
        }
        if let Some(pos) = col.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "covariate `{name}` is not finite at row {pos}"
            )));
        }
        for (i, v) in col.iter().enumerate() {
            x[(i, j + 1)] = *v;
        }
    }
    Ok(x)
}

fn check_treatment(a: &[f64], kind: TreatmentKind) -> Result<()> {
    if kind == TreatmentKind::Binary {
        if let Some(i) = a.iter().position(|v| *v != 0.0 && *v != 1.0) {
            return Err(invalid(format!(
                "binary treatment must be 0 or 1, row {i} has {}",
                a[i]
            )));
        }
    }
    Ok(())
}

impl ArealDataset {
    /// `covariates` exclude the intercept, which is prepended automatically.
    pub fn new(
        region: Vec<usize>,
        y: Vec<f64>,
        a: Vec<f64>,
        covariates: Vec<(String, Vec<f64>)>,
        n_regions: usize,
        treatment: TreatmentKind,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(invalid("dataset has no observations"));
        }
        if region.len() != n || a.len() != n {
            return Err(invalid("region, y and a must have equal lengths"));
        }
        if let Some(i) = region.iter().position(|r| *r >= n_regions) {
            return Err(invalid(format!(
                "row {i}: region {} outside 0..{n_regions}",
                region[i]
            )));
        }
        if y.iter().chain(&a).any(|v| !v.is_finite()) {
            return Err(invalid("response and treatment must be finite"));
        }
        check_treatment(&a, treatment)?;
        let x = design_with_intercept(n, &covariates)?;
        Ok(ArealDataset {
            region,
            rep: None,
            group: None,
            y,
            a,
            x,
            covariate_names: covariates.into_iter().map(|(n, _)| n).collect(),
            n_regions,
            treatment,
        })
    }

    pub fn with_rep(mut self, rep: Vec<usize>) -> Result<Self> {
        if rep.len() != self.n() {
            return Err(invalid("rep column length mismatch"));
        }
        self.rep = Some(rep);
        Ok(self)
    }

    pub fn with_group(mut self, group: Vec<usize>) -> Result<Self> {
        if group.len() != self.n() {
            return Err(invalid("group column length mismatch"));
        }
        self.group = Some(group);
        Ok(self)
    }

    /// Same design with a new response vector.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() || y.iter().any(|v| !v.is_finite()) {
            return Err(invalid(
                "replacement response has wrong length or non-finite values",
            ));
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    /// Same design with a new treatment vector (validated against the kind).
    pub fn with_treatment(&self, a: Vec<f64>, kind: TreatmentKind) -> Result<Self> {
        if a.len() != self.n() {
            return Err(invalid("replacement treatment has wrong length"));
        }
        check_treatment(&a, kind)?;
        let mut out = self.clone();
        out.a = a;
        out.treatment = kind;
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn region(&self) -> &[usize] {
        &self.region
    }

    pub fn rep(&self) -> Option<&[usize]> {
        self.rep.as_deref()
    }

    pub fn group(&self) -> Option<&[usize]> {
        self.group.as_deref()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// Covariates with the leading intercept column.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn treatment_kind(&self) -> TreatmentKind {
        self.treatment
    }

    pub fn covariate(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.covariate_names.iter().position(|n| n == name)?;
        Some(self.x.column(j + 1).iter().cloned().collect())
    }

    /// Removes covariate `name` from X, returning the reduced dataset and the column.
    pub fn split_covariate(&self, name: &str) -> Result<(Self, Vec<f64>)> {
        let j = self
            .covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| invalid(format!("no covariate named `{name}`")))?;
        let col = self.x.column(j + 1).iter().cloned().collect();
        let mut out = self.clone();
        out.x = self.x.clone().remove_column(j + 1);
        out.covariate_names.remove(j);
        Ok((out, col))
    }

    /// Observation indices grouped by region.
    pub fn obs_by_region(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_regions];
        for (i, r) in self.region.iter().enumerate() {
            out[*r].push(i);
        }
        out
    }

    /// True when some region holds more than one observation.
    pub fn has_replication(&self) -> bool {
        self.obs_by_region().iter().any(|o| o.len() > 1)
    }

    pub fn fraction_treated(&self) -> f64 {
        self.a.iter().sum::<f64>() / self.n() as f64
    }
}

/// Region-by-time panel with `t ∈ 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    region: Vec<usize>,
    t: Vec<usize>,
    y: Vec<f64>,
    a: Vec<f64>,
    x: DMatrix<f64>,
    covariate_names: Vec<String>,
    n_regions: usize,
    n_times: usize,
}

impl PanelDataset {
    pub fn new(
        region: Vec<usize>,
        t: Vec<usize>,
        y: Vec<f64>,
        a: Vec<f64>,
        covariates: Vec<(String, Vec<f64>)>,
        n_regions: usize,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 || region.len() != n || t.len() != n || a.len() != n {
            return Err(invalid(
                "panel columns must be non-empty and of equal length",
            ));
        }
        if let Some(i) = region.iter().position(|r| *r >= n_regions) {
            return Err(invalid(format!(
                "row {i}: region {} outside 0..{n_regions}",
                region[i]
            )));
        }
        if y.iter().chain(&a).any(|v| !v.is_finite()) {
            return Err(invalid("response and treatment must be finite"));
        }
        let mut seen = BTreeSet::new();
        for (i, (r, tt)) in region.iter().zip(&t).enumerate() {
            if *tt == 0 {
                return Err(invalid(format!("row {i}: time steps start at 1")));
            }
            if !seen.insert((*r, *tt)) {
                return Err(invalid(format!("row {i}: duplicate (region {r}, t {tt})")));
            }
        }
        let n_times = *t.iter().max().unwrap();
        let present: BTreeSet<usize> = t.iter().cloned().collect();
        if present.len() != n_times {
            return Err(invalid(format!(
                "time steps must be contiguous from 1 to {n_times}"
            )));
        }
        let x = design_with_intercept(n, &covariates)?;
        Ok(PanelDataset {
            region,
            t,
            y,
            a,
            x,
            covariate_names: covariates.into_iter().map(|(n, _)| n).collect(),
            n_regions,
            n_times,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn region(&self) -> &[usize] {
        &self.region
    }

    pub fn t(&self) -> &[usize] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(invalid("replacement response has wrong length"));
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    pub fn with_treatment(&self, a: Vec<f64>) -> Result<Self> {
        if a.len() != self.n() {
            return Err(invalid("replacement treatment has wrong length"));
        }
        let mut out = self.clone();
        out.a = a;
        Ok(out)
    }

    /// Row index of `(region, t)` if present.
    pub fn index(&self) -> HashMap<(usize, usize), usize> {
        self.region
            .iter()
            .zip(&self.t)
            .enumerate()
            .map(|(i, (r, t))| ((*r, *t), i))
            .collect()
    }
}

/// Point-referenced observations at planar coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDataset {
    coords: Vec<[f64; 2]>,
    y: Vec<f64>,
    a: Vec<f64>,
    x: DMatrix<f64>,
    covariate_names: Vec<String>,
}

impl PointDataset {
    pub fn new(
        coords: Vec<[f64; 2]>,
        y: Vec<f64>,
        a: Vec<f64>,
        covariates: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 || coords.len() != n || a.len() != n {
            return Err(invalid(
                "point columns must be non-empty and of equal length",
            ));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if y.iter().chain(&a).any(|v| !v.is_finite()) {
            return Err(invalid("response and treatment must be finite"));
        }
        let x = design_with_intercept(n, &covariates)?;
        Ok(PointDataset {
            coords,
            y,
            a,
            x,
            covariate_names: covariates.into_iter().map(|(n, _)| n).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        let covs = self
            .covariate_names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                (
                    name.clone(),
                    keep.iter().map(|&i| self.x[(i, j + 1)]).collect(),
                )
            })
            .collect();
        PointDataset::new(
            keep.iter().map(|&i| self.coords[i]).collect(),
            keep.iter().map(|&i| self.y[i]).collect(),
            keep.iter().map(|&i| self.a[i]).collect(),
            covs,
        )
    }
}

// ---------------------------------------------------------------------------
// CSV

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(0, "", e))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(1, "", e))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.iter().all(|h| h.is_empty()) {
            return Err(Error::Csv {
                row: 1,
                column: String::new(),
                message: "missing header row".into(),
            });
        }
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(k + 2, "", e))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { header, rows })
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.position(name).ok_or_else(|| Error::Csv {
            row: 1,
            column: name.to_string(),
            message: "required column missing from header".into(),
        })
    }

    fn floats(&self, col: usize) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let cell = &r[col];
                let err = |message: &str| Error::Csv {
                    row: k + 2,
                    column: self.header[col].clone(),
                    message: message.to_string(),
                };
                if cell.is_empty() {
                    return Err(err("missing value"));
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| err(&format!("non-numeric value `{cell}`")))?;
                if !v.is_finite() {
                    return Err(err("non-finite value"));
                }
                Ok(v)
            })
            .collect()
    }

    fn indices(&self, col: usize) -> Result<Vec<usize>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                r[col].parse::<usize>().map_err(|_| Error::Csv {
                    row: k + 2,
                    column: self.header[col].clone(),
                    message: format!("expected a non-negative integer, got `{}`", r[col]),
                })
            })
            .collect()
    }

    fn covariates(&self, reserved: &[&str]) -> Result<Vec<(String, Vec<f64>)>> {
        self.header
            .iter()
            .enumerate()
            .filter(|(_, h)| !reserved.contains(&h.as_str()))
            .map(|(j, h)| Ok((h.clone(), self.floats(j)?)))
            .collect()
    }
}

fn csv_error(row: usize, column: &str, e: csv::Error) -> Error {
    Error::Csv {
        row,
        column: column.to_string(),
        message: e.to_string(),
    }
}

/// Options controlling areal ingestion.
#[derive(Debug, Clone, Copy, Default)]
pub struct ArealReadOptions {
    /// Number of lattice regions; region ids at or above it are rejected.
    /// When absent the count is inferred as `max(region) + 1`.
    pub n_regions: Option<usize>,
    pub treatment: TreatmentKind,
}

const AREAL_RESERVED: &[&str] = &["region", "rep", "group", "y", "a", "s1", "s2", "t"];

pub fn read_areal_csv(path: impl AsRef<Path>, opts: ArealReadOptions) -> Result<ArealDataset> {
    let table = Table::read(path.as_ref())?;
    let ri = table.require("region")?;
    let yi = table.require("y")?;
    let ai = table.require("a")?;
    let region = table.indices(ri)?;
    let y = table.floats(yi)?;
    let a = table.floats(ai)?;
    if table.rows.is_empty() {
        return Err(Error::Csv {
            row: 2,
            column: String::new(),
            message: "no data rows".into(),
        });
    }
    let n_regions = opts
        .n_regions
        .unwrap_or_else(|| region.iter().max().map_or(0, |m| m + 1));
    if let Some(k) = region.iter().position(|r| *r >= n_regions) {
        return Err(Error::Csv {
            row: k + 2,
            column: "region".into(),
            message: format!("unknown region id {} (lattice has {n_regions})", region[k]),
        });
    }
    if opts.treatment == TreatmentKind::Binary {
        if let Some(k) = a.iter().position(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::Csv {
                row: k + 2,
                column: "a".into(),
                message: format!("binary treatment must be 0 or 1, got {}", a[k]),
            });
        }
    }
    let covariates = table.covariates(AREAL_RESERVED)?;
    let mut ds = ArealDataset::new(region, y, a, covariates, n_regions, opts.treatment)?;
    if let Some(c) = table.position("rep") {
        ds = ds.with_rep(table.indices(c)?)?;
    }
    if let Some(c) = table.position("group") {
        ds = ds.with_group(table.indices(c)?)?;
    }
    Ok(ds)
}

fn write_rows(
    path: &Path,
    header: Vec<String>,
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(0, "", e))?;
    w.write_record(&header).map_err(|e| csv_error(1, "", e))?;
    for (k, r) in rows.enumerate() {
        w.write_record(&r).map_err(|e| csv_error(k + 2, "", e))?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn write_areal_csv(ds: &ArealDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut header = vec!["region".to_string()];
    if ds.rep.is_some() {
        header.push("rep".into());
    }
    if ds.group.is_some() {
        header.push("group".into());
    }
    header.extend(["y".to_string(), "a".to_string()]);
    header.extend(ds.covariate_names.iter().cloned());
    let rows = (0..ds.n()).map(|i| {
        let mut r = vec![ds.region[i].to_string()];
        if let Some(rep) = &ds.rep {
            r.push(rep[i].to_string());
        }
        if let Some(g) = &ds.group {
            r.push(g[i].to_string());
        }
        r.push(fmt_f64(ds.y[i]));
        r.push(fmt_f64(ds.a[i]));
        for j in 1..ds.x.ncols() {
            r.push(fmt_f64(ds.x[(i, j)]));
        }
        r
    });
    write_rows(path.as_ref(), header, rows)
}

pub fn read_panel_csv(path: impl AsRef<Path>, n_regions: Option<usize>) -> Result<PanelDataset> {
    let table = Table::read(path.as_ref())?;
    let region = table.indices(table.require("region")?)?;
    let t = table.indices(table.require("t")?)?;
    let y = table.floats(table.require("y")?)?;
    let a = table.floats(table.require("a")?)?;
    let n_regions = n_regions.unwrap_or_else(|| region.iter().max().map_or(0, |m| m + 1));
    if let Some(k) = region.iter().position(|r| *r >= n_regions) {
        return Err(Error::Csv {
            row: k + 2,
            column: "region".into(),
            message: format!("unknown region id {}", region[k]),
        });
    }
    let covariates = table.covariates(&["region", "t", "y", "a", "rep", "group", "s1", "s2"])?;
    PanelDataset::new(region, t, y, a, covariates, n_regions)
}

pub fn write_panel_csv(ds: &PanelDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut header = vec!["region".to_string(), "t".into(), "y".into(), "a".into()];
    header.extend(ds.covariate_names.iter().cloned());
    let rows = (0..ds.n()).map(|i| {
        let mut r = vec![
            ds.region[i].to_string(),
            ds.t[i].to_string(),
            fmt_f64(ds.y[i]),
            fmt_f64(ds.a[i]),
        ];
        for j in 1..ds.x.ncols() {
            r.push(fmt_f64(ds.x[(i, j)]));
        }
        r
    });
    write_rows(path.as_ref(), header, rows)
}

pub fn read_point_csv(path: impl AsRef<Path>) -> Result<PointDataset> {
    let table = Table::read(path.as_ref())?;
    let s1 = table.floats(table.require("s1")?)?;
    let s2 = table.floats(table.require("s2")?)?;
    let y = table.floats(table.require("y")?)?;
    let a = table.floats(table.require("a")?)?;
    let covariates = table.covariates(&["s1", "s2", "y", "a", "region", "rep", "group", "t"])?;
    PointDataset::new(
        s1.into_iter().zip(s2).map(|(a, b)| [a, b]).collect(),
        y,
        a,
        covariates,
    )
}

pub fn write_point_csv(ds: &PointDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut header = vec!["s1".to_string(), "s2".into(), "y".into(), "a".into()];
    header.extend(ds.covariate_names.iter().cloned());
    let rows = (0..ds.n()).map(|i| {
        let mut r = vec![
            fmt_f64(ds.coords[i][0]),
            fmt_f64(ds.coords[i][1]),
            fmt_f64(ds.y[i]),
            fmt_f64(ds.a[i]),
        ];
        for j in 1..ds.x.ncols() {
            r.push(fmt_f64(ds.x[(i, j)]));
        }
        r
    });
    write_rows(path.as_ref(), header, rows)
}

/// Appends a score column to an areal CSV layout.
pub fn write_areal_with_scores(
    ds: &ArealDataset,
    scores: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    if scores.len() != ds.n() {
        return Err(invalid("score vector length mismatch"));
    }
    let with = ArealDataset {
        x: ds.x.clone().insert_column(ds.x.ncols(), 0.0),
        covariate_names: ds
            .covariate_names
            .iter()
            .cloned()
            .chain(std::iter::once("score".to_string()))
            .collect(),
        ..ds.clone()
    };
    let mut with = with;
    let last = with.x.ncols() - 1;
    for (i, s) in scores.iter().enumerate() {
        with.x[(i, last)] = *s;
    }
    write_areal_csv(&with, path)
}

// ---------------------------------------------------------------------------
// Run configuration

/// Settings for a simulation study or a batch of fits.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub grid: (usize, usize),
    pub datasets: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub estimators: Vec<String>,
    pub output: PathBuf,
    pub beta: f64,
    pub phi: f64,
}

pub const DEFAULT_ESTIMATORS: [&str; 7] = ["NS", "NS+P", "S", "S+P", "S+AIPW", "Joint", "Cut"];

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "a".into(),
            grid: (20, 20),
            datasets: 20,
            iterations: 5000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
            estimators: DEFAULT_ESTIMATORS.iter().map(|s| s.to_string()).collect(),
            output: PathBuf::from("results"),
            beta: 0.5,
            phi: 0.5,
        }
    }
}

impl RunConfig {
    /// 100 datasets on a 30×30 grid.
    pub fn full_scale(mut self) -> Self {
        self.grid = (30, 30);
        self.datasets = 100;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::Config { line: 0, message };
        if self.iterations <= self.burn_in {
            return Err(bad(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.datasets == 0 {
            return Err(bad("dataset count must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(bad("thin must be at least 1".into()));
        }
        if self.grid.0 * self.grid.1 < 2 {
            return Err(bad("grid needs at least two regions".into()));
        }
        Ok(())
    }

    /// Parses `key=value` settings; several pairs may share a line and `#`
    /// starts a comment.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("");
            for token in content.split_whitespace() {
                let (key, value) = token.split_once('=').ok_or_else(|| Error::Config {
                    line,
                    message: format!("expected key=value, got `{token}`"),
                })?;
                let bad = |what: &str| Error::Config {
                    line,
                    message: format!("malformed value `{value}` for `{key}`: {what}"),
                };
                let int = || {
                    value
                        .parse::<usize>()
                        .map_err(|_| bad("expected an integer"))
                };
                match key {
                    "scenario" => cfg.scenario = value.to_string(),
                    "grid" => {
                        let (r, c) = value
                            .split_once(['x', 'X', '*'])
                            .ok_or_else(|| bad("expected ROWSxCOLS"))?;
                        cfg.grid = (
                            r.parse().map_err(|_| bad("bad row count"))?,
                            c.parse().map_err(|_| bad("bad column count"))?,
                        );
                    }
                    "datasets" => cfg.datasets = int()?,
                    "iters" | "iterations" => cfg.iterations = int()?,
                    "burnin" | "burn_in" => cfg.burn_in = int()?,
                    "thin" => cfg.thin = int()?,
                    "seed" => cfg.seed = value.parse().map_err(|_| bad("expected an integer"))?,
                    "estimators" => {
                        cfg.estimators = value
                            .split(',')
                            .filter(|s| !s.is_empty())
                            .map(str::to_string)
                            .collect()
                    }
                    "out" | "output" => cfg.output = PathBuf::from(value),
                    "beta" => cfg.beta = value.parse().map_err(|_| bad("expected a number"))?,
                    "phi" => cfg.phi = value.parse().map_err(|_| bad("expected a number"))?,
                    _ => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown key `{key}`"),
                        })
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    RunConfig::parse(&std::fs::read_to_string(path)?)
}
