use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use spatial_causal::confound::{fit_estimator, Estimator, ModelSpec, ESTIMATE_HEADER};
use spatial_causal::data::{
    fmt_f64, parse_config, read_areal_csv, read_panel_csv, read_point_csv, write_areal_csv,
    ArealReadOptions, RunConfig, TreatmentKind,
};
use spatial_causal::geostat::{
    dapsm_match, fit_discontinuity, fit_geostat_interference, fit_gp_mean, krige_impute, Grid,
    SpilloverDesign, SpilloverKernel, TreatedRegion, DEFAULT_IMPUTATIONS,
};
use spatial_causal::interference::{
    fit_network_interference, fit_partial_interference, policy_average, write_policy_effects,
    AverageMethod, Effect, Policy,
};
use spatial_causal::lattice::{build_rook_grid, Lattice};
use spatial_causal::mcmc::{FitConfig, Interval, PriorSpec};
use spatial_causal::simstudy::{generate_dataset, run_study, write_summary, Scenario};
use spatial_causal::spacetime::{fit_did, fit_granger, janes_test, DidMethod};

#[derive(Parser)]
#[command(
    name = "spatial-causal",
    version,
    about = "Spatial causal inference toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one benchmark dataset with its latent truth and lattice.
    Simulate(SimulateArgs),
    /// Fit one confounder-adjustment estimator to an areal dataset.
    Fit(FitArgs),
    /// Run the simulation benchmark described by a config file.
    SimStudy(StudyArgs),
    /// Fit a linear spillover model and report policy-averaged effects.
    Interference(InterferenceArgs),
    /// Spatiotemporal estimators on a panel dataset.
    Spacetime(SpacetimeArgs),
    /// Estimators for point-referenced data.
    Geostat(GeostatArgs),
}

#[derive(Args, Clone, Copy)]
struct McmcArgs {
    #[arg(long, default_value_t = 5000)]
    iterations: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl McmcArgs {
    fn config(&self) -> Result<FitConfig> {
        if self.iterations <= self.burn_in || self.thin == 0 {
            bail!(
                "need iterations > burn-in and thin >= 1 (got {}, {}, {})",
                self.iterations,
                self.burn_in,
                self.thin
            );
        }
        Ok(FitConfig::new(
            self.iterations,
            self.burn_in,
            self.thin,
            self.seed,
        ))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: u64,
    /// Lattice size as ROWSxCOLS.
    #[arg(long, default_value = "20x20", value_parser = parse_grid)]
    grid: (usize, usize),
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    phi: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    estimator: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    lattice: PathBuf,
    /// Treat the treatment column as continuous.
    #[arg(long)]
    continuous: bool,
    /// Number of propensity strata for S+Strata.
    #[arg(long)]
    strata: Option<usize>,
    /// Covariate used as the instrument for IV.
    #[arg(long)]
    instrument: Option<String>,
    #[command(flatten)]
    mcmc: McmcArgs,
    /// Write the estimate here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out` setting.
    #[arg(long)]
    out: Option<PathBuf>,
    /// 100 datasets on a 30x30 grid.
    #[arg(long = "paper-scale")]
    full_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterferenceMode {
    /// Spillover within the groups given by the `group` column.
    Partial,
    /// Spillover from lattice neighbours.
    Network,
}

#[derive(Args)]
struct InterferenceArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    mode: InterferenceMode,
    /// Adjacency file; required for network mode.
    #[arg(long)]
    lattice: Option<PathBuf>,
    /// Treatment probabilities of the iid policies to evaluate.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.5, 0.75])]
    policies: Vec<f64>,
    /// Treatment probability of the baseline policy.
    #[arg(long, default_value_t = 0.0)]
    baseline: f64,
    /// Monte Carlo draws when there are too many units to enumerate.
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[command(flatten)]
    mcmc: McmcArgs,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpacetimeMethod {
    Janes,
    Did,
    Granger,
}

#[derive(Args)]
struct SpacetimeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: SpacetimeMethod,
    #[arg(long)]
    lattice: Option<PathBuf>,
    /// Add neighbour-mean treatment terms (DID and Granger).
    #[arg(long)]
    spillover: bool,
    /// Fit DID in levels with a region effect instead of differencing.
    #[arg(long)]
    levels: bool,
    #[arg(long, default_value_t = 1)]
    lags: usize,
    /// Number of time-trend functions for the Janes test.
    #[arg(long)]
    time_df: Option<usize>,
    #[command(flatten)]
    mcmc: McmcArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeostatMethod {
    /// Spatial regression discontinuity.
    Discontinuity,
    /// Direct and kernel-spillover effects of a continuous treatment.
    Spillover,
    /// Krige the treatment onto a grid.
    Krige,
    /// Distance-adjusted propensity score matching.
    Dapsm,
}

#[derive(Args)]
struct GeostatArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: GeostatMethod,
    /// Treated half-plane `n1,n2,c`: points with n·s >= c are treated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    half_plane: Option<Vec<f64>>,
    /// Treated disc `x,y,r`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    disc: Option<Vec<f64>>,
    /// Only use points within this distance of the border.
    #[arg(long)]
    band: Option<f64>,
    /// Spillover kernel, `disc:RADIUS` or `gaussian:BANDWIDTH`.
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<SpilloverKernel>,
    /// Grid spacing for kriging.
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_IMPUTATIONS)]
    imputations: usize,
    /// Column holding propensity scores for matching.
    #[arg(long, default_value = "score")]
    score: String,
    /// Weight on the score difference in the matching distance.
    #[arg(long, default_value_t = 0.5)]
    weight: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got `{s}`"))?;
    let r = r.parse().map_err(|_| format!("bad row count in `{s}`"))?;
    let c = c
        .parse()
        .map_err(|_| format!("bad column count in `{s}`"))?;
    Ok((r, c))
}

fn parse_kernel(s: &str) -> std::result::Result<SpilloverKernel, String> {
    let (kind, v) = s
        .split_once(':')
        .ok_or_else(|| format!("expected KIND:SCALE, got `{s}`"))?;
    let v: f64 = v
        .parse()
        .map_err(|_| format!("bad kernel scale in `{s}`"))?;
    match kind {
        "disc" => Ok(SpilloverKernel::Disc { radius: v }),
        "gaussian" => Ok(SpilloverKernel::Gaussian { bandwidth: v }),
        _ => Err(format!(
            "unknown kernel `{kind}` (expected disc or gaussian)"
        )),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

const INTERVAL_HEADER: &str = "parameter,estimate,lo95,hi95";

fn write_intervals(out: &mut dyn Write, rows: &[(String, Interval)]) -> Result<()> {
    writeln!(out, "{INTERVAL_HEADER}")?;
    for (name, i) in rows {
        writeln!(
            out,
            "{name},{},{},{}",
            fmt_f64(i.estimate),
            fmt_f64(i.lower),
            fmt_f64(i.upper)
        )?;
    }
    Ok(())
}

fn read_lattice(path: &Path) -> Result<Lattice> {
    Lattice::read_adjacency(path).with_context(|| format!("reading lattice {}", path.display()))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let (rows, cols) = args.grid;
    let scenario = Scenario::named(&args.scenario)?
        .with_grid(rows, cols)
        .with_effects(args.beta, args.phi);
    let (data, truth) = generate_dataset(&scenario, args.seed)?;
    fs::create_dir_all(&args.out)?;
    let stem = format!("{}_seed{}", args.scenario, args.seed);
    let data_path = args.out.join(format!("{stem}.csv"));
    write_areal_csv(&data, &data_path)?;
    let truth_path = args.out.join(format!("{stem}_truth.csv"));
    let mut w = BufWriter::new(File::create(&truth_path)?);
    writeln!(w, "region,beta,u,v,prob")?;
    for i in 0..truth.u.len() {
        writeln!(
            w,
            "{i},{},{},{},{}",
            fmt_f64(truth.beta),
            fmt_f64(truth.u[i]),
            fmt_f64(truth.v[i]),
            fmt_f64(truth.prob[i])
        )?;
    }
    w.flush()?;
    let lattice_path = args.out.join(format!("grid_{rows}x{cols}.adj"));
    build_rook_grid(rows, cols)?.write_adjacency(&lattice_path)?;
    eprintln!(
        "wrote {}, {} and {}",
        data_path.display(),
        truth_path.display(),
        lattice_path.display()
    );
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let estimator: Estimator = args.estimator.parse()?;
    let lattice = read_lattice(&args.lattice)?;
    let opts = ArealReadOptions {
        n_regions: Some(lattice.n_regions()),
        treatment: if args.continuous {
            TreatmentKind::Continuous
        } else {
            TreatmentKind::Binary
        },
    };
    let data = read_areal_csv(&args.data, opts)
        .with_context(|| format!("reading {}", args.data.display()))?;
    let mut spec = ModelSpec::new(estimator);
    if let Some(l) = args.strata {
        spec = spec.with_strata(l);
    }
    if let Some(z) = args.instrument {
        spec = spec.with_instrument(z);
    }
    let est = fit_estimator(&spec, &data, &lattice, None, &args.mcmc.config()?)?;
    let id = args
        .data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut out = open_output(args.out.as_deref())?;
    writeln!(out, "{ESTIMATE_HEADER}")?;
    writeln!(out, "{}", est.csv_row(&id))?;
    out.flush()?;
    Ok(())
}

fn sim_study(args: StudyArgs) -> Result<()> {
    let mut config = parse_config(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    if args.full_scale {
        config = config.full_scale();
    }
    if let Some(out) = args.out {
        config.output = out;
    }
    let scenarios: Vec<String> = config
        .scenario
        .split(',')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    for s in &scenarios {
        Scenario::named(s)?;
    }
    fs::create_dir_all(&config.output)?;
    let mut results = Vec::new();
    for s in scenarios {
        let cfg = RunConfig {
            scenario: s.clone(),
            ..config.clone()
        };
        eprintln!(
            "scenario {s}: {} datasets on a {}x{} grid",
            cfg.datasets, cfg.grid.0, cfg.grid.1
        );
        let result = run_study(&cfg)?;
        let path = config.output.join(format!("estimates_{s}.csv"));
        result.write_estimates(BufWriter::new(File::create(&path)?))?;
        results.push(result);
    }
    let summary = config.output.join("summary.csv");
    write_summary(BufWriter::new(File::create(&summary)?), &results)?;
    write_summary(io::stdout().lock(), &results)?;
    Ok(())
}

fn interference(args: InterferenceArgs) -> Result<()> {
    let lattice = args.lattice.as_deref().map(read_lattice).transpose()?;
    let opts = ArealReadOptions {
        n_regions: lattice.as_ref().map(Lattice::n_regions),
        treatment: TreatmentKind::Binary,
    };
    let data = read_areal_csv(&args.data, opts)
        .with_context(|| format!("reading {}", args.data.display()))?;
    let config = args.mcmc.config()?;
    let fit = match args.mode {
        InterferenceMode::Partial => fit_partial_interference(&data, &config)?,
        InterferenceMode::Network => {
            let lattice = lattice
                .as_ref()
                .context("network interference needs --lattice")?;
            fit_network_interference(&data, lattice, &config)?
        }
    };
    fs::create_dir_all(&args.out)?;
    let mut w = open_output(Some(&args.out.join("coefficients.csv")))?;
    write_intervals(
        &mut w,
        &[
            ("direct".into(), fit.direct),
            ("spillover".into(), fit.spillover),
        ],
    )?;
    w.flush()?;
    let baseline = Policy::iid(args.baseline)?;
    let method = if fit.model.exposure.n_units() <= spatial_causal::interference::ENUMERATION_LIMIT
    {
        AverageMethod::Enumerate
    } else {
        AverageMethod::MonteCarlo {
            draws: args.draws,
            seed: args.mcmc.seed,
        }
    };
    let mut effects = Vec::new();
    for p in &args.policies {
        let policy = Policy::iid(*p)?;
        for e in Effect::ALL {
            effects.push(policy_average(&fit.model, &policy, &baseline, e, method)?);
        }
    }
    let path = args.out.join("policy_effects.csv");
    write_policy_effects(BufWriter::new(File::create(&path)?), &effects)?;
    write_policy_effects(io::stdout().lock(), &effects)?;
    Ok(())
}

fn spacetime(args: SpacetimeArgs) -> Result<()> {
    let lattice = args.lattice.as_deref().map(read_lattice).transpose()?;
    let panel = read_panel_csv(&args.data, lattice.as_ref().map(Lattice::n_regions))
        .with_context(|| format!("reading {}", args.data.display()))?;
    let config = args.mcmc.config()?;
    let mut rows: Vec<(String, Interval)> = Vec::new();
    match args.method {
        SpacetimeMethod::Janes => {
            let f = janes_test(&panel, args.time_df, &config)?;
            rows.push(("eta_global".into(), f.eta_global));
            rows.push(("eta_local".into(), f.eta_local));
            rows.push(("difference".into(), f.difference));
        }
        SpacetimeMethod::Did => {
            let method = if args.levels || args.spillover {
                DidMethod::Levels
            } else {
                DidMethod::Differenced
            };
            let f = fit_did(&panel, args.spillover, lattice.as_ref(), method, &config)?;
            let named = [
                ("beta1", f.beta1),
                ("beta2", Some(f.beta2)),
                ("beta3", Some(f.beta3)),
                ("beta4", f.beta4),
                ("beta5", f.beta5),
            ];
            rows.extend(
                named
                    .into_iter()
                    .filter_map(|(n, i)| i.map(|i| (n.into(), i))),
            );
        }
        SpacetimeMethod::Granger => {
            let lattice = lattice.as_ref().context("Granger fit needs --lattice")?;
            let f = fit_granger(&panel, args.lags, args.spillover, lattice, &config)?;
            for (l, i) in f.beta.iter().enumerate() {
                rows.push((format!("beta[{}]", l + 1), *i));
            }
            for (l, i) in f.rho.iter().enumerate() {
                rows.push((format!("rho[{}]", l + 1), *i));
            }
            for (l, i) in f.spillover.iter().flatten().enumerate() {
                rows.push((format!("delta[{}]", l + 1), *i));
            }
            eprintln!(
                "treatment {} the response",
                if f.granger_causes() {
                    "Granger-causes"
                } else {
                    "does not Granger-cause"
                }
            );
        }
    }
    let mut out = open_output(args.out.as_deref())?;
    write_intervals(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}

fn geostat(args: GeostatArgs) -> Result<()> {
    let data =
        read_point_csv(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let prior = PriorSpec::default();
    let mut out = open_output(args.out.as_deref())?;
    match args.method {
        GeostatMethod::Discontinuity => {
            let three = |v: &Option<Vec<f64>>, flag: &str| -> Result<()> {
                match v {
                    Some(v) if v.len() != 3 => {
                        bail!("--{flag} takes three comma-separated numbers")
                    }
                    _ => Ok(()),
                }
            };
            three(&args.half_plane, "half-plane")?;
            three(&args.disc, "disc")?;
            let region = match (&args.half_plane, &args.disc) {
                (Some(h), None) => TreatedRegion::HalfPlane {
                    normal: [h[0], h[1]],
                    offset: h[2],
                },
                (None, Some(d)) => TreatedRegion::Disc {
                    center: [d[0], d[1]],
                    radius: d[2],
                },
                _ => bail!("give exactly one of --half-plane or --disc"),
            };
            let f = fit_discontinuity(&data, &region, args.band, prior)?;
            eprintln!("{} points used", f.n_used);
            write_intervals(&mut out, &[("beta".into(), f.beta)])?;
        }
        GeostatMethod::Spillover => {
            let kernel = args.kernel.context("spillover needs --kernel")?;
            let spacing = args.spacing.context("spillover needs --spacing")?;
            let design = SpilloverDesign {
                kernel,
                grid: Grid::covering(data.coords(), spacing)?,
                treatment_params: None,
                imputations: args.imputations,
                seed: args.seed,
            };
            let f = fit_geostat_interference(&data, &design, prior)?;
            write_intervals(
                &mut out,
                &[
                    ("direct".into(), f.direct),
                    ("spillover".into(), f.spillover),
                ],
            )?;
        }
        GeostatMethod::Krige => {
            let spacing = args.spacing.context("kriging needs --spacing")?;
            let gp = fit_gp_mean(data.coords(), data.a(), prior)?;
            let grid = Grid::covering(data.coords(), spacing)?;
            krige_impute(data.coords(), data.a(), &gp.params, &grid)?.write_csv(&mut out)?;
        }
        GeostatMethod::Dapsm => {
            let score = read_point_column(&args.data, &args.score)?;
            let (mut treated, mut controls) = (Vec::new(), Vec::new());
            let (mut yt, mut yc) = (Vec::new(), Vec::new());
            for i in 0..data.n() {
                let unit = (score[i], data.coords()[i]);
                match data.a()[i] {
                    a if a == 1.0 => {
                        treated.push(unit);
                        yt.push(data.y()[i]);
                    }
                    a if a == 0.0 => {
                        controls.push(unit);
                        yc.push(data.y()[i]);
                    }
                    a => bail!("matching needs a binary treatment, found {a}"),
                }
            }
            let m = dapsm_match(&treated, &controls, args.weight)?;
            writeln!(out, "treated,control,distance")?;
            for p in &m.pairs {
                writeln!(out, "{},{},{}", p.treated, p.control, fmt_f64(p.distance))?;
            }
            eprintln!(
                "{} pairs, {} treated unmatched, mean difference {}",
                m.pairs.len(),
                m.unmatched.len(),
                fmt_f64(m.mean_difference(&yt, &yc))
            );
        }
    }
    out.flush()?;
    Ok(())
}

fn read_point_column(path: &Path, name: &str) -> Result<Vec<f64>> {
    let data = read_point_csv(path)?;
    let k = data
        .covariate_names()
        .iter()
        .position(|c| c == name)
        .with_context(|| format!("no column `{name}` in {}", path.display()))?;
    Ok(data.x().column(k + 1).iter().copied().collect())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::SimStudy(a) => sim_study(a),
        Command::Interference(a) => interference(a),
        Command::Spacetime(a) => spacetime(a),
        Command::Geostat(a) => geostat(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
