//! Command-line surface: ingestion, MAP fitting, survival curves, density
//! comparison, and simulation, emitting plot-ready JSON/CSV artifacts.
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use betastacy::data::{KmCurve, SurvivalDataset};
use betastacy::maxent::{algorithm1, Algorithm1Config, HpdRegion, Mesh, MomentsChoice};
use betastacy::moments::Functional;
use betastacy::posterior::{fit_map, FitGrid, PosteriorLaplace, SurfacePoint};
use betastacy::prior::{
    Baseline, CompoundPriorSpec, Group, LogBetaDirecting, PriorConfig, Score,
    ScoreDistribution, StratifiedScore,
};
use betastacy::sim::{generate, ScenarioSpec, TruthOracle};

#[derive(Parser)]
#[command(
    name = "betastacy",
    version,
    about = "Bayesian nonparametric two-sample comparison of restricted mean survival times"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximize the marginal likelihood over a score-distribution grid.
    Fit(FitArgs),
    /// Posterior (or prior) survival curves plus Kaplan-Meier references.
    Survival(SurvivalArgs),
    /// Densities and HPD intervals for RMST or variance differences.
    Compare(CompareArgs),
    /// Generate a two-sample dataset from a scenario file.
    Simulate(SimulateArgs),
    /// Kaplan-Meier curves only.
    Km(KmArgs),
}

/// Prior hyperparameters, either from a JSON config or inline flags.
#[derive(Args, Debug)]
struct PriorArgs {
    /// Prior configuration JSON (overrides the inline flags).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Score weights for (shared, group-1 only, group-2 only); pre-tau
    /// triplet when --pi2 is given.
    #[arg(long, value_delimiter = ',')]
    pi1: Option<Vec<f64>>,
    /// Post-tau score triplet (requires --tau).
    #[arg(long, value_delimiter = ',')]
    pi2: Option<Vec<f64>>,
    /// Stratification threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Precision of the Log-Beta directing measure.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Rate of the exponential baseline centering.
    #[arg(long, default_value_t = 0.3)]
    baseline_rate: f64,
}

impl PriorArgs {
    fn resolve(&self) -> anyhow::Result<CompoundPriorSpec> {
        if let Some(path) = &self.spec {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading prior spec {}", path.display()))?;
            let cfg: PriorConfig = serde_json::from_str(&text)?;
            return Ok(CompoundPriorSpec::try_from(cfg)?);
        }
        let triplet = |v: &Vec<f64>, flag: &str| -> anyhow::Result<[f64; 3]> {
            match v.as_slice() {
                [a, b, c] => Ok([*a, *b, *c]),
                other => bail!("{flag} needs exactly three weights, got {}", other.len()),
            }
        };
        let pi1 = match &self.pi1 {
            Some(v) => triplet(v, "--pi1")?,
            None => [1.0, 0.0, 0.0],
        };
        let pre = ScoreDistribution::new(pi1)?;
        let score = match (&self.pi2, self.tau) {
            (None, None) => Score::Single(pre),
            (Some(v), Some(tau)) => Score::Stratified(StratifiedScore::new(
                pre,
                ScoreDistribution::new(triplet(v, "--pi2")?)?,
                tau,
            )?),
            _ => bail!("--pi2 and --tau must be given together"),
        };
        let directing =
            LogBetaDirecting::new(self.gamma, Baseline::exponential(self.baseline_rate)?)?;
        Ok(CompoundPriorSpec::new(directing, score))
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.3)]
    baseline_rate: f64,
    /// Simplex step for the score grid (0.1 gives 66 triplets).
    #[arg(long, default_value_t = 0.1)]
    simplex_step: f64,
    /// Explicit tau candidates; defaults to the observed-time deciles.
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    /// Fit a single (unstratified) score triplet.
    #[arg(long)]
    no_stratified: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SurvivalArgs {
    /// Observations CSV; omit for pure prior curves.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    prior: PriorArgs,
    /// Number of grid points for the curve output.
    #[arg(long, default_value_t = 200)]
    grid_points: usize,
    /// Upper end of the time grid; defaults to the last observation.
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FunctionalArg {
    Mean,
    Variance,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long, value_enum, default_value_t = FunctionalArg::Mean)]
    functional: FunctionalArg,
    /// Absolute time horizons.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,
    /// Horizons as pooled-data quantile levels in (0, 1].
    #[arg(long, value_delimiter = ',')]
    quantile_horizons: Option<Vec<f64>>,
    #[arg(long, default_value_t = 600)]
    mesh_points: usize,
    /// Lower mesh bound; with --mesh-hi overrides the moment-based rule.
    #[arg(long, allow_negative_numbers = true)]
    mesh_lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    mesh_hi: Option<f64>,
    /// Number of moment constraints.
    #[arg(long, default_value_t = 6)]
    moments: u32,
    /// Increase the constraint count until densities stabilize (sup-norm
    /// 0.1 on [0, horizon]), capped at 10.
    #[arg(long)]
    adaptive: bool,
    /// HPD coverage level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Report tail masses P(|difference| > c) at these thresholds.
    #[arg(long, value_delimiter = ',')]
    tail_c: Option<Vec<f64>>,
    /// Uniform refinement of the moment-recursion grid.
    #[arg(long, default_value_t = 512)]
    refine: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON.
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KmArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Survival(args) => cmd_survival(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Km(args) => cmd_km(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

/// 2 for configuration/input problems, 3 for numerical failures.
fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<betastacy::Error>() {
        Some(
            betastacy::Error::NonConvergence { .. }
            | betastacy::Error::InfeasibleMoments(_)
            | betastacy::Error::DegenerateScore { .. }
            | betastacy::Error::DegenerateVariance(_)
            | betastacy::Error::CombinatorialCap { .. },
        ) => 3,
        _ => 2,
    }
}

fn timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    use std::io::Write;
    writeln!(file)?;
    Ok(())
}

fn load_data(path: &Path) -> anyhow::Result<SurvivalDataset> {
    SurvivalDataset::from_csv_path(path).with_context(|| format!("loading {}", path.display()))
}

// --- fit ---------------------------------------------------------------

#[derive(Serialize)]
struct HyperFitOutput {
    generated_at: u64,
    config: FitConfigOut,
    best: PriorConfig,
    best_log_likelihood: f64,
    surface_rows: usize,
    surface_csv: String,
}

#[derive(Serialize)]
struct FitConfigOut {
    data: String,
    gamma: f64,
    baseline_rate: f64,
    simplex_step: f64,
    taus: Vec<f64>,
    stratified: bool,
}

fn cmd_fit(args: FitArgs) -> anyhow::Result<()> {
    let data = load_data(&args.data)?;
    let directing =
        LogBetaDirecting::new(args.gamma, Baseline::exponential(args.baseline_rate)?)?;
    let mut grid = FitGrid::default_for(&data)?;
    grid.simplex_step = args.simplex_step;
    if let Some(taus) = args.taus.clone() {
        grid.taus = taus;
    }
    grid.stratified = !args.no_stratified;

    let fit = fit_map(directing, &data, &grid)?;

    fs::create_dir_all(&args.out)?;
    let surface_path = args.out.join("surface.csv");
    write_surface_csv(&surface_path, &fit.surface, grid.stratified)?;

    let best_spec = CompoundPriorSpec::new(directing, fit.best);
    write_json(&args.out.join("best_prior.json"), &PriorConfig::from(&best_spec))?;
    let output = HyperFitOutput {
        generated_at: timestamp(),
        config: FitConfigOut {
            data: args.data.display().to_string(),
            gamma: args.gamma,
            baseline_rate: args.baseline_rate,
            simplex_step: grid.simplex_step,
            taus: grid.taus.clone(),
            stratified: grid.stratified,
        },
        best: PriorConfig::from(&best_spec),
        best_log_likelihood: fit.best_log_likelihood,
        surface_rows: fit.surface.len(),
        surface_csv: surface_path.display().to_string(),
    };
    write_json(&args.out.join("hyperfit.json"), &output)?;
    println!(
        "wrote {} and {} ({} grid points)",
        args.out.join("hyperfit.json").display(),
        surface_path.display(),
        fit.surface.len()
    );
    Ok(())
}

fn write_surface_csv(
    path: &Path,
    surface: &[SurfacePoint],
    stratified: bool,
) -> anyhow::Result<()> {
    use std::io::Write;
    let mut file = fs::File::create(path)?;
    if stratified {
        writeln!(file, "pi1_1,pi1_2,pi1_3,pi2_1,pi2_2,pi2_3,tau,loglik")?;
        for p in surface {
            let pi2 = p.pi2.unwrap_or([f64::NAN; 3]);
            writeln!(
                file,
                "{},{},{},{},{},{},{},{}",
                p.pi1[0],
                p.pi1[1],
                p.pi1[2],
                pi2[0],
                pi2[1],
                pi2[2],
                p.tau.unwrap_or(f64::NAN),
                p.log_likelihood
            )?;
        }
    } else {
        writeln!(file, "pi1,pi2,pi3,tau,loglik")?;
        for p in surface {
            writeln!(
                file,
                "{},{},{},,{}",
                p.pi1[0], p.pi1[1], p.pi1[2], p.log_likelihood
            )?;
        }
    }
    Ok(())
}

// --- survival ----------------------------------------------------------

#[derive(Serialize)]
struct CurveOut {
    group: u8,
    times: Vec<f64>,
    survival: Vec<f64>,
}

#[derive(Serialize)]
struct SurvivalOutput {
    generated_at: u64,
    config: SurvivalConfigOut,
    ntr: Vec<CurveOut>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    km: Vec<KmCurve>,
}

#[derive(Serialize)]
struct SurvivalConfigOut {
    data: Option<String>,
    prior: PriorConfig,
    grid_points: usize,
    t_max: f64,
}

fn cmd_survival(args: SurvivalArgs) -> anyhow::Result<()> {
    let spec = args.prior.resolve()?;
    let data = match &args.data {
        Some(path) => Some(load_data(path)?),
        None => None,
    };
    let t_max = match args.t_max.or_else(|| data.as_ref().and_then(|d| d.max_time())) {
        Some(t) if t > 0.0 => t,
        _ => bail!("need --t-max (or data with observations) to build the time grid"),
    };
    if args.grid_points < 2 {
        bail!("--grid-points must be at least 2");
    }

    // Uniform grid plus the observation times, so curve steps are crisp.
    let mut grid: Vec<f64> = (0..args.grid_points)
        .map(|i| t_max * i as f64 / (args.grid_points - 1) as f64)
        .collect();
    if let Some(d) = &data {
        grid.extend(d.distinct_times().iter().copied().filter(|&t| t <= t_max));
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();

    let empty = SurvivalDataset::new(vec![])?;
    let post = PosteriorLaplace::new(&spec, data.as_ref().unwrap_or(&empty));
    let mut ntr = Vec::new();
    for g in Group::BOTH {
        let survival: Result<Vec<f64>, _> =
            grid.iter().map(|&t| post.posterior_survival(g, t)).collect();
        ntr.push(CurveOut { group: g.label(), times: grid.clone(), survival: survival? });
    }
    let km = data
        .as_ref()
        .map(|d| Group::BOTH.iter().map(|&g| d.kaplan_meier(g)).collect())
        .unwrap_or_default();

    let output = SurvivalOutput {
        generated_at: timestamp(),
        config: SurvivalConfigOut {
            data: args.data.as_ref().map(|p| p.display().to_string()),
            prior: PriorConfig::from(&spec),
            grid_points: args.grid_points,
            t_max,
        },
        ntr,
        km,
    };
    write_json(&args.out.join("curves.json"), &output)?;
    println!("wrote {}", args.out.join("curves.json").display());
    Ok(())
}

// --- compare -----------------------------------------------------------

#[derive(Serialize)]
struct TailOut {
    c: f64,
    prob_abs_exceeds: f64,
    prob_sq_exceeds: f64,
}

#[derive(Serialize)]
struct DensityOut {
    horizon: f64,
    moments_used: u32,
    moments: Vec<f64>,
    mesh: Vec<f64>,
    p: Vec<f64>,
    hpd: HpdRegion,
    km_point_estimate: f64,
    tail: Vec<TailOut>,
}

#[derive(Serialize)]
struct HpdOut {
    horizon: f64,
    level: f64,
    intervals: Vec<[f64; 2]>,
    mass: f64,
    km_point_estimate: f64,
}

#[derive(Serialize)]
struct CompareConfigOut {
    data: String,
    prior: PriorConfig,
    functional: String,
    horizons: Vec<f64>,
    mesh_points: usize,
    mesh_lo: Option<f64>,
    mesh_hi: Option<f64>,
    moments: u32,
    adaptive: bool,
    level: f64,
    refine: usize,
    tail_c: Vec<f64>,
}

#[derive(Serialize)]
struct CompareOutput {
    generated_at: u64,
    config: CompareConfigOut,
    results: Vec<DensityOut>,
}

#[derive(Serialize)]
struct CompareHpdOutput {
    generated_at: u64,
    config: CompareConfigOut,
    results: Vec<HpdOut>,
}

fn cmd_compare(args: CompareArgs) -> anyhow::Result<()> {
    let spec = args.prior.resolve()?;
    let data = load_data(&args.data)?;
    let mut horizons = args.horizons.clone().unwrap_or_default();
    for q in args.quantile_horizons.clone().unwrap_or_default() {
        horizons.push(data.pooled_quantile(q)?);
    }
    if horizons.is_empty() {
        bail!("need --horizons or --quantile-horizons");
    }
    let mesh = match (args.mesh_lo, args.mesh_hi) {
        (Some(lo), Some(hi)) => Some(Mesh::equidistant(args.mesh_points, lo, hi)?),
        (None, None) => None,
        _ => bail!("--mesh-lo and --mesh-hi must be given together"),
    };
    let functional = match args.functional {
        FunctionalArg::Mean => Functional::MeanDifference,
        FunctionalArg::Variance => Functional::VarianceDifference,
    };
    let tail_c = args.tail_c.clone().unwrap_or_default();

    let post = PosteriorLaplace::new(&spec, &data);
    let km: Vec<KmCurve> = Group::BOTH.iter().map(|&g| data.kaplan_meier(g)).collect();
    // Horizons are independent problems; order is preserved by collect.
    let per_horizon: Vec<(DensityOut, HpdOut)> = horizons
        .par_iter()
        .map(|&t| -> anyhow::Result<(DensityOut, HpdOut)> {
            let mut cfg = Algorithm1Config::new(functional, t);
            cfg.mesh = mesh.clone();
            cfg.mesh_points = args.mesh_points;
            cfg.moments = if args.adaptive {
                MomentsChoice::Adaptive { sup_tol: 0.1, cap: 10 }
            } else {
                MomentsChoice::Fixed(args.moments)
            };
            cfg.level = args.level;
            cfg.refine = args.refine;
            let out = algorithm1(&post, &cfg)?;

            let km_point = match functional {
                Functional::MeanDifference => {
                    km[0].restricted_mean(t) - km[1].restricted_mean(t)
                }
                Functional::VarianceDifference => {
                    let var = |curve: &KmCurve| {
                        curve.restricted_moment(t, 2) - curve.restricted_mean(t).powi(2)
                    };
                    var(&km[0]) - var(&km[1])
                }
                Functional::Custom => unreachable!(),
            };
            let tail = tail_c
                .iter()
                .map(|&c| TailOut {
                    c,
                    prob_abs_exceeds: out.density.tail_mass_abs(c),
                    prob_sq_exceeds: out.density.tail_mass_abs(c.max(0.0).sqrt()),
                })
                .collect();
            let hpd_out = HpdOut {
                horizon: t,
                level: out.hpd.level,
                intervals: out.hpd.intervals.clone(),
                mass: out.hpd.mass,
                km_point_estimate: km_point,
            };
            let density_out = DensityOut {
                horizon: t,
                moments_used: out.n_used,
                moments: out.moments.values,
                mesh: out.density.mesh.points().to_vec(),
                p: out.density.p,
                hpd: out.hpd,
                km_point_estimate: km_point,
                tail,
            };
            Ok((density_out, hpd_out))
        })
        .collect::<anyhow::Result<_>>()?;
    let (results, hpd_results): (Vec<_>, Vec<_>) = per_horizon.into_iter().unzip();

    let config = CompareConfigOut {
        data: args.data.display().to_string(),
        prior: PriorConfig::from(&spec),
        functional: format!("{:?}", args.functional).to_lowercase(),
        horizons,
        mesh_points: args.mesh_points,
        mesh_lo: args.mesh_lo,
        mesh_hi: args.mesh_hi,
        moments: args.moments,
        adaptive: args.adaptive,
        level: args.level,
        refine: args.refine,
        tail_c,
    };
    let stamp = timestamp();
    write_json(
        &args.out.join("densities.json"),
        &CompareOutput { generated_at: stamp, config: clone_config(&config), results },
    )?;
    write_json(
        &args.out.join("hpd.json"),
        &CompareHpdOutput { generated_at: stamp, config, results: hpd_results },
    )?;
    println!(
        "wrote {} and {}",
        args.out.join("densities.json").display(),
        args.out.join("hpd.json").display()
    );
    Ok(())
}

fn clone_config(c: &CompareConfigOut) -> CompareConfigOut {
    CompareConfigOut {
        data: c.data.clone(),
        prior: c.prior.clone(),
        functional: c.functional.clone(),
        horizons: c.horizons.clone(),
        mesh_points: c.mesh_points,
        mesh_lo: c.mesh_lo,
        mesh_hi: c.mesh_hi,
        moments: c.moments,
        adaptive: c.adaptive,
        level: c.level,
        refine: c.refine,
        tail_c: c.tail_c.clone(),
    }
}

// --- simulate ----------------------------------------------------------

#[derive(Serialize)]
struct TruthOutput {
    generated_at: u64,
    config: ScenarioSpec,
    censoring_rates: [f64; 2],
    horizons: Vec<f64>,
    restricted_means: Vec<[f64; 2]>,
    restricted_variances: Vec<[f64; 2]>,
    quantiles_99: [f64; 2],
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading scenario {}", args.scenario.display()))?;
    let mut scenario: ScenarioSpec = serde_json::from_str(&text)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let generated = generate(&scenario)?;

    fs::create_dir_all(&args.out)?;
    let data_path = args.out.join("data.csv");
    let mut file = fs::File::create(&data_path)?;
    generated.dataset.write_csv(&mut file)?;

    let oracle = TruthOracle::from_scenario(&scenario);
    let mut restricted_means = Vec::new();
    let mut restricted_variances = Vec::new();
    for &t in &scenario.horizons {
        restricted_means.push([
            oracle.restricted_moment(Group::One, t, 1)?,
            oracle.restricted_moment(Group::Two, t, 1)?,
        ]);
        restricted_variances.push([
            oracle.restricted_variance(Group::One, t)?,
            oracle.restricted_variance(Group::Two, t)?,
        ]);
    }
    let truth = TruthOutput {
        generated_at: timestamp(),
        censoring_rates: generated.censoring_rates,
        horizons: scenario.horizons.clone(),
        restricted_means,
        restricted_variances,
        quantiles_99: [
            oracle.quantile(Group::One, 0.99)?,
            oracle.quantile(Group::Two, 0.99)?,
        ],
        config: scenario,
    };
    write_json(&args.out.join("truth.json"), &truth)?;
    println!(
        "wrote {} and {}",
        data_path.display(),
        args.out.join("truth.json").display()
    );
    Ok(())
}

// --- km ----------------------------------------------------------------

#[derive(Serialize)]
struct KmOutput {
    generated_at: u64,
    data: String,
    group_sizes: [u64; 2],
    curves: Vec<KmCurve>,
}

fn cmd_km(args: KmArgs) -> anyhow::Result<()> {
    let data = load_data(&args.data)?;
    let output = KmOutput {
        generated_at: timestamp(),
        data: args.data.display().to_string(),
        group_sizes: data.group_sizes(),
        curves: Group::BOTH.iter().map(|&g| data.kaplan_meier(g)).collect(),
    };
    write_json(&args.out.join("km.json"), &output)?;
    println!("wrote {}", args.out.join("km.json").display());
    Ok(())
}
