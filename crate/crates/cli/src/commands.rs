//! Subcommands. Every command writes its outputs plus `manifest.toml` into
//! the `--out` directory.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use maxstable::analytics::{compare_scenarios, madogram, posterior_predict, variance_ratio};
use maxstable::basis::{KernelBasis, KnotGrid, Point};
use maxstable::dataset::{plain_sites, Dataset};
use maxstable::gp::{sample_field, GpHyper};
use maxstable::mcmc::{chain_seed, run_chain, PosteriorSamples};
use maxstable::process::{extremal_curve, gevp_extremal_coeff, simulate, Dependence, ProcessModel, SpatialGevFields};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::FitSettings;
use crate::error::{AppError, Result};
use crate::harness::{quantile, run_design, summarize_design, DesignSpec, StudyOptions};
use crate::io::{self, fmt_f64};
use crate::manifest::Manifest;

#[derive(Parser, Debug)]
#[command(name = "maxstable", version, about = "Hierarchical max-stable models for spatial extremes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate block maxima from the process, or a single-year raster gallery.
    Simulate(SimulateArgs),
    /// Pairwise madogram extremal-coefficient estimates.
    Madogram(MadogramArgs),
    /// Extremal-coefficient curves for knot grids of given spacing.
    Extremal(ExtremalArgs),
    /// Fit the model by MCMC.
    Fit(FitArgs),
    /// Posterior-predictive draws at new sites.
    Predict(PredictArgs),
    /// Compare two fits: scenario changes and/or variance ratios.
    Compare(CompareArgs),
    /// Run a simulation-study design.
    Simstudy(SimstudyArgs),
    /// Repeat the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the data-generating settings of a simulation design (1-5).
    #[arg(long)]
    pub design: Option<u8>,
    /// Single-year raster with a knot at every grid point, one per α.
    #[arg(long)]
    pub gallery: bool,
    /// Side of the square site grid (gallery default 50, otherwise 7).
    #[arg(long)]
    pub grid_m: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub years: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lower: f64,
    #[arg(long, default_value_t = 6.0)]
    pub upper: f64,
    /// Knot grid side; defaults to the site grid.
    #[arg(long)]
    pub knots_m: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    /// Variance of a GP location field (0 keeps μ constant).
    #[arg(long, default_value_t = 0.0)]
    pub mu_variance: f64,
    #[arg(long, default_value_t = 2.0)]
    pub mu_range: f64,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long)]
    pub sites: PathBuf,
    #[arg(long)]
    pub maxima: PathBuf,
}

#[derive(Args, Debug)]
pub struct MadogramArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExtremalArgs {
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 1.25, 2.0])]
    pub spacings: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.5, 0.8])]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 6.0)]
    pub h_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub h_step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub knots: Option<PathBuf>,
    /// Hold α fixed; 1 gives the model without residual dependence.
    #[arg(long)]
    pub alpha_fixed: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Sample store written by `fit`.
    #[arg(long)]
    pub samples: PathBuf,
    /// New sites: site_id,x,y[,covariates].
    #[arg(long)]
    pub sites: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long, requires = "fut")]
    pub hist: Option<PathBuf>,
    #[arg(long, requires = "hist")]
    pub fut: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.5, 0.95])]
    pub q: Vec<f64>,
    /// Full-model store for variance ratios.
    #[arg(long, requires = "indep")]
    pub full: Option<PathBuf>,
    /// Store of the α = 1 fit for variance ratios.
    #[arg(long, requires = "full")]
    pub indep: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimstudyArgs {
    #[arg(long)]
    pub design: u8,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Fit only the grids with these sizes m (m × m knots).
    #[arg(long, value_delimiter = ',')]
    pub grids: Option<Vec<usize>>,
    /// 50 replicates of 25,000 iterations with 10,000 burn-in.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn make_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| AppError::io(p, e))
}

fn finish(out: &Path, argv: &[String], seed: Option<u64>, config: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
    Manifest::new(argv, seed, config, inputs, outputs)?.write(out)?;
    Ok(())
}

/// Parse `argv` (without the program name) and run it.
pub fn run(argv: &[String]) -> Result<()> {
    let mut full = vec!["maxstable".to_string()];
    full.extend_from_slice(argv);
    let cli = Cli::try_parse_from(&full).map_err(|e| AppError::Invalid(e.to_string()))?;
    execute(cli.command, argv)
}

pub fn execute(cmd: Command, argv: &[String]) -> Result<()> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a, argv),
        Command::Madogram(a) => cmd_madogram(a, argv),
        Command::Extremal(a) => cmd_extremal(a, argv),
        Command::Fit(a) => cmd_fit(a, argv),
        Command::Predict(a) => cmd_predict(a, argv),
        Command::Compare(a) => cmd_compare(a, argv),
        Command::Simstudy(a) => cmd_simstudy(a, argv),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

fn cmd_simulate(a: SimulateArgs, argv: &[String]) -> Result<()> {
    make_dir(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let config = format!("{a:?}");
    if a.gallery {
        let m = a.grid_m.unwrap_or(50);
        let alphas = a.alpha.clone().unwrap_or_else(|| vec![0.1, 0.3, 0.5, 0.9]);
        let grid = KnotGrid::regular(m, 1.0, m as f64)?;
        let sites = grid.knots().to_vec();
        let n = sites.len();
        let fields = SpatialGevFields::constant(n, a.mu.unwrap_or(0.0), a.sigma.unwrap_or(1.0), a.xi.unwrap_or(-0.1))?;
        let basis = KernelBasis::new(grid, a.tau.unwrap_or(2.0))?;
        let mut rows = Vec::with_capacity(alphas.len() * n);
        for &alpha in &alphas {
            let model = ProcessModel::new(fields.clone(), basis.clone(), alpha)?;
            let sim = simulate(&mut rng, &model, &sites, 1)?;
            for (s, v) in sites.iter().zip(sim.year(0)) {
                rows.push(vec![fmt_f64(alpha), fmt_f64(s.x), fmt_f64(s.y), fmt_f64(*v)]);
            }
        }
        let p = a.out.join("gallery.csv");
        io::write_table(&p, &["alpha", "x", "y", "value"], rows)?;
        return finish(&a.out, argv, Some(a.seed), &config, &[], &[p]);
    }

    let (data, knots) = if let Some(id) = a.design {
        let d = DesignSpec::new(id)?;
        (d.simulate(&mut rng)?.0, d.gen_knots)
    } else {
        let m = a.grid_m.unwrap_or(7);
        let sites = KnotGrid::regular(m, a.lower, a.upper)?.knots().to_vec();
        let knots = KnotGrid::regular(a.knots_m.unwrap_or(m), a.lower, a.upper)?;
        let n = sites.len();
        let alpha = a.alpha.as_ref().and_then(|v| v.first().copied()).unwrap_or(0.5);
        let mu0 = a.mu.unwrap_or(0.0);
        let mu = if a.mu_variance > 0.0 {
            let h = GpHyper { beta: vec![mu0], delta2: a.mu_variance, rho: a.mu_range, nu: 0.5 };
            sample_field(&mut rng, &sites, &h, &vec![mu0; n])?
        } else {
            vec![mu0; n]
        };
        let fields = SpatialGevFields::new(mu, vec![a.sigma.unwrap_or(1.0).ln(); n], vec![a.xi.unwrap_or(0.2); n])?;
        let model = ProcessModel::new(fields, KernelBasis::new(knots.clone(), a.tau.unwrap_or(1.0))?, alpha)?;
        let sim = simulate(&mut rng, &model, &sites, a.years)?;
        let years: Vec<i64> = (1..=a.years as i64).collect();
        (Dataset::from_year_major(plain_sites(&sites), years, &sim.values)?, knots)
    };
    let (sp, mp, kp) = (a.out.join("sites.csv"), a.out.join("maxima.csv"), a.out.join("knots.csv"));
    io::save_dataset(&data, &sp, &mp)?;
    io::write_knots(&kp, &knots)?;
    finish(&a.out, argv, Some(a.seed), &config, &[], &[sp, mp, kp])
}

fn cmd_madogram(a: MadogramArgs, argv: &[String]) -> Result<()> {
    make_dir(&a.out)?;
    let data = io::load_dataset(&a.data.sites, &a.data.maxima)?;
    let pe = madogram(&data)?;
    let p = a.out.join("madogram.csv");
    io::write_table(
        &p,
        &["site_i", "site_j", "h", "theta_hat", "count"],
        pe.pairs.iter().map(|e| {
            vec![
                data.sites[e.i].id.clone(),
                data.sites[e.j].id.clone(),
                fmt_f64(e.h),
                fmt_f64(e.theta_hat),
                e.count.to_string(),
            ]
        }),
    )?;
    finish(&a.out, argv, None, "", &[a.data.sites, a.data.maxima], &[p])
}

fn cmd_extremal(a: ExtremalArgs, argv: &[String]) -> Result<()> {
    make_dir(&a.out)?;
    if !(a.h_step > 0.0) || !(a.h_max >= 0.0) {
        return Err(AppError::Invalid("h-step must be positive and h-max non-negative".into()));
    }
    let n_h = (a.h_max / a.h_step).round() as usize;
    let hs: Vec<f64> = (0..=n_h).map(|k| k as f64 * a.h_step).collect();
    let mut rows = Vec::new();
    for &d in &a.spacings {
        let grid = fig_lattice(d, a.tau, a.h_max)?;
        let basis = KernelBasis::new(grid, a.tau)?;
        for &alpha in &a.alpha {
            let dep = Dependence::new(basis.clone(), alpha)?;
            let curve = extremal_curve(&dep, Point::new(0.0, 0.0), &hs)?;
            for (h, th) in hs.iter().zip(curve) {
                rows.push(vec![fmt_f64(d), fmt_f64(alpha), fmt_f64(*h), fmt_f64(th)]);
            }
        }
    }
    for h in &hs {
        let th = gevp_extremal_coeff(Point::new(0.0, 0.0), Point::new(0.0, *h), a.tau)?;
        rows.push(vec!["gevp".into(), "0".into(), fmt_f64(*h), fmt_f64(th)]);
    }
    let p = a.out.join("extremal.csv");
    io::write_table(&p, &["spacing", "alpha", "h", "theta"], rows)?;
    finish(&a.out, argv, None, &format!("{a:?}"), &[], &[p])
}

/// Square lattice of spacing d with a knot at the origin, extending 10τ
/// beyond the segment from (0, 0) to (0, h_max).
pub fn fig_lattice(d: f64, tau: f64, h_max: f64) -> Result<KnotGrid> {
    let pad = 10.0 * tau;
    Ok(KnotGrid::lattice(d, (-pad, pad), (-pad, h_max + pad))?)
}

fn cmd_fit(a: FitArgs, argv: &[String]) -> Result<()> {
    make_dir(&a.out)?;
    let data = io::load_dataset(&a.data.sites, &a.data.maxima)?;
    let mut settings = match &a.config {
        Some(p) => FitSettings::load(p)?,
        None => FitSettings::default(),
    };
    if let Some(k) = &a.knots {
        settings.knots.file = Some(k.clone());
    }
    if let Some(v) = a.alpha_fixed {
        settings.alpha_fixed = Some(v);
    }
    if let Some(v) = a.iters {
        settings.n_iters = v;
    }
    if let Some(v) = a.burn_in {
        settings.burn_in = v;
    }
    if let Some(v) = a.chains {
        settings.n_chains = v;
    }
    if let Some(v) = a.thin {
        settings.thin = v;
    }
    if let Some(v) = a.seed {
        settings.seed = v;
    }
    let base = a.config.as_ref().and_then(|p| p.parent()).map(Path::to_path_buf).unwrap_or_default();
    let knots = settings.knot_grid(&data.locations(), &base)?;
    let spec = settings.model_spec(knots)?;
    let config = settings.fit_config()?;
    let runs: Vec<_> = (0..config.n_chains).into_par_iter().map(|k| run_chain(&data, &spec, &config, k)).collect();
    let samples = PosteriorSamples::pool(runs.into_iter().collect::<maxstable::Result<Vec<_>>>()?)?;
    io::write_samples(&a.out, &samples)?;
    let mut inputs = vec![a.data.sites.clone(), a.data.maxima.clone()];
    inputs.extend(a.config.clone());
    inputs.extend(settings.knots.file.clone());
    let outputs: Vec<PathBuf> = io::store_files().iter().map(|f| a.out.join(f)).collect();
    finish(&a.out, argv, Some(settings.seed), &settings.canonical(), &inputs, &outputs)
}

fn cmd_predict(a: PredictArgs, argv: &[String]) -> Result<()> {
    make_dir(&a.out)?;
    let samples = io::read_samples(&a.samples)?;
    let new_sites = io::read_sites(&a.sites)?;
    let mut draws = Vec::new();
    let mut summary = Vec::new();
    for (k, s) in new_sites.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(chain_seed(a.seed, k));
        let pred = posterior_predict(&samples, s.location, &s.covariates, &mut rng)?;
        for d in 0..pred.params.len() {
            for (t, y) in samples.years.iter().enumerate() {
                draws.push(vec![s.id.clone(), d.to_string(), y.to_string(), fmt_f64(pred.draw(d)[t])]);
            }
        }
        let mut v = pred.values.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        let mean = |f: fn(&maxstable::GevParams) -> f64| pred.params.iter().map(f).sum::<f64>() / pred.params.len() as f64;
        summary.push(vec![
            s.id.clone(),
            fmt_f64(mean(|p| p.mu)),
            fmt_f64(mean(|p| p.sigma)),
            fmt_f64(mean(|p| p.xi)),
            fmt_f64(quantile(&v, 0.05)),
            fmt_f64(quantile(&v, 0.5)),
            fmt_f64(quantile(&v, 0.95)),
        ]);
    }
    let p1 = a.out.join("predictive.csv");
    io::write_table(&p1, &["site_id", "draw", "year", "value"], draws)?;
    let p2 = a.out.join("predictive_summary.csv");
    io::write_table(&p2, &["site_id", "mu_mean", "sigma_mean", "xi_mean", "q05", "q50", "q95"], summary)?;
    let mut inputs: Vec<PathBuf> = io::store_files().iter().map(|f| a.samples.join(f)).collect();
    inputs.push(a.sites.clone());
    finish(&a.out, argv, Some(a.seed), "", &inputs, &[p1, p2])
}

fn cmd_compare(a: CompareArgs, argv: &[String]) -> Result<()> {
    if a.hist.is_none() && a.full.is_none() {
        return Err(AppError::Invalid("give --hist/--fut and/or --full/--indep".into()));
    }
    make_dir(&a.out)?;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    if let (Some(h), Some(f)) = (&a.hist, &a.fut) {
        let (hs, fs) = (io::read_samples(h)?, io::read_samples(f)?);
        let sum = compare_scenarios(&hs, &fs, &a.q)?;
        let mut rows = Vec::new();
        for s in &sum.sites {
            let names = ["mu", "sigma", "xi"].map(String::from);
            let qnames: Vec<String> = a.q.iter().map(|q| format!("q{}", fmt_f64(*q))).collect();
            for (name, c) in names.iter().zip(&s.params).chain(qnames.iter().zip(&s.quantiles)) {
                rows.push(vec![
                    s.site_id.clone(),
                    name.clone(),
                    fmt_f64(c.hist_mean),
                    fmt_f64(c.hist_sd),
                    fmt_f64(c.fut_mean),
                    fmt_f64(c.fut_sd),
                    fmt_f64(c.change_mean),
                    fmt_f64(c.change_sd),
                    fmt_f64(c.p_increase),
                ]);
            }
        }
        let p = a.out.join("scenario_summary.csv");
        io::write_table(
            &p,
            &["site_id", "quantity", "hist_mean", "hist_sd", "fut_mean", "fut_sd", "change_mean", "change_sd", "p_increase"],
            rows,
        )?;
        outputs.push(p);
        inputs.extend(io::store_files().iter().flat_map(|x| [h.join(x), f.join(x)]));
    }
    if let (Some(fu), Some(ind)) = (&a.full, &a.indep) {
        let (fs, is) = (io::read_samples(fu)?, io::read_samples(ind)?);
        let r = variance_ratio(&fs, &is)?;
        let p = a.out.join("variance_ratio.csv");
        io::write_table(
            &p,
            &["site_id", "mu", "sigma", "xi"],
            fs.sites.iter().zip(&r).map(|(s, r)| vec![s.id.clone(), fmt_f64(r[0]), fmt_f64(r[1]), fmt_f64(r[2])]),
        )?;
        outputs.push(p);
        inputs.extend(io::store_files().iter().flat_map(|x| [fu.join(x), ind.join(x)]));
    }
    finish(&a.out, argv, None, "", &inputs, &outputs)
}

fn cmd_simstudy(a: SimstudyArgs, argv: &[String]) -> Result<()> {
    make_dir(&a.out)?;
    let mut spec = DesignSpec::new(a.design)?;
    if let Some(g) = &a.grids {
        spec = spec.with_grids(g)?;
    }
    let mut opts = if a.paper_scale { StudyOptions::paper() } else { StudyOptions::desk() };
    opts.seed = a.seed;
    if let Some(v) = a.replicates {
        opts.replicates = v;
    }
    if let Some(v) = a.iters {
        opts.n_iters = v;
    }
    if let Some(v) = a.burn_in {
        opts.burn_in = v;
    }
    if let Some(v) = a.thin {
        opts.thin = v;
    }
    if let Some(v) = a.chains {
        opts.n_chains = v;
    }
    if opts.burn_in >= opts.n_iters {
        return Err(AppError::Invalid("burn-in must be below the iteration count".into()));
    }
    let rows = run_design(&spec, &opts);
    let p1 = a.out.join("results.csv");
    io::write_table(
        &p1,
        &["design", "replicate", "grid_m", "spacing", "n_knots", "param", "rmse", "coverage", "status"],
        rows.iter().map(|r| {
            vec![
                r.design.to_string(),
                r.replicate.to_string(),
                r.grid_m.to_string(),
                fmt_f64(r.spacing),
                r.n_knots.to_string(),
                r.param.to_string(),
                fmt_f64(r.rmse),
                fmt_f64(r.coverage),
                if r.ok { "ok" } else { "failed" }.to_string(),
            ]
        }),
    )?;
    let p2 = a.out.join("summary.csv");
    io::write_table(
        &p2,
        &["design", "grid_m", "spacing", "n_knots", "param", "mean_rmse", "coverage", "replicates", "failed"],
        summarize_design(&rows).iter().map(|r| {
            vec![
                r.design.to_string(),
                r.grid_m.to_string(),
                fmt_f64(r.spacing),
                r.n_knots.to_string(),
                r.param.to_string(),
                fmt_f64(r.mean_rmse),
                fmt_f64(r.coverage),
                r.replicates.to_string(),
                r.failed.to_string(),
            ]
        }),
    )?;
    finish(&a.out, argv, Some(a.seed), &format!("{opts:?}"), &[], &[p1, p2])
}

fn cmd_rerun(a: RerunArgs) -> Result<()> {
    let m = Manifest::read(&a.manifest)?;
    let changed = m.changed_inputs();
    if !changed.is_empty() {
        return Err(AppError::Invalid(format!("inputs changed since the recorded run: {}", changed.join(", "))));
    }
    let args = m.replay_args(a.out.as_deref());
    if args.first().map(String::as_str) == Some("rerun") {
        return Err(AppError::Invalid("a manifest cannot replay another rerun".into()));
    }
    run(&args)
}
