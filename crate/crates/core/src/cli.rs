//! Command-line front end.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::fns::{fns_curve, validate_multiresolution, CountDistribution};
use crate::grid::{register, GridSpec, Offset, Particle};
use crate::inference::{fit_counts, fitting_table, summarize_fit, FitConfig, PosteriorDraws};
use crate::ingest::{generate_detected, generate_synthetic, load, LoadOptions};
use crate::io::{write_file, Metadata};
use crate::likelihood::{
    build_table_on_grid, fitting_a_grid, refined_a_grid, uniform_a_grid, LikelihoodTable,
    OffsetScheme, DEFAULT_A_MAX, DEFAULT_A_STEPS,
};
use crate::plot;
use crate::sizedist::LogTParams;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "GSR_FNS_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_CONVERGENCE: i32 = 4;

const DEFAULT_OFFSETS: usize = 20_000;
const DEFAULT_FIT_OFFSETS: usize = 256;

#[derive(Parser, Debug)]
#[command(
    name = "gsr-fns",
    version,
    about = "False-negative detection of gunshot-residue particles on SEM pixel grids"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Random seed; a time-based seed is generated and recorded when omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving output files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Also render SVG plots next to the CSV files.
    #[arg(long, global = true)]
    pub plot: bool,
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Monte-Carlo detection table P(B | A) with mean-curve and slice diagnostics.
    BuildLikelihood(BuildArgs),
    /// Fit the log-t size distribution to a particle export.
    Fit(FitArgs),
    /// False-negative-sample probability over pixel sizes.
    Fns(FnsArgs),
    /// Push fine-resolution areas to coarser pixel sizes.
    Validate(ValidateArgs),
    /// Synthetic particle export plus ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Register a single particle (debugging aid).
    Measure(MeasureArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    /// a_max * k / a_steps
    Uniform,
    /// Uniform plus extra nodes between pi/2 and 2 pi.
    Refined,
    /// Fine up to 12, then widening steps up to a_max (a_steps ignored).
    Fitting,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeArg {
    QuasiLattice,
    PseudoRandom,
}

impl From<SchemeArg> for OffsetScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::QuasiLattice => OffsetScheme::QuasiLattice,
            SchemeArg::PseudoRandom => OffsetScheme::PseudoRandom,
        }
    }
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Pixel area in um^2.
    #[arg(long, default_value_t = 1.0)]
    pub px: f64,
    /// Largest tabulated area, in pixel units.
    #[arg(long, default_value_t = DEFAULT_A_MAX)]
    pub a_max: f64,
    #[arg(long, default_value_t = DEFAULT_A_STEPS)]
    pub a_steps: usize,
    #[arg(long, default_value_t = DEFAULT_OFFSETS)]
    pub offsets_per_a: usize,
    #[arg(long, value_enum, default_value_t = SchemeArg::QuasiLattice)]
    pub scheme: SchemeArg,
    #[arg(long, value_enum, default_value_t = GridKind::Uniform)]
    pub grid: GridKind,
    /// Largest b written to the likelihood-slice file.
    #[arg(long, default_value_t = 8)]
    pub slices: u32,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Particle export (sample_id,class,area_um2,pixel_area_um2).
    #[arg(long)]
    pub data: PathBuf,
    /// Expected pixel area; the data must match it.
    #[arg(long)]
    pub px: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    /// Precomputed table at the data pixel size; built on the fly otherwise.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Table range in pixel units (default: max(2000, 1.25 * largest b)).
    #[arg(long)]
    pub a_max: Option<f64>,
    /// Offsets per area for the on-the-fly table.
    #[arg(long, default_value_t = DEFAULT_FIT_OFFSETS)]
    pub offsets_per_a: usize,
    /// Do not condition the likelihood on detection.
    #[arg(long)]
    pub untruncated: bool,
}

#[derive(Args, Debug)]
pub struct FnsArgs {
    /// Posterior draws written by `fit`.
    #[arg(long)]
    pub posterior: PathBuf,
    /// Count distribution file (n,probability).
    #[arg(long, conflicts_with = "data")]
    pub counts: Option<PathBuf>,
    /// Particle export from which the count distribution is taken.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Pixel areas in um^2 (comma-separated).
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["px_min", "px_max"])]
    pub px: Vec<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub px_min: f64,
    #[arg(long, default_value_t = 0.4)]
    pub px_max: f64,
    #[arg(long, default_value_t = 40)]
    pub px_steps: usize,
    /// Detection table of any pixel size covering A up to at least 2 pi px.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_A_MAX)]
    pub a_max: f64,
    #[arg(long, default_value_t = DEFAULT_A_STEPS)]
    pub a_steps: usize,
    #[arg(long, default_value_t = DEFAULT_OFFSETS)]
    pub offsets_per_a: usize,
    /// Posterior draws integrated (evenly thinned).
    #[arg(long, default_value_t = 1000)]
    pub max_draws: usize,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Particle export measured at the finest pixel size.
    #[arg(long)]
    pub base: PathBuf,
    /// Target pixel areas in um^2 (comma-separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub px_targets: Vec<f64>,
    /// Particle exports measured at target pixel sizes.
    #[arg(long)]
    pub observed: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long)]
    pub sigma: f64,
    /// Degrees of freedom; `inf` gives the log-normal.
    #[arg(long)]
    pub nu: f64,
    #[arg(long)]
    pub px: f64,
    /// Number of samples, each with a particle count from the count law.
    #[arg(long, conflicts_with = "detected")]
    pub samples: Option<usize>,
    /// Simulate single-particle samples until this many are detected.
    #[arg(long)]
    pub detected: Option<usize>,
    /// Count distribution file (n,probability).
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Mean of the geometric count law used without --counts.
    #[arg(long, default_value_t = 2069.0 / 320.0)]
    pub counts_mean: f64,
    #[arg(long, default_value_t = 60)]
    pub counts_max: u32,
}

#[derive(Args, Debug)]
pub struct MeasureArgs {
    /// True particle area in um^2.
    #[arg(long)]
    pub area: f64,
    #[arg(long)]
    pub px: f64,
    /// Center offset along x, in um within one pixel.
    #[arg(long, default_value_t = 0.0)]
    pub u: f64,
    #[arg(long, default_value_t = 0.0)]
    pub v: f64,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    let command_line = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    match dispatch(&cli, &command_line) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) => EXIT_USAGE,
        Error::Validation(_)
        | Error::Format { .. }
        | Error::Csv(_)
        | Error::InsufficientCoverage(_)
        | Error::ZeroNormalizer(_) => EXIT_DATA,
        Error::Io { .. } => EXIT_FAILURE,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

struct Ctx<'a> {
    global: &'a GlobalArgs,
    seed: u64,
    meta: Metadata,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.global.out_dir.join(name)
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.global.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn note(&self, path: &Path) {
        self.log(format!("wrote {}", path.display()));
    }
}

fn dispatch(cli: &Cli, command_line: &str) -> Result<i32> {
    let seed = cli.global.seed.unwrap_or_else(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0)
    });
    let ctx = Ctx {
        global: &cli.global,
        seed,
        meta: Metadata::for_command(command_line).with("seed", seed),
    };
    match &cli.command {
        Command::BuildLikelihood(a) => build_likelihood(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Fns(a) => fns(&ctx, a),
        Command::Validate(a) => validate(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Measure(a) => measure(a),
    }
}

fn build_likelihood(ctx: &Ctx, a: &BuildArgs) -> Result<i32> {
    let grid = GridSpec::new(a.px)?;
    let a_grid = match a.grid {
        GridKind::Uniform => uniform_a_grid(a.a_max, a.a_steps)?,
        GridKind::Refined => refined_a_grid(a.a_max, a.a_steps)?,
        GridKind::Fitting => fitting_a_grid(a.a_max)?,
    };
    ctx.log(format!("building {} rows x {} offsets", a_grid.len(), a.offsets_per_a));
    let table = build_table_on_grid(grid, a_grid, a.offsets_per_a, ctx.seed, a.scheme.into())?;

    let path = ctx.path("likelihood_table.csv");
    write_file(&path, |w| table.write_csv(w, &ctx.meta))?;
    ctx.note(&path);

    let curve = table.mean_curve();
    let path = ctx.path("mean_curve.csv");
    write_file(&path, |w| {
        ctx.meta.write_to(w)?;
        writeln!(w, "a_over_px,mean_b,mean_b_over_a")?;
        for ((a, m), r) in curve.a_values.iter().zip(&curve.mean_b).zip(&curve.mean_b_over_a) {
            writeln!(w, "{a},{m},{r}")?;
        }
        Ok(())
    })?;
    ctx.note(&path);

    let top = a.slices.min(table.max_b());
    let slices = (0..=top).map(|b| table.likelihood_slice(b)).collect::<Result<Vec<_>>>()?;
    let path = ctx.path("likelihood_slices.csv");
    write_file(&path, |w| {
        ctx.meta.write_to(w)?;
        let cols: Vec<String> = (0..=top).map(|b| format!("l_b{b}")).collect();
        writeln!(w, "a_over_px,{}", cols.join(","))?;
        for (i, a) in table.a_grid().iter().enumerate() {
            let vals: Vec<String> = slices.iter().map(|s| s.values[i].to_string()).collect();
            writeln!(w, "{a},{}", vals.join(","))?;
        }
        Ok(())
    })?;
    ctx.note(&path);

    if ctx.global.plot {
        let path = ctx.path("mean_curve.svg");
        plot::write_svg(
            &path,
            &plot::Figure::new("Mean registered area over true area", "A / px", "mean B / A")
                .line(curve.a_values.clone(), curve.mean_b_over_a.clone()),
        )?;
        ctx.note(&path);
        let mut fig = plot::Figure::new("Likelihood L(A | b)", "A / px", "P(B = b | A)");
        for s in &slices {
            fig = fig.line(s.a_values.clone(), s.values.clone());
        }
        let path = ctx.path("likelihood_slices.svg");
        plot::write_svg(&path, &fig)?;
        ctx.note(&path);
    }
    Ok(EXIT_OK)
}

fn load_particles(path: &Path, ctx: &Ctx) -> Result<crate::ingest::LoadedData> {
    let loaded = load(path, LoadOptions::default())?;
    let r = &loaded.report;
    ctx.log(format!(
        "{}: {} rows, {} bad, {} samples ({} positive), {} characteristic particles",
        path.display(),
        r.rows_in,
        r.rows_bad,
        r.samples,
        r.positive_samples,
        r.particles
    ));
    if r.rows_bad > 0 {
        eprintln!(
            "warning: {} malformed row(s) in {} (see ingest_report.txt)",
            r.rows_bad,
            path.display()
        );
    }
    Ok(loaded)
}

fn fit(ctx: &Ctx, a: &FitArgs) -> Result<i32> {
    let loaded = load_particles(&a.data, ctx)?;
    let path = ctx.path("ingest_report.txt");
    write_file(&path, |w| {
        ctx.meta.write_to(w)?;
        loaded.report.write_to(w)
    })?;
    let counts = loaded.dataset.b_counts()?;
    if let Some(px) = a.px {
        if !crate::inference::same_pixel_area(px, counts.pixel_area) {
            return Err(Error::Validation(format!(
                "data pixel area {} differs from --px {px}",
                counts.pixel_area
            )));
        }
    }
    let table = match &a.table {
        Some(p) => LikelihoodTable::read_csv(p)?,
        None => {
            ctx.log("building fitting table");
            fitting_table(
                counts.pixel_area,
                counts.max_b(),
                a.a_max,
                a.offsets_per_a,
                ctx.seed,
            )?
        }
    };
    let config = FitConfig {
        chains: a.chains,
        iterations: a.iterations,
        warmup: a.warmup,
        seed: ctx.seed,
        truncate: !a.untruncated,
        ..FitConfig::default()
    };
    ctx.log(format!(
        "sampling {} chains x ({} warmup + {} draws)",
        a.chains, a.warmup, a.iterations
    ));
    let draws = fit_counts(&counts, &table, &config)?;
    let summary = summarize_fit(&draws, &counts, &table, config.truncate)?;

    let path = ctx.path("posterior.csv");
    write_file(&path, |w| draws.write_csv(w, &ctx.meta))?;
    ctx.note(&path);
    let path = ctx.path("fit_summary.txt");
    write_file(&path, |w| summary.write_to(w, &ctx.meta))?;
    ctx.note(&path);
    let path = ctx.path("fit_histogram.csv");
    write_file(&path, |w| summary.write_histogram(w, &ctx.meta))?;
    ctx.note(&path);
    let path = ctx.path("counts_pmf.csv");
    write_file(&path, |w| loaded.counts.write_csv(w, &ctx.meta))?;
    ctx.note(&path);

    if ctx.global.plot {
        let mids: Vec<f64> = summary
            .histogram
            .iter()
            .map(|h| (h.b_lo as f64 * h.b_hi as f64).sqrt() * counts.pixel_area)
            .collect();
        let fig = plot::Figure::new("Registered areas", "B (um^2)", "particles per bin")
            .log_x()
            .points(mids.clone(), summary.histogram.iter().map(|h| h.observed).collect())
            .line(mids, summary.histogram.iter().map(|h| h.predicted).collect());
        let path = ctx.path("fit_histogram.svg");
        plot::write_svg(&path, &fig)?;
        ctx.note(&path);
    }

    if !draws.converged() {
        eprintln!(
            "error: chains did not converge (split R-hat mu {:.3}, sigma {:.3}, nu {:.3}; threshold {})",
            draws.diagnostics.rhat[0],
            draws.diagnostics.rhat[1],
            draws.diagnostics.rhat[2],
            crate::inference::RHAT_THRESHOLD
        );
        return Ok(EXIT_CONVERGENCE);
    }
    Ok(EXIT_OK)
}

fn px_values(a: &FnsArgs) -> Result<Vec<f64>> {
    if !a.px.is_empty() {
        return Ok(a.px.clone());
    }
    if !(a.px_min > 0.0 && a.px_max >= a.px_min) || a.px_steps == 0 {
        return Err(Error::invalid("need 0 < --px-min <= --px-max and --px-steps >= 1"));
    }
    if a.px_steps == 1 {
        return Ok(vec![a.px_min]);
    }
    let n = a.px_steps - 1;
    Ok((0..=n)
        .map(|k| a.px_min + (a.px_max - a.px_min) * k as f64 / n as f64)
        .collect())
}

fn fns(ctx: &Ctx, a: &FnsArgs) -> Result<i32> {
    let draws = PosteriorDraws::read_csv(&a.posterior)?;
    if !draws.converged() {
        eprintln!("warning: posterior in {} did not converge", a.posterior.display());
    }
    let counts = match (&a.counts, &a.data) {
        (Some(p), _) => CountDistribution::read_csv(p)?,
        (None, Some(p)) => load_particles(p, ctx)?.counts,
        (None, None) => return Err(Error::invalid("pass --counts or --data")),
    };
    let px = px_values(a)?;
    let table = match &a.table {
        Some(p) => LikelihoodTable::read_csv(p)?,
        None => {
            ctx.log("building detection table");
            build_table_on_grid(
                GridSpec::unit(),
                uniform_a_grid(a.a_max, a.a_steps)?,
                a.offsets_per_a,
                ctx.seed,
                OffsetScheme::QuasiLattice,
            )?
        }
    };
    let curve = fns_curve(&draws, &counts, &px, &table, a.max_draws)?;
    let path = ctx.path("fns_curve.csv");
    write_file(&path, |w| curve.write_csv(w, &ctx.meta))?;
    ctx.note(&path);
    let path = ctx.path("fns_point_estimate.csv");
    write_file(&path, |w| curve.write_point_estimates(w, &ctx.meta))?;
    ctx.note(&path);
    if ctx.global.plot {
        let fig = plot::Figure::new("False negative samples", "px (um^2)", "P(FNS | px)")
            .line(px.clone(), curve.p_fns.iter().map(|e| e.mean).collect())
            .dashed(px.clone(), curve.p_fns.iter().map(|e| e.lo).collect())
            .dashed(px, curve.p_fns.iter().map(|e| e.hi).collect());
        let path = ctx.path("fns_curve.svg");
        plot::write_svg(&path, &fig)?;
        ctx.note(&path);
    }
    Ok(EXIT_OK)
}

fn validate(ctx: &Ctx, a: &ValidateArgs) -> Result<i32> {
    let base = load_particles(&a.base, ctx)?;
    let px_min = base
        .dataset
        .pixel_area()
        .ok_or_else(|| Error::Validation("base data mixes pixel areas".into()))?;
    let areas: Vec<f64> = base.dataset.records().iter().map(|r| r.b_area).collect();
    let mut observed = Vec::new();
    for p in &a.observed {
        let d = load_particles(p, ctx)?;
        let px = d
            .dataset
            .pixel_area()
            .ok_or_else(|| Error::Validation(format!("{} mixes pixel areas", p.display())))?;
        observed.push((px, d.dataset.records().iter().map(|r| r.b_pixels()).collect()));
    }
    let report = validate_multiresolution(&areas, px_min, &a.px_targets, &observed, ctx.seed)?;
    let path = ctx.path("validation_summary.csv");
    write_file(&path, |w| report.write_summary(w, &ctx.meta))?;
    ctx.note(&path);
    for t in &report.targets {
        let path = ctx.path(&format!("validation_px_{}.csv", t.px));
        write_file(&path, |w| t.write_histogram(w, &ctx.meta))?;
        ctx.note(&path);
        if ctx.global.plot {
            let b: Vec<f64> = (0..t.predicted.len()).map(|k| k as f64 * t.px).collect();
            let mut fig = plot::Figure::new(
                &format!("Predicted registrations at px = {} um^2", t.px),
                "B (um^2)",
                "particles",
            )
            .bars(b.clone(), t.predicted.iter().map(|c| *c as f64).collect());
            if let Some(o) = &t.observed {
                let bo: Vec<f64> = (0..o.len()).map(|k| k as f64 * t.px).collect();
                fig = fig.points(bo, o.iter().map(|c| *c as f64).collect());
            }
            let path = ctx.path(&format!("validation_px_{}.svg", t.px));
            plot::write_svg(&path, &fig)?;
            ctx.note(&path);
        }
    }
    Ok(EXIT_OK)
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<i32> {
    let params = LogTParams::new(a.mu, a.sigma, a.nu)?;
    let data = match (a.samples, a.detected) {
        (Some(n), _) => {
            let counts = match &a.counts {
                Some(p) => CountDistribution::read_csv(p)?,
                None => CountDistribution::geometric(a.counts_mean, a.counts_max)?,
            };
            generate_synthetic(&params, &counts, n, a.px, ctx.seed)?
        }
        (None, Some(n)) => generate_detected(&params, a.px, n, ctx.seed)?,
        (None, None) => return Err(Error::invalid("pass --samples or --detected")),
    };
    let path = ctx.path("particles.csv");
    write_file(&path, |w| data.write_records(w, &ctx.meta))?;
    ctx.note(&path);
    let path = ctx.path("particles_truth.csv");
    write_file(&path, |w| data.write_sidecar(w, &ctx.meta))?;
    ctx.note(&path);
    let b = &data.bookkeeping;
    ctx.log(format!(
        "{} samples ({} positive), {} particles ({} detected)",
        b.samples, b.positive_samples, b.particles, b.detected_particles
    ));
    Ok(EXIT_OK)
}

fn measure(a: &MeasureArgs) -> Result<i32> {
    let grid = GridSpec::new(a.px)?;
    let particle = Particle::new(a.area)?;
    let offset = Offset::new(a.u, a.v, &grid)?;
    let r = register(&particle, &grid, &offset);
    println!("area_um2 = {}", a.area);
    println!("pixel_area_um2 = {}", a.px);
    println!("radius_um = {}", particle.radius());
    println!("covered_pixels = {}", r.covered_pixels);
    println!("registered_area_um2 = {}", r.area_b);
    Ok(EXIT_OK)
}
