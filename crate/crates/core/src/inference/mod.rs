//! Bayesian fit of the log-t size law to registered areas.
//!
//! The observation model integrates the detection likelihood over the size
//! distribution ([`marginal`]). Particles with `B = 0` never show up in
//! casework exports, so by default the likelihood of each record is conditioned
//! on detection: `P(b | theta, b >= 1) = P(b | theta) / (1 - P(0 | theta))`.

mod diagnostics;
mod gof;
mod marginal;
mod mcmc;

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{data_lines, fmt_f64, parse_f64, Metadata};
use crate::grid::GridSpec;
use crate::likelihood::{build_table_on_grid, fitting_a_grid, LikelihoodTable, OffsetScheme};
use crate::rng::{stream_rng, STREAM_CHAIN_BASE};
use crate::sizedist::LogTParams;

pub use diagnostics::{effective_sample_size, split_rhat};
pub(crate) use gof::quantile;
pub use gof::{goodness_of_fit, r_squared, summarize_fit, FitSummary, HistogramBin, LogBins, ParamSummary, R2_BINS};
pub use marginal::{marginal_b_pmf, MarginalPmf, MAX_UNCOVERED_MASS};

pub(crate) use marginal::MarginalModel;
use mcmc::{run_chain, Point};

/// Potential-scale-reduction threshold for a converged fit.
pub const RHAT_THRESHOLD: f64 = 1.05;

pub const PARAM_NAMES: [&str; 3] = ["mu", "sigma", "nu"];

/// One registered particle.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedRecord {
    pub sample_id: String,
    /// Registered area `B` in um^2.
    pub b_area: f64,
    pub pixel_area: f64,
}

impl ObservedRecord {
    pub fn b_pixels(&self) -> u64 {
        (self.b_area / self.pixel_area).round() as u64
    }
}

/// Registered areas of detected particles.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedDataset {
    records: Vec<ObservedRecord>,
}

impl ObservedDataset {
    pub fn new(records: Vec<ObservedRecord>) -> Result<Self> {
        for (k, r) in records.iter().enumerate() {
            if !(r.pixel_area.is_finite() && r.pixel_area > 0.0) {
                return Err(Error::Validation(format!(
                    "record {k}: pixel area {} is not positive",
                    r.pixel_area
                )));
            }
            if !(r.b_area.is_finite() && r.b_area >= 0.0) {
                return Err(Error::Validation(format!(
                    "record {k}: area {} is not a nonnegative number",
                    r.b_area
                )));
            }
            if r.b_pixels() < 1 {
                return Err(Error::Validation(format!(
                    "record {k}: area {} um^2 is below half a pixel ({} um^2)",
                    r.b_area, r.pixel_area
                )));
            }
        }
        Ok(Self { records })
    }

    /// Dataset with one synthetic sample id per record.
    pub fn from_b_pixels(b_pixels: &[u64], pixel_area: f64) -> Result<Self> {
        Self::new(
            b_pixels
                .iter()
                .enumerate()
                .map(|(k, &b)| ObservedRecord {
                    sample_id: format!("P{k:06}"),
                    b_area: b as f64 * pixel_area,
                    pixel_area,
                })
                .collect(),
        )
    }

    pub fn records(&self) -> &[ObservedRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Common pixel area, or `None` when records disagree or the set is empty.
    pub fn pixel_area(&self) -> Option<f64> {
        let first = self.records.first()?.pixel_area;
        self.records
            .iter()
            .all(|r| same_pixel_area(r.pixel_area, first))
            .then_some(first)
    }

    pub fn b_counts(&self) -> Result<BCounts> {
        let px = self
            .pixel_area()
            .ok_or_else(|| Error::Validation("records must share one pixel area".into()))?;
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.b_pixels() as u32).or_insert(0u64) += 1;
        }
        Ok(BCounts {
            pixel_area: px,
            zero_count: 0,
            counts,
        })
    }
}

pub(crate) fn same_pixel_area(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Histogram of registered pixel counts; `zero_count` is only meaningful for
/// untruncated (simulated) data.
#[derive(Clone, Debug, PartialEq)]
pub struct BCounts {
    pub pixel_area: f64,
    pub zero_count: u64,
    pub counts: BTreeMap<u32, u64>,
}

impl BCounts {
    pub fn from_pixels(b_pixels: &[u64], pixel_area: f64) -> Self {
        let mut counts = BTreeMap::new();
        let mut zero_count = 0;
        for &b in b_pixels {
            if b == 0 {
                zero_count += 1;
            } else {
                *counts.entry(b as u32).or_insert(0u64) += 1;
            }
        }
        Self {
            pixel_area,
            zero_count,
            counts,
        }
    }

    pub fn detected(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn max_b(&self) -> u32 {
        self.counts.keys().next_back().copied().unwrap_or(0)
    }

    pub fn min_b(&self) -> u32 {
        self.counts.keys().next().copied().unwrap_or(0)
    }
}

/// Weakly informative priors on the sampled coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Priors {
    pub mu_mean: f64,
    pub mu_sd: f64,
    pub log_sigma_mean: f64,
    pub log_sigma_sd: f64,
    pub log_nu_mean: f64,
    pub log_nu_sd: f64,
    /// `nu` is restricted to values above this bound.
    pub nu_min: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            mu_mean: 0.0,
            mu_sd: 10.0,
            log_sigma_mean: 0.0,
            log_sigma_sd: 1.5,
            log_nu_mean: 30f64.ln(),
            log_nu_sd: 1.0,
            nu_min: 1.0,
        }
    }
}

impl Priors {
    fn log_density(&self, x: &Point) -> f64 {
        if x[2] <= self.nu_min.ln() {
            return f64::NEG_INFINITY;
        }
        let sq = |v: f64, m: f64, s: f64| -0.5 * ((v - m) / s).powi(2);
        sq(x[0], self.mu_mean, self.mu_sd)
            + sq(x[1], self.log_sigma_mean, self.log_sigma_sd)
            + sq(x[2], self.log_nu_mean, self.log_nu_sd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub chains: usize,
    /// Retained draws per chain.
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Condition each record on `b >= 1`.
    pub truncate: bool,
    pub priors: Priors,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 2000,
            warmup: 1000,
            seed: 1,
            truncate: true,
            priors: Priors::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    /// Split potential-scale reduction for `mu`, `sigma`, `nu`.
    pub rhat: [f64; 3],
    pub ess: [f64; 3],
    pub acceptance: Vec<f64>,
}

impl Diagnostics {
    pub fn converged(&self) -> bool {
        self.rhat.iter().all(|r| *r < RHAT_THRESHOLD)
    }
}

/// Posterior draws merged across chains, in chain order.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub draws: Vec<LogTParams>,
    pub chain_ids: Vec<usize>,
    pub iterations: Vec<usize>,
    pub diagnostics: Diagnostics,
}

impl PosteriorDraws {
    /// A degenerate posterior holding a single parameter point.
    pub fn point(params: LogTParams) -> Self {
        Self {
            draws: vec![params],
            chain_ids: vec![0],
            iterations: vec![0],
            diagnostics: Diagnostics {
                rhat: [1.0; 3],
                ess: [1.0; 3],
                acceptance: vec![],
            },
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.converged()
    }

    pub fn n_chains(&self) -> usize {
        let mut ids = self.chain_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Values of one parameter (`0 = mu`, `1 = sigma`, `2 = nu`).
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|p| param(p, k)).collect()
    }

    /// Posterior mean of each parameter.
    pub fn mean(&self) -> LogTParams {
        let m = |k| self.column(k).iter().sum::<f64>() / self.len() as f64;
        LogTParams {
            mu: m(0),
            sigma: m(1),
            nu: m(2),
        }
    }

    /// At most `max` draws, evenly spaced.
    pub fn thinned(&self, max: usize) -> Vec<LogTParams> {
        let n = self.len();
        if n <= max {
            return self.draws.clone();
        }
        (0..max).map(|k| self.draws[k * n / max]).collect()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W, meta: &Metadata) -> io::Result<()> {
        meta.write_to(w)?;
        writeln!(w, "chain,iteration,mu,sigma,nu")?;
        for ((p, c), i) in self.draws.iter().zip(&self.chain_ids).zip(&self.iterations) {
            writeln!(
                w,
                "{c},{i},{},{},{}",
                fmt_f64(p.mu),
                fmt_f64(p.sigma),
                fmt_f64(p.nu)
            )?;
        }
        Ok(())
    }

    /// Reads a posterior file and recomputes the diagnostics.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let lines = data_lines(path)?;
        let bad = |msg: String| Error::format(path, msg);
        match lines.first() {
            Some(h) if h.trim() == "chain,iteration,mu,sigma,nu" => {}
            _ => return Err(bad("expected header chain,iteration,mu,sigma,nu".into())),
        }
        let mut draws = Vec::new();
        let mut chain_ids = Vec::new();
        let mut iterations = Vec::new();
        for (k, line) in lines[1..].iter().enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("row {k} has {} fields", f.len())));
            }
            chain_ids.push(f[0].trim().parse().map_err(|_| bad(format!("row {k}: bad chain")))?);
            iterations.push(f[1].trim().parse().map_err(|_| bad(format!("row {k}: bad iteration")))?);
            draws.push(LogTParams::new(
                parse_f64(f[2], path, "mu")?,
                parse_f64(f[3], path, "sigma")?,
                parse_f64(f[4], path, "nu")?,
            )?);
        }
        if draws.is_empty() {
            return Err(bad("posterior file has no draws".into()));
        }
        let diagnostics = diagnose(&draws, &chain_ids, vec![]);
        Ok(Self {
            draws,
            chain_ids,
            iterations,
            diagnostics,
        })
    }
}

fn param(p: &LogTParams, k: usize) -> f64 {
    match k {
        0 => p.mu,
        1 => p.sigma,
        _ => p.nu,
    }
}

fn diagnose(draws: &[LogTParams], chain_ids: &[usize], acceptance: Vec<f64>) -> Diagnostics {
    let mut by_chain: BTreeMap<usize, Vec<LogTParams>> = BTreeMap::new();
    for (p, c) in draws.iter().zip(chain_ids) {
        by_chain.entry(*c).or_default().push(*p);
    }
    let per_param = |k: usize| -> Vec<Vec<f64>> {
        by_chain
            .values()
            .map(|d| d.iter().map(|p| param(p, k)).collect())
            .collect()
    };
    Diagnostics {
        rhat: std::array::from_fn(|k| split_rhat(&per_param(k))),
        ess: std::array::from_fn(|k| effective_sample_size(&per_param(k))),
        acceptance,
    }
}

/// Smallest table range, in pixel units, used by [`fitting_table`].
pub const FIT_A_MAX_FLOOR: f64 = 2000.0;

/// Detection table for fitting at pixel area `px`: fine steps through the
/// detection threshold, then spacing matched to the spread of `B`. The range
/// defaults to `max(2000, 1.25 * max_b)` pixels.
pub fn fitting_table(
    px: f64,
    max_b: u32,
    a_max: Option<f64>,
    offsets_per_a: usize,
    seed: u64,
) -> Result<LikelihoodTable> {
    let a_max = a_max.unwrap_or((1.25 * max_b as f64).max(FIT_A_MAX_FLOOR));
    build_table_on_grid(
        GridSpec::new(px)?,
        fitting_a_grid(a_max)?,
        offsets_per_a,
        seed,
        OffsetScheme::QuasiLattice,
    )
}

/// Fits the log-t parameters to a dataset of detected particles.
///
/// Non-convergence is not an error: inspect [`PosteriorDraws::converged`].
pub fn fit(
    data: &ObservedDataset,
    table: &LikelihoodTable,
    chains: usize,
    iterations: usize,
    warmup: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    if data.is_empty() {
        return Err(Error::Validation("cannot fit an empty dataset".into()));
    }
    let config = FitConfig {
        chains,
        iterations,
        warmup,
        seed,
        ..FitConfig::default()
    };
    fit_counts(&data.b_counts()?, table, &config)
}

/// Fits from a histogram of pixel counts. With `truncate = false` the zero
/// count enters the likelihood as observed `b = 0` events.
pub fn fit_counts(
    counts: &BCounts,
    table: &LikelihoodTable,
    config: &FitConfig,
) -> Result<PosteriorDraws> {
    if counts.detected() + counts.zero_count == 0 {
        return Err(Error::Validation("cannot fit an empty dataset".into()));
    }
    if config.truncate && counts.detected() == 0 {
        return Err(Error::Validation("no detected particles to fit".into()));
    }
    if config.chains == 0 || config.iterations < 4 {
        return Err(Error::invalid("need at least one chain and four iterations"));
    }
    if !same_pixel_area(counts.pixel_area, table.grid().pixel_area()) {
        return Err(Error::Validation(format!(
            "data pixel area {} differs from table pixel area {}",
            counts.pixel_area,
            table.grid().pixel_area()
        )));
    }

    let model = MarginalModel::new(table);
    let values: Vec<u32> = counts.counts.keys().copied().collect();
    let weights: Vec<f64> = counts.counts.values().map(|&c| c as f64).collect();
    let n_detected = counts.detected() as f64;
    let zeros = counts.zero_count as f64;
    let priors = config.priors;
    let truncate = config.truncate;

    let log_post = |x: &Point| -> f64 {
        let lp = priors.log_density(x);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let params = LogTParams {
            mu: x[0],
            sigma: x[1].exp(),
            nu: x[2].exp(),
        };
        if !(params.sigma > 0.0 && params.nu.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let pmf = model.evaluate(&params);
        let mut ll = 0.0;
        for (b, w) in values.iter().zip(&weights) {
            let p = pmf.prob(*b);
            if !(p > 0.0) {
                return f64::NEG_INFINITY;
            }
            ll += w * p.ln();
        }
        let p0 = pmf.p_zero();
        if truncate {
            if !(p0 < 1.0) {
                return f64::NEG_INFINITY;
            }
            ll -= n_detected * (-p0).ln_1p();
        } else if zeros > 0.0 {
            if !(p0 > 0.0) {
                return f64::NEG_INFINITY;
            }
            ll += zeros * p0.ln();
        }
        lp + ll
    };

    // crude moments of log(B) seed the dispersed starting points
    let logs: Vec<(f64, f64)> = counts
        .counts
        .iter()
        .map(|(b, c)| ((*b as f64 * counts.pixel_area).ln(), *c as f64))
        .collect();
    let n: f64 = logs.iter().map(|(_, c)| c).sum::<f64>().max(1.0);
    let m0 = logs.iter().map(|(l, c)| l * c).sum::<f64>() / n;
    let s0 = (logs.iter().map(|(l, c)| c * (l - m0).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(0.1);

    let outputs: Vec<_> = (0..config.chains)
        .into_par_iter()
        .map(|chain| {
            use rand::Rng;
            let mut rng = stream_rng(config.seed, STREAM_CHAIN_BASE + chain as u64);
            let mut tries = 0;
            let start = loop {
                let x = [
                    m0 + 0.5 * (rng.random::<f64>() - 0.5),
                    s0.ln() + 0.4 * (rng.random::<f64>() - 0.5),
                    4f64.ln() + rng.random::<f64>() * (150f64 / 4.0).ln(),
                ];
                tries += 1;
                if log_post(&x).is_finite() || tries > 100 {
                    break x;
                }
            };
            let out = run_chain(
                start,
                [0.02, 0.02, 0.3],
                &log_post,
                config.warmup,
                config.iterations,
                &mut rng,
            );
            (chain, out)
        })
        .collect();

    let mut draws = Vec::new();
    let mut chain_ids = Vec::new();
    let mut iterations = Vec::new();
    let mut acceptance = Vec::new();
    for (chain, out) in outputs {
        acceptance.push(out.acceptance);
        for (i, x) in out.samples.iter().enumerate() {
            draws.push(LogTParams {
                mu: x[0],
                sigma: x[1].exp(),
                nu: x[2].exp(),
            });
            chain_ids.push(chain);
            iterations.push(i);
        }
    }
    let diagnostics = diagnose(&draws, &chain_ids, acceptance);
    Ok(PosteriorDraws {
        draws,
        chain_ids,
        iterations,
        diagnostics,
    })
}
