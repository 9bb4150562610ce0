//! Posterior summaries and the binned explained-variance statistic.

use std::io::{self, Write};

use super::{BCounts, MarginalModel, ObservedDataset, PosteriorDraws, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, Metadata};
use crate::likelihood::LikelihoodTable;

/// Number of log-spaced bins used for R².
pub const R2_BINS: usize = 25;

/// Posterior draws used for the predicted pmf.
const PREDICTIVE_DRAWS: usize = 200;

/// Log-spaced binning of pixel counts over `[lo, hi]`.
///
/// Integer `b` falls in bin `floor(n * ln(b / lo) / ln((hi + 1) / lo))`; bins
/// too narrow to hold an integer stay empty and are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct LogBins {
    /// Inclusive integer ranges, one per non-empty bin.
    pub ranges: Vec<(u32, u32)>,
}

impl LogBins {
    pub fn new(lo: u32, hi: u32, n: usize) -> Result<Self> {
        if lo == 0 || hi < lo || n == 0 {
            return Err(Error::invalid(format!("bad bin range [{lo}, {hi}] with {n} bins")));
        }
        let span = ((hi as f64 + 1.0) / lo as f64).ln();
        let index = |b: u32| (((b as f64 / lo as f64).ln() / span * n as f64) as usize).min(n - 1);
        let mut ranges: Vec<(u32, u32)> = Vec::new();
        let mut current = index(lo);
        let mut start = lo;
        for b in lo + 1..=hi {
            let k = index(b);
            if k != current {
                ranges.push((start, b - 1));
                start = b;
                current = k;
            }
        }
        ranges.push((start, hi));
        Ok(Self { ranges })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramBin {
    pub b_lo: u32,
    pub b_hi: u32,
    pub observed: f64,
    pub predicted: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamSummary {
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
}

impl ParamSummary {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean,
            sd: var.sqrt(),
            q05: quantile(&sorted, 0.05),
            q95: quantile(&sorted, 0.95),
        }
    }
}

/// Linear-interpolated quantile of sorted values.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    /// `mu`, `sigma`, `nu`.
    pub params: [ParamSummary; 3],
    pub r_squared: f64,
    pub histogram: Vec<HistogramBin>,
    pub n_draws: usize,
    pub n_chains: usize,
    pub rhat: [f64; 3],
    pub ess: [f64; 3],
    pub converged: bool,
    pub truncated: bool,
}

impl FitSummary {
    /// Key-value summary, one `key = value` per line.
    pub fn write_to<W: Write>(&self, w: &mut W, meta: &Metadata) -> io::Result<()> {
        meta.write_to(w)?;
        for (name, s) in PARAM_NAMES.iter().zip(&self.params) {
            writeln!(w, "{name}_mean = {}", fmt_f64(s.mean))?;
            writeln!(w, "{name}_sd = {}", fmt_f64(s.sd))?;
            writeln!(w, "{name}_q05 = {}", fmt_f64(s.q05))?;
            writeln!(w, "{name}_q95 = {}", fmt_f64(s.q95))?;
        }
        for (k, name) in PARAM_NAMES.iter().enumerate() {
            writeln!(w, "{name}_rhat = {}", fmt_f64(self.rhat[k]))?;
            writeln!(w, "{name}_ess = {}", fmt_f64(self.ess[k]))?;
        }
        writeln!(w, "r_squared = {}", fmt_f64(self.r_squared))?;
        writeln!(w, "r_squared_bins = {}", self.histogram.len())?;
        writeln!(w, "draws = {}", self.n_draws)?;
        writeln!(w, "chains = {}", self.n_chains)?;
        writeln!(w, "converged = {}", self.converged)?;
        writeln!(w, "truncated = {}", self.truncated)?;
        Ok(())
    }

    pub fn write_histogram<W: Write>(&self, w: &mut W, meta: &Metadata) -> io::Result<()> {
        meta.write_to(w)?;
        writeln!(w, "b_lo,b_hi,observed,predicted")?;
        for h in &self.histogram {
            writeln!(
                w,
                "{},{},{},{}",
                h.b_lo,
                h.b_hi,
                fmt_f64(h.observed),
                fmt_f64(h.predicted)
            )?;
        }
        Ok(())
    }
}

/// `1 - SS_res / SS_tot`.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> f64 {
    assert_eq!(observed.len(), predicted.len());
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let ss_tot: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
    let ss_res: f64 = observed.iter().zip(predicted).map(|(o, p)| (o - p).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ss_res / ss_tot
}

/// Posterior summary plus R² between the observed histogram of `b` and the
/// posterior-predictive pmf (conditioned on `b >= 1`, restricted to the data
/// range), both aggregated to [`R2_BINS`] log-spaced bins.
pub fn goodness_of_fit(
    draws: &PosteriorDraws,
    data: &ObservedDataset,
    table: &LikelihoodTable,
) -> Result<FitSummary> {
    summarize_fit(draws, &data.b_counts()?, table, true)
}

/// [`goodness_of_fit`] on a count histogram; `truncated` is recorded only.
pub fn summarize_fit(
    draws: &PosteriorDraws,
    counts: &BCounts,
    table: &LikelihoodTable,
    truncated: bool,
) -> Result<FitSummary> {
    if draws.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    if counts.detected() == 0 {
        return Err(Error::Validation("no detected particles".into()));
    }
    let bins = LogBins::new(counts.min_b(), counts.max_b(), R2_BINS)?;
    let model = MarginalModel::new(table);
    let subset = draws.thinned(PREDICTIVE_DRAWS);

    let mut predicted = vec![0.0; bins.len()];
    for params in &subset {
        let pmf = model.evaluate(params);
        let masses: Vec<f64> = bins.ranges.iter().map(|(lo, hi)| pmf.range_mass(*lo, *hi)).collect();
        let total: f64 = masses.iter().sum();
        if total > 0.0 {
            for (p, m) in predicted.iter_mut().zip(&masses) {
                *p += m / total;
            }
        }
    }
    let n = counts.detected() as f64;
    let scale = n / subset.len() as f64;
    predicted.iter_mut().for_each(|p| *p *= scale);

    let observed: Vec<f64> = bins
        .ranges
        .iter()
        .map(|(lo, hi)| counts.counts.range(lo..=hi).map(|(_, c)| *c as f64).sum())
        .collect();

    let histogram = bins
        .ranges
        .iter()
        .zip(observed.iter().zip(&predicted))
        .map(|((lo, hi), (o, p))| HistogramBin {
            b_lo: *lo,
            b_hi: *hi,
            observed: *o,
            predicted: *p,
        })
        .collect();

    Ok(FitSummary {
        params: std::array::from_fn(|k| ParamSummary::of(&draws.column(k))),
        r_squared: r_squared(&observed, &predicted),
        histogram,
        n_draws: draws.len(),
        n_chains: draws.n_chains(),
        rhat: draws.diagnostics.rhat,
        ess: draws.diagnostics.ess,
        converged: draws.converged(),
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_histograms_give_one() {
        let h = [3.0, 10.0, 7.0, 1.0];
        assert_eq!(r_squared(&h, &h), 1.0);
        assert!(r_squared(&h, &[7.0, 1.0, 3.0, 10.0]) < 0.0);
    }

    #[test]
    fn bins_partition_the_range() {
        let bins = LogBins::new(1, 1000, 25).unwrap();
        assert!(bins.len() <= 25);
        assert_eq!(bins.ranges[0].0, 1);
        assert_eq!(bins.ranges.last().unwrap().1, 1000);
        for w in bins.ranges.windows(2) {
            assert_eq!(w[0].1 + 1, w[1].0);
        }
        // small b are not merged into one bin
        assert_eq!(bins.ranges[0], (1, 1));
        assert!(LogBins::new(0, 10, 25).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert!((quantile(&v, 0.05) - 0.2).abs() < 1e-12);
    }
}
