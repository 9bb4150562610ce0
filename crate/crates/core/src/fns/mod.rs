//! Probability that every characteristic particle of a sample goes undetected.
//!
//! For a pixel area `px`, `q(px) = P(B = 0 | px)` integrates the miss
//! probability against the size distribution; a sample with `n` particles is a
//! false negative with probability `q^n`, averaged over the per-sample count
//! distribution.

mod validate;

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::PosteriorDraws;
use crate::io::{data_lines, fmt_f64, parse_f64, Metadata};
use crate::likelihood::LikelihoodTable;
use crate::sizedist::LogTParams;

pub use validate::{
    chi_square_distance, validate_multiresolution, ChiSquare, TargetValidation, ValidationReport,
};

/// Central credible level of the reported bands.
pub const BAND_LEVEL: f64 = 0.90;

const PMF_TOL: f64 = 1e-9;

/// Distribution of the number of characteristic particles in a positive sample.
#[derive(Clone, Debug, PartialEq)]
pub struct CountDistribution {
    pmf: BTreeMap<u32, f64>,
}

impl CountDistribution {
    pub fn new(pmf: BTreeMap<u32, f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::invalid("count distribution is empty"));
        }
        if pmf.contains_key(&0) {
            return Err(Error::invalid("count distribution must start at n = 1"));
        }
        if pmf.values().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("count probabilities must be nonnegative"));
        }
        let total: f64 = pmf.values().sum();
        if (total - 1.0).abs() > PMF_TOL {
            return Err(Error::invalid(format!("count probabilities sum to {total}, not 1")));
        }
        Ok(Self { pmf })
    }

    /// Empirical distribution from per-sample frequencies; `n = 0` entries are
    /// ignored.
    pub fn from_frequencies(freq: &BTreeMap<u32, u64>) -> Result<Self> {
        let total: u64 = freq.iter().filter(|(n, _)| **n > 0).map(|(_, c)| c).sum();
        if total == 0 {
            return Err(Error::Validation("no sample has a characteristic particle".into()));
        }
        Self::new(
            freq.iter()
                .filter(|(n, c)| **n > 0 && **c > 0)
                .map(|(n, c)| (*n, *c as f64 / total as f64))
                .collect(),
        )
    }

    /// Empirical distribution of per-sample particle counts.
    pub fn from_sample_counts(counts: &[u32]) -> Result<Self> {
        let mut freq = BTreeMap::new();
        for &n in counts {
            *freq.entry(n).or_insert(0u64) += 1;
        }
        Self::from_frequencies(&freq)
    }

    /// Geometric law on `n >= 1` with the given untruncated mean, cut at
    /// `n_max` and renormalized.
    pub fn geometric(mean: f64, n_max: u32) -> Result<Self> {
        if !(mean >= 1.0 && mean.is_finite()) || n_max == 0 {
            return Err(Error::invalid(format!("geometric counts need mean >= 1, got {mean}")));
        }
        let r = 1.0 / mean;
        let raw: Vec<f64> = (1..=n_max).map(|n| r * (1.0 - r).powi(n as i32 - 1)).collect();
        let total: f64 = raw.iter().sum();
        Self::new((1..=n_max).zip(raw).map(|(n, p)| (n, p / total)).collect())
    }

    pub fn pmf(&self) -> &BTreeMap<u32, f64> {
        &self.pmf
    }

    pub fn prob(&self, n: u32) -> f64 {
        self.pmf.get(&n).copied().unwrap_or(0.0)
    }

    pub fn n_max(&self) -> u32 {
        *self.pmf.keys().next_back().expect("nonempty")
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().map(|(n, p)| *n as f64 * p).sum()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W, meta: &Metadata) -> io::Result<()> {
        meta.write_to(w)?;
        writeln!(w, "n,probability")?;
        for (n, p) in &self.pmf {
            writeln!(w, "{n},{}", fmt_f64(*p))?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let lines = data_lines(path)?;
        match lines.first() {
            Some(h) if h.trim() == "n,probability" => {}
            _ => return Err(Error::format(path, "expected header n,probability")),
        }
        let mut pmf = BTreeMap::new();
        for line in &lines[1..] {
            let (n, p) = line
                .split_once(',')
                .ok_or_else(|| Error::format(path, format!("bad row {line:?}")))?;
            let n: u32 = n
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("bad count {n:?}")))?;
            if pmf.insert(n, parse_f64(p, path, "probability")?).is_some() {
                return Err(Error::format(path, format!("count {n} listed twice")));
            }
        }
        Self::new(pmf)
    }
}

/// `sum_n q^n P(n)` over the support of `counts`.
pub fn fns_probability(q: f64, counts: &CountDistribution) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("q must lie in [0, 1], got {q}")));
    }
    Ok(fns_unchecked(q, counts))
}

fn fns_unchecked(q: f64, counts: &CountDistribution) -> f64 {
    // Horner from n_max down to 1
    let mut acc = 0.0;
    for n in (1..=counts.n_max()).rev() {
        acc = q * (acc + counts.prob(n));
    }
    acc.clamp(0.0, 1.0)
}

/// Piecewise-linear `P(B = 0 | A / px)` prepared for integration against a
/// size distribution.
///
/// Integrating by parts, `q = sum_seg (-slope) int_seg F(u px) du + p_end F(a_end px)`
/// with `F` the size CDF. Every weight is nonnegative and `F(u px)` grows with
/// `px`, so `q` is exactly nondecreasing in the pixel area.
#[derive(Clone, Debug)]
pub struct MissProfile {
    /// `(a_lo, a_hi, -slope)` for segments with nonzero slope.
    segments: Vec<(f64, f64, f64)>,
    a_end: f64,
    p_end: f64,
}

impl MissProfile {
    /// Profile of `table`; fails unless its last row is a certain hit.
    pub fn from_table(table: &LikelihoodTable) -> Result<Self> {
        let knots = table.p_b0_knots();
        let (a_end, p_end) = *knots.last().expect("table has rows");
        if p_end > 0.0 {
            return Err(Error::InsufficientCoverage(format!(
                "P(B=0) = {p_end} at the table edge A = {a_end} px; extend a_max past 2 pi"
            )));
        }
        Ok(Self::from_knots(&knots))
    }

    fn from_knots(knots: &[(f64, f64)]) -> Self {
        let segments = knots
            .windows(2)
            .filter_map(|w| {
                let ((a0, p0), (a1, p1)) = (w[0], w[1]);
                let drop = ((p0 - p1) / (a1 - a0)).max(0.0);
                (drop > 0.0).then_some((a0, a1, drop))
            })
            .collect();
        let (a_end, p_end) = *knots.last().expect("nonempty knots");
        Self {
            segments,
            a_end,
            p_end,
        }
    }

    /// `P(B = 0 | px)` for areas drawn from `params`.
    pub fn miss_probability(&self, params: &LogTParams, px: f64) -> f64 {
        let cdf = |u: f64| params.cdf(u * px);
        let mut q = self.p_end * cdf(self.a_end);
        // segments are contiguous in the transition band, so reuse endpoints
        let mut cached: Option<(f64, f64)> = None;
        for &(lo, hi, w) in &self.segments {
            let f_lo = match cached {
                Some((a, f)) if a == lo => f,
                _ => cdf(lo),
            };
            let f_hi = cdf(hi);
            let f_mid = cdf(0.5 * (lo + hi));
            q += w * (hi - lo) * (f_lo + 4.0 * f_mid + f_hi) / 6.0;
            cached = Some((hi, f_hi));
        }
        q.clamp(0.0, 1.0)
    }
}

/// `P(B = 0 | px)` for one parameter point at the table's pixel size.
pub fn p_b0_for_params(params: &LogTParams, table: &LikelihoodTable) -> Result<f64> {
    Ok(MissProfile::from_table(table)?.miss_probability(params, table.grid().pixel_area()))
}

/// Posterior mean with a central band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandEstimate {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    /// Value at the posterior-mean parameters.
    pub point: f64,
}

impl BandEstimate {
    fn from_values(values: &[f64], point: f64) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let tail = 0.5 * (1.0 - BAND_LEVEL);
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            lo: crate::inference::quantile(&sorted, tail),
            hi: crate::inference::quantile(&sorted, 1.0 - tail),
            point,
        }
    }
}

/// `P(B = 0 | px)` integrated over the posterior, at the table's pixel size.
pub fn p_b0_marginal(draws: &PosteriorDraws, table: &LikelihoodTable) -> Result<BandEstimate> {
    if draws.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    let profile = MissProfile::from_table(table)?;
    let px = table.grid().pixel_area();
    let values: Vec<f64> = draws
        .draws
        .par_iter()
        .map(|p| profile.miss_probability(p, px))
        .collect();
    let point = profile.miss_probability(&draws.mean(), px);
    Ok(BandEstimate::from_values(&values, point))
}

/// False-negative-sample probability over a range of pixel areas.
#[derive(Clone, Debug, PartialEq)]
pub struct FnsCurve {
    pub px_values: Vec<f64>,
    pub p_b0: Vec<BandEstimate>,
    pub p_fns: Vec<BandEstimate>,
    /// Posterior draws used.
    pub n_draws: usize,
}

impl FnsCurve {
    pub fn write_csv<W: Write>(&self, w: &mut W, meta: &Metadata) -> io::Result<()> {
        meta.write_to(w)?;
        writeln!(w, "px_um2,p_b0_mean,p_fns_mean,p_fns_lo90,p_fns_hi90")?;
        for ((px, b0), f) in self.px_values.iter().zip(&self.p_b0).zip(&self.p_fns) {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_f64(*px),
                fmt_f64(b0.mean),
                fmt_f64(f.mean),
                fmt_f64(f.lo),
                fmt_f64(f.hi)
            )?;
        }
        Ok(())
    }

    /// Point estimates at the posterior-mean parameters and the `P(B=0)` band.
    pub fn write_point_estimates<W: Write>(&self, w: &mut W, meta: &Metadata) -> io::Result<()> {
        meta.write_to(w)?;
        writeln!(w, "px_um2,p_b0_point,p_fns_point,p_b0_lo90,p_b0_hi90")?;
        for ((px, b0), f) in self.px_values.iter().zip(&self.p_b0).zip(&self.p_fns) {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_f64(*px),
                fmt_f64(b0.point),
                fmt_f64(f.point),
                fmt_f64(b0.lo),
                fmt_f64(b0.hi)
            )?;
        }
        Ok(())
    }
}

/// Evaluates the false-negative-sample curve.
///
/// `unit_table` is a detection table of any pixel size; only its `A / px`
/// profile is used, so one table serves every pixel area. At most `max_draws`
/// evenly thinned posterior draws are integrated.
pub fn fns_curve(
    draws: &PosteriorDraws,
    counts: &CountDistribution,
    px_list: &[f64],
    unit_table: &LikelihoodTable,
    max_draws: usize,
) -> Result<FnsCurve> {
    if px_list.is_empty() {
        return Err(Error::invalid("pixel-area list is empty"));
    }
    if let Some(bad) = px_list.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::invalid(format!("pixel area must be positive, got {bad}")));
    }
    if draws.is_empty() || max_draws == 0 {
        return Err(Error::invalid("no posterior draws"));
    }
    let profile = MissProfile::from_table(unit_table)?;
    let subset = draws.thinned(max_draws);
    // q[d][k] for draw d at pixel area k
    let q: Vec<Vec<f64>> = subset
        .par_iter()
        .map(|p| px_list.iter().map(|&px| profile.miss_probability(p, px)).collect())
        .collect();
    let center = draws.mean();

    let mut p_b0 = Vec::with_capacity(px_list.len());
    let mut p_fns = Vec::with_capacity(px_list.len());
    for (k, &px) in px_list.iter().enumerate() {
        let qs: Vec<f64> = q.iter().map(|row| row[k]).collect();
        let fs: Vec<f64> = qs.iter().map(|&v| fns_unchecked(v, counts)).collect();
        let q_point = profile.miss_probability(&center, px);
        p_b0.push(BandEstimate::from_values(&qs, q_point));
        p_fns.push(BandEstimate::from_values(&fs, fns_unchecked(q_point, counts)));
    }
    Ok(FnsCurve {
        px_values: px_list.to_vec(),
        p_b0,
        p_fns,
        n_draws: subset.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::likelihood::build_table;

    fn pmf(entries: &[(u32, f64)]) -> CountDistribution {
        CountDistribution::new(entries.iter().copied().collect()).unwrap()
    }

    #[test]
    fn closed_form_cases() {
        let c = pmf(&[(1, 0.5), (2, 0.25), (3, 0.25)]);
        assert!((fns_probability(0.5, &c).unwrap() - 0.34375).abs() < 1e-15);
        assert_eq!(fns_probability(0.0, &c).unwrap(), 0.0);
        assert!((fns_probability(1.0, &c).unwrap() - 1.0).abs() < 1e-15);
        assert!((fns_probability(0.3, &pmf(&[(1, 1.0)])).unwrap() - 0.3).abs() < 1e-15);
        assert!(fns_probability(1.5, &c).is_err());
    }

    #[test]
    fn count_distribution_validation() {
        assert!(CountDistribution::new([(0, 1.0)].into_iter().collect()).is_err());
        assert!(CountDistribution::new([(1, 0.5)].into_iter().collect()).is_err());
        let c = CountDistribution::from_sample_counts(&[1, 2, 1]).unwrap();
        assert!((c.prob(1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.prob(2) - 1.0 / 3.0).abs() < 1e-15);
        let g = CountDistribution::geometric(3.0, 200).unwrap();
        assert!((g.mean() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn miss_profile_limits() {
        let t = build_table(GridSpec::unit(), 12.0, 600, 2000, 3).unwrap();
        let profile = MissProfile::from_table(&t).unwrap();
        let small = LogTParams::new((0.2f64).ln(), 0.05, 30.0).unwrap();
        let large = LogTParams::new((50.0f64).ln(), 0.05, 30.0).unwrap();
        assert!(profile.miss_probability(&small, 1.0) > 1.0 - 1e-12);
        assert!(profile.miss_probability(&large, 1.0) < 1e-12);
    }

    #[test]
    fn miss_profile_matches_direct_quadrature() {
        let t = build_table(GridSpec::unit(), 12.0, 600, 2000, 3).unwrap();
        let profile = MissProfile::from_table(&t).unwrap();
        let p = LogTParams::new(1.53, 1.17, 76.0).unwrap();
        let px = 0.16;
        // midpoint rule on a fine grid of A / px
        let n = 200_000;
        let h = 12.0 / n as f64;
        let direct: f64 = (0..n)
            .map(|k| {
                let u = (k as f64 + 0.5) * h;
                t.p_b0(u).unwrap() * p.density(u * px).unwrap() * px * h
            })
            .sum();
        let q = profile.miss_probability(&p, px);
        assert!((q - direct).abs() < 1e-7, "{q} vs {direct}");
    }

    #[test]
    fn table_without_certain_hit_is_rejected() {
        let t = build_table(GridSpec::unit(), 4.0, 100, 200, 1).unwrap();
        assert!(matches!(
            MissProfile::from_table(&t),
            Err(Error::InsufficientCoverage(_))
        ));
    }
}
