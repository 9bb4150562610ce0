//! Multi-resolution check: fine-pixel areas treated as true areas and
//! re-registered at coarser pixel sizes.

use std::io::{self, Write};

use rand::Rng;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::grid::register_dimensionless;
use crate::inference::same_pixel_area;
use crate::io::{fmt_f64, Metadata};
use crate::rng::{stream_rng, STREAM_VALIDATE_BASE};

/// Two-sample chi-square distance between histograms on a shared support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    /// Occupied bins minus one.
    pub dof: usize,
    pub p_value: f64,
}

/// Two-sample chi-square statistic for count histograms indexed by bin.
///
/// `sum_k (K1 r_k - K2 s_k)^2 / (r_k + s_k)` with `K1 = sqrt(S/R)`,
/// `K2 = sqrt(R/S)`; bins empty in both are skipped.
pub fn chi_square_distance(r: &[u64], s: &[u64]) -> ChiSquare {
    let len = r.len().max(s.len());
    let at = |h: &[u64], k: usize| h.get(k).copied().unwrap_or(0) as f64;
    let rt: f64 = r.iter().sum::<u64>() as f64;
    let st: f64 = s.iter().sum::<u64>() as f64;
    if rt == 0.0 || st == 0.0 {
        return ChiSquare {
            statistic: f64::NAN,
            dof: 0,
            p_value: f64::NAN,
        };
    }
    let k1 = (st / rt).sqrt();
    let k2 = (rt / st).sqrt();
    let mut statistic = 0.0;
    let mut bins = 0usize;
    for k in 0..len {
        let (rk, sk) = (at(r, k), at(s, k));
        if rk + sk > 0.0 {
            statistic += (k1 * rk - k2 * sk).powi(2) / (rk + sk);
            bins += 1;
        }
    }
    let dof = bins.saturating_sub(1);
    let p_value = if dof == 0 || statistic <= 0.0 {
        1.0
    } else {
        gamma_ur(dof as f64 / 2.0, statistic / 2.0)
    };
    ChiSquare {
        statistic,
        dof,
        p_value,
    }
}

/// Predicted registrations at one target pixel area.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetValidation {
    pub px: f64,
    /// Registered pixel count of each base particle, in input order.
    pub b_hat: Vec<u64>,
    /// Histogram of `b_hat` indexed by `b`.
    pub predicted: Vec<u64>,
    /// Histogram of observed counts at this pixel area, when supplied.
    pub observed: Option<Vec<u64>>,
    /// Distance between predicted and observed over `b >= 1`.
    pub chi_square: Option<ChiSquare>,
}

impl TargetValidation {
    pub fn undetected(&self) -> u64 {
        self.predicted.first().copied().unwrap_or(0)
    }

    /// `b` values inside the predicted range that never occur.
    pub fn gaps(&self) -> Vec<u32> {
        self.predicted
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, c)| **c == 0)
            .map(|(b, _)| b as u32)
            .collect()
    }

    pub fn write_histogram<W: Write>(&self, w: &mut W, meta: &Metadata) -> io::Result<()> {
        meta.write_to(w)?;
        writeln!(w, "b_pixels,b_um2,predicted,observed")?;
        let len = self
            .predicted
            .len()
            .max(self.observed.as_ref().map_or(0, Vec::len));
        for b in 0..len {
            let pred = self.predicted.get(b).copied().unwrap_or(0);
            let obs = match &self.observed {
                Some(o) => o.get(b).copied().unwrap_or(0).to_string(),
                None => String::new(),
            };
            writeln!(w, "{b},{},{pred},{obs}", fmt_f64(b as f64 * self.px))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub px_min: f64,
    pub n_base: usize,
    pub targets: Vec<TargetValidation>,
}

impl ValidationReport {
    pub fn write_summary<W: Write>(&self, w: &mut W, meta: &Metadata) -> io::Result<()> {
        meta.write_to(w)?;
        writeln!(w, "px_um2,n_base,n_undetected,n_observed,chi_square,dof,p_value")?;
        for t in &self.targets {
            let n_obs = t
                .observed
                .as_ref()
                .map(|o| o.iter().sum::<u64>().to_string())
                .unwrap_or_default();
            let (chi, dof, p) = match t.chi_square {
                Some(c) => (fmt_f64(c.statistic), c.dof.to_string(), fmt_f64(c.p_value)),
                None => Default::default(),
            };
            writeln!(
                w,
                "{},{},{},{n_obs},{chi},{dof},{p}",
                fmt_f64(t.px),
                self.n_base,
                t.undetected()
            )?;
        }
        Ok(())
    }
}

/// Histogram of pixel counts indexed by `b`.
pub(crate) fn histogram(bs: &[u64]) -> Vec<u64> {
    let len = bs.iter().max().map_or(0, |m| *m as usize + 1);
    let mut h = vec![0u64; len];
    for &b in bs {
        h[b as usize] += 1;
    }
    h
}

/// Registers each base area (um^2, measured at `px_min`) once at every target
/// pixel area with a uniformly random offset.
///
/// `observed` pairs a target pixel area with registered pixel counts measured
/// there; matching targets get a chi-square distance over `b >= 1`.
pub fn validate_multiresolution(
    base_areas: &[f64],
    px_min: f64,
    px_targets: &[f64],
    observed: &[(f64, Vec<u64>)],
    seed: u64,
) -> Result<ValidationReport> {
    if base_areas.is_empty() {
        return Err(Error::Validation("base data is empty".into()));
    }
    if !(px_min.is_finite() && px_min > 0.0) {
        return Err(Error::invalid(format!("base pixel area must be positive, got {px_min}")));
    }
    if let Some(a) = base_areas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return Err(Error::Validation(format!("base area {a} is not positive")));
    }
    if let Some(px) = px_targets
        .iter()
        .find(|p| !(p.is_finite() && **p >= px_min) && !same_pixel_area(**p, px_min))
    {
        return Err(Error::invalid(format!(
            "target pixel area {px} is below the base pixel area {px_min}"
        )));
    }

    let targets = px_targets
        .iter()
        .enumerate()
        .map(|(k, &px)| {
            let mut rng = stream_rng(seed, STREAM_VALIDATE_BASE + k as u64);
            let b_hat = base_areas
                .iter()
                .map(|&a| {
                    let (fu, fv): (f64, f64) = (rng.random(), rng.random());
                    register_dimensionless(a / px, fu, fv)
                })
                .collect::<Result<Vec<u64>>>()?;
            let predicted = histogram(&b_hat);
            let observed = observed
                .iter()
                .find(|(p, _)| same_pixel_area(*p, px))
                .map(|(_, bs)| histogram(bs));
            let chi_square = observed.as_ref().map(|o| {
                let skip = |h: &[u64]| h.get(1..).unwrap_or(&[]).to_vec();
                chi_square_distance(&skip(&predicted), &skip(o))
            });
            Ok(TargetValidation {
                px,
                b_hat,
                predicted,
                observed,
                chi_square,
            })
        })
        .collect::<Result<_>>()?;

    Ok(ValidationReport {
        px_min,
        n_base: base_areas.len(),
        targets,
    })
}
