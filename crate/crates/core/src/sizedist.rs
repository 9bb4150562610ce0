//! Log-t distribution of true particle areas.
//!
//! `log A` follows a Student-t law with location `mu`, scale `sigma` and `nu`
//! degrees of freedom; `nu = +inf` is the log-normal limit. Densities are
//! evaluated in log space.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use statrs::function::{beta::beta_reg, erf::erfc, gamma::ln_gamma};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_SIZE_SAMPLES};

/// Parameters `(mu, sigma, nu)` of the log-t distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogTParams {
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
}

impl LogTParams {
    pub fn new(mu: f64, sigma: f64, nu: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::invalid(format!("mu must be finite, got {mu}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        // nu = +inf is allowed (log-normal limit)
        if nu.is_nan() || nu <= 0.0 {
            return Err(Error::invalid(format!("nu must be positive, got {nu}")));
        }
        Ok(Self { mu, sigma, nu })
    }

    /// Standardized log-area `(log a - mu) / sigma`.
    #[inline]
    pub fn z(&self, a: f64) -> f64 {
        (a.ln() - self.mu) / self.sigma
    }

    /// Natural log of the density at area `a > 0`.
    pub fn ln_density(&self, a: f64) -> Result<f64> {
        if !(a > 0.0) {
            return Err(Error::invalid(format!("area must be positive, got {a}")));
        }
        Ok(self.ln_density_unchecked(a))
    }

    #[inline]
    pub(crate) fn ln_density_unchecked(&self, a: f64) -> f64 {
        LnDensity::new(self).eval(a)
    }

    pub fn density(&self, a: f64) -> Result<f64> {
        self.ln_density(a).map(f64::exp)
    }

    /// `P(A <= a)`; zero for `a <= 0`.
    pub fn cdf(&self, a: f64) -> f64 {
        if a <= 0.0 {
            return 0.0;
        }
        if a.is_infinite() {
            return 1.0;
        }
        t_cdf(self.z(a), self.nu)
    }

    /// `P(lo <= A < hi)` computed from whichever tail is more accurate.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let zl = if lo <= 0.0 { f64::NEG_INFINITY } else { self.z(lo) };
        let zh = if hi.is_infinite() { f64::INFINITY } else { self.z(hi) };
        if zl > 0.0 {
            // both in the upper half: difference of survival functions
            t_cdf(-zl, self.nu) - t_cdf(-zh, self.nu)
        } else {
            t_cdf(zh, self.nu) - t_cdf(zl, self.nu)
        }
    }
}

/// Log-density with the parameter-only terms hoisted out, for hot loops.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LnDensity {
    mu: f64,
    inv_sigma: f64,
    half_nu_plus_one: f64,
    inv_nu: f64,
    constant: f64,
    gaussian: bool,
}

impl LnDensity {
    pub(crate) fn new(p: &LogTParams) -> Self {
        let gaussian = p.nu.is_infinite();
        let norm = if gaussian {
            -0.5 * (2.0 * PI).ln()
        } else {
            ln_t_norm(p.nu)
        };
        Self {
            mu: p.mu,
            inv_sigma: 1.0 / p.sigma,
            half_nu_plus_one: 0.5 * (p.nu + 1.0),
            inv_nu: 1.0 / p.nu,
            constant: norm - p.sigma.ln(),
            gaussian,
        }
    }

    #[inline]
    pub(crate) fn eval(&self, a: f64) -> f64 {
        let ln_a = a.ln();
        let z = (ln_a - self.mu) * self.inv_sigma;
        let kernel = if self.gaussian {
            -0.5 * z * z
        } else {
            -self.half_nu_plus_one * (z * z * self.inv_nu).ln_1p()
        };
        self.constant + kernel - ln_a
    }
}

/// `ln Gamma((nu+1)/2) - ln Gamma(nu/2) - ln(nu pi)/2`.
fn ln_t_norm(nu: f64) -> f64 {
    ln_gamma_half_step(0.5 * nu) - 0.5 * (nu * PI).ln()
}

/// `ln Gamma(x + 1/2) - ln Gamma(x)`, stable for large `x`.
pub(crate) fn ln_gamma_half_step(x: f64) -> f64 {
    if x < 20.0 {
        return ln_gamma(x + 0.5) - ln_gamma(x);
    }
    // Stirling series for both terms; the leading parts combine through ln_1p
    let y = x + 0.5;
    let series = |z: f64| {
        let z2 = z * z;
        (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * z2)) / z2) / z2) / z
    };
    x * (0.5 / x).ln_1p() + 0.5 * x.ln() - 0.5 + series(y) - series(x)
}

/// CDF of the standard Student-t (normal when `nu` is infinite).
pub(crate) fn t_cdf(z: f64, nu: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    if nu.is_infinite() || nu > 1e8 {
        return 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    }
    let x = nu / (nu + z * z);
    let tail = 0.5 * beta_reg(0.5 * nu, 0.5, x);
    if z > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Draws `n` areas `exp(mu + sigma T)` with `T ~ t(nu)`.
pub fn logt_sample(params: &LogTParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let mut rng = stream_rng(seed, STREAM_SIZE_SAMPLES);
    let sampler = TSampler::new(params.nu)?;
    Ok((0..n)
        .map(|_| (params.mu + params.sigma * sampler.draw(&mut rng)).exp())
        .collect())
}

/// Standard Student-t sampler that also covers the normal limit.
pub(crate) enum TSampler {
    Normal,
    T(StudentT<f64>),
}

impl TSampler {
    pub(crate) fn new(nu: f64) -> Result<Self> {
        if nu.is_infinite() {
            Ok(TSampler::Normal)
        } else {
            StudentT::new(nu)
                .map(TSampler::T)
                .map_err(|e| Error::invalid(format!("student-t with nu = {nu}: {e}")))
        }
    }

    #[inline]
    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            TSampler::Normal => StandardNormal.sample(rng),
            TSampler::T(t) => t.sample(rng),
        }
    }
}

/// Draws one area from the log-t using the caller's generator.
pub(crate) fn draw_area<R: Rng + ?Sized>(params: &LogTParams, sampler: &TSampler, rng: &mut R) -> f64 {
    (params.mu + params.sigma * sampler.draw(rng)).exp()
}
