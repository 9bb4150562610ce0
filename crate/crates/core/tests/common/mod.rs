//! Independent reference implementations shared by the integration tests and
//! the acceptance suite. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

/// Same tie slack as the library, in pixel sides.
pub const SLACK: f64 = 1e-12;

/// Pixels fully inside the closed disk of area `area` centered at `(x, y)`
/// (um), found by checking the corners of every pixel near the bounding box.
pub fn oracle_covered(area: f64, px: f64, x: f64, y: f64) -> u64 {
    let side = px.sqrt();
    let r = (area / PI).sqrt();
    let reach = r + SLACK * side;
    let i0 = ((x - r) / side).floor() as i64 - 1;
    let i1 = ((x + r) / side).ceil() as i64 + 1;
    let j0 = ((y - r) / side).floor() as i64 - 1;
    let j1 = ((y + r) / side).ceil() as i64 + 1;
    let inside = |cx: f64, cy: f64| (cx - x).powi(2) + (cy - y).powi(2) <= reach * reach;
    let mut n = 0;
    for i in i0..=i1 {
        for j in j0..=j1 {
            let (xa, xb) = (i as f64 * side, (i + 1) as f64 * side);
            let (ya, yb) = (j as f64 * side, (j + 1) as f64 * side);
            if inside(xa, ya) && inside(xa, yb) && inside(xb, ya) && inside(xb, yb) {
                n += 1;
            }
        }
    }
    n
}

/// Distribution of the pixel count over an `m x m` lattice of offsets at cell
/// midpoints, on the unit grid.
pub fn lattice_distribution(area_ratio: f64, m: usize) -> Vec<f64> {
    let mut counts: Vec<u64> = Vec::new();
    for i in 0..m {
        let x = (i as f64 + 0.5) / m as f64;
        for j in 0..m {
            let y = (j as f64 + 0.5) / m as f64;
            let b = oracle_covered(area_ratio, 1.0, x, y) as usize;
            if b >= counts.len() {
                counts.resize(b + 1, 0);
            }
            counts[b] += 1;
        }
    }
    let total = (m * m) as f64;
    counts.into_iter().map(|c| c as f64 / total).collect()
}

/// Adaptive Simpson quadrature.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Log-t density written directly from its closed form, with `ln_gamma` from
/// a Lanczos approximation kept local to the oracle.
pub fn logt_density(a: f64, mu: f64, sigma: f64, nu: f64) -> f64 {
    let z = (a.ln() - mu) / sigma;
    let ln_c = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * PI).ln();
    (ln_c - (nu + 1.0) / 2.0 * (z * z / nu).ln_1p()).exp() / (sigma * a)
}

pub fn lognormal_density(a: f64, mu: f64, sigma: f64) -> f64 {
    let z = (a.ln() - mu) / sigma;
    (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * sigma * a)
}

/// Lanczos (g = 7, n = 9) log-gamma, accurate to about 1e-15 relative.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut s = C[0];
    for (k, c) in C.iter().enumerate().skip(1) {
        s += c / (x + k as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

/// CDF of the log-t by quadrature in `log A`.
pub fn logt_cdf(a: f64, mu: f64, sigma: f64, nu: f64) -> f64 {
    let f = |t: f64| {
        let x = t.exp();
        logt_density(x, mu, sigma, nu) * x
    };
    let lo = mu - 80.0 * sigma;
    integrate(&f, lo, a.ln(), 1e-12)
}

/// Independent log-t sampler: `T = Z / sqrt(X / nu)` with `X ~ chi^2(nu)`.
pub struct LogTSampler {
    mu: f64,
    sigma: f64,
    chi: Option<ChiSquared<f64>>,
    nu: f64,
}

impl LogTSampler {
    pub fn new(mu: f64, sigma: f64, nu: f64) -> Self {
        Self {
            mu,
            sigma,
            chi: nu.is_finite().then(|| ChiSquared::new(nu).unwrap()),
            nu,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let t = match &self.chi {
            Some(chi) => z / (chi.sample(rng) / self.nu).sqrt(),
            None => z,
        };
        (self.mu + self.sigma * t).exp()
    }
}

pub fn oracle_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Registered pixel counts of `n` particles with log-t areas, each at a
/// uniformly random offset.
pub fn forward_registered(mu: f64, sigma: f64, nu: f64, px: f64, n: usize, seed: u64) -> Vec<u64> {
    let sampler = LogTSampler::new(mu, sigma, nu);
    let mut rng = oracle_rng(seed);
    let side = px.sqrt();
    (0..n)
        .map(|_| {
            let a = sampler.sample(&mut rng);
            let (x, y) = (rng.random::<f64>() * side, rng.random::<f64>() * side);
            oracle_covered(a, px, x, y)
        })
        .collect()
}

/// Histogram indexed by value.
pub fn histogram(values: &[u64]) -> Vec<u64> {
    let len = values.iter().max().map_or(0, |m| *m as usize + 1);
    let mut h = vec![0u64; len];
    for &v in values {
        h[v as usize] += 1;
    }
    h
}

/// Two-sample chi-square statistic over bins occupied in either histogram.
pub fn two_sample_chi2(r: &[u64], s: &[u64]) -> f64 {
    let rt: u64 = r.iter().sum();
    let st: u64 = s.iter().sum();
    let (k1, k2) = ((st as f64 / rt as f64).sqrt(), (rt as f64 / st as f64).sqrt());
    (0..r.len().max(s.len()))
        .map(|k| {
            let a = r.get(k).copied().unwrap_or(0) as f64;
            let b = s.get(k).copied().unwrap_or(0) as f64;
            if a + b > 0.0 {
                (k1 * a - k2 * b).powi(2) / (a + b)
            } else {
                0.0
            }
        })
        .sum()
}

/// Binomial standard error with a floor for probabilities at the boundary.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    let n = n as f64;
    (p * (1.0 - p)).max(1.0 / n).sqrt() / n.sqrt()
}
