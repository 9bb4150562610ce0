//! Adaptive random-walk Metropolis on `(mu, log sigma, log nu)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub(crate) const DIM: usize = 3;
pub(crate) type Point = [f64; DIM];

/// 2.38^2 / d, the optimal random-walk scaling for Gaussian targets.
const OPTIMAL_SCALE: f64 = 2.38 * 2.38 / DIM as f64;
const TARGET_ACCEPTANCE: f64 = 0.234;
const ADAPT_EVERY: usize = 50;
const ADAPT_START: usize = 100;

pub(crate) struct ChainOutput {
    pub(crate) samples: Vec<Point>,
    pub(crate) acceptance: f64,
}

/// Runs one chain. The proposal covariance is adapted during warmup only and
/// frozen afterwards; warmup draws are discarded.
pub(crate) fn run_chain<F>(
    start: Point,
    initial_steps: Point,
    log_target: F,
    warmup: usize,
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> ChainOutput
where
    F: Fn(&Point) -> f64,
{
    let mut x = start;
    let mut fx = log_target(&x);
    let mut chol = diagonal(&initial_steps);
    let mut log_lambda = 0.0f64;
    let mut history: Vec<Point> = Vec::with_capacity(warmup);
    let mut batch_accepts = 0usize;
    let mut samples = Vec::with_capacity(iterations);
    let mut accepted = 0usize;

    for it in 0..warmup + iterations {
        let z: Point = std::array::from_fn(|_| rng.sample(StandardNormal));
        let step = mul_lower(&chol, &z);
        let scale = log_lambda.exp();
        let y: Point = std::array::from_fn(|k| x[k] + scale * step[k]);
        let fy = log_target(&y);
        let u: f64 = rng.random();
        let accept = fy.is_finite() && u.ln() < fy - fx;
        if accept {
            x = y;
            fx = fy;
        }

        if it < warmup {
            history.push(x);
            batch_accepts += accept as usize;
            if (it + 1) % ADAPT_EVERY == 0 {
                let rate = batch_accepts as f64 / ADAPT_EVERY as f64;
                log_lambda += rate - TARGET_ACCEPTANCE;
                batch_accepts = 0;
                if it + 1 >= ADAPT_START {
                    // recent half of the warmup path, so the transient is forgotten
                    let window = &history[history.len() / 2..];
                    if let Some(c) = cholesky(&covariance(window, OPTIMAL_SCALE)) {
                        chol = c;
                    }
                }
            }
        } else {
            accepted += accept as usize;
            samples.push(x);
        }
    }
    ChainOutput {
        samples,
        acceptance: if iterations > 0 {
            accepted as f64 / iterations as f64
        } else {
            0.0
        },
    }
}

type Matrix = [[f64; DIM]; DIM];

fn diagonal(d: &Point) -> Matrix {
    let mut m = [[0.0; DIM]; DIM];
    for k in 0..DIM {
        m[k][k] = d[k];
    }
    m
}

fn mul_lower(l: &Matrix, z: &Point) -> Point {
    std::array::from_fn(|i| (0..=i).map(|j| l[i][j] * z[j]).sum())
}

fn covariance(points: &[Point], scale: f64) -> Matrix {
    let n = points.len() as f64;
    let mean: Point = std::array::from_fn(|k| points.iter().map(|p| p[k]).sum::<f64>() / n);
    let mut c = [[0.0; DIM]; DIM];
    for p in points {
        for i in 0..DIM {
            for j in 0..DIM {
                c[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]);
            }
        }
    }
    for (i, row) in c.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = scale * *v / (n - 1.0).max(1.0);
            if i == j {
                *v += 1e-10;
            }
        }
    }
    c
}

fn cholesky(a: &Matrix) -> Option<Matrix> {
    let mut l = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}
