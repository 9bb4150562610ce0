//! Convergence diagnostics for multiple chains of equal length.

/// Split potential-scale-reduction statistic.
///
/// Each chain is cut in two halves; the statistic compares between-half and
/// within-half variances. Returns `NaN` when the halves are shorter than two
/// draws.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let n = c.len() / 2;
            // drop the middle draw of odd-length chains
            [&c[..n], &c[c.len() - n..]]
        })
        .collect();
    let n = halves.first().map_or(0, |h| h.len());
    if n < 2 || halves.len() < 2 {
        return f64::NAN;
    }
    let m = halves.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let grand = mean(&means);
    let between = nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let within = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if within == 0.0 {
        return if between == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (nf - 1.0) / nf * within + between / nf;
    (var_plus / within).sqrt()
}

/// Effective sample size with Geyer's initial monotone sequence estimator,
/// using autocorrelations averaged over chains.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let total = (m * n) as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n as f64)
        .collect();
    let within = vars.iter().sum::<f64>() / m as f64 * n as f64 / (n as f64 - 1.0);
    let grand = mean(&means);
    let between = if m > 1 {
        n as f64 / (m as f64 - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>()
    } else {
        0.0
    };
    let var_plus = (n as f64 - 1.0) / n as f64 * within + between / n as f64;
    if !(var_plus > 0.0) {
        return total;
    }

    let autocov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| {
                (0..n - lag)
                    .map(|t| (c[t] - mu) * (c[t + lag] - mu))
                    .sum::<f64>()
                    / n as f64
            })
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| 1.0 - (within - autocov(lag)) / var_plus;

    let mut pair_sums = Vec::new();
    let mut lag = 0;
    while lag + 1 < n {
        let p = rho(lag) + rho(lag + 1);
        if p <= 0.0 {
            break;
        }
        pair_sums.push(p);
        lag += 2;
    }
    for k in 1..pair_sums.len() {
        if pair_sums[k] > pair_sums[k - 1] {
            pair_sums[k] = pair_sums[k - 1];
        }
    }
    let tau = -1.0 + 2.0 * pair_sums.iter().sum::<f64>();
    let tau = tau.max(1.0 / total.log10().max(1.0));
    total / tau
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn iid(seed: u64, m: usize, n: usize, shift: f64) -> Vec<Vec<f64>> {
        (0..m)
            .map(|c| {
                let mut r = stream_rng(seed, c as u64);
                (0..n)
                    .map(|_| r.sample::<f64, _>(StandardNormal) + shift * c as f64)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn rhat_near_one_for_iid_chains() {
        let r = split_rhat(&iid(1, 4, 1000, 0.0));
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn rhat_flags_disagreeing_chains() {
        assert!(split_rhat(&iid(2, 4, 1000, 1.0)) > 1.2);
    }

    #[test]
    fn ess_of_iid_draws_is_close_to_n() {
        let e = effective_sample_size(&iid(3, 4, 1000, 0.0));
        assert!(e > 3000.0 && e < 5500.0, "{e}");
    }

    #[test]
    fn ess_drops_for_autocorrelated_chains() {
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|c| {
                let mut r = stream_rng(4, c);
                let mut x = 0.0;
                (0..2000)
                    .map(|_| {
                        x = 0.9 * x + r.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        // AR(1) with phi = 0.9: ess ~ N (1 - phi) / (1 + phi)
        let e = effective_sample_size(&chains);
        assert!(e > 250.0 && e < 650.0, "{e}");
    }
}
