//! Convergence diagnostics for multi-chain samples: split R-hat and bulk
//! effective sample size.

use ndarray::Array2;

use crate::math::mean_var;

/// Split potential scale reduction factor.
///
/// Each chain (row) is split in half; over the resulting half-chains of
/// length n the statistic is `sqrt((W (n-1)/n + B/n) / W)`, with W the
/// mean within-half-chain variance and B/n the variance of half-chain
/// means. Values near 1 indicate the half-chains agree; returns NaN when
/// every half-chain is constant, which makes the ratio undefined.
pub fn split_rhat(draws: &Array2<f64>) -> f64 {
    let (chains, n_draws) = draws.dim();
    let half = n_draws / 2;
    if chains == 0 || half < 2 {
        return f64::NAN;
    }

    let mut means = Vec::with_capacity(2 * chains);
    let mut vars = Vec::with_capacity(2 * chains);
    for c in 0..chains {
        let row: Vec<f64> = draws.row(c).to_vec();
        for part in [&row[..half], &row[n_draws - half..]] {
            let (m, v) = mean_var(part);
            means.push(m);
            vars.push(v);
        }
    }

    let w = vars.iter().sum::<f64>() / vars.len() as f64;
    if w == 0.0 || !w.is_finite() {
        return f64::NAN;
    }
    let (_, var_means) = mean_var(&means);
    let n = half as f64;
    let var_plus = w * (n - 1.0) / n + var_means;
    (var_plus / w).sqrt()
}

/// Autocovariance of `xs` at lags `0..max_lag`, normalized by the series
/// length (the biased estimator, which keeps the spectral sum stable).
fn autocovariances(xs: &[f64], max_lag: usize) -> Vec<f64> {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    (0..max_lag)
        .map(|lag| {
            let mut s = 0.0;
            for i in 0..n - lag {
                s += centered[i] * centered[i + lag];
            }
            s / n as f64
        })
        .collect()
}

/// Bulk effective sample size across chains.
///
/// Combines per-chain autocovariances into cross-chain correlation
/// estimates `rho_t = 1 - (W - mean_c acov_{c,t}) / var_plus`, truncates
/// the sum where Geyer's initial-positive-sequence condition fails
/// (consecutive pairs must stay positive), enforces monotone decay of the
/// pair sums, and returns `chains * draws / tau` where
/// `tau = 2 * sum(pairs) - 1`. Constant input returns 0.
pub fn ess_bulk(draws: &Array2<f64>) -> f64 {
    let (chains, n_draws) = draws.dim();
    if chains == 0 || n_draws < 4 {
        return 0.0;
    }

    let max_lag = n_draws - 1;
    let per_chain: Vec<Vec<f64>> = (0..chains)
        .map(|c| autocovariances(&draws.row(c).to_vec(), max_lag))
        .collect();

    let mean_acov = |lag: usize| -> f64 {
        per_chain.iter().map(|a| a[lag]).sum::<f64>() / chains as f64
    };

    let n = n_draws as f64;
    // Within-chain variance (unbiased) and the pooled variance estimate
    // that also counts the spread of chain means.
    let w = mean_acov(0) * n / (n - 1.0);
    let var_means = if chains >= 2 {
        let means: Vec<f64> = (0..chains)
            .map(|c| draws.row(c).sum() / n)
            .collect();
        mean_var(&means).1
    } else {
        0.0
    };
    let var_plus = w * (n - 1.0) / n + var_means;
    if var_plus <= 0.0 || !var_plus.is_finite() {
        return 0.0;
    }

    let rho = |lag: usize| -> f64 { 1.0 - (w - mean_acov(lag)) / var_plus };

    // Sum consecutive pairs while they stay positive, clamping each pair
    // to at most the previous one so the implied spectrum is monotone.
    let mut pair_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < max_lag {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        pair_sum += pair;
        prev_pair = pair;
        lag += 2;
    }

    let tau = (2.0 * pair_sum - 1.0).max(1.0 / (chains as f64 * n));
    chains as f64 * n / tau
}
