//! Pointwise expected log predictive density (elpd) estimators.
//!
//! Two routes produce a [`PointwiseElpd`]: scoring held-out data directly
//! ([`elpd_from_test`]), or approximate leave-one-out cross validation from
//! in-sample log likelihoods via Pareto-smoothed importance sampling
//! ([`elpd_psis_loo`]). Both feed the same downstream weighting code.
//!
//! The importance-sampling route works per datapoint: the log ratios are the
//! negated log likelihoods (leaving point i out multiplies the posterior by
//! 1/p(y_i | theta)), the largest ratios are replaced by quantiles of a
//! generalized Pareto distribution fitted to their tail, and the smoothed
//! ratios form a self-normalized estimate
//!   elpd_i = log( sum_s w_s p(y_i|theta_s) / sum_s w_s ).
//! The fitted tail shape k is reported per point; values above 0.7 mean the
//! ratios are too heavy-tailed for the estimate to be reliable.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::draws::Draws;
use crate::error::{Error, Result};
use crate::gpd::fit_gpd;
use crate::math::log_sum_exp;

/// How a [`PointwiseElpd`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElpdMethod {
    /// Log pointwise predictive density of held-out data.
    TestSet,
    /// Pareto-smoothed importance-sampling leave-one-out estimate.
    PsisLoo,
}

/// Per-datapoint elpd values with method provenance.
#[derive(Debug, Clone)]
pub struct PointwiseElpd {
    /// One elpd value per datapoint.
    pub values: Array1<f64>,
    /// Pareto tail shapes, present exactly when `method` is `PsisLoo`.
    /// -inf marks a point whose tail was too short or too flat to smooth.
    pub pareto_k: Option<Array1<f64>>,
    pub method: ElpdMethod,
    /// Points where one or more draws had zero predictive density (-inf log
    /// likelihood) and were dropped from the importance-ratio normalization.
    pub flagged: Vec<usize>,
}

impl PointwiseElpd {
    pub fn n_datapoints(&self) -> usize {
        self.values.len()
    }

    /// Total elpd over datapoints.
    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    /// Indices with tail shape above the 0.7 reliability threshold.
    pub fn high_pareto_k(&self) -> Vec<usize> {
        match &self.pareto_k {
            Some(k) => k
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.7)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Pointwise elpd of held-out data: exactly the per-datapoint log predictive
/// density of the draws.
pub fn elpd_from_test(d: &Draws) -> PointwiseElpd {
    PointwiseElpd {
        values: d.lpd(),
        pareto_k: None,
        method: ElpdMethod::TestSet,
        flagged: Vec::new(),
    }
}

/// Leave-one-out log importance ratios, shifted so each column's maximum is 0.
///
/// Entry (s, i) is -log_lik[s, i] minus the column max over draws with
/// nonzero density. Draws with -inf log likelihood would carry infinite raw
/// ratio; they are returned as -inf (zero weight) so downstream
/// normalizations skip them, mirroring [`elpd_psis_loo`].
pub fn log_importance_ratios(d: &Draws) -> Array2<f64> {
    let (s, n) = d.log_lik().dim();
    let mut out = Array2::zeros((s, n));
    for i in 0..n {
        let col = d.log_lik().column(i);
        let mut max = f64::NEG_INFINITY;
        for &v in col.iter() {
            if v > f64::NEG_INFINITY {
                max = max.max(-v);
            }
        }
        for (si, &v) in col.iter().enumerate() {
            out[[si, i]] = if v == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                -v - max
            };
        }
    }
    out
}

/// Tail length for Pareto smoothing a vector of S log weights.
fn tail_len(s: usize) -> usize {
    let s = s as f64;
    (0.2 * s).min(3.0 * s.sqrt()).ceil() as usize
}

/// Pareto-smooths a vector of log importance weights.
///
/// The M largest weights (M = ceil(min(0.2 S, 3 sqrt(S)))) are replaced by
/// the generalized Pareto inverse CDF at probabilities (j - 1/2)/M above the
/// cutoff, where the cutoff is the (S - M)-th order statistic and the Pareto
/// tail is fitted to the exceedances over it. Smoothed weights are truncated
/// at the raw maximum. Returns the smoothed log weights and the fitted tail
/// shape.
///
/// Degenerate inputs pass through unchanged with tail shape -inf: a tail
/// shorter than 5, ties that leave a non-positive exceedance, or a flat tail.
pub fn psis_smooth(log_w: &[f64]) -> (Vec<f64>, f64) {
    let s = log_w.len();
    let m = tail_len(s);
    if m < 5 || m >= s {
        return (log_w.to_vec(), f64::NEG_INFINITY);
    }
    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(shift.is_finite(), "log weights must be finite");

    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| log_w[a].partial_cmp(&log_w[b]).expect("no NaN weights"));

    // Weight scale, stabilized by the max shift.
    let z: Vec<f64> = log_w.iter().map(|&lw| (lw - shift).exp()).collect();
    let cutoff = z[order[s - m - 1]];
    let z_max = z[order[s - 1]];
    let exceedances: Vec<f64> = order[s - m..].iter().map(|&idx| z[idx] - cutoff).collect();
    if exceedances.iter().any(|&e| e <= 0.0) {
        return (log_w.to_vec(), f64::NEG_INFINITY);
    }
    let fit = match fit_gpd(&exceedances) {
        Ok(f) => f,
        Err(_) => return (log_w.to_vec(), f64::NEG_INFINITY),
    };

    let mut out = log_w.to_vec();
    for j in 0..m {
        let p = (j as f64 + 0.5) / m as f64;
        let smoothed = (cutoff + fit.quantile(p)).min(z_max);
        out[order[s - m + j]] = smoothed.ln() + shift;
    }
    (out, fit.k)
}

/// PSIS leave-one-out elpd for every datapoint of `d`.
///
/// Needs at least 2 posterior samples. Draws with zero predictive density at
/// a point are excluded from that point's ratio normalization and the point
/// is flagged; a point with zero density under every draw gets elpd -inf.
/// Points whose fitted tail shape exceeds 0.7 stay in the output; callers
/// read `pareto_k` to judge them.
pub fn elpd_psis_loo(d: &Draws) -> Result<PointwiseElpd> {
    let (s, n) = d.log_lik().dim();
    if s < 2 {
        return Err(Error::EmptyMatrix { rows: s, cols: n });
    }
    let cols: Vec<(f64, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let col = d.log_lik().column(i);
            let valid: Vec<f64> = col.iter().copied().filter(|&v| v > f64::NEG_INFINITY).collect();
            let excluded = valid.len() < s;
            if valid.is_empty() {
                return (f64::NEG_INFINITY, f64::NEG_INFINITY, true);
            }
            let ratios: Vec<f64> = valid.iter().map(|&v| -v).collect();
            let (smoothed, k) = psis_smooth(&ratios);
            let numer: Vec<f64> = smoothed
                .iter()
                .zip(&valid)
                .map(|(&lw, &ll)| lw + ll)
                .collect();
            let elpd = log_sum_exp(&numer) - log_sum_exp(&smoothed);
            (elpd, k, excluded)
        })
        .collect();

    let mut values = Array1::zeros(n);
    let mut pareto_k = Array1::zeros(n);
    let mut flagged = Vec::new();
    for (i, (v, k, excl)) in cols.into_iter().enumerate() {
        values[i] = v;
        pareto_k[i] = k;
        if excl {
            flagged.push(i);
        }
    }
    Ok(PointwiseElpd {
        values,
        pareto_k: Some(pareto_k),
        method: ElpdMethod::PsisLoo,
        flagged,
    })
}
