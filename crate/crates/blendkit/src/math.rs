//! Shift-stabilized exp-sum primitives shared across the crate.

/// log(sum_i exp(x_i)), stabilized by shifting out the maximum.
///
/// Entries of -inf contribute zero mass. Returns -inf for an empty slice or
/// when every entry is -inf.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // All -inf (or empty). A +inf or NaN entry is rejected upstream.
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// log((1/n) sum_i exp(x_i)).
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NEG_INFINITY;
    }
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// Max-shifted softmax. All -inf input maps to weight zero; at least one
/// entry must be finite.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(m.is_finite(), "softmax needs at least one finite entry");
    let exps: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Max-shifted softmax of (xs..., 0): the final slot is an implicit zero
/// score. Used by every stacking parameterization; the model holding the
/// zero is the last one in name order.
pub(crate) fn softmax_suffix_zero(xs: &[f64]) -> Vec<f64> {
    let mut all = Vec::with_capacity(xs.len() + 1);
    all.extend_from_slice(xs);
    all.push(0.0);
    softmax(&all)
}

/// Sample mean and variance (denominator n-1). Variance is 0 for n < 2.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let xs = [0.1f64, -2.0, 1.7];
        let direct = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_survives_large_shifts() {
        // Direct exp overflows; the shifted form must not.
        let xs = [1000.0, 1000.0 + (2.0f64).ln()];
        assert!((log_sum_exp(&xs) - (1000.0 + (3.0f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn neg_inf_entries_carry_no_mass() {
        let xs = [f64::NEG_INFINITY, 0.0];
        assert!((log_sum_exp(&xs) - 0.0).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn softmax_handles_extreme_gaps() {
        let w = softmax(&[0.0, -1000.0]);
        assert_eq!(w[0], 1.0);
        assert!(w[1] >= 0.0 && w[1] < 1e-300);
    }

    #[test]
    fn softmax_of_equal_scores_is_exactly_uniform() {
        for k in 2..6 {
            let w = softmax(&vec![3.7; k]);
            for &wi in &w {
                assert_eq!(wi, 1.0 / k as f64);
            }
        }
    }
}
