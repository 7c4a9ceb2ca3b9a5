//! Log posteriors for full-Bayes stacking: the complete-pooling model
//! (one weight vector shared by all datapoints) and the hierarchical
//! model (per-datapoint weights driven by covariates), both with analytic
//! gradients in unconstrained parameters.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::hmc::LogDensity;
use crate::math::log_sum_exp;

const LN_2PI: f64 = 1.8378770664093453;

/// Map K-1 unconstrained scores to a K-simplex.
///
/// The last model in name order is the reference: its score is pinned at
/// zero and the supplied scores belong to the first K-1 models, in order.
/// Fixing one score removes the translation invariance of the softmax, so
/// the remaining scores are identified. Output entry `k` is the weight of
/// model `k`.
pub fn softmax_with_reference(scores: &[f64]) -> Vec<f64> {
    crate::math::softmax_suffix_zero(scores)
}

/// Prior settings for the stacking posteriors.
///
/// `w_prior` holds Dirichlet concentrations for the complete-pooling
/// model (uniform, all ones, when absent). The standard deviations govern
/// the hierarchical model: intercepts are Normal(0, `alpha_prior_sd`);
/// without pooling every coefficient is Normal(0, `beta_prior_sd`); with
/// pooling the coefficients of each covariate family (continuous,
/// discrete) are Normal(mu + family offset, sigma_family), where mu and
/// the offsets are standard normal and each sigma_family is
/// half-Normal(0, `pooling_scale_sd`), sampled on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub w_prior: Option<Vec<f64>>,
    pub alpha_prior_sd: f64,
    pub beta_prior_sd: f64,
    pub pooling_scale_sd: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            w_prior: None,
            alpha_prior_sd: 1.0,
            beta_prior_sd: 1.0,
            pooling_scale_sd: 1.0,
        }
    }
}

impl Priors {
    fn validate(&self, n_models: Option<usize>) -> Result<()> {
        if let Some(alpha) = &self.w_prior {
            if let Some(k) = n_models {
                if alpha.len() != k {
                    return Err(Error::PriorLength {
                        got: alpha.len(),
                        expected: k,
                    });
                }
            }
            for &a in alpha {
                if !(a.is_finite() && a > 0.0) {
                    return Err(Error::BadConcentration(a));
                }
            }
        }
        for (name, sd) in [
            ("alpha_prior_sd", self.alpha_prior_sd),
            ("beta_prior_sd", self.beta_prior_sd),
            ("pooling_scale_sd", self.pooling_scale_sd),
        ] {
            if !(sd.is_finite() && sd > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {sd}"
                )));
            }
        }
        Ok(())
    }

    /// Dirichlet concentrations for `k` models: `w_prior` if set, else
    /// all ones.
    pub fn dirichlet_alpha(&self, k: usize) -> Vec<f64> {
        match &self.w_prior {
            Some(a) => a.clone(),
            None => vec![1.0; k],
        }
    }
}

fn check_lpd(lpd: &Array2<f64>) -> Result<()> {
    let (k, n) = lpd.dim();
    if k < 2 {
        return Err(Error::TooFewModels(k));
    }
    for i in 0..n {
        let mut all_neg_inf = true;
        for kk in 0..k {
            let v = lpd[[kk, i]];
            if v.is_nan() || v == f64::INFINITY {
                return Err(Error::BadEntry {
                    what: "log predictive density",
                    row: kk,
                    col: i,
                    value: v,
                });
            }
            if v > f64::NEG_INFINITY {
                all_neg_inf = false;
            }
        }
        if all_neg_inf {
            return Err(Error::AllModelsZeroDensity(i));
        }
    }
    Ok(())
}

/// The complete-pooling stacking posterior over K-1 unconstrained scores.
///
/// Density (up to nothing; all normalizing constants included):
/// `sum_i log sum_k w_k exp(lpd[k,i]) + log Dirichlet(w | alpha) +
/// sum_k log w_k`, where `w = softmax_with_reference(v)` and the final
/// sum is the log Jacobian determinant of that map, so the density is a
/// proper posterior over `v`.
pub struct PooledPosterior<'a> {
    lpd: &'a Array2<f64>,
    alpha: Vec<f64>,
    alpha_sum: f64,
    log_norm: f64,
}

impl<'a> PooledPosterior<'a> {
    pub fn new(lpd: &'a Array2<f64>, dirichlet_alpha: &[f64]) -> Result<Self> {
        let k = lpd.nrows();
        if k < 2 {
            return Err(Error::TooFewModels(k));
        }
        if lpd.ncols() > 0 {
            check_lpd(lpd)?;
        }
        if dirichlet_alpha.len() != k {
            return Err(Error::PriorLength {
                got: dirichlet_alpha.len(),
                expected: k,
            });
        }
        for &a in dirichlet_alpha {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::BadConcentration(a));
            }
        }
        let alpha_sum: f64 = dirichlet_alpha.iter().sum();
        let log_norm = ln_gamma(alpha_sum) - dirichlet_alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
        Ok(PooledPosterior {
            lpd,
            alpha: dirichlet_alpha.to_vec(),
            alpha_sum,
            log_norm,
        })
    }

    fn eval(&self, v: &[f64]) -> (f64, Vec<f64>) {
        let (k, n) = self.lpd.dim();
        let j = k - 1;

        // Log-weights computed directly from the scores for stability.
        let mut full = Vec::with_capacity(k);
        full.extend_from_slice(v);
        full.push(0.0);
        let lse = log_sum_exp(&full);
        let log_w: Vec<f64> = full.iter().map(|s| s - lse).collect();
        let w: Vec<f64> = log_w.iter().map(|lw| lw.exp()).collect();

        let mut logp = self.log_norm;
        for kk in 0..k {
            logp += self.alpha[kk] * log_w[kk];
        }

        // Likelihood and its per-model score sums g_k = sum_i r_{k,i},
        // where r_{k,i} = exp(lpd[k,i] - m_i) / sum_j w_j exp(lpd[j,i] - m_i).
        let mut g = vec![0.0; k];
        for i in 0..n {
            let col = self.lpd.column(i);
            let m = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            let mut e = vec![0.0; k];
            for kk in 0..k {
                e[kk] = (col[kk] - m).exp();
                z += w[kk] * e[kk];
            }
            logp += m + z.ln();
            for kk in 0..k {
                g[kk] += e[kk] / z;
            }
        }

        // d logp / dv_a = w_a * (g_a - sum_k w_k g_k - sum_k alpha_k) + alpha_a.
        // The prior and Jacobian terms enter through alpha_a directly,
        // avoiding any division by small weights.
        let g_bar: f64 = (0..k).map(|kk| w[kk] * g[kk]).sum();
        let grad: Vec<f64> = (0..j)
            .map(|a| w[a] * (g[a] - g_bar - self.alpha_sum) + self.alpha[a])
            .collect();
        (logp, grad)
    }
}

impl LogDensity for PooledPosterior<'_> {
    fn dim(&self) -> usize {
        self.lpd.nrows() - 1
    }

    fn log_density_gradient(&self, position: &[f64]) -> (f64, Vec<f64>) {
        self.eval(position)
    }
}

/// Log density and gradient of the complete-pooling stacking posterior at
/// unconstrained scores `v` (length K-1). `lpd_matrix` is K models by N
/// datapoints; N = 0 is allowed and reduces the density to prior plus
/// Jacobian.
pub fn log_post_pooled(
    v: &[f64],
    lpd_matrix: &Array2<f64>,
    dirichlet_alpha: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let posterior = PooledPosterior::new(lpd_matrix, dirichlet_alpha)?;
    if v.len() != posterior.dim() {
        return Err(Error::InvalidArgument(format!(
            "score vector has length {}, expected {} for {} models",
            v.len(),
            posterior.dim(),
            lpd_matrix.nrows()
        )));
    }
    Ok(posterior.eval(v))
}

/// Index layout of the flattened hierarchical parameter vector.
///
/// Order: intercepts `alpha[j]` for the K-1 scored models, then
/// coefficients `beta[j][p]` row-major by model, then under pooling the
/// hyperparameters: global mean `mu`, one offset per nonempty covariate
/// family (continuous first), then one log scale per nonempty family in
/// the same order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HierLayout {
    pub j: usize,
    pub p: usize,
    pub p_cont: usize,
    pub pooling: bool,
}

impl HierLayout {
    pub fn new(j: usize, p: usize, p_cont: usize, pooling: bool) -> Self {
        debug_assert!(p_cont <= p);
        HierLayout {
            j,
            p,
            p_cont,
            pooling,
        }
    }

    pub fn p_disc(&self) -> usize {
        self.p - self.p_cont
    }

    pub fn alpha(&self, j: usize) -> usize {
        j
    }

    pub fn beta(&self, j: usize, p: usize) -> usize {
        self.j + j * self.p + p
    }

    fn hyper_base(&self) -> usize {
        self.j * (1 + self.p)
    }

    pub fn mu(&self) -> Option<usize> {
        (self.pooling && self.p > 0).then(|| self.hyper_base())
    }

    pub fn offset_cont(&self) -> Option<usize> {
        (self.pooling && self.p_cont > 0).then(|| self.hyper_base() + 1)
    }

    pub fn offset_disc(&self) -> Option<usize> {
        (self.pooling && self.p_disc() > 0)
            .then(|| self.hyper_base() + 1 + usize::from(self.p_cont > 0))
    }

    pub fn log_sigma_cont(&self) -> Option<usize> {
        (self.pooling && self.p_cont > 0)
            .then(|| self.hyper_base() + 1 + usize::from(self.p_cont > 0) + usize::from(self.p_disc() > 0))
    }

    pub fn log_sigma_disc(&self) -> Option<usize> {
        (self.pooling && self.p_disc() > 0).then(|| {
            self.hyper_base()
                + 1
                + usize::from(self.p_cont > 0)
                + usize::from(self.p_disc() > 0)
                + usize::from(self.p_cont > 0)
        })
    }

    pub fn dim(&self) -> usize {
        let mut d = self.j * (1 + self.p);
        if self.pooling && self.p > 0 {
            d += 1; // mu
            d += usize::from(self.p_cont > 0) * 2; // offset + log scale
            d += usize::from(self.p_disc() > 0) * 2;
        }
        d
    }
}

/// The hierarchical stacking posterior: per-datapoint weights
/// `w_i = softmax_with_reference(alpha + beta . x_i)` with normal priors
/// on the regression parameters, optionally partially pooled within the
/// continuous and discrete covariate families.
pub struct HierPosterior<'a> {
    lpd: &'a Array2<f64>,
    design: &'a Array2<f64>,
    layout: HierLayout,
    alpha_sd: f64,
    beta_sd: f64,
    scale_sd: f64,
}

impl<'a> HierPosterior<'a> {
    pub fn new(
        lpd: &'a Array2<f64>,
        design: &'a Array2<f64>,
        p_cont: usize,
        pooling: bool,
        priors: &Priors,
    ) -> Result<Self> {
        check_lpd(lpd)?;
        let (k, n) = lpd.dim();
        if design.nrows() != n {
            return Err(Error::ShapeMismatch {
                what: "design matrix".to_string(),
                expected_rows: n,
                expected_cols: design.ncols(),
                rows: design.nrows(),
                cols: design.ncols(),
            });
        }
        let p = design.ncols();
        if p_cont > p {
            return Err(Error::InvalidArgument(format!(
                "{p_cont} continuous columns claimed but the design has only {p}"
            )));
        }
        priors.validate(None)?;
        Ok(HierPosterior {
            lpd,
            design,
            layout: HierLayout::new(k - 1, p, p_cont, pooling),
            alpha_sd: priors.alpha_prior_sd,
            beta_sd: priors.beta_prior_sd,
            scale_sd: priors.pooling_scale_sd,
        })
    }

    pub(crate) fn layout(&self) -> HierLayout {
        self.layout
    }

    /// Per-datapoint scores for the K-1 scored models: `n x j`.
    fn scores(&self, params: &[f64]) -> Array2<f64> {
        let lay = self.layout;
        let n = self.design.nrows();
        let mut scores = Array2::zeros((n, lay.j));
        for i in 0..n {
            for jj in 0..lay.j {
                let mut s = params[lay.alpha(jj)];
                for pp in 0..lay.p {
                    s += params[lay.beta(jj, pp)] * self.design[[i, pp]];
                }
                scores[[i, jj]] = s;
            }
        }
        scores
    }

    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let lay = self.layout;
        let (k, n) = self.lpd.dim();
        let mut logp = 0.0;
        let mut grad = vec![0.0; lay.dim()];

        // Likelihood: for each point, d logp / d score_j = w_j (r_j - 1),
        // since the reference weight absorbs the remaining probability and
        // sum_k w_k r_k = 1.
        let scores = self.scores(params);
        let mut full = vec![0.0; k];
        for i in 0..n {
            for jj in 0..lay.j {
                full[jj] = scores[[i, jj]];
            }
            full[k - 1] = 0.0;
            let lse = log_sum_exp(&full);
            let col = self.lpd.column(i);
            let m = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            let mut w = vec![0.0; k];
            let mut e = vec![0.0; k];
            for kk in 0..k {
                w[kk] = (full[kk] - lse).exp();
                e[kk] = (col[kk] - m).exp();
                z += w[kk] * e[kk];
            }
            logp += m + z.ln();
            for jj in 0..lay.j {
                let ds = w[jj] * (e[jj] / z - 1.0);
                grad[lay.alpha(jj)] += ds;
                for pp in 0..lay.p {
                    grad[lay.beta(jj, pp)] += ds * self.design[[i, pp]];
                }
            }
        }

        // Intercept priors: alpha ~ Normal(0, alpha_sd).
        let sa2 = self.alpha_sd * self.alpha_sd;
        for jj in 0..lay.j {
            let a = params[lay.alpha(jj)];
            logp += -0.5 * a * a / sa2 - self.alpha_sd.ln() - 0.5 * LN_2PI;
            grad[lay.alpha(jj)] += -a / sa2;
        }

        if !lay.pooling {
            // beta ~ Normal(0, beta_sd), independently.
            let sb2 = self.beta_sd * self.beta_sd;
            for jj in 0..lay.j {
                for pp in 0..lay.p {
                    let b = params[lay.beta(jj, pp)];
                    logp += -0.5 * b * b / sb2 - self.beta_sd.ln() - 0.5 * LN_2PI;
                    grad[lay.beta(jj, pp)] += -b / sb2;
                }
            }
            return (logp, grad);
        }

        // Partial pooling: beta_{j,p} ~ Normal(mu + offset_family,
        // sigma_family) with mu, offsets standard normal and each
        // sigma_family half-Normal(0, scale_sd) sampled as theta =
        // log sigma (Jacobian term +theta).
        if let Some(mu_idx) = lay.mu() {
            let mu = params[mu_idx];
            logp += -0.5 * mu * mu - 0.5 * LN_2PI;
            grad[mu_idx] += -mu;

            let families: [(Option<usize>, Option<usize>, usize, usize); 2] = [
                (lay.offset_cont(), lay.log_sigma_cont(), 0, lay.p_cont),
                (lay.offset_disc(), lay.log_sigma_disc(), lay.p_cont, lay.p),
            ];
            for (off_idx, theta_idx, p_lo, p_hi) in families {
                let (Some(off_idx), Some(theta_idx)) = (off_idx, theta_idx) else {
                    continue;
                };
                let off = params[off_idx];
                logp += -0.5 * off * off - 0.5 * LN_2PI;
                grad[off_idx] += -off;

                let theta = params[theta_idx];
                let sigma = theta.exp();
                let ss2 = self.scale_sd * self.scale_sd;
                // Half-normal on sigma plus the log-scale Jacobian.
                logp += 0.5 * (2.0 / std::f64::consts::PI).ln() - self.scale_sd.ln()
                    - 0.5 * sigma * sigma / ss2
                    + theta;
                grad[theta_idx] += -sigma * sigma / ss2 + 1.0;

                let center = mu + off;
                let s2 = sigma * sigma;
                for jj in 0..lay.j {
                    for pp in p_lo..p_hi {
                        let b = params[lay.beta(jj, pp)];
                        let d = b - center;
                        logp += -0.5 * d * d / s2 - theta - 0.5 * LN_2PI;
                        grad[lay.beta(jj, pp)] += -d / s2;
                        grad[mu_idx] += d / s2;
                        grad[off_idx] += d / s2;
                        grad[theta_idx] += d * d / s2 - 1.0;
                    }
                }
            }
        }

        (logp, grad)
    }
}

impl LogDensity for HierPosterior<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_gradient(&self, position: &[f64]) -> (f64, Vec<f64>) {
        self.eval(position)
    }
}

/// Log density and gradient of the hierarchical stacking posterior at a
/// flattened parameter vector. `design` is N x P with the first `p_cont`
/// columns continuous and the rest discrete indicators; see
/// [`HierLayout`] for the parameter order.
pub fn log_post_hier(
    params: &[f64],
    lpd_matrix: &Array2<f64>,
    design: &Array2<f64>,
    p_cont: usize,
    pooling: bool,
    priors: &Priors,
) -> Result<(f64, Vec<f64>)> {
    let posterior = HierPosterior::new(lpd_matrix, design, p_cont, pooling, priors)?;
    if params.len() != posterior.dim() {
        return Err(Error::InvalidArgument(format!(
            "parameter vector has length {}, expected {}",
            params.len(),
            posterior.dim()
        )));
    }
    Ok(posterior.eval(params))
}

/// Posterior-mean regression summary of a hierarchical fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackingCoefficients {
    /// Intercepts for the K-1 scored models; the reference model's
    /// coefficients are identically zero and not stored.
    pub alpha: Vec<f64>,
    /// One row per scored model, one column per continuous covariate.
    pub beta_cont: Vec<Vec<f64>>,
    /// One row per scored model, one column per discrete indicator.
    pub beta_disc: Vec<Vec<f64>>,
    /// Hyperparameter means when the fit used partial pooling.
    pub pooling: Option<PoolingSummary>,
}

/// Posterior means of the partial-pooling hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolingSummary {
    pub mu: f64,
    pub offset_cont: Option<f64>,
    pub offset_disc: Option<f64>,
    pub sigma_cont: Option<f64>,
    pub sigma_disc: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_lpd(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((k, n), |_| -1.5 + rng.random::<f64>())
    }

    fn fd_check<F>(f: F, x: &[f64], grad: &[f64], h: f64, tol: f64)
    where
        F: Fn(&[f64]) -> f64,
    {
        for a in 0..x.len() {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[a] += h;
            lo[a] -= h;
            let fd = (f(&hi) - f(&lo)) / (2.0 * h);
            let scale = fd.abs().max(grad[a].abs()).max(1.0);
            assert!(
                (fd - grad[a]).abs() / scale < tol,
                "component {a}: analytic {} vs finite difference {fd}",
                grad[a]
            );
        }
    }

    #[test]
    fn reference_softmax_matches_two_model_anchor() {
        let w = softmax_with_reference(&[0.06943556]);
        assert!((w[0] - 0.51735192).abs() < 1e-7);
        assert!((w[1] - 0.48264808).abs() < 1e-7);

        let uniform = softmax_with_reference(&[0.0, 0.0]);
        for v in &uniform {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let extreme = softmax_with_reference(&[1000.0]);
        assert!(extreme[0] > 1.0 - 1e-12 && extreme[0].is_finite());
        assert!(extreme[1] >= 0.0);
    }

    #[test]
    fn pooled_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let lpd = random_lpd(&mut rng, 3, 25);
            let alpha = vec![
                0.5 + rng.random::<f64>() * 2.0,
                0.5 + rng.random::<f64>() * 2.0,
                0.5 + rng.random::<f64>() * 2.0,
            ];
            let v = [
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            ];
            let (_, grad) = log_post_pooled(&v, &lpd, &alpha).unwrap();
            fd_check(
                |x| log_post_pooled(x, &lpd, &alpha).unwrap().0,
                &v,
                &grad,
                1e-6,
                1e-6,
            );
        }
    }

    #[test]
    fn uniform_dirichlet_contributes_only_a_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let lpd = random_lpd(&mut rng, 3, 20);
        let alpha = vec![1.0, 1.0, 1.0];
        let v1 = [0.3, -0.2];
        let v2 = [-0.8, 0.5];
        let (f1, _) = log_post_pooled(&v1, &lpd, &alpha).unwrap();
        let (f2, _) = log_post_pooled(&v2, &lpd, &alpha).unwrap();

        // With alpha = 1 the Dirichlet term is the constant log Gamma(K),
        // so density differences are mixture likelihood plus Jacobian.
        let part = |v: &[f64]| {
            let w = softmax_with_reference(v);
            let (mix, _) = crate::weights::stacking_objective(&w, &lpd).unwrap();
            mix + w.iter().map(|x| x.ln()).sum::<f64>()
        };
        assert!(((f1 - f2) - (part(&v1) - part(&v2))).abs() < 1e-10);
    }

    #[test]
    fn empty_data_reduces_to_prior_with_mode_at_zero_for_symmetric_alpha() {
        let lpd = Array2::<f64>::zeros((2, 0));
        let alpha = vec![2.0, 2.0];
        // Scan v and confirm the density peaks at v = 0.
        let mut best_v = f64::NAN;
        let mut best = f64::NEG_INFINITY;
        let mut v = -3.0;
        while v <= 3.0 {
            let (f, _) = log_post_pooled(&[v], &lpd, &alpha).unwrap();
            if f > best {
                best = f;
                best_v = v;
            }
            v += 1e-3;
        }
        assert!(best_v.abs() < 1e-3 + 1e-12);
        let (_, grad) = log_post_pooled(&[0.0], &lpd, &alpha).unwrap();
        assert!(grad[0].abs() < 1e-12);
    }

    #[test]
    fn pooled_rejects_bad_inputs() {
        let lpd = arr2(&[[0.0, 0.1], [0.2, 0.3]]);
        assert!(matches!(
            log_post_pooled(&[0.0], &lpd, &[1.0]).unwrap_err(),
            Error::PriorLength { .. }
        ));
        assert!(matches!(
            log_post_pooled(&[0.0], &lpd, &[1.0, -1.0]).unwrap_err(),
            Error::BadConcentration(_)
        ));
        assert!(matches!(
            log_post_pooled(&[0.0, 0.0], &lpd, &[1.0, 1.0]).unwrap_err(),
            Error::InvalidArgument(_)
        ));
        let bad = arr2(&[[f64::NEG_INFINITY, 0.1], [f64::NEG_INFINITY, 0.3]]);
        assert!(matches!(
            log_post_pooled(&[0.0], &bad, &[1.0, 1.0]).unwrap_err(),
            Error::AllModelsZeroDensity(0)
        ));
    }

    fn random_design(rng: &mut ChaCha8Rng, n: usize, p_cont: usize, levels: usize) -> Array2<f64> {
        // p_cont continuous columns followed by a one-hot block.
        let p = p_cont + levels;
        let mut design = Array2::zeros((n, p));
        for i in 0..n {
            for pp in 0..p_cont {
                design[[i, pp]] = rng.random::<f64>() * 2.0 - 1.0;
            }
            if levels > 0 {
                let hot = (rng.random::<f64>() * levels as f64) as usize;
                design[[i, p_cont + hot.min(levels - 1)]] = 1.0;
            }
        }
        design
    }

    #[test]
    fn hier_gradient_matches_finite_differences_no_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let priors = Priors::default();
        for _ in 0..50 {
            let lpd = random_lpd(&mut rng, 3, 30);
            let design = random_design(&mut rng, 30, 2, 0);
            let posterior = HierPosterior::new(&lpd, &design, 2, false, &priors).unwrap();
            let dim = posterior.dim();
            let params: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
            let (_, grad) = posterior.log_density_gradient(&params);
            fd_check(
                |x| posterior.log_density_gradient(x).0,
                &params,
                &grad,
                1e-6,
                1e-6,
            );
        }
    }

    #[test]
    fn hier_gradient_matches_finite_differences_with_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let priors = Priors {
            pooling_scale_sd: 0.7,
            ..Priors::default()
        };
        for _ in 0..50 {
            let lpd = random_lpd(&mut rng, 3, 30);
            let design = random_design(&mut rng, 30, 1, 2);
            let posterior = HierPosterior::new(&lpd, &design, 1, true, &priors).unwrap();
            let dim = posterior.dim();
            let params: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
            let (_, grad) = posterior.log_density_gradient(&params);
            fd_check(
                |x| posterior.log_density_gradient(x).0,
                &params,
                &grad,
                1e-6,
                1e-6,
            );
        }
    }

    #[test]
    fn hier_layout_indices_are_contiguous() {
        let lay = HierLayout::new(2, 3, 1, true);
        assert_eq!(lay.alpha(0), 0);
        assert_eq!(lay.alpha(1), 1);
        assert_eq!(lay.beta(0, 0), 2);
        assert_eq!(lay.beta(1, 2), 7);
        assert_eq!(lay.mu(), Some(8));
        assert_eq!(lay.offset_cont(), Some(9));
        assert_eq!(lay.offset_disc(), Some(10));
        assert_eq!(lay.log_sigma_cont(), Some(11));
        assert_eq!(lay.log_sigma_disc(), Some(12));
        assert_eq!(lay.dim(), 13);

        // Continuous-only pooling drops the discrete family's entries.
        let lay = HierLayout::new(1, 3, 3, true);
        assert_eq!(lay.mu(), Some(4));
        assert_eq!(lay.offset_cont(), Some(5));
        assert_eq!(lay.offset_disc(), None);
        assert_eq!(lay.log_sigma_cont(), Some(6));
        assert_eq!(lay.log_sigma_disc(), None);
        assert_eq!(lay.dim(), 7);

        let lay = HierLayout::new(2, 2, 1, false);
        assert_eq!(lay.dim(), 6);
    }

    #[test]
    fn zero_coefficients_give_uniform_weights_and_symmetric_density() {
        // With all parameters zero every datapoint gets uniform weights,
        // so the likelihood equals sum_i log mean_k exp(lpd) + ... checked
        // against a direct computation.
        let lpd = arr2(&[[0.1, -0.4, 0.2], [-0.3, 0.0, 0.5]]);
        let design = arr2(&[[0.5], [-0.5], [1.5]]);
        let priors = Priors::default();
        let posterior = HierPosterior::new(&lpd, &design, 1, false, &priors).unwrap();
        let params = vec![0.0; posterior.dim()];
        let (logp, _) = posterior.log_density_gradient(&params);

        let mut expected = 0.0;
        for i in 0..3 {
            let col = lpd.column(i);
            expected += (0.5 * col[0].exp() + 0.5 * col[1].exp()).ln();
        }
        // Prior terms at zero: one intercept and one coefficient, each
        // standard normal evaluated at 0.
        expected += 2.0 * (-0.5 * LN_2PI);
        assert!((logp - expected).abs() < 1e-12);
    }
}
