//! Posterior-sampling stacking fits: the complete-pooling Bayes model and
//! the covariate-driven hierarchical model, plus out-of-sample weight
//! prediction from a stored fit.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::covariates::{transform_covariates, CovariateSet, CovariateStats};
use crate::error::{Error, Result};
use crate::hmc::{hmc_sample, HmcConfig, HmcRun};
use crate::math::softmax_suffix_zero;
use crate::posterior::{
    HierPosterior, PooledPosterior, PoolingSummary, Priors, StackingCoefficients,
};
use crate::weights::WeightMatrix;

/// Which stacking model produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// One weight vector shared by every datapoint.
    BayesPooled,
    /// Per-datapoint weights driven by covariates.
    Hierarchical,
}

/// All retained posterior draws, stacked chain-major: row
/// `c * draws_per_chain + t` is draw `t` of chain `c`.
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub param_names: Vec<String>,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub values: Array2<f64>,
}

impl PosteriorSamples {
    fn from_run(run: &HmcRun, param_names: Vec<String>) -> Self {
        PosteriorSamples {
            param_names,
            chains: run.n_chains(),
            draws_per_chain: run.n_draws(),
            values: run.stacked(),
        }
    }

    pub fn n_draws(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Chain id and within-chain draw index of a stacked row.
    pub fn chain_and_draw(&self, row: usize) -> (usize, usize) {
        (row / self.draws_per_chain, row % self.draws_per_chain)
    }

    /// One parameter as a chains x draws matrix for the convergence
    /// diagnostics.
    pub fn param_chain_matrix(&self, param: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.chains, self.draws_per_chain));
        for c in 0..self.chains {
            for t in 0..self.draws_per_chain {
                out[[c, t]] = self.values[[c * self.draws_per_chain + t, param]];
            }
        }
        out
    }
}

/// Sampler health summary attached to every stacking fit.
#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    pub param_names: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    /// Divergent transitions, summed over chains (sampling phase).
    pub divergences: usize,
    /// Mean acceptance statistic over chains.
    pub accept_rate: f64,
    /// Adapted step size per chain.
    pub step_size: Vec<f64>,
    /// False when any parameter's split R-hat exceeds 1.05 (or is
    /// undefined); the fit is still returned so it can be inspected.
    pub converged: bool,
}

pub(crate) fn all_converged(rhats: &[f64]) -> bool {
    rhats.iter().all(|r| r.is_finite() && *r <= 1.05)
}

fn diagnostics_from_run(run: &HmcRun, samples: &PosteriorSamples) -> FitDiagnostics {
    let mut rhat = Vec::with_capacity(samples.dim());
    let mut ess = Vec::with_capacity(samples.dim());
    for p in 0..samples.dim() {
        let per_chain = samples.param_chain_matrix(p);
        rhat.push(crate::diagnostics::split_rhat(&per_chain));
        ess.push(crate::diagnostics::ess_bulk(&per_chain));
    }
    let converged = all_converged(&rhat);
    FitDiagnostics {
        param_names: samples.param_names.clone(),
        rhat,
        ess_bulk: ess,
        divergences: run.total_divergences(),
        accept_rate: run.mean_accept(),
        step_size: run.step_size.clone(),
        converged,
    }
}

/// A fitted stacking model: posterior-mean weights, posterior draws, and
/// everything needed to predict weights for new datapoints.
#[derive(Debug, Clone)]
pub struct StackingFit {
    pub kind: FitKind,
    pub model_names: Vec<String>,
    /// Posterior-mean weights: K x 1 for the pooled model, K x N for the
    /// hierarchical model.
    pub weights: WeightMatrix,
    /// Posterior-mean regression parameters (hierarchical fits only).
    pub coefficients: Option<StackingCoefficients>,
    pub samples: PosteriorSamples,
    pub diagnostics: FitDiagnostics,
    /// Frozen training statistics (hierarchical fits only).
    pub covariate_info: Option<CovariateStats>,
    /// Whether coefficients were partially pooled (hierarchical only).
    pub pooling: bool,
    pub seed: u64,
}

/// Mean over draws of `softmax_with_reference(score draws)`: the pooled
/// posterior-mean weights (mean of weights, not softmax of means).
fn pooled_mean_weights(values: &Array2<f64>, k: usize) -> Vec<f64> {
    let s = values.nrows();
    let mut mean = vec![0.0; k];
    for row in values.rows() {
        let w = softmax_suffix_zero(row.as_slice().expect("stacked samples are contiguous"));
        for kk in 0..k {
            mean[kk] += w[kk];
        }
    }
    for m in &mut mean {
        *m /= s as f64;
    }
    mean
}

/// Per-datapoint posterior-mean weights for a hierarchical fit: K x N.
/// Shared by fitting and prediction so that predicting on the training
/// covariates reproduces the fitted weights bit for bit.
fn hier_mean_weights(
    values: &Array2<f64>,
    design: &Array2<f64>,
    j: usize,
    p: usize,
) -> Array2<f64> {
    let k = j + 1;
    let n = design.nrows();
    let s = values.nrows();
    let mut mean = Array2::zeros((k, n));
    let mut scores = vec![0.0; j];
    for draw in values.rows() {
        for i in 0..n {
            for jj in 0..j {
                let mut acc = draw[jj];
                for pp in 0..p {
                    acc += draw[j + jj * p + pp] * design[[i, pp]];
                }
                scores[jj] = acc;
            }
            let w = softmax_suffix_zero(&scores);
            for kk in 0..k {
                mean[[kk, i]] += w[kk];
            }
        }
    }
    mean.mapv_inplace(|v| v / s as f64);
    mean
}

fn check_model_names(model_names: &[String], k: usize) -> Result<()> {
    if model_names.len() != k {
        return Err(Error::LengthMismatch(format!(
            "{} model names for {k} models",
            model_names.len()
        )));
    }
    Ok(())
}

/// Fit the complete-pooling Bayes stacking model by sampling its
/// posterior over unconstrained scores.
///
/// Weights are the posterior mean of the per-draw simplex vectors. A fit
/// whose split R-hat exceeds 1.05 on any score is returned with
/// `diagnostics.converged == false` rather than rejected.
pub fn fit_bayes_stacking(
    model_names: &[String],
    lpd_matrix: &Array2<f64>,
    dirichlet_alpha: &[f64],
    config: &HmcConfig,
) -> Result<StackingFit> {
    let k = lpd_matrix.nrows();
    check_model_names(model_names, k)?;
    let target = PooledPosterior::new(lpd_matrix, dirichlet_alpha)?;
    let run = hmc_sample(&target, config)?;

    let param_names: Vec<String> = model_names[..k - 1]
        .iter()
        .map(|m| format!("score[{m}]"))
        .collect();
    let samples = PosteriorSamples::from_run(&run, param_names);
    let diagnostics = diagnostics_from_run(&run, &samples);

    let mean = pooled_mean_weights(&samples.values, k);
    let weights = WeightMatrix::new(
        model_names.to_vec(),
        Array2::from_shape_vec((k, 1), mean).expect("k weights fill a k x 1 matrix"),
    )?;

    Ok(StackingFit {
        kind: FitKind::BayesPooled,
        model_names: model_names.to_vec(),
        weights,
        coefficients: None,
        samples,
        diagnostics,
        covariate_info: None,
        pooling: false,
        seed: config.seed,
    })
}

/// Fit the hierarchical stacking model: per-datapoint weights regressed
/// on covariates, optionally with partial pooling of the coefficients
/// within the continuous and discrete families.
///
/// Covariate statistics are frozen into the fit so prediction transforms
/// new data identically. Partial pooling requires at least 3 design
/// columns; hyperparameter scales are otherwise barely identified.
pub fn fit_hier_stacking(
    model_names: &[String],
    lpd_matrix: &Array2<f64>,
    covariates: &CovariateSet,
    pooling: bool,
    priors: &Priors,
    config: &HmcConfig,
) -> Result<StackingFit> {
    let (k, n) = lpd_matrix.dim();
    check_model_names(model_names, k)?;
    let (design, stats) = transform_covariates(covariates, n, None)?;
    let p = design.ncols();
    if pooling && p < 3 {
        return Err(Error::PoolingNeedsColumns(p));
    }
    let p_cont = stats.n_continuous_columns();
    let target = HierPosterior::new(lpd_matrix, &design, p_cont, pooling, priors)?;
    let layout = target.layout();
    let run = hmc_sample(&target, config)?;

    let column_labels = stats.column_labels();
    let mut param_names = Vec::with_capacity(layout.dim());
    for m in &model_names[..k - 1] {
        param_names.push(format!("alpha[{m}]"));
    }
    for m in &model_names[..k - 1] {
        for label in &column_labels {
            param_names.push(format!("beta[{m},{label}]"));
        }
    }
    if layout.mu().is_some() {
        param_names.push("mu".to_string());
    }
    if layout.offset_cont().is_some() {
        param_names.push("offset[continuous]".to_string());
    }
    if layout.offset_disc().is_some() {
        param_names.push("offset[discrete]".to_string());
    }
    if layout.log_sigma_cont().is_some() {
        param_names.push("log_sigma[continuous]".to_string());
    }
    if layout.log_sigma_disc().is_some() {
        param_names.push("log_sigma[discrete]".to_string());
    }
    debug_assert_eq!(param_names.len(), layout.dim());

    let samples = PosteriorSamples::from_run(&run, param_names);
    let diagnostics = diagnostics_from_run(&run, &samples);

    let mean_weights = hier_mean_weights(&samples.values, &design, layout.j, layout.p);
    let weights = WeightMatrix::new(model_names.to_vec(), mean_weights)?;

    // Posterior means of the regression parameters. Scales are averaged
    // on the sigma scale, not the log scale.
    let s = samples.n_draws() as f64;
    let col_mean = |idx: usize| samples.values.column(idx).sum() / s;
    let j = layout.j;
    let alpha: Vec<f64> = (0..j).map(|jj| col_mean(layout.alpha(jj))).collect();
    let beta_cont: Vec<Vec<f64>> = (0..j)
        .map(|jj| (0..p_cont).map(|pp| col_mean(layout.beta(jj, pp))).collect())
        .collect();
    let beta_disc: Vec<Vec<f64>> = (0..j)
        .map(|jj| {
            (p_cont..layout.p)
                .map(|pp| col_mean(layout.beta(jj, pp)))
                .collect()
        })
        .collect();
    let pooling_summary = layout.mu().map(|mu_idx| {
        let sigma_mean = |idx: usize| {
            samples
                .values
                .column(idx)
                .iter()
                .map(|theta| theta.exp())
                .sum::<f64>()
                / s
        };
        PoolingSummary {
            mu: col_mean(mu_idx),
            offset_cont: layout.offset_cont().map(col_mean),
            offset_disc: layout.offset_disc().map(col_mean),
            sigma_cont: layout.log_sigma_cont().map(sigma_mean),
            sigma_disc: layout.log_sigma_disc().map(sigma_mean),
        }
    });
    let coefficients = StackingCoefficients {
        alpha,
        beta_cont,
        beta_disc,
        pooling: pooling_summary,
    };

    Ok(StackingFit {
        kind: FitKind::Hierarchical,
        model_names: model_names.to_vec(),
        weights,
        coefficients: Some(coefficients),
        samples,
        diagnostics,
        covariate_info: Some(stats),
        pooling,
        seed: config.seed,
    })
}

/// Weights for `n_new` new datapoints from a stored fit.
///
/// Pooled fits broadcast their single weight column. Hierarchical fits
/// rebuild the design matrix under the frozen training statistics and
/// recompute posterior-mean weights from the stored draws, so predicting
/// on the training covariates reproduces `fit.weights` exactly.
pub fn predict_weights(
    fit: &StackingFit,
    new_covariates: Option<&CovariateSet>,
    n_new: usize,
) -> Result<WeightMatrix> {
    if n_new == 0 {
        return Err(Error::InvalidArgument(
            "cannot predict weights for zero datapoints".into(),
        ));
    }
    match fit.kind {
        FitKind::BayesPooled => {
            let k = fit.weights.n_models();
            let mut out = Array2::zeros((k, n_new));
            for kk in 0..k {
                let w = fit.weights.at(kk, 0);
                for i in 0..n_new {
                    out[[kk, i]] = w;
                }
            }
            WeightMatrix::new(fit.model_names.clone(), out)
        }
        FitKind::Hierarchical => {
            let stats = fit.covariate_info.as_ref().ok_or_else(|| {
                Error::FitFile("hierarchical fit is missing covariate_info".into())
            })?;
            let p = stats.n_continuous_columns() + stats.n_discrete_columns();
            let empty = CovariateSet {
                transform: stats.transform,
                ..CovariateSet::empty()
            };
            let covariates = match new_covariates {
                Some(c) => c,
                None if p == 0 => &empty,
                None => return Err(Error::MissingCovariates),
            };
            let (design, _) = transform_covariates(covariates, n_new, Some(stats))?;
            let j = fit.model_names.len() - 1;
            let mean = hier_mean_weights(&fit.samples.values, &design, j, p);
            WeightMatrix::new(fit.model_names.clone(), mean)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;
    use crate::weights::{mle_stacking, StackingOptions};

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn quick_config(seed: u64) -> HmcConfig {
        HmcConfig {
            chains: 4,
            warmup: 500,
            draws: 500,
            seed,
            ..HmcConfig::default()
        }
    }

    /// Two models, one clearly better on the first `split` points, the
    /// other on the rest; the stacking optimum is interior.
    fn separated_lpd(n: usize, split: usize) -> Array2<f64> {
        Array2::from_shape_fn((2, n), |(k, i)| {
            let first_better = i < split;
            let good = (k == 0) == first_better;
            if good {
                0.85f64.ln()
            } else {
                0.25f64.ln()
            }
        })
    }

    #[test]
    fn identical_models_recover_the_uniform_prior_mean() {
        let lpd = Array2::from_shape_fn((2, 10), |(_, i)| -0.5 - 0.1 * i as f64);
        let fit = fit_bayes_stacking(
            &names(&["a", "b"]),
            &lpd,
            &[1.0, 1.0],
            &quick_config(17),
        )
        .unwrap();
        let w = fit.weights.weights();
        assert_eq!(w.dim(), (2, 1));
        assert!((w[[0, 0]] - 0.5).abs() < 0.02, "w = {}", w[[0, 0]]);
        assert!(fit.diagnostics.converged);
        assert_eq!(fit.kind, FitKind::BayesPooled);
        assert!(fit.coefficients.is_none());
    }

    #[test]
    fn bayes_concentrates_on_the_mle_solution() {
        let lpd = separated_lpd(200, 120);
        let model_names = names(&["first", "second"]);
        let mle = mle_stacking(model_names.clone(), &lpd, &StackingOptions::default()).unwrap();
        let fit =
            fit_bayes_stacking(&model_names, &lpd, &[1.0, 1.0], &quick_config(19)).unwrap();
        for k in 0..2 {
            let diff = (fit.weights.at(k, 0) - mle.0.at(k, 0)).abs();
            assert!(diff < 0.05, "model {k}: bayes {} vs mle {}", fit.weights.at(k, 0), mle.0.at(k, 0));
        }
    }

    #[test]
    fn intercept_only_hierarchical_fit_matches_pooled_fit() {
        let lpd = separated_lpd(200, 120);
        let model_names = names(&["first", "second"]);
        let pooled =
            fit_bayes_stacking(&model_names, &lpd, &[1.0, 1.0], &quick_config(23)).unwrap();
        let hier = fit_hier_stacking(
            &model_names,
            &lpd,
            &CovariateSet::empty(),
            false,
            &Priors::default(),
            &quick_config(29),
        )
        .unwrap();
        assert_eq!(hier.weights.n_columns(), 200);
        // Intercept-only weights are constant across datapoints.
        for i in 1..200 {
            assert!((hier.weights.at(0, i) - hier.weights.at(0, 0)).abs() < 1e-12);
        }
        assert!((hier.weights.at(0, 0) - pooled.weights.at(0, 0)).abs() < 0.05);
    }

    fn time_covariates(n: usize) -> CovariateSet {
        let mut continuous = IndexMap::new();
        continuous.insert("time".to_string(), (0..n).map(|i| i as f64).collect());
        CovariateSet {
            continuous,
            discrete: IndexMap::new(),
            transform: crate::covariates::Transform::Standardize,
        }
    }

    #[test]
    fn single_covariate_fit_tracks_the_shift_in_model_quality() {
        let n = 40;
        let lpd = separated_lpd(n, 20);
        let model_names = names(&["early", "late"]);
        let fit = fit_hier_stacking(
            &model_names,
            &lpd,
            &time_covariates(n),
            false,
            &Priors::default(),
            &quick_config(31),
        )
        .unwrap();

        // The late model's weight must rise across the time axis.
        let late = 1;
        assert!(fit.weights.at(late, 0) < 0.35);
        assert!(fit.weights.at(late, n - 1) > 0.65);
        for i in 1..n {
            assert!(
                fit.weights.at(late, i) > fit.weights.at(late, i - 1),
                "weight not increasing at {i}"
            );
        }

        // The early model's score must fall with time: its coefficient on
        // the lone continuous covariate is negative.
        let coef = fit.coefficients.as_ref().unwrap();
        assert_eq!(coef.alpha.len(), 1);
        assert!(coef.beta_cont[0][0] < 0.0);
        assert!(coef.beta_disc[0].is_empty());
        assert!(coef.pooling.is_none());
        assert_eq!(
            fit.diagnostics.param_names,
            vec!["alpha[early]", "beta[early,time]"]
        );
    }

    #[test]
    fn prediction_on_training_covariates_is_idempotent() {
        let n = 40;
        let lpd = separated_lpd(n, 20);
        let covs = time_covariates(n);
        let fit = fit_hier_stacking(
            &names(&["early", "late"]),
            &lpd,
            &covs,
            false,
            &Priors::default(),
            &quick_config(37),
        )
        .unwrap();
        let predicted = predict_weights(&fit, Some(&covs), n).unwrap();
        assert_eq!(predicted, fit.weights);
    }

    #[test]
    fn prediction_at_the_covariate_mean_gives_intercept_weights() {
        let n = 41;
        let lpd = separated_lpd(n, 20);
        let covs = time_covariates(n);
        let fit = fit_hier_stacking(
            &names(&["early", "late"]),
            &lpd,
            &covs,
            false,
            &Priors::default(),
            &quick_config(41),
        )
        .unwrap();

        // A new point at the training mean standardizes to zero, so only
        // the intercept drives its weights.
        let mean_time = (0..n).map(|i| i as f64).sum::<f64>() / n as f64;
        let mut continuous = IndexMap::new();
        continuous.insert("time".to_string(), vec![mean_time]);
        let at_mean = CovariateSet {
            continuous,
            discrete: IndexMap::new(),
            transform: crate::covariates::Transform::Standardize,
        };
        let predicted = predict_weights(&fit, Some(&at_mean), 1).unwrap();

        let mut expected = 0.0;
        for draw in fit.samples.values.rows() {
            expected += softmax_suffix_zero(&[draw[0]])[0];
        }
        expected /= fit.samples.n_draws() as f64;
        assert!((predicted.at(0, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn pooled_prediction_broadcasts_the_single_column() {
        let lpd = separated_lpd(50, 30);
        let fit = fit_bayes_stacking(
            &names(&["a", "b"]),
            &lpd,
            &[1.0, 1.0],
            &quick_config(43),
        )
        .unwrap();
        let predicted = predict_weights(&fit, None, 5).unwrap();
        assert_eq!(predicted.n_columns(), 5);
        for i in 0..5 {
            assert_eq!(predicted.at(0, i), fit.weights.at(0, 0));
            assert_eq!(predicted.at(1, i), fit.weights.at(1, 0));
        }
    }

    #[test]
    fn partial_pooling_requires_three_columns_and_reports_hyperparameters() {
        let n = 30;
        let lpd = separated_lpd(n, 15);
        let model_names = names(&["a", "b"]);

        let err = fit_hier_stacking(
            &model_names,
            &lpd,
            &time_covariates(n),
            true,
            &Priors::default(),
            &quick_config(47),
        )
        .unwrap_err();
        assert!(matches!(err, Error::PoolingNeedsColumns(1)));

        // One continuous column plus a two-level discrete covariate makes
        // three columns, enough for pooling.
        let mut covs = time_covariates(n);
        covs.discrete.insert(
            "group".to_string(),
            (0..n).map(|i| if i % 2 == 0 { "x".into() } else { "y".into() }).collect(),
        );
        let fit = fit_hier_stacking(
            &model_names,
            &lpd,
            &covs,
            true,
            &Priors::default(),
            &quick_config(53),
        )
        .unwrap();
        assert!(fit.pooling);
        let pooling = fit.coefficients.as_ref().unwrap().pooling.as_ref().unwrap();
        assert!(pooling.sigma_cont.unwrap() > 0.0);
        assert!(pooling.sigma_disc.unwrap() > 0.0);
        assert!(pooling.offset_cont.is_some());
        assert!(pooling.offset_disc.is_some());
        let labels = fit.covariate_info.as_ref().unwrap().column_labels();
        assert_eq!(labels, vec!["time", "group=x", "group=y"]);
        // 1 intercept + 3 coefficients + mu + 2 offsets + 2 log scales.
        assert_eq!(fit.samples.param_names.len(), 9);
    }

    #[test]
    fn missing_covariates_at_prediction_is_an_error() {
        let n = 30;
        let lpd = separated_lpd(n, 15);
        let fit = fit_hier_stacking(
            &names(&["a", "b"]),
            &lpd,
            &time_covariates(n),
            false,
            &Priors::default(),
            &quick_config(59),
        )
        .unwrap();
        assert!(matches!(
            predict_weights(&fit, None, 3).unwrap_err(),
            Error::MissingCovariates
        ));
    }

    #[test]
    fn convergence_flag_follows_rhat_threshold() {
        assert!(all_converged(&[1.0, 1.049]));
        assert!(!all_converged(&[1.0, 1.051]));
        assert!(!all_converged(&[1.0, f64::NAN]));
    }

    #[test]
    fn chain_and_draw_roundtrip() {
        let run_names = vec!["p".to_string()];
        let samples = PosteriorSamples {
            param_names: run_names,
            chains: 3,
            draws_per_chain: 10,
            values: Array2::zeros((30, 1)),
        };
        assert_eq!(samples.chain_and_draw(0), (0, 0));
        assert_eq!(samples.chain_and_draw(14), (1, 4));
        assert_eq!(samples.chain_and_draw(29), (2, 9));
    }
}
