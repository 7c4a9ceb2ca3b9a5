//! Model averaging over collections of Bayesian posterior draws.
//!
//! When several candidate models have been fit to the same data, blendkit
//! estimates how to weight them, samples the combined ("blended")
//! predictive distribution, and scores the result. It never fits the
//! candidate models themselves; the input is what any Bayesian workflow
//! already produces, a matrix of pointwise log likelihoods per model (S
//! posterior samples by N datapoints), optionally paired with posterior
//! predictive draws on the same grid.
//!
//! The pipeline has three stages, each usable on its own:
//!
//! - **Scoring.** Pointwise expected log predictive density, either of
//!   held-out data ([`elpd_from_test`]) or estimated from training data
//!   by Pareto-smoothed importance-sampling leave-one-out cross
//!   validation ([`elpd_psis_loo`]), with per-point tail-shape
//!   diagnostics.
//! - **Weighting.** Five estimators with one output type
//!   ([`WeightMatrix`]): closed-form [`pseudo_bma`] and its
//!   bootstrap-regularized variant [`pseudo_bma_plus`], optimization-based
//!   [`mle_stacking`], and two sampled posteriors over weights,
//!   [`fit_bayes_stacking`] (one weight vector) and [`fit_hier_stacking`]
//!   (covariate-dependent weights per datapoint, with optional partial
//!   pooling), fit by the built-in Hamiltonian Monte Carlo sampler.
//! - **Blending.** [`blend`] draws from the weighted mixture,
//!   deterministically for a given seed; [`compare`] ranks models and
//!   blends by total elpd with standard errors on the differences.
//!
//! The same functionality is available as a command-line tool over CSV
//! draw matrices and a JSON manifest; see the [`io`] module. A guide with
//! worked examples lives in the repository's `book/` directory, and every
//! snippet in it runs against this crate as a doc-test.
//!
//! # Example
//!
//! Two models with complementary strengths, weighted by stacking and
//! blended:
//!
//! ```
//! use indexmap::IndexMap;
//! use ndarray::array;
//! use blendkit::{blend, elpd_of, mle_stacking, Draws, DrawsCollection, StackingOptions};
//!
//! // Pointwise log likelihoods: rows are posterior samples, columns are
//! // datapoints. Model "a" explains the first two points, "b" the rest.
//! let a = Draws::new(
//!     array![
//!         [-0.4, -0.5, -2.0, -2.1],
//!         [-0.5, -0.6, -2.2, -1.9],
//!     ],
//!     None,
//! )?;
//! let b = Draws::new(
//!     array![
//!         [-1.8, -1.7, -0.6, -0.5],
//!         [-1.9, -1.6, -0.5, -0.7],
//!     ],
//!     None,
//! )?;
//! let mut models = IndexMap::new();
//! models.insert("a".to_string(), a);
//! models.insert("b".to_string(), b);
//! let collection = DrawsCollection::new(models)?;
//!
//! let (weights, report) = mle_stacking(
//!     collection.names(),
//!     &collection.lpd_matrix(),
//!     &StackingOptions::default(),
//! )?;
//! assert!(report.converged);
//!
//! let blended = blend(&collection, &weights, 7)?;
//! assert!(elpd_of(&blended).is_finite());
//! # Ok::<(), blendkit::Error>(())
//! ```

pub mod blend;
pub mod covariates;
pub mod diagnostics;
pub mod draws;
pub mod error;
pub mod fit;
pub mod gpd;
pub mod hmc;
pub mod io;
pub mod loo;
pub(crate) mod math;
pub mod posterior;
pub mod weights;

pub use blend::{blend, compare, elpd_of, ComparisonRow, ElpdComparison};
pub use covariates::{transform_covariates, ContinuousStats, CovariateSet, CovariateStats, Transform};
pub use diagnostics::{ess_bulk, split_rhat};
pub use draws::{Draws, DrawsCollection};
pub use error::{Error, Result};
pub use fit::{
    fit_bayes_stacking, fit_hier_stacking, predict_weights, FitDiagnostics, FitKind,
    PosteriorSamples, StackingFit,
};
pub use gpd::{fit_gpd, GpdFit};
pub use hmc::{hmc_sample, HmcConfig, HmcRun, LogDensity};
pub use loo::{elpd_from_test, elpd_psis_loo, log_importance_ratios, psis_smooth, ElpdMethod, PointwiseElpd};
pub use posterior::{
    log_post_hier, log_post_pooled, softmax_with_reference, HierPosterior, PooledPosterior,
    PoolingSummary, Priors, StackingCoefficients,
};
pub use weights::{
    mle_stacking, pseudo_bma, pseudo_bma_plus, stacking_objective, OptimizeReport,
    StackingOptions, WeightMatrix,
};
