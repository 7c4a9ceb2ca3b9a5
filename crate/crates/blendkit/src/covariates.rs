//! Covariate handling for hierarchical stacking: transforms, frozen
//! training statistics, and design-matrix construction.

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transform applied to every continuous covariate when building the
/// design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `(x - mean) / (2 * sd)`, where `mean` and `sd` are the training
    /// mean and population standard deviation. Dividing by two standard
    /// deviations puts continuous coefficients on roughly the same scale
    /// as coefficients of binary indicator columns.
    #[default]
    Standardize,
    /// `x` unchanged.
    Identity,
    /// `max(x - median, 0)`, where `median` is the training median.
    Relu,
}

/// Summary statistics for one continuous covariate, frozen at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStats {
    pub mean: f64,
    /// Twice the population standard deviation of the training values.
    pub two_sd: f64,
    pub median: f64,
}

/// Everything needed to rebuild the design matrix for new data exactly as
/// it was built at fit time: the transform, per-covariate statistics, and
/// the observed levels of each discrete covariate in first-appearance
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateStats {
    pub transform: Transform,
    pub continuous: IndexMap<String, ContinuousStats>,
    pub discrete: IndexMap<String, Vec<String>>,
}

impl CovariateStats {
    /// Number of design-matrix columns contributed by continuous
    /// covariates (one each).
    pub fn n_continuous_columns(&self) -> usize {
        self.continuous.len()
    }

    /// Number of design-matrix columns contributed by discrete
    /// covariates (one indicator per observed level).
    pub fn n_discrete_columns(&self) -> usize {
        self.discrete.values().map(Vec::len).sum()
    }

    /// Human-readable labels for the design columns, continuous first in
    /// map order, then one `name=level` label per discrete level.
    pub fn column_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.continuous.keys().cloned().collect();
        for (name, levels) in &self.discrete {
            for level in levels {
                labels.push(format!("{name}={level}"));
            }
        }
        labels
    }
}

/// Per-datapoint covariates for hierarchical stacking.
///
/// Continuous covariates each become one design column after the
/// configured transform. Discrete covariates become one indicator column
/// per level (a full one-hot encoding, with no level dropped), which
/// keeps every level's offset shrinkable toward the shared mean under
/// partial pooling.
#[derive(Debug, Clone, Default)]
pub struct CovariateSet {
    pub continuous: IndexMap<String, Vec<f64>>,
    pub discrete: IndexMap<String, Vec<String>>,
    pub transform: Transform,
}

impl CovariateSet {
    /// A covariate set with no covariates at all (intercept-only
    /// stacking).
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.continuous.is_empty() && self.discrete.is_empty()
    }
}

fn population_sd(xs: &[f64], mean: f64) -> f64 {
    let n = xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn median(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite values rejected earlier"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn check_lengths(covariates: &CovariateSet, n: usize) -> Result<()> {
    for (name, values) in &covariates.continuous {
        if values.len() != n {
            return Err(Error::CovariateLength {
                name: name.clone(),
                got: values.len(),
                expected: n,
            });
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "continuous covariate \"{name}\" has non-finite value {v} at index {i}"
                )));
            }
        }
    }
    for (name, values) in &covariates.discrete {
        if values.len() != n {
            return Err(Error::CovariateLength {
                name: name.clone(),
                got: values.len(),
                expected: n,
            });
        }
    }
    Ok(())
}

fn compute_stats(covariates: &CovariateSet) -> CovariateStats {
    let mut continuous = IndexMap::new();
    for (name, values) in &covariates.continuous {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        continuous.insert(
            name.clone(),
            ContinuousStats {
                mean,
                two_sd: 2.0 * population_sd(values, mean),
                median: median(values),
            },
        );
    }
    let mut discrete = IndexMap::new();
    for (name, values) in &covariates.discrete {
        let mut levels: Vec<String> = Vec::new();
        for v in values {
            if !levels.contains(v) {
                levels.push(v.clone());
            }
        }
        discrete.insert(name.clone(), levels);
    }
    CovariateStats {
        transform: covariates.transform,
        continuous,
        discrete,
    }
}

fn check_against_stats(covariates: &CovariateSet, stats: &CovariateStats) -> Result<()> {
    if covariates.transform != stats.transform {
        return Err(Error::CovariateMismatch(format!(
            "transform {:?} does not match the transform used at fit time ({:?})",
            covariates.transform, stats.transform
        )));
    }
    let have: Vec<&String> = covariates.continuous.keys().collect();
    let want: Vec<&String> = stats.continuous.keys().collect();
    let mut have_sorted = have.clone();
    let mut want_sorted = want.clone();
    have_sorted.sort();
    want_sorted.sort();
    if have_sorted != want_sorted {
        return Err(Error::CovariateMismatch(format!(
            "continuous covariates {have:?} do not match those seen at fit time {want:?}"
        )));
    }
    let have: Vec<&String> = covariates.discrete.keys().collect();
    let want: Vec<&String> = stats.discrete.keys().collect();
    let mut have_sorted = have.clone();
    let mut want_sorted = want.clone();
    have_sorted.sort();
    want_sorted.sort();
    if have_sorted != want_sorted {
        return Err(Error::CovariateMismatch(format!(
            "discrete covariates {have:?} do not match those seen at fit time {want:?}"
        )));
    }
    Ok(())
}

/// Build the design matrix for `n` datapoints.
///
/// When `fit_stats` is `None` (the fit path), statistics and discrete
/// levels are computed from `covariates` and returned alongside the
/// matrix. When `fit_stats` is `Some` (the prediction path), every
/// statistic and level list comes from it unchanged, so the same raw
/// covariate values always map to the same design rows; a discrete value
/// never seen at fit time is an error.
///
/// Columns are ordered: continuous covariates in map order, then for each
/// discrete covariate one indicator column per level in
/// first-appearance order.
pub fn transform_covariates(
    covariates: &CovariateSet,
    n: usize,
    fit_stats: Option<&CovariateStats>,
) -> Result<(Array2<f64>, CovariateStats)> {
    check_lengths(covariates, n)?;
    let stats = match fit_stats {
        Some(s) => {
            check_against_stats(covariates, s)?;
            s.clone()
        }
        None => compute_stats(covariates),
    };

    let p = stats.n_continuous_columns() + stats.n_discrete_columns();
    let mut design = Array2::zeros((n, p));
    let mut col = 0;

    for (name, cont) in &stats.continuous {
        let values = &covariates.continuous[name];
        match stats.transform {
            Transform::Standardize => {
                if cont.two_sd <= 0.0 {
                    return Err(Error::ConstantCovariate(name.clone()));
                }
                for i in 0..n {
                    design[[i, col]] = (values[i] - cont.mean) / cont.two_sd;
                }
            }
            Transform::Identity => {
                for i in 0..n {
                    design[[i, col]] = values[i];
                }
            }
            Transform::Relu => {
                for i in 0..n {
                    design[[i, col]] = (values[i] - cont.median).max(0.0);
                }
            }
        }
        col += 1;
    }

    for (name, levels) in &stats.discrete {
        let values = &covariates.discrete[name];
        for (i, v) in values.iter().enumerate() {
            match levels.iter().position(|l| l == v) {
                Some(idx) => design[[i, col + idx]] = 1.0,
                None => {
                    return Err(Error::UnseenLevel {
                        covariate: name.clone(),
                        level: v.clone(),
                    })
                }
            }
        }
        col += levels.len();
    }
    debug_assert_eq!(col, p);

    Ok((design, stats))
}
