//! Containers for posterior draws evaluated against a dataset.
//!
//! A [`Draws`] holds an S x N matrix of pointwise log likelihoods (S posterior
//! samples, N datapoints) and optionally an S x N matrix of posterior
//! predictive draws. A [`DrawsCollection`] holds one `Draws` per candidate
//! model, all over the same samples-by-datapoints grid, in a fixed model
//! order that downstream weighting preserves.

use indexmap::IndexMap;
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::math::log_mean_exp;

/// Posterior draws for one model: log likelihood evaluations and optional
/// posterior predictive samples over the same S x N grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    log_lik: Array2<f64>,
    post_pred: Option<Array2<f64>>,
}

impl Draws {
    /// Validates and wraps the matrices.
    ///
    /// `log_lik` must be non-empty and every entry finite or -inf: a -inf
    /// entry is a datapoint with zero predictive density under that draw,
    /// while NaN and +inf can only be upstream bugs and are rejected with
    /// their position. `post_pred`, when given, must match `log_lik`'s shape.
    pub fn new(log_lik: Array2<f64>, post_pred: Option<Array2<f64>>) -> Result<Self> {
        let (s, n) = log_lik.dim();
        if s == 0 || n == 0 {
            return Err(Error::EmptyMatrix { rows: s, cols: n });
        }
        for ((row, col), &v) in log_lik.indexed_iter() {
            if v.is_nan() || v == f64::INFINITY {
                return Err(Error::BadEntry {
                    what: "log_lik",
                    row,
                    col,
                    value: v,
                });
            }
        }
        if let Some(pp) = &post_pred {
            if pp.dim() != (s, n) {
                return Err(Error::ShapeMismatch {
                    what: "post_pred".to_string(),
                    expected_rows: s,
                    expected_cols: n,
                    rows: pp.dim().0,
                    cols: pp.dim().1,
                });
            }
        }
        Ok(Draws { log_lik, post_pred })
    }

    pub fn log_lik(&self) -> &Array2<f64> {
        &self.log_lik
    }

    pub fn post_pred(&self) -> Option<&Array2<f64>> {
        self.post_pred.as_ref()
    }

    /// Number of posterior samples S.
    pub fn n_samples(&self) -> usize {
        self.log_lik.nrows()
    }

    /// Number of datapoints N.
    pub fn n_datapoints(&self) -> usize {
        self.log_lik.ncols()
    }

    /// Pointwise log predictive density: for each datapoint the log of the
    /// mean (over samples) of exp(log_lik), computed with a max shift.
    ///
    /// A column that is -inf in every sample has zero predictive density and
    /// yields exactly -inf rather than a NaN from inf - inf arithmetic.
    pub fn lpd(&self) -> Array1<f64> {
        let cols = self.log_lik.ncols();
        let mut out = Array1::zeros(cols);
        for i in 0..cols {
            let col: Vec<f64> = self.log_lik.column(i).to_vec();
            out[i] = log_mean_exp(&col);
        }
        out
    }
}

/// An ordered set of models' draws over a common grid.
///
/// Insertion order is the model order: it decides output ordering everywhere
/// downstream and which model plays the fixed-score role in stacking.
#[derive(Debug, Clone)]
pub struct DrawsCollection {
    models: IndexMap<String, Draws>,
}

impl DrawsCollection {
    /// Requires at least two models with identical S and N.
    ///
    /// Differing sample counts are rejected rather than subsampled: silently
    /// dropping draws would bias every downstream elpd estimate.
    pub fn new(models: IndexMap<String, Draws>) -> Result<Self> {
        if models.len() < 2 {
            return Err(Error::TooFewModels(models.len()));
        }
        let (first_name, first) = models.first().expect("non-empty");
        let (s, n) = (first.n_samples(), first.n_datapoints());
        let _ = first_name;
        for (name, d) in &models {
            if d.n_samples() != s || d.n_datapoints() != n {
                return Err(Error::ModelShapeMismatch {
                    name: name.clone(),
                    rows: d.n_samples(),
                    cols: d.n_datapoints(),
                    expected_rows: s,
                    expected_cols: n,
                });
            }
        }
        Ok(DrawsCollection { models })
    }

    pub fn from_pairs(pairs: Vec<(String, Draws)>) -> Result<Self> {
        Self::new(pairs.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<&Draws> {
        self.models.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Draws)> {
        self.models.iter()
    }

    pub fn n_samples(&self) -> usize {
        self.models[0].n_samples()
    }

    pub fn n_datapoints(&self) -> usize {
        self.models[0].n_datapoints()
    }

    /// K x N matrix of pointwise log predictive densities, one row per model
    /// in collection order. This is the input grid for every stacking method.
    pub fn lpd_matrix(&self) -> Array2<f64> {
        let k = self.len();
        let n = self.n_datapoints();
        let mut out = Array2::zeros((k, n));
        for (row, (_, d)) in self.models.iter().enumerate() {
            out.row_mut(row).assign(&d.lpd());
        }
        out
    }
}
