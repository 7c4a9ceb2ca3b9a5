//! Blend candidate models' draws into one predictive distribution under a
//! weight matrix, and compare models or blends by ELPD.

use indexmap::IndexMap;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::draws::{Draws, DrawsCollection};
use crate::error::{Error, Result};
use crate::math::mean_var;
use crate::weights::WeightMatrix;

/// Blend per-draw quantities across models by sampling a model index for
/// every (sample, datapoint) cell from the weight column of that
/// datapoint.
///
/// Cells are visited samples-outer, datapoints-inner, consuming one
/// uniform variate each from a generator seeded with `seed`, so output is
/// bit-stable for a given seed regardless of thread count. The blended
/// log likelihood entry at (s, i) is the chosen model's entry at (s, i);
/// posterior predictions blend the same way and are present only when
/// every model carries them.
///
/// With a one-hot weight column the blend is an exact pass-through of the
/// selected model. As the number of samples grows the blended lpd of a
/// datapoint converges to `log sum_k w_k exp(lpd_k)`, the deterministic
/// mixture.
pub fn blend(models: &DrawsCollection, weights: &WeightMatrix, seed: u64) -> Result<Draws> {
    let names = models.names();
    if weights.model_names() != names.as_slice() {
        return Err(Error::ModelNameMismatch {
            expected: names.join(", "),
            got: weights.model_names().join(", "),
        });
    }
    let s = models.n_samples();
    let n = models.n_datapoints();
    let k = models.len();
    if weights.n_columns() != 1 && weights.n_columns() != n {
        return Err(Error::ShapeMismatch {
            what: "weight matrix".to_string(),
            expected_rows: k,
            expected_cols: n,
            rows: weights.n_models(),
            cols: weights.n_columns(),
        });
    }

    let draws: Vec<&Draws> = names
        .iter()
        .map(|name| models.get(name).expect("names come from the collection"))
        .collect();
    let all_have_post_pred = draws.iter().all(|d| d.post_pred().is_some());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_lik = Array2::zeros((s, n));
    let mut post_pred = all_have_post_pred.then(|| Array2::zeros((s, n)));
    for si in 0..s {
        for i in 0..n {
            let u: f64 = rng.random();
            // Walk the cumulative weights; leftover mass from rounding
            // goes to the last model.
            let mut chosen = k - 1;
            let mut acc = 0.0;
            for kk in 0..k {
                acc += weights.at(kk, i);
                if u < acc {
                    chosen = kk;
                    break;
                }
            }
            log_lik[[si, i]] = draws[chosen].log_lik()[[si, i]];
            if let Some(pp) = post_pred.as_mut() {
                pp[[si, i]] = draws[chosen].post_pred().expect("checked above")[[si, i]];
            }
        }
    }
    Draws::new(log_lik, post_pred)
}

/// Total expected log pointwise predictive density: the sum over
/// datapoints of the log mean predictive density across samples.
pub fn elpd_of(draws: &Draws) -> f64 {
    draws.lpd().sum()
}

/// One model's row in an ELPD comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    /// Total elpd, `sum_i lpd_i`.
    pub elpd: f64,
    /// Difference from the best row (zero for the best).
    pub elpd_diff: f64,
    /// Standard error of the difference: `sqrt(N * var(lpd_i - lpd_best_i))`.
    pub se_diff: f64,
}

/// Models ranked by ELPD, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElpdComparison {
    pub rows: Vec<ComparisonRow>,
}

impl ElpdComparison {
    pub fn best(&self) -> &ComparisonRow {
        &self.rows[0]
    }
}

impl std::fmt::Display for ElpdComparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name_width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(0)
            .max("model".len());
        writeln!(
            f,
            "{:<name_width$}  {:>12}  {:>12}  {:>12}",
            "model", "elpd", "elpd_diff", "se_diff"
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<name_width$}  {:>12.4}  {:>12.4}  {:>12.4}",
                row.name, row.elpd, row.elpd_diff, row.se_diff
            )?;
        }
        Ok(())
    }
}

/// Rank entries by total ELPD, with pairwise standard errors against the
/// best entry.
///
/// Every entry must share the datapoint count (sample counts may differ).
/// `se_diff` is the standard error of the pointwise lpd differences
/// against the best entry; the best row's is zero, as is any computed
/// from a single datapoint.
pub fn compare(entries: &IndexMap<String, Draws>) -> Result<ElpdComparison> {
    if entries.is_empty() {
        return Err(Error::InvalidArgument(
            "comparison needs at least one entry".into(),
        ));
    }
    let n = entries[0].n_datapoints();
    for (name, d) in entries {
        if d.n_datapoints() != n {
            return Err(Error::LengthMismatch(format!(
                "entry \"{name}\" has {} datapoints, expected {n}",
                d.n_datapoints()
            )));
        }
    }

    let lpds: Vec<(String, Vec<f64>)> = entries
        .iter()
        .map(|(name, d)| (name.clone(), d.lpd().to_vec()))
        .collect();
    let totals: Vec<f64> = lpds.iter().map(|(_, l)| l.iter().sum()).collect();
    let best_idx = totals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("elpd totals are not NaN"))
        .map(|(i, _)| i)
        .expect("entries is non-empty");
    let best_lpd = lpds[best_idx].1.clone();
    let best_total = totals[best_idx];

    let mut rows: Vec<ComparisonRow> = lpds
        .iter()
        .zip(&totals)
        .enumerate()
        .map(|(idx, ((name, lpd), &total))| {
            let se_diff = if idx == best_idx || n < 2 {
                0.0
            } else {
                let diffs: Vec<f64> = lpd
                    .iter()
                    .zip(&best_lpd)
                    .map(|(a, b)| a - b)
                    .collect();
                let (_, var) = mean_var(&diffs);
                (n as f64 * var).sqrt()
            };
            ComparisonRow {
                name: name.clone(),
                elpd: total,
                elpd_diff: total - best_total,
                se_diff,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.elpd.partial_cmp(&a.elpd).expect("elpd totals are not NaN"));
    Ok(ElpdComparison { rows })
}
