//! On-disk JSON representation of an estimated weighting.
//!
//! The file stores everything needed to reuse a fit later: posterior-mean
//! weights, regression coefficients and frozen covariate statistics for
//! hierarchical fits, convergence diagnostics, the seed, and (for sampled
//! fits) the raw score draws so weights can be re-derived on new
//! covariate values. Floats are written with shortest-round-trip
//! precision, so save followed by load reproduces every value bit for
//! bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariates::CovariateStats;
use crate::error::{Error, Result};
use crate::fit::{FitDiagnostics, FitKind, PosteriorSamples, StackingFit};
use crate::posterior::StackingCoefficients;
use crate::weights::{OptimizeReport, WeightMatrix};

use super::json_float;
use super::manifest::Method;

/// Convergence and optimizer diagnostics, with fields present only when
/// the producing method defines them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_names: Option<Vec<String>>,
    /// Split R-hat per parameter; undefined values are written as "nan".
    #[serde(default, skip_serializing_if = "Option::is_none", with = "json_float::opt_list")]
    pub rhat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess_bulk: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergences: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accept_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_inf_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flat_objective: Option<bool>,
}

impl DiagnosticsFile {
    fn closed_form() -> Self {
        DiagnosticsFile {
            converged: true,
            param_names: None,
            rhat: None,
            ess_bulk: None,
            divergences: None,
            accept_rate: None,
            step_size: None,
            final_objective: None,
            iterations: None,
            grad_inf_norm: None,
            flat_objective: None,
        }
    }

    fn from_report(report: &OptimizeReport) -> Self {
        DiagnosticsFile {
            converged: report.converged,
            final_objective: Some(report.final_objective),
            iterations: Some(report.iterations),
            grad_inf_norm: Some(report.grad_inf_norm),
            flat_objective: Some(report.flat_objective),
            ..Self::closed_form()
        }
    }

    fn from_fit(d: &FitDiagnostics) -> Self {
        DiagnosticsFile {
            converged: d.converged,
            param_names: Some(d.param_names.clone()),
            rhat: Some(d.rhat.clone()),
            ess_bulk: Some(d.ess_bulk.clone()),
            divergences: Some(d.divergences),
            accept_rate: Some(d.accept_rate),
            step_size: Some(d.step_size.clone()),
            ..Self::closed_form()
        }
    }
}

/// Raw posterior draws of the unconstrained parameters, pooled across
/// chains in chain order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplesFile {
    pub param_names: Vec<String>,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    pub method: Method,
    pub model_names: Vec<String>,
    /// Weights, one inner vector per model; length 1 for data-independent
    /// methods, N for covariate-dependent ones.
    pub weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<StackingCoefficients>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_info: Option<CovariateStats>,
    pub diagnostics: DiagnosticsFile,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<SamplesFile>,
}

fn weights_to_nested(w: &WeightMatrix) -> Vec<Vec<f64>> {
    w.weights().rows().into_iter().map(|r| r.to_vec()).collect()
}

impl FitFile {
    /// Package a closed-form weighting (pseudo-BMA with or without the
    /// Bayesian bootstrap).
    pub fn from_weights(method: Method, weights: &WeightMatrix, seed: u64) -> FitFile {
        FitFile {
            method,
            model_names: weights.model_names().to_vec(),
            weights: weights_to_nested(weights),
            coefficients: None,
            covariate_info: None,
            diagnostics: DiagnosticsFile::closed_form(),
            seed,
            pooling: None,
            samples: None,
        }
    }

    /// Package an optimizer-based weighting together with its report.
    pub fn from_optimized(
        method: Method,
        weights: &WeightMatrix,
        report: &OptimizeReport,
        seed: u64,
    ) -> FitFile {
        FitFile {
            method,
            model_names: weights.model_names().to_vec(),
            weights: weights_to_nested(weights),
            coefficients: None,
            covariate_info: None,
            diagnostics: DiagnosticsFile::from_report(report),
            seed,
            pooling: None,
            samples: None,
        }
    }

    /// Package a sampled stacking fit, keeping the posterior draws so the
    /// fit can produce weights for new covariate values later.
    pub fn from_stacking_fit(fit: &StackingFit) -> FitFile {
        let method = match fit.kind {
            FitKind::BayesPooled => Method::BayesStacking,
            FitKind::Hierarchical => Method::HierStacking,
        };
        FitFile {
            method,
            model_names: fit.model_names.clone(),
            weights: weights_to_nested(&fit.weights),
            coefficients: fit.coefficients.clone(),
            covariate_info: fit.covariate_info.clone(),
            diagnostics: DiagnosticsFile::from_fit(&fit.diagnostics),
            seed: fit.seed,
            pooling: Some(fit.pooling),
            samples: Some(SamplesFile {
                param_names: fit.samples.param_names.clone(),
                chains: fit.samples.chains,
                draws_per_chain: fit.samples.draws_per_chain,
                values: fit.samples.values.rows().into_iter().map(|r| r.to_vec()).collect(),
            }),
        }
    }

    pub fn load(path: &Path) -> Result<FitFile> {
        let text = super::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        bytes.push(b'\n');
        super::atomic_write(path, &bytes)
    }

    /// Rebuild the validated weight matrix. Stored weights went through a
    /// softmax before printing, so they are checked at a round-trip
    /// tolerance rather than the construction tolerance.
    pub fn weight_matrix(&self) -> Result<WeightMatrix> {
        let k = self.weights.len();
        let n = self.weights.first().map_or(0, Vec::len);
        if k == 0 || n == 0 {
            return Err(Error::FitFile("fit file holds an empty weight matrix".into()));
        }
        let mut m = ndarray::Array2::zeros((k, n));
        for (i, row) in self.weights.iter().enumerate() {
            if row.len() != n {
                return Err(Error::FitFile(format!(
                    "weight row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                m[[i, j]] = *v;
            }
        }
        WeightMatrix::with_tolerance(self.model_names.clone(), m, 1e-9)
    }

    /// Reconstruct the in-memory fit, which requires stored draws.
    /// Closed-form and optimizer fits have none and cannot be used where
    /// posterior scores are needed.
    pub fn to_stacking_fit(&self) -> Result<StackingFit> {
        let samples = self.samples.as_ref().ok_or_else(|| {
            Error::FitFile(format!(
                "method {} stores no posterior draws; refit to get covariate-dependent weights",
                self.method.as_str()
            ))
        })?;
        let kind = match self.method {
            Method::BayesStacking => FitKind::BayesPooled,
            Method::HierStacking => FitKind::Hierarchical,
            other => {
                return Err(Error::FitFile(format!(
                    "method {} is not a sampled stacking fit",
                    other.as_str()
                )))
            }
        };
        let dim = samples.param_names.len();
        let rows = samples.values.len();
        if rows != samples.chains * samples.draws_per_chain {
            return Err(Error::FitFile(format!(
                "samples hold {rows} rows, expected chains*draws = {}",
                samples.chains * samples.draws_per_chain
            )));
        }
        let mut values = ndarray::Array2::zeros((rows, dim));
        for (r, row) in samples.values.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::FitFile(format!(
                    "sample row {r} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            for (c, v) in row.iter().enumerate() {
                values[[r, c]] = *v;
            }
        }
        let d = &self.diagnostics;
        let diagnostics = FitDiagnostics {
            param_names: d.param_names.clone().unwrap_or_else(|| samples.param_names.clone()),
            rhat: d.rhat.clone().unwrap_or_default(),
            ess_bulk: d.ess_bulk.clone().unwrap_or_default(),
            divergences: d.divergences.unwrap_or(0),
            accept_rate: d.accept_rate.unwrap_or(f64::NAN),
            step_size: d.step_size.clone().unwrap_or_default(),
            converged: d.converged,
        };
        Ok(StackingFit {
            kind,
            model_names: self.model_names.clone(),
            weights: self.weight_matrix()?,
            coefficients: self.coefficients.clone(),
            samples: PosteriorSamples {
                param_names: samples.param_names.clone(),
                chains: samples.chains,
                draws_per_chain: samples.draws_per_chain,
                values,
            },
            diagnostics,
            covariate_info: self.covariate_info.clone(),
            pooling: self.pooling.unwrap_or(false),
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;
    use ndarray::array;

    fn sample_weights() -> WeightMatrix {
        WeightMatrix::new(
            vec!["a".into(), "b".into()],
            array![[0.25, 0.75], [0.75, 0.25]],
        )
        .unwrap()
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.json");
        let w = WeightMatrix::new(
            vec!["a".into(), "b".into()],
            array![[0.1 + 0.2], [1.0 - (0.1 + 0.2)]],
        )
        .unwrap();
        let file = FitFile::from_weights(Method::PseudoBma, &w, 42);
        file.save(&path).unwrap();
        let back = FitFile::load(&path).unwrap();
        assert_eq!(back.seed, 42);
        assert_eq!(back.method, Method::PseudoBma);
        assert_eq!(
            back.weights[0][0].to_bits(),
            (0.1f64 + 0.2).to_bits(),
            "weights must survive the round trip exactly"
        );
        assert_eq!(back.weight_matrix().unwrap(), w);
        assert!(back.samples.is_none());
        assert!(back.diagnostics.converged);
    }

    #[test]
    fn optimizer_report_fields_survive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.json");
        let report = OptimizeReport {
            converged: true,
            iterations: 17,
            final_objective: -123.456,
            grad_inf_norm: 3.2e-12,
            flat_objective: false,
        };
        let file = FitFile::from_optimized(Method::MleStacking, &sample_weights(), &report, 7);
        file.save(&path).unwrap();
        let back = FitFile::load(&path).unwrap();
        assert_eq!(back.diagnostics.iterations, Some(17));
        assert_eq!(back.diagnostics.final_objective, Some(-123.456));
        assert_eq!(back.diagnostics.flat_objective, Some(false));
        assert!(back.diagnostics.rhat.is_none());
        assert!(back.to_stacking_fit().is_err());
    }

    #[test]
    fn sampled_fit_round_trips_through_disk() {
        use crate::fit::fit_bayes_stacking;
        use crate::hmc::HmcConfig;

        let lpd = ndarray::Array2::from_shape_fn((2, 20), |(k, i)| {
            if (i < 10) == (k == 0) {
                (0.8f64).ln()
            } else {
                (0.3f64).ln()
            }
        });
        let config = HmcConfig {
            chains: 2,
            warmup: 200,
            draws: 100,
            seed: 3,
            ..HmcConfig::default()
        };
        let names = vec!["a".to_string(), "b".to_string()];
        let fit = fit_bayes_stacking(&names, &lpd, &[1.0, 1.0], &config).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.json");
        FitFile::from_stacking_fit(&fit).save(&path).unwrap();
        let back = FitFile::load(&path).unwrap().to_stacking_fit().unwrap();

        assert_eq!(back.kind, fit.kind);
        assert_eq!(back.model_names, fit.model_names);
        assert_eq!(back.weights, fit.weights);
        assert_eq!(back.samples.values, fit.samples.values);
        assert_eq!(back.diagnostics.converged, fit.diagnostics.converged);
        assert_eq!(back.seed, fit.seed);
    }

    #[test]
    fn nan_rhat_serializes_as_string() {
        let mut d = DiagnosticsFile::closed_form();
        d.rhat = Some(vec![1.01, f64::NAN]);
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"nan\""), "got {json}");
        let back: DiagnosticsFile = serde_json::from_str(&json).unwrap();
        let rhat = back.rhat.unwrap();
        assert_eq!(rhat[0], 1.01);
        assert!(rhat[1].is_nan());
    }

    #[test]
    fn bad_weight_matrix_is_rejected() {
        let mut file = FitFile::from_weights(Method::PseudoBma, &sample_weights(), 0);
        file.weights[0][0] = 0.9;
        match file.weight_matrix().unwrap_err() {
            Error::WeightColumnSum { col: 0, .. } => {}
            other => panic!("unexpected error {other:?}"),
        }

        let empty = FitFile {
            weights: vec![],
            ..FitFile::from_weights(Method::PseudoBma, &sample_weights(), 0)
        };
        assert!(matches!(empty.weight_matrix().unwrap_err(), Error::FitFile(_)));
    }

    #[test]
    fn ordered_maps_keep_insertion_order_in_json() {
        let mut continuous = IndexMap::new();
        continuous.insert(
            "zeta".to_string(),
            crate::covariates::ContinuousStats {
                mean: 1.0,
                two_sd: 2.0,
                median: 1.0,
            },
        );
        continuous.insert(
            "alpha".to_string(),
            crate::covariates::ContinuousStats {
                mean: 3.0,
                two_sd: 4.0,
                median: 3.0,
            },
        );
        let stats = CovariateStats {
            transform: crate::covariates::Transform::Standardize,
            continuous,
            discrete: IndexMap::new(),
        };
        let json = serde_json::to_string(&stats).unwrap();
        assert!(
            json.find("zeta").unwrap() < json.find("alpha").unwrap(),
            "insertion order must survive serialization: {json}"
        );
    }
}
