//! The JSON manifest that names candidate models, covariates, the
//! weighting method, priors, and sampler settings for a CLI run.
//!
//! Model order in the manifest is meaningful: it fixes the reference
//! model for stacking (the last one), the row order of every output, and
//! the score-to-model pairing. Relative paths resolve against the
//! manifest's own directory.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateSet, Transform};
use crate::draws::{Draws, DrawsCollection};
use crate::error::{Error, Result};
use crate::hmc::HmcConfig;
use crate::posterior::Priors;

use super::matrix_csv::read_matrix_csv;

/// Weight-estimation method selector, shared by manifests, fit files, and
/// the CLI `--method` flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Softmax of total elpd.
    PseudoBma,
    /// Softmax of Bayesian-bootstrap replicated elpd, averaged.
    PseudoBmaPlus,
    /// Maximum-likelihood stacking of predictive densities.
    MleStacking,
    /// Full-Bayes complete-pooling stacking (posterior sampling).
    BayesStacking,
    /// Hierarchical covariate-dependent stacking (posterior sampling).
    HierStacking,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::PseudoBma => "pseudo-bma",
            Method::PseudoBmaPlus => "pseudo-bma-plus",
            Method::MleStacking => "mle-stacking",
            Method::BayesStacking => "bayes-stacking",
            Method::HierStacking => "hier-stacking",
        }
    }
}

/// One candidate model's draw files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    /// CSV of log likelihood draws, samples by datapoints.
    pub log_lik: String,
    /// Optional CSV of posterior predictive draws with the same shape.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_pred: Option<String>,
}

/// A continuous covariate: inline values or a path to a one-column CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContinuousSource {
    Inline(Vec<f64>),
    Path(String),
}

/// A discrete covariate: inline labels or a path to a file with one label
/// per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiscreteSource {
    Inline(Vec<String>),
    Path(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CovariatesSpec {
    #[serde(default)]
    pub continuous: IndexMap<String, ContinuousSource>,
    #[serde(default)]
    pub discrete: IndexMap<String, DiscreteSource>,
    #[serde(default)]
    pub transform: Transform,
}

fn default_sd() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_prior: Option<Vec<f64>>,
    #[serde(default = "default_sd")]
    pub alpha_prior_sd: f64,
    #[serde(default = "default_sd")]
    pub beta_prior_sd: f64,
    #[serde(default = "default_sd")]
    pub pooling_scale_sd: f64,
}

impl From<PriorsSpec> for Priors {
    fn from(spec: PriorsSpec) -> Priors {
        Priors {
            w_prior: spec.w_prior,
            alpha_prior_sd: spec.alpha_prior_sd,
            beta_prior_sd: spec.beta_prior_sd,
            pooling_scale_sd: spec.pooling_scale_sd,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default = "SamplerSpec::default_chains")]
    pub chains: usize,
    #[serde(default = "SamplerSpec::default_warmup")]
    pub warmup: usize,
    #[serde(default = "SamplerSpec::default_draws")]
    pub draws: usize,
    #[serde(default = "SamplerSpec::default_target_accept")]
    pub target_accept: f64,
    #[serde(default = "SamplerSpec::default_max_leapfrog")]
    pub max_leapfrog: usize,
    #[serde(default = "SamplerSpec::default_max_step_doublings")]
    pub max_step_doublings: usize,
}

impl SamplerSpec {
    fn default_chains() -> usize {
        HmcConfig::default().chains
    }

    fn default_warmup() -> usize {
        HmcConfig::default().warmup
    }

    fn default_draws() -> usize {
        HmcConfig::default().draws
    }

    fn default_target_accept() -> f64 {
        HmcConfig::default().target_accept
    }

    fn default_max_leapfrog() -> usize {
        HmcConfig::default().max_leapfrog
    }

    fn default_max_step_doublings() -> usize {
        HmcConfig::default().max_step_doublings
    }
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec {
            chains: Self::default_chains(),
            warmup: Self::default_warmup(),
            draws: Self::default_draws(),
            target_accept: Self::default_target_accept(),
            max_leapfrog: Self::default_max_leapfrog(),
            max_step_doublings: Self::default_max_step_doublings(),
        }
    }
}

fn default_bootstrap() -> usize {
    1000
}

/// A parsed manifest plus the directory its relative paths resolve in.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub spec: ManifestSpec,
    base_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSpec {
    pub models: IndexMap<String, ModelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<CovariatesSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<PriorsSpec>,
    #[serde(default)]
    pub partial_pooling: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_b: usize,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = super::read_to_string(path)?;
        let spec: ManifestSpec = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        if spec.models.len() < 2 {
            return Err(Error::Manifest(format!(
                "need at least 2 models, got {}",
                spec.models.len()
            )));
        }
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Manifest { spec, base_dir })
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Read every model's draw matrices into a collection, preserving
    /// manifest order.
    pub fn load_collection(&self) -> Result<DrawsCollection> {
        let mut pairs = Vec::with_capacity(self.spec.models.len());
        for (name, entry) in &self.spec.models {
            let log_lik = read_matrix_csv(&self.resolve(&entry.log_lik))?;
            let post_pred = entry
                .post_pred
                .as_ref()
                .map(|p| read_matrix_csv(&self.resolve(p)))
                .transpose()?;
            pairs.push((name.clone(), Draws::new(log_lik, post_pred)?));
        }
        DrawsCollection::from_pairs(pairs)
    }

    /// Materialize the covariate set, reading any file-backed columns.
    /// `None` when the manifest declares no covariates.
    pub fn covariate_set(&self) -> Result<Option<CovariateSet>> {
        let Some(spec) = &self.spec.covariates else {
            return Ok(None);
        };
        let mut continuous = IndexMap::new();
        for (name, source) in &spec.continuous {
            let values = match source {
                ContinuousSource::Inline(v) => v.clone(),
                ContinuousSource::Path(p) => {
                    let m = read_matrix_csv(&self.resolve(p))?;
                    let (rows, cols) = m.dim();
                    if rows != 1 && cols != 1 {
                        return Err(Error::Manifest(format!(
                            "continuous covariate \"{name}\" file {p} is {rows}x{cols}; need a single row or column"
                        )));
                    }
                    m.iter().copied().collect()
                }
            };
            continuous.insert(name.clone(), values);
        }
        let mut discrete = IndexMap::new();
        for (name, source) in &spec.discrete {
            let values = match source {
                DiscreteSource::Inline(v) => v.clone(),
                DiscreteSource::Path(p) => super::read_to_string(&self.resolve(p))?
                    .lines()
                    .map(|l| l.trim().to_string())
                    .filter(|l| !l.is_empty())
                    .collect(),
            };
            discrete.insert(name.clone(), values);
        }
        Ok(Some(CovariateSet {
            continuous,
            discrete,
            transform: spec.transform,
        }))
    }

    pub fn priors(&self) -> Priors {
        self.spec
            .priors
            .clone()
            .map(Priors::from)
            .unwrap_or_default()
    }

    pub fn hmc_config(&self, seed: u64) -> HmcConfig {
        let s = self.spec.sampler.clone().unwrap_or_default();
        HmcConfig {
            chains: s.chains,
            warmup: s.warmup,
            draws: s.draws,
            target_accept: s.target_accept,
            max_leapfrog: s.max_leapfrog,
            max_step_doublings: s.max_step_doublings,
            seed,
        }
    }
}
