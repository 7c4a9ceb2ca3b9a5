//! Implementations of the CLI subcommands, factored out of `main` so
//! they can be driven from tests and other binaries.
//!
//! Every command is deterministic for a given manifest and seed: the same
//! inputs produce the same output bytes. Files are written atomically
//! (temp file then rename), and when `--out` is omitted the commands that
//! produce a single document print it to stdout instead.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::blend::{blend, compare, elpd_of, ElpdComparison};
use crate::covariates::CovariateSet;
use crate::draws::{Draws, DrawsCollection};
use crate::error::{Error, Result};
use crate::fit::{fit_bayes_stacking, fit_hier_stacking, predict_weights};
use crate::loo::{elpd_from_test, elpd_psis_loo, ElpdMethod, PointwiseElpd};
use crate::weights::{mle_stacking, pseudo_bma, pseudo_bma_plus, StackingOptions};

use super::fit_file::FitFile;
use super::json_float;
use super::manifest::{Manifest, Method};
use super::matrix_csv::{read_matrix_csv, write_matrix_csv};
use super::atomic_write;

/// One model's entry in the `loo` command output.
#[derive(Debug, Serialize, Deserialize)]
pub struct LooEntry {
    /// Pointwise elpd estimates; points with zero density under every
    /// draw are "-inf".
    #[serde(with = "json_float::list")]
    pub values: Vec<f64>,
    /// Fitted Pareto tail shape per point; "-inf" marks columns whose
    /// tail was too degenerate to smooth.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "json_float::opt_list")]
    pub pareto_k: Option<Vec<f64>>,
    pub method: String,
    /// Points where draws with zero density were excluded from the
    /// normalization.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged: Vec<usize>,
}

fn method_label(m: ElpdMethod) -> &'static str {
    match m {
        ElpdMethod::TestSet => "test-set",
        ElpdMethod::PsisLoo => "psis-loo",
    }
}

fn loo_entry(e: &PointwiseElpd) -> LooEntry {
    LooEntry {
        values: e.values.to_vec(),
        pareto_k: e.pareto_k.as_ref().map(|k| k.to_vec()),
        method: method_label(e.method).to_string(),
        flagged: e.flagged.clone(),
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>, what: &str) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: what.to_string(),
        source,
    })?;
    bytes.push(b'\n');
    match out {
        Some(path) => atomic_write(path, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

/// `blendkit loo`: PSIS leave-one-out elpd for every model in the
/// manifest, as an ordered JSON object keyed by model name.
pub fn cmd_loo(manifest_path: &Path, out: Option<&Path>) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    let collection = manifest.load_collection()?;
    let mut report: IndexMap<String, LooEntry> = IndexMap::new();
    for (name, draws) in collection.iter() {
        report.insert(name.clone(), loo_entry(&elpd_psis_loo(draws)?));
    }
    emit_json(&report, out, "loo report")
}

fn test_elpds(collection: &DrawsCollection) -> IndexMap<String, PointwiseElpd> {
    collection
        .iter()
        .map(|(name, d)| (name.clone(), elpd_from_test(d)))
        .collect()
}

/// Estimate weights with the manifest's method (or an override) and
/// build the fit document.
pub fn run_weights(manifest: &Manifest, method_override: Option<Method>) -> Result<FitFile> {
    let method = method_override
        .or(manifest.spec.method)
        .ok_or_else(|| Error::Manifest("no method in manifest and none given".into()))?;
    let collection = manifest.load_collection()?;
    let seed = manifest.spec.seed;
    let names = collection.names();
    let k = names.len();

    let file = match method {
        Method::PseudoBma => {
            let w = pseudo_bma(&test_elpds(&collection))?;
            FitFile::from_weights(method, &w, seed)
        }
        Method::PseudoBmaPlus => {
            let w = pseudo_bma_plus(&test_elpds(&collection), manifest.spec.bootstrap_b, seed)?;
            FitFile::from_weights(method, &w, seed)
        }
        Method::MleStacking => {
            let (w, report) =
                mle_stacking(names, &collection.lpd_matrix(), &StackingOptions::default())?;
            FitFile::from_optimized(method, &w, &report, seed)
        }
        Method::BayesStacking => {
            let priors = manifest.priors();
            let fit = fit_bayes_stacking(
                &names,
                &collection.lpd_matrix(),
                &priors.dirichlet_alpha(k),
                &manifest.hmc_config(seed),
            )?;
            FitFile::from_stacking_fit(&fit)
        }
        Method::HierStacking => {
            let covariates = manifest.covariate_set()?.unwrap_or_else(CovariateSet::empty);
            let fit = fit_hier_stacking(
                &names,
                &collection.lpd_matrix(),
                &covariates,
                manifest.spec.partial_pooling,
                &manifest.priors(),
                &manifest.hmc_config(seed),
            )?;
            FitFile::from_stacking_fit(&fit)
        }
    };
    Ok(file)
}

/// `blendkit weights`: estimate model weights and write the fit JSON.
pub fn cmd_weights(
    manifest_path: &Path,
    out: Option<&Path>,
    method_override: Option<Method>,
) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    let file = run_weights(&manifest, method_override)?;
    if !file.diagnostics.converged {
        eprintln!("warning: fit did not converge; see diagnostics in the output");
    }
    emit_json(&file, out, "fit file")
}

/// Summary statistics of a blended predictive distribution.
#[derive(Debug, Serialize, Deserialize)]
pub struct BlendSummary {
    /// Total elpd of the blend, `sum_i log mean_s exp(log_lik[s, i])`.
    #[serde(with = "json_float::scalar")]
    pub elpd: f64,
    /// `elpd / n_datapoints`.
    #[serde(with = "json_float::scalar")]
    pub mean_lpd: f64,
    pub n_samples: usize,
    pub n_datapoints: usize,
    pub seed: u64,
}

/// `blendkit blend`: draw a blended predictive sample from a saved fit
/// and the manifest's models.
///
/// Hierarchical fits re-derive weights from the stored posterior draws
/// and the manifest's covariates (falling back to intercept-only when the
/// fit used no covariates); every other method blends with its stored
/// weights. Writes `blended_log_lik.csv`, `blended_post_pred.csv` when
/// every model carries predictive draws, and `summary.json`.
pub fn cmd_blend(
    fit_path: &Path,
    manifest_path: &Path,
    seed_override: Option<u64>,
    out_dir: &Path,
) -> Result<()> {
    let fit_file = FitFile::load(fit_path)?;
    let manifest = Manifest::load(manifest_path)?;
    let collection = manifest.load_collection()?;
    let n = collection.n_datapoints();
    let seed = seed_override.unwrap_or(manifest.spec.seed);

    let weights = if fit_file.method == Method::HierStacking {
        let fit = fit_file.to_stacking_fit()?;
        let has_columns = fit.covariate_info.as_ref().is_some_and(|s| {
            s.n_continuous_columns() + s.n_discrete_columns() > 0
        });
        let covariates = if has_columns {
            manifest.covariate_set()?
        } else {
            None
        };
        predict_weights(&fit, covariates.as_ref(), n)?
    } else {
        fit_file.weight_matrix()?
    };

    let blended = blend(&collection, &weights, seed)?;
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    write_matrix_csv(&out_dir.join("blended_log_lik.csv"), blended.log_lik())?;
    if let Some(pp) = blended.post_pred() {
        write_matrix_csv(&out_dir.join("blended_post_pred.csv"), pp)?;
    }
    let elpd = elpd_of(&blended);
    let summary = BlendSummary {
        elpd,
        mean_lpd: elpd / n as f64,
        n_samples: blended.n_samples(),
        n_datapoints: n,
        seed,
    };
    emit_json(&summary, Some(&out_dir.join("summary.json")), "blend summary")
}

/// Build the comparison table from log likelihood CSVs, one entry per
/// file, named by file stem.
pub fn compare_from_paths(paths: &[PathBuf]) -> Result<ElpdComparison> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument(
            "comparison needs at least one input file".into(),
        ));
    }
    let mut entries: IndexMap<String, Draws> = IndexMap::new();
    for path in paths {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        if entries.contains_key(&stem) {
            return Err(Error::InvalidArgument(format!(
                "duplicate comparison name \"{stem}\"; rename one of the files"
            )));
        }
        entries.insert(stem, Draws::new(read_matrix_csv(path)?, None)?);
    }
    compare(&entries)
}

/// `blendkit compare`: rank models or blends by total elpd.
///
/// Prints the aligned table to stdout; with an output path, also writes
/// the rows as JSON.
pub fn cmd_compare(paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let comparison = compare_from_paths(paths)?;
    print!("{comparison}");
    if out.is_some() {
        emit_json(&comparison.rows, out, "comparison")?;
    }
    Ok(())
}
