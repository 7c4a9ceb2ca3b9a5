use thiserror::Error;

/// Everything that can go wrong across the library and the CLI.
///
/// Errors split into two families: malformed input (shape mismatches, bad
/// values, unreadable files) and numerical failure (degenerate optimization
/// targets, unstartable samplers). The CLI maps the former to exit code 2 and
/// the latter to exit code 3 via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must be non-empty, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("{what} entry at sample {row}, datapoint {col} is {value}; entries must be finite or -inf")]
    BadEntry {
        what: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("{what}: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        what: String,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("need at least two models, got {0}")]
    TooFewModels(usize),

    #[error("model \"{name}\" has shape {rows}x{cols}, other models have {expected_rows}x{expected_cols}")]
    ModelShapeMismatch {
        name: String,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },

    #[error("models disagree on datapoint count: {0}")]
    LengthMismatch(String),

    #[error("model names do not match: expected [{expected}], got [{got}]")]
    ModelNameMismatch { expected: String, got: String },

    #[error("tail has {0} exceedances; generalized Pareto fit needs at least 5")]
    InsufficientTail(usize),

    #[error("tail is degenerate (zero variance); cannot fit a generalized Pareto shape")]
    DegenerateTail,

    #[error("weight {value} at model {row}, datapoint {col} is outside [0, 1]")]
    WeightOutOfRange { row: usize, col: usize, value: f64 },

    #[error("weight column {col} sums to {sum}, which differs from 1 by more than {tol}")]
    WeightColumnSum { col: usize, sum: f64, tol: f64 },

    #[error("datapoint {0} has -inf log predictive density under every model; the stacking objective is -inf everywhere")]
    AllModelsZeroDensity(usize),

    #[error("every model has -inf total elpd; weights are undefined")]
    AllElpdNegInf,

    #[error("covariate \"{0}\" is constant; standardize would divide by zero")]
    ConstantCovariate(String),

    #[error("covariate \"{covariate}\" has unseen level \"{level}\" not present at fit time")]
    UnseenLevel { covariate: String, level: String },

    #[error("covariates do not match the fitted set: {0}")]
    CovariateMismatch(String),

    #[error("covariate \"{name}\" has {got} values, expected {expected}")]
    CovariateLength {
        name: String,
        got: usize,
        expected: usize,
    },

    #[error("partial pooling needs at least 3 coefficient columns, got {0}")]
    PoolingNeedsColumns(usize),

    #[error("hierarchical fit was trained with covariates; prediction needs a matching covariate set")]
    MissingCovariates,

    #[error("Dirichlet prior has {got} concentrations for {expected} models")]
    PriorLength { got: usize, expected: usize },

    #[error("Dirichlet concentration {0} must be positive and finite")]
    BadConcentration(f64),

    #[error("sampler could not find a finite starting point after {0} tries")]
    InitializationFailed(usize),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("invalid sampler configuration: {0}")]
    BadSamplerConfig(String),

    #[error("{path}: row {row}: {msg}")]
    CsvParse {
        path: String,
        row: usize,
        msg: String,
    },

    #[error("{path}: row {row} has {got} columns, expected {expected}")]
    RaggedRow {
        path: String,
        row: usize,
        got: usize,
        expected: usize,
    },

    #[error("{path}: declared shape {declared_rows}x{declared_cols} but found {rows}x{cols}")]
    ShapeHeaderMismatch {
        path: String,
        declared_rows: usize,
        declared_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("fit file: {0}")]
    FitFile(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 2 for input problems, 3 for numerical
    /// failures. Success (0) never reaches this function.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::AllModelsZeroDensity(_)
            | Error::AllElpdNegInf
            | Error::InsufficientTail(_)
            | Error::DegenerateTail
            | Error::InitializationFailed(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
