//! Crate-wide error type.
//!
//! Variants are grouped by the subsystem that raises them. `exit_code`
//! distinguishes input/validation problems (2) from numerical failures (3)
//! for the command-line front end.

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // Banded linear algebra.
    #[error("matrix not positive definite: pivot {index} is {value:.6e}")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("zero diagonal entry {index} in triangular solve")]
    SingularDiagonal { index: usize },
    #[error("matrix not symmetric within tolerance (max asymmetry {max_asym:.3e})")]
    NotSymmetric { max_asym: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    // VAR system assembly.
    #[error("shock loading matrix is singular and cannot scale to unit shocks")]
    SingularShockLoading,
    #[error("history holds {got} observations but {need} lags are required")]
    InsufficientHistory { got: usize, need: usize },

    // Estimation.
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    // Truncated-normal sampling.
    #[error("empty truncation region: bounds cross at coordinate {index}")]
    EmptyRegion { index: usize },
    #[error("tilting solver stopped after {iters} iterations with gradient norm {grad_norm:.3e}")]
    TiltingDiverged { iters: usize, grad_norm: f64 },
    #[error("truncation region probability bound exp({log_bound:.3}) is below 1e-300")]
    RegionTooImprobable { log_bound: f64 },
    #[error("proposal budget {budget} exhausted with {accepted} of {requested} draws accepted")]
    BudgetExhausted {
        budget: usize,
        accepted: usize,
        requested: usize,
    },

    // Conditional forecasting.
    #[error("restriction matrix rank {rank} is below its {rows} rows")]
    RankDeficient { rank: usize, rows: usize },
    #[error("inconsistent restriction system: {rows} rows exceed dimension {dim}")]
    InconsistentSystem { rows: usize, dim: usize },
    #[error("shock covariance update has eigenvalue {eigenvalue:.6e} below tolerance")]
    IndefiniteShockCov { eigenvalue: f64 },
    #[error("constraint blocks overlap at flat coordinate {coord}")]
    OverlappingConstraints { coord: usize },
    #[error("unsupported constraint combination: {0}")]
    UnsupportedCombination(String),
    #[error("forecast failed at parameter draw {index}: {source}")]
    DrawFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    // Simulation lab.
    #[error("simulated path exploded on all {attempts} attempts")]
    ExplosiveDraw { attempts: usize },
    #[error("dense oracle guard: system dimension {dim} exceeds cap {cap}")]
    DenseGuard { dim: usize, cap: usize },

    // Data and scenario handling.
    #[error("column '{name}' not found in dataset")]
    MissingColumn { name: String },
    #[error("missing value in row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },
    #[error("non-positive value {value} in row {row} of log-transformed column '{column}'")]
    NonPositiveForLog {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("date {date} falls outside the forecast horizon {start}..{end}")]
    DateOutsideHorizon {
        date: String,
        start: String,
        end: String,
    },
    #[error("duplicate constraint cell for {variable} at {date}")]
    DuplicateCell { variable: String, date: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for validation problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::SingularDiagonal { .. }
            | Error::SingularShockLoading
            | Error::TiltingDiverged { .. }
            | Error::RegionTooImprobable { .. }
            | Error::BudgetExhausted { .. }
            | Error::IndefiniteShockCov { .. }
            | Error::ExplosiveDraw { .. } => 3,
            Error::DrawFailed { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    /// Short machine-readable tag naming the failure kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::SingularDiagonal { .. } => "singular_diagonal",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::SingularShockLoading => "singular_shock_loading",
            Error::InsufficientHistory { .. } => "insufficient_history",
            Error::InvalidPrior(_) => "invalid_prior",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::InsufficientData(_) => "insufficient_data",
            Error::EmptyRegion { .. } => "empty_region",
            Error::TiltingDiverged { .. } => "tilting_diverged",
            Error::RegionTooImprobable { .. } => "region_too_improbable",
            Error::BudgetExhausted { .. } => "budget_exhausted",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::InconsistentSystem { .. } => "inconsistent_system",
            Error::IndefiniteShockCov { .. } => "indefinite_shock_cov",
            Error::OverlappingConstraints { .. } => "overlapping_constraints",
            Error::UnsupportedCombination(_) => "unsupported_combination",
            Error::DrawFailed { .. } => "draw_failed",
            Error::ExplosiveDraw { .. } => "explosive_draw",
            Error::DenseGuard { .. } => "dense_guard",
            Error::MissingColumn { .. } => "missing_column",
            Error::MissingValue { .. } => "missing_value",
            Error::NonPositiveForLog { .. } => "non_positive_for_log",
            Error::UnknownVariable(_) => "unknown_variable",
            Error::DateOutsideHorizon { .. } => "date_outside_horizon",
            Error::DuplicateCell { .. } => "duplicate_cell",
            Error::Parse { .. } => "parse_error",
            Error::Io(_) => "io_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
