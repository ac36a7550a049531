//! Crate-wide error type.
//!
//! Variants are grouped by the stage that raises them: data ingestion,
//! transforms, regression/Poisson fitting, bounds, inference, and the
//! identification lab. Each variant carries enough context (column, row,
//! offending value) to point at the exact cell or parameter at fault.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // ---- dataset ----
    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),
    #[error("non-numeric cell in column `{column}` at data row {row}: `{value}`")]
    NonNumericCell {
        column: String,
        row: usize,
        value: String,
    },
    #[error("negative outcome in column `{column}` at data row {row}: {value}")]
    NegativeOutcome {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("non-finite value in column `{column}` at data row {row}")]
    NonFiniteCell { column: String, row: usize },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("column `{column}` must be binary, found {value} at data row {row}")]
    NonBinaryColumn {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("column role `{0}` required by this estimator is not present")]
    MissingRole(&'static str),
    #[error("duplicate role assignment for CSV column `{0}`")]
    DuplicateRole(String),
    #[error("outcome scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("csv read error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    // ---- transforms ----
    #[error("transform domain error: {transform} undefined at y = {value}")]
    DomainError { transform: &'static str, value: f64 },
    #[error("calibrated transform is non-monotone: outcome {value} lies in (0, {threshold})")]
    MonotonicityViolation { value: f64, threshold: f64 },
    #[error("non-finite input to transform")]
    NonFiniteInput,
    #[error("transform error at row {row}: {source}")]
    TransformAtRow {
        row: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("cannot parse transform spec `{0}`")]
    BadTransformSpec(String),

    // ---- regression / poisson ----
    #[error("design matrix is rank-deficient (relative tolerance 1e-10)")]
    RankDeficient,
    #[error("clustered variance needs at least 2 clusters, found {0}")]
    TooFewClusters(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("separation detected: |coefficient| exceeded 30 during IRLS")]
    Separation,
    #[error("IRLS did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("all outcomes are zero; exponential-mean model undefined")]
    AllZeroOutcome,
    #[error("empty cell in 2x2 design: group={group}, post={post}")]
    EmptyCell { group: u8, post: u8 },
    #[error("zero mean outcome in 2x2 cell: group={group}, post={post}")]
    ZeroCellMean { group: u8, post: u8 },
    #[error("period structure is collinear: {0}")]
    CollinearPeriods(String),

    // ---- targets / sensitivity ----
    #[error("control mean is zero; percentage effect undefined")]
    ZeroControlMean,
    #[error("control median is zero; percentage effect undefined")]
    ZeroControlMedian,
    #[error("denominator column has non-positive value {value} at data row {row}")]
    NonPositiveDenominator { row: usize, value: f64 },
    #[error("rank reference sample is empty")]
    EmptyReference,
    #[error("no extensive-margin effect in sample; target scale does not exist")]
    NoExtensiveMargin,
    #[error("bracketing failed: no scale in [1e-300, 1e300] attains the target")]
    BracketNotFound,
    #[error("invalid grid: {0}")]
    BadGrid(String),

    // ---- bounds ----
    #[error("arm {arm} has no positive outcomes")]
    NoPositiveOutcomes { arm: &'static str },
    #[error("selection parameter c must lie in [0,1), got {0}")]
    InvalidC(f64),
    #[error("degenerate positive-outcome shares: theta = {0} outside (0,1]")]
    DegenerateShares(f64),
    #[error("no always-takers: trimming window is empty")]
    NoAlwaysTakers,
    #[error("complier control mean is zero; percentage effect undefined")]
    ZeroComplierControlMean,

    // ---- inference ----
    #[error("bootstrap needs at least 2 draws, got {0}")]
    TooFewDraws(usize),
    #[error("{failed} of {draws} bootstrap draws failed (>10%); first failure: {first}")]
    EstimatorFailedOnDraw {
        failed: usize,
        draws: usize,
        first: String,
    },

    // ---- identification lab ----
    #[error("marginals are infeasible: probabilities sum to {sum1} and {sum0}")]
    InfeasibleMarginals { sum1: f64, sum0: f64 },
    #[error("g is not finite at support point (y1={y1}, y0={y0})")]
    UnboundedG { y1: f64, y0: f64 },
    #[error("joint distribution puts mass {0} on the monotonicity cell Y(1)=0, Y(0)>0")]
    MonotonicityCellViolated(f64),
    #[error("support too large for the coupling LP: {0} points (limit 200)")]
    SupportTooLarge(usize),
    #[error("invalid distribution: {0}")]
    BadDistribution(String),
    #[error("custom g table is not defined at (y1={y1}, y0={y0})")]
    GTableMiss { y1: f64, y0: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
