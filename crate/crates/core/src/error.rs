use std::fmt;

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {point:?} lies outside the domain {domain}")]
    Domain { point: Vec<f64>, domain: String },

    #[error("{} site(s) outside the sampling region, rows {}", rows.len(), preview(rows))]
    OutOfRegion { rows: Vec<usize> },

    #[error("input error: {0}")]
    Input(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(
        "gram matrix is numerically singular (pivot {pivot:e} below threshold {threshold:e}); \
         use a positive ridge penalty"
    )]
    SingularGram { pivot: f64, threshold: f64 },

    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("simulation grid needs {cells} cells, exceeding the budget of {budget}")]
    CellBudget { cells: u128, budget: usize },

    #[error("model kind mismatch: expected {expected}, found {found}")]
    ModelKind { expected: ModelKind, found: ModelKind },

    #[error("negative variance estimate {value:e} at point {index} exceeds the clamp tolerance {tolerance:e}")]
    NegativeVariance { value: f64, index: usize, tolerance: f64 },

    #[error("every row falls outside the weight region")]
    EmptyWeightRegion,

    #[error("artifact mismatch: {0}")]
    Artifact(String),

    #[error("rung {rung}, replication {replication}: {source}")]
    Study { rung: usize, replication: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Which regression model a fit or variance estimate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Trend,
    Covariate,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Trend => f.write_str("trend"),
            ModelKind::Covariate => f.write_str("covariate"),
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

/// First few row numbers (1-based, as in the input file).
fn preview(rows: &[usize]) -> String {
    const SHOWN: usize = 10;
    let mut s: Vec<String> = rows.iter().take(SHOWN).map(|r| (r + 1).to_string()).collect();
    if rows.len() > SHOWN {
        s.push("...".into());
    }
    s.join(", ")
}
