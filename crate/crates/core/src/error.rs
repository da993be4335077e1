use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// A cell could not be interpreted. `row` is 1-based and counts data rows only.
    #[error("row {row}, column `{column}`: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("selection is empty: {0}")]
    Empty(String),

    /// Item solved by everybody or by nobody; its difficulty is not estimable.
    #[error("item `{label}` is degenerate: {reason}")]
    DegenerateItem { label: String, reason: String },

    #[error("no convergence after {iterations} iterations (max |gradient| = {max_gradient:e})")]
    NonConvergence {
        iterations: usize,
        max_gradient: f64,
        last: Vec<f64>,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("group `{group}` cannot be fitted: {source}")]
    Group {
        group: String,
        #[source]
        source: Box<Error>,
    },
}
