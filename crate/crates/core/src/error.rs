use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An enumeration would exceed its configured budget.
    #[error("size error: {what} needs {needed} steps, budget is {budget}")]
    Size {
        what: &'static str,
        needed: f64,
        budget: f64,
    },

    /// The character-sum average landed too far from an integer.
    #[error("precision error: residual {residual:.3e} from nearest integer {nearest}")]
    Precision { residual: f64, nearest: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
