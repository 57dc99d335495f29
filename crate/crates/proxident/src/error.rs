use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("conditioning on zero-probability event {event}")]
    ZeroProbabilityEvent { event: String },

    #[error("positivity violated at stratum {stratum} (mass {mass:e})")]
    PositivityViolation { stratum: String, mass: f64 },

    #[error(
        "generation failed after {attempts} attempts; most frequent unmet constraint: {constraint}"
    )]
    Generation { attempts: usize, constraint: String },

    #[error(
        "bridge equation unsolvable at treatment level `{level}`: residual {residual:e} exceeds tolerance {tolerance:e}"
    )]
    BridgeUnsolvable {
        level: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("not identifiable: {0}")]
    NotIdentifiable(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("latent factor recovery failed: {0}")]
    Recovery(String),

    #[error("no restart converged; best relative fit attained {best_fit:e}")]
    Convergence { best_fit: f64 },

    #[error("label ambiguity: {0}")]
    LabelAmbiguity(String),

    #[error("label recovery failed: {0}")]
    LabelRecovery(String),

    #[error("{0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of an identification or recovery procedure on a
    /// well-formed input, as opposed to malformed input itself.
    pub fn is_identification_failure(&self) -> bool {
        matches!(
            self,
            Error::BridgeUnsolvable { .. }
                | Error::NotIdentifiable(_)
                | Error::Numerical(_)
                | Error::Recovery(_)
                | Error::Convergence { .. }
                | Error::LabelAmbiguity(_)
                | Error::LabelRecovery(_)
                | Error::PositivityViolation { .. }
                | Error::ZeroProbabilityEvent { .. }
                | Error::Generation { .. }
        )
    }
}
