//! Cross-validation of two identification strategies for discrete causal
//! models with proxy variables.
//!
//! The crate builds fully specified latent-variable models, computes exact
//! interventional targets from the latent joint (the oracle), and then
//! re-identifies those targets from observed margins alone along two
//! independent routes:
//!
//! * a bridge-equation route that inverts outcome-proxy conditionals in the
//!   least-squares sense, and
//! * an array-decomposition route that recovers latent conditionals from
//!   eigenstructure or from a rank-constrained three-way decomposition.
//!
//! A comparison harness audits each route's assumptions with numeric
//! margins, classifies models into the four overlap cells, and reports
//! identifier-versus-oracle deviations.

pub mod bridge;
pub mod compare;
pub mod config;
pub mod error;
pub mod models;
pub mod oracle;
pub mod prob;
pub mod sem;
pub mod tensor;

pub use config::Tolerances;
pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Names the observed variables each identifier operates on.
///
/// Both identifiers consume only the observed margin; these roles say which
/// observed variable plays treatment, outcome, treatment-side proxy and
/// outcome-side proxy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyRoles {
    pub treatment: String,
    pub outcome: String,
    /// Proxy entering through the conditioning side (columns of the
    /// observable conditionals).
    pub treatment_proxy: String,
    /// Proxy carrying the latent signal (rows of the observable
    /// conditionals).
    pub outcome_proxy: String,
}

impl Default for ProxyRoles {
    fn default() -> Self {
        ProxyRoles {
            treatment: "A".into(),
            outcome: "Y".into(),
            treatment_proxy: "Z".into(),
            outcome_proxy: "W".into(),
        }
    }
}
