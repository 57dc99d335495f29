use serde::{Deserialize, Serialize};

/// Numerical tolerances used throughout the library.
///
/// Every comparison against "close to zero" or "close to one" goes through
/// one of these fields so that a single override (for example the CLI's
/// `--tol` flag or the `PROXIDENT_TOL` environment variable) changes the
/// behaviour of the whole pipeline coherently.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// A probability table must sum to one within this bound.
    pub normalization: f64,
    /// Conditional-independence deviations at or below this bound pass.
    pub ci: f64,
    /// Relative singular-value cutoff for numerical rank, pseudo-inverses
    /// and k-rank subset tests: sigma is kept when sigma > rank_rel * sigma_max.
    pub rank_rel: f64,
    /// A bridge equation counts as solved when the relative residual of the
    /// least-squares solution is at or below this bound.
    pub bridge_solvable: f64,
    /// Stricter residual bound used by the assumption audit.
    pub audit_bridge_residual: f64,
    /// Absolute minimum singular value for a square proxy matrix to count
    /// as invertible in the assumption audit.
    pub audit_invertibility: f64,
    /// Minimum gap between the entries of some row of an outcome conditional
    /// for the audit to report the distinct-rows condition as holding.
    pub distinct_rows: f64,
    /// Minimum pairwise eigenvalue gap for a slice to be usable without
    /// falling back to random slice combinations.
    pub eigen_gap: f64,
    /// Imaginary parts up to this fraction of the spectral radius are
    /// attributed to rounding and dropped.
    pub complex_rel: f64,
    /// Recovered probabilities below minus this bound are treated as a
    /// recovery failure rather than rounding noise.
    pub negative_probability: f64,
    /// Recovered probabilities in [-negative_clip, 0) are clipped to zero.
    pub negative_clip: f64,
    /// A recovered probability vector whose sum drifts from one by more than
    /// this bound is renormalized and the drift recorded.
    pub renormalization_drift: f64,
    /// Alternating least squares stops when the relative fit change between
    /// sweeps falls below this bound.
    pub als_rel_change: f64,
    /// Default tolerance for comparing identified quantities to reference
    /// values in reports.
    pub identification: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            normalization: 1e-12,
            ci: 1e-10,
            rank_rel: 1e-9,
            bridge_solvable: 1e-8,
            audit_bridge_residual: 1e-10,
            audit_invertibility: 1e-5,
            distinct_rows: 1e-6,
            eigen_gap: 1e-6,
            complex_rel: 1e-8,
            negative_probability: 1e-7,
            negative_clip: 1e-9,
            renormalization_drift: 1e-9,
            als_rel_change: 1e-10,
            identification: 1e-8,
        }
    }
}

impl Tolerances {
    /// Bundle with the identification-facing tolerances replaced by `tol`.
    ///
    /// Used by the CLI to honour a single user-supplied tolerance without
    /// touching the structural bounds (normalization, rank cutoffs).
    pub fn with_identification(mut self, tol: f64) -> Self {
        self.identification = tol;
        self.bridge_solvable = tol;
        self
    }
}
