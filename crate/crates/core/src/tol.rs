//! Numerical tolerances shared across modules.

/// Absolute tolerance for projection identities (`P² = P`, `P = P*`, `PQ = 0`).
pub const PROJECTION: f64 = 1e-10;
/// Relative singular-value cutoff for rank decisions.
pub const RANK_CUTOFF: f64 = 1e-9;
/// Eigenvalues closer than this are merged into one spectral projection.
pub const EIGEN_MERGE: f64 = 1e-8;
/// Allowed anti-Hermitian part of an input declared self-adjoint.
pub const SELF_ADJOINT: f64 = 1e-9;
/// Lookup distance for tabulated projections.
pub const LOOKUP: f64 = 1e-10;
/// Slack used when comparing estimated norms against analytic bounds.
pub const BOUND_SLACK: f64 = 1e-6;
