use thiserror::Error;

/// Errors produced by the geometry, field and checker layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A point lies outside the surface domain (plus its extension collar).
    #[error("point ({0}, {1}) outside the domain")]
    OutsideDomain(f64, f64),

    /// A grid or parameter choice the numerics cannot work with.
    #[error("configuration error: {0}")]
    Config(String),

    /// The ODE integrator failed (step underflow near the boundary, etc.).
    /// Carries a human-readable reason; partial data is reported by the caller.
    #[error("integration failure: {0}")]
    Integration(String),

    /// A checker precondition is violated (non-unitary attenuation where a
    /// symmetric identity is required, τ below the admissible threshold, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A surface failed a certification required by a checker
    /// (e.g. curvature sign).
    #[error("surface not certified: {0}")]
    NotCertified(String),

    /// Conjugate points detected where a simple-surface construction is used.
    #[error("not simple on this ray: {0}")]
    NotSimple(String),

    /// Iterative solver diverged.
    #[error("solver diverged: {0}")]
    Diverged(String),

    /// Expression parsing failure for custom conformal factors.
    #[error("expression error: {0}")]
    Expr(String),

    /// Serialization / IO failure for snapshots and reports.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
