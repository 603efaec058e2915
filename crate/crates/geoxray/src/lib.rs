//! Numerical laboratory for geodesic X-ray transforms with matrix attenuation
//! on two-dimensional conformal discs.
//!
//! The crate integrates geodesic flows on the unit sphere bundle `SM` of a disc
//! carrying a metric `e^{2λ}(dx₁² + dx₂²)`, solves attenuated transport
//! equations along rays, performs fiberwise Fourier analysis, and verifies the
//! energy identities and weighted (Carleman-type) inequalities that govern the
//! transform: the Pestov identity and its frequency localization, estimates
//! with logarithmic weights `l^{2τ}` in negative curvature and with linear
//! weights `e^{2τl}` in nonpositive curvature, the Riccati/Green-solution
//! machinery behind them, and the degree-absorption and injectivity
//! consequences (CGLS reconstruction from boundary data, scattering-data gauge
//! invariance, projective equivalence transfers).
//!
//! Modules:
//! - [`surface`]: conformal model surfaces, geodesic flow, exit times,
//!   Klein/Poincaré model maps, the geodesic-equivalence first integral.
//! - [`bundle`]: fields on `SM`, the operators `X`, `V`, `X⊥`, fiber Fourier
//!   decomposition, degree ladder `X = X₋ + X₊`, Liouville inner products.
//! - [`transport`]: attenuated transport solves along rays, X-ray transforms,
//!   scattering data, gauge transforms, and the extension construction for
//!   non-convex ray geometry.
//! - [`identities`]: Pestov/localized/Carleman/shifted identity reports.
//! - [`riccati`]: Riccati solutions along rays, the Green identity, and the
//!   (α, κ) positivity estimate.
//! - [`weights`]: exact dimension-general sequence arithmetic for the weight
//!   coefficients, conditions and constants.
//! - [`inversion`]: forward/adjoint pair on finite-degree sources and CGLS
//!   reconstruction, plus the scattering-rigidity probe.

pub mod bundle;
pub mod error;
pub mod expr;
pub mod grid;
pub mod identities;
pub mod inversion;
pub mod linalg;
pub mod riccati;
pub mod surface;
pub mod transport;
pub mod weights;

pub use error::{Error, Result};

/// Machine-level tolerance used when a quantity must vanish exactly on the grid.
pub const EXACT_TOL: f64 = 1e-10;

/// Degrees with `‖u_l‖ ≤ DEGREE_FLOOR·‖u‖` are truncated from weighted sums
/// (exponential weights would otherwise amplify round-off garbage).
pub const DEGREE_FLOOR: f64 = 1e-13;
