//! Conformal model surfaces: discs carrying `g = e^{2λ(x₁,x₂)}(dx₁² + dx₂²)`,
//! their curvature, the geodesic flow on the unit sphere bundle, exit times,
//! and the projective-equivalence model maps (Klein/Poincaré).
//!
//! Coordinates on `SM` are `(x₁, x₂, θ)` with the unit vector
//! `v = e^{−λ}(cos θ, sin θ)`. The geodesic vector field integrates
//! `ẋ = e^{−λ}(cos θ, sin θ)`, `θ̇ = e^{−λ}(−∂₁λ sin θ + ∂₂λ cos θ)`,
//! which is unit speed in `g` with `t` the arclength.

use crate::error::{Error, Result};
use crate::expr::Expr2;
use serde::{Deserialize, Serialize};

/// A point of the unit sphere bundle in `(x₁, x₂, θ)` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SMPoint {
    pub x1: f64,
    pub x2: f64,
    pub theta: f64,
}

impl SMPoint {
    pub fn new(x1: f64, x2: f64, theta: f64) -> Self {
        SMPoint { x1, x2, theta }
    }

    /// Same base point, reversed direction.
    pub fn reversed(&self) -> SMPoint {
        SMPoint { x1: self.x1, x2: self.x2, theta: self.theta + std::f64::consts::PI }
    }

    pub fn radius_sq(&self) -> f64 {
        self.x1 * self.x1 + self.x2 * self.x2
    }
}

/// Custom conformal factor with optional closed-form derivatives; missing
/// derivatives fall back to Richardson-extrapolated central differences.
#[derive(Debug, Clone)]
pub struct CustomLambda {
    pub lambda: Expr2,
    pub d1: Option<Expr2>,
    pub d2: Option<Expr2>,
    pub lap: Option<Expr2>,
}

impl CustomLambda {
    pub fn from_exprs(
        lambda: &str,
        d1: Option<&str>,
        d2: Option<&str>,
        lap: Option<&str>,
    ) -> Result<Self> {
        Ok(CustomLambda {
            lambda: Expr2::parse(lambda)?,
            d1: d1.map(Expr2::parse).transpose()?,
            d2: d2.map(Expr2::parse).transpose()?,
            lap: lap.map(Expr2::parse).transpose()?,
        })
    }

    fn fd_d1(&self, x1: f64, x2: f64) -> f64 {
        let h = 1e-4;
        let c = |h: f64| (self.lambda.eval(x1 + h, x2) - self.lambda.eval(x1 - h, x2)) / (2.0 * h);
        (4.0 * c(h / 2.0) - c(h)) / 3.0
    }

    fn fd_d2(&self, x1: f64, x2: f64) -> f64 {
        let h = 1e-4;
        let c = |h: f64| (self.lambda.eval(x1, x2 + h) - self.lambda.eval(x1, x2 - h)) / (2.0 * h);
        (4.0 * c(h / 2.0) - c(h)) / 3.0
    }

    fn fd_lap(&self, x1: f64, x2: f64) -> f64 {
        let h = 1e-3;
        let l = |h: f64| {
            (self.lambda.eval(x1 + h, x2)
                + self.lambda.eval(x1 - h, x2)
                + self.lambda.eval(x1, x2 + h)
                + self.lambda.eval(x1, x2 - h)
                - 4.0 * self.lambda.eval(x1, x2))
                / (h * h)
        };
        (4.0 * l(h / 2.0) - l(h)) / 3.0
    }

    /// Max inconsistency between supplied derivatives and finite differences
    /// of λ over a sample grid in the disc of the given radius.
    pub fn derivative_defect(&self, radius: f64) -> f64 {
        let mut worst: f64 = 0.0;
        let n = 17;
        for i in 0..n {
            for j in 0..n {
                let x1 = radius * (-0.9 + 1.8 * i as f64 / (n - 1) as f64);
                let x2 = radius * (-0.9 + 1.8 * j as f64 / (n - 1) as f64);
                if x1 * x1 + x2 * x2 > 0.82 * radius * radius {
                    continue;
                }
                if let Some(d1) = &self.d1 {
                    worst = worst.max((d1.eval(x1, x2) - self.fd_d1(x1, x2)).abs());
                }
                if let Some(d2) = &self.d2 {
                    worst = worst.max((d2.eval(x1, x2) - self.fd_d2(x1, x2)).abs());
                }
                if let Some(lap) = &self.lap {
                    worst = worst.max((lap.eval(x1, x2) - self.fd_lap(x1, x2)).abs());
                }
            }
        }
        worst
    }
}

/// The model family for the conformal factor.
#[derive(Debug, Clone)]
pub enum SurfaceKind {
    /// λ ≡ 0, curvature 0.
    EuclideanDisc,
    /// λ = log(2/(1−|x|²)), curvature −1. The domain is the coordinate disc
    /// of `radius < 1` inside the model disc.
    PoincareDisc,
    /// Poincaré factor shifted by −½ log κ, curvature −κ.
    ScaledHyperbolic { kappa: f64 },
    /// User-supplied λ.
    Custom(CustomLambda),
}

/// Disc-type conformal surface.
#[derive(Debug, Clone)]
pub struct ConformalSurface {
    pub kind: SurfaceKind,
    /// Coordinate radius of the disc domain.
    pub radius: f64,
    /// Coordinate thickness of the collar used by the extension solver.
    pub boundary_margin: f64,
}

/// Fixed-step RK4 control parameters.
#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub h: f64,
    pub bisection_steps: u32,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { h: 5e-3, bisection_steps: 12, max_steps: 400_000 }
    }
}

impl StepControl {
    pub fn with_h(h: f64) -> Self {
        StepControl { h, ..Default::default() }
    }
}

/// Sampled geodesic with its boundary-hitting time.
#[derive(Debug, Clone)]
pub struct GeodesicTrace {
    /// Ordered `(t, point)` samples, first at `t = 0`.
    pub samples: Vec<(f64, SMPoint)>,
    /// First boundary-hitting time; `None` when the trace was capped by
    /// `t_max` before exiting.
    pub exit_time: Option<f64>,
    /// Set when integration had to stop early (step underflow etc.); the
    /// samples then form a partial trace.
    pub failure: Option<String>,
}

impl GeodesicTrace {
    pub fn end(&self) -> SMPoint {
        self.samples.last().expect("trace has at least the start sample").1
    }
}

impl ConformalSurface {
    pub fn euclidean(radius: f64) -> Self {
        ConformalSurface { kind: SurfaceKind::EuclideanDisc, radius, boundary_margin: 0.0 }
    }

    pub fn poincare(radius: f64) -> Self {
        assert!(radius < 1.0, "Poincaré domain must be a compact subdisc (radius < 1)");
        ConformalSurface { kind: SurfaceKind::PoincareDisc, radius, boundary_margin: 0.0 }
    }

    pub fn scaled_hyperbolic(kappa: f64, radius: f64) -> Self {
        assert!(kappa > 0.0);
        assert!(radius < 1.0, "hyperbolic domain must be a compact subdisc (radius < 1)");
        ConformalSurface {
            kind: SurfaceKind::ScaledHyperbolic { kappa },
            radius,
            boundary_margin: 0.0,
        }
    }

    pub fn custom(lambda: CustomLambda, radius: f64) -> Self {
        ConformalSurface { kind: SurfaceKind::Custom(lambda), radius, boundary_margin: 0.0 }
    }

    /// The variable negative-curvature test surface: λ = c|x|² with c = 0.35,
    /// so K = −4c·e^{−2c|x|²} < 0 everywhere.
    pub fn variable_negative(radius: f64) -> Self {
        let lambda = CustomLambda::from_exprs(
            "0.35*(x1^2 + x2^2)",
            Some("0.7*x1"),
            Some("0.7*x2"),
            Some("1.4"),
        )
        .expect("built-in expressions parse");
        Self::custom(lambda, radius)
    }

    /// Short stable descriptor used for hashing in snapshot headers.
    pub fn descriptor(&self) -> String {
        match &self.kind {
            SurfaceKind::EuclideanDisc => format!("euclidean_disc r={}", self.radius),
            SurfaceKind::PoincareDisc => format!("poincare_disc r={}", self.radius),
            SurfaceKind::ScaledHyperbolic { kappa } => {
                format!("scaled_hyperbolic k={} r={}", kappa, self.radius)
            }
            SurfaceKind::Custom(c) => {
                format!("custom λ={} r={}", c.lambda.source, self.radius)
            }
        }
    }

    pub fn lambda(&self, x1: f64, x2: f64) -> f64 {
        match &self.kind {
            SurfaceKind::EuclideanDisc => 0.0,
            SurfaceKind::PoincareDisc => {
                let r2 = x1 * x1 + x2 * x2;
                (2.0 / (1.0 - r2)).ln()
            }
            SurfaceKind::ScaledHyperbolic { kappa } => {
                let r2 = x1 * x1 + x2 * x2;
                (2.0 / (1.0 - r2)).ln() - 0.5 * kappa.ln()
            }
            SurfaceKind::Custom(c) => c.lambda.eval(x1, x2),
        }
    }

    /// (∂₁λ, ∂₂λ).
    pub fn dlambda(&self, x1: f64, x2: f64) -> (f64, f64) {
        match &self.kind {
            SurfaceKind::EuclideanDisc => (0.0, 0.0),
            SurfaceKind::PoincareDisc | SurfaceKind::ScaledHyperbolic { .. } => {
                let r2 = x1 * x1 + x2 * x2;
                let f = 2.0 / (1.0 - r2);
                (f * x1, f * x2)
            }
            SurfaceKind::Custom(c) => {
                let d1 = c.d1.as_ref().map_or_else(|| c.fd_d1(x1, x2), |e| e.eval(x1, x2));
                let d2 = c.d2.as_ref().map_or_else(|| c.fd_d2(x1, x2), |e| e.eval(x1, x2));
                (d1, d2)
            }
        }
    }

    pub fn laplacian_lambda(&self, x1: f64, x2: f64) -> f64 {
        match &self.kind {
            SurfaceKind::EuclideanDisc => 0.0,
            SurfaceKind::PoincareDisc | SurfaceKind::ScaledHyperbolic { .. } => {
                let r2 = x1 * x1 + x2 * x2;
                4.0 / ((1.0 - r2) * (1.0 - r2))
            }
            SurfaceKind::Custom(c) => {
                c.lap.as_ref().map_or_else(|| c.fd_lap(x1, x2), |e| e.eval(x1, x2))
            }
        }
    }

    pub fn in_domain(&self, x1: f64, x2: f64, collar: bool) -> bool {
        let r = if collar { self.radius + self.boundary_margin } else { self.radius };
        x1 * x1 + x2 * x2 <= r * r * (1.0 + 1e-12)
    }

    /// Boundary defining function r² − x₁² − x₂² (positive inside).
    pub fn defining_fn(&self, x1: f64, x2: f64) -> f64 {
        self.radius * self.radius - x1 * x1 - x2 * x2
    }

    /// Gaussian curvature. Exact constants for the constant-curvature kinds;
    /// K = −e^{−2λ}Δλ for custom factors.
    pub fn gaussian_curvature(&self, x1: f64, x2: f64) -> Result<f64> {
        if !self.in_domain(x1, x2, true) {
            return Err(Error::OutsideDomain(x1, x2));
        }
        Ok(match &self.kind {
            SurfaceKind::EuclideanDisc => 0.0,
            SurfaceKind::PoincareDisc => -1.0,
            SurfaceKind::ScaledHyperbolic { kappa } => -kappa,
            SurfaceKind::Custom(_) => {
                let lam = self.lambda(x1, x2);
                -(-2.0 * lam).exp() * self.laplacian_lambda(x1, x2)
            }
        })
    }

    /// Certify `max K ≤ bound` by scanning a fine grid over the disc.
    /// Constant-curvature kinds are decided exactly.
    pub fn certify_curvature_at_most(&self, bound: f64) -> Result<()> {
        let max_k = self.max_curvature_on_grid(241);
        if max_k <= bound + 1e-10 {
            Ok(())
        } else {
            Err(Error::NotCertified(format!(
                "max K = {max_k:.6e} exceeds required bound {bound:.6e}"
            )))
        }
    }

    pub fn max_curvature_on_grid(&self, n: usize) -> f64 {
        match &self.kind {
            SurfaceKind::EuclideanDisc => 0.0,
            SurfaceKind::PoincareDisc => -1.0,
            SurfaceKind::ScaledHyperbolic { kappa } => -kappa,
            SurfaceKind::Custom(_) => {
                let mut max_k = f64::NEG_INFINITY;
                for i in 0..n {
                    for j in 0..n {
                        let x1 = self.radius * (-1.0 + 2.0 * i as f64 / (n - 1) as f64);
                        let x2 = self.radius * (-1.0 + 2.0 * j as f64 / (n - 1) as f64);
                        if !self.in_domain(x1, x2, false) {
                            continue;
                        }
                        if let Ok(k) = self.gaussian_curvature(x1, x2) {
                            max_k = max_k.max(k);
                        }
                    }
                }
                max_k
            }
        }
    }

    /// Right-hand side of the geodesic ODE in `(x₁, x₂, θ)`.
    #[inline]
    pub fn flow_rhs(&self, x1: f64, x2: f64, theta: f64) -> [f64; 3] {
        let em = (-self.lambda(x1, x2)).exp();
        let (l1, l2) = self.dlambda(x1, x2);
        let (s, c) = theta.sin_cos();
        [em * c, em * s, em * (-l1 * s + l2 * c)]
    }

    #[inline]
    fn rk4_step(&self, y: [f64; 3], h: f64) -> [f64; 3] {
        let k1 = self.flow_rhs(y[0], y[1], y[2]);
        let k2 = self.flow_rhs(
            y[0] + 0.5 * h * k1[0],
            y[1] + 0.5 * h * k1[1],
            y[2] + 0.5 * h * k1[2],
        );
        let k3 = self.flow_rhs(
            y[0] + 0.5 * h * k2[0],
            y[1] + 0.5 * h * k2[1],
            y[2] + 0.5 * h * k2[2],
        );
        let k4 = self.flow_rhs(y[0] + h * k3[0], y[1] + h * k3[1], y[2] + h * k3[2]);
        [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            y[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        ]
    }

    /// Integrate the geodesic flow from `start` until `t_max` or the boundary
    /// of the disc of radius `r_bound`, whichever comes first. The boundary
    /// crossing is refined by bisection on the defining function.
    pub fn flow_to_radius(
        &self,
        start: SMPoint,
        t_max: f64,
        r_bound: f64,
        ctl: &StepControl,
    ) -> GeodesicTrace {
        let rho = |y: &[f64; 3]| r_bound * r_bound - y[0] * y[0] - y[1] * y[1];
        let mut y = [start.x1, start.x2, start.theta];
        let mut t = 0.0;
        let mut samples = vec![(0.0, start)];
        let mut failure = None;
        let mut exit_time = None;

        // Tangential / outward boundary starts: probe a quarter step.
        if rho(&y) <= 1e-14 {
            let probe = self.rk4_step(y, ctl.h / 4.0);
            if rho(&probe) < 0.0 {
                return GeodesicTrace { samples, exit_time: Some(0.0), failure: None };
            }
        }

        let mut steps = 0usize;
        while t < t_max {
            if steps >= ctl.max_steps {
                failure = Some(format!("max step count {} reached", ctl.max_steps));
                break;
            }
            steps += 1;
            let h = ctl.h.min(t_max - t);
            if h < 1e-15 {
                break;
            }
            let y_new = self.rk4_step(y, h);
            if rho(&y_new) < 0.0 {
                // Bisection on the step fraction.
                let mut lo = 0.0f64;
                let mut hi = 1.0f64;
                for _ in 0..ctl.bisection_steps {
                    let mid = 0.5 * (lo + hi);
                    let y_mid = self.rk4_step(y, mid * h);
                    if rho(&y_mid) < 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let frac = 0.5 * (lo + hi);
                let y_exit = self.rk4_step(y, frac * h);
                t += frac * h;
                exit_time = Some(t);
                samples.push((t, SMPoint::new(y_exit[0], y_exit[1], y_exit[2])));
                break;
            }
            y = y_new;
            t += h;
            samples.push((t, SMPoint::new(y[0], y[1], y[2])));
        }
        GeodesicTrace { samples, exit_time, failure }
    }

    /// Geodesic flow bounded by the surface's own disc.
    pub fn geodesic_flow(&self, start: SMPoint, t_max: f64, ctl: &StepControl) -> GeodesicTrace {
        self.flow_to_radius(start, t_max, self.radius, ctl)
    }

    /// First boundary-hitting time from `start` (bisection-refined).
    pub fn exit_time(&self, start: SMPoint, ctl: &StepControl) -> Result<f64> {
        if !self.in_domain(start.x1, start.x2, false) {
            return Err(Error::OutsideDomain(start.x1, start.x2));
        }
        let trace = self.geodesic_flow(start, f64::INFINITY, ctl);
        if let Some(msg) = trace.failure {
            return Err(Error::Integration(msg));
        }
        trace
            .exit_time
            .ok_or_else(|| Error::Integration("flow did not reach the boundary".into()))
    }

    /// Exit time of the reversed ray (time to the entry point of the chord).
    pub fn entry_time(&self, start: SMPoint, ctl: &StepControl) -> Result<f64> {
        self.exit_time(start.reversed(), ctl)
    }
}

/// Poincaré → Klein model map `φ(z) = 2z/(1+|z|²)`; maps hyperbolic geodesics
/// of the Poincaré disc to straight chords of the Klein disc.
pub fn klein_poincare_map(x1: f64, x2: f64) -> (f64, f64) {
    let d = 1.0 + x1 * x1 + x2 * x2;
    (2.0 * x1 / d, 2.0 * x2 / d)
}

/// Inverse of [`klein_poincare_map`]: `z = w/(1+√(1−|w|²))`.
pub fn klein_poincare_inverse(w1: f64, w2: f64) -> (f64, f64) {
    let r2 = w1 * w1 + w2 * w2;
    let d = 1.0 + (1.0 - r2).max(0.0).sqrt();
    (w1 / d, w2 / d)
}

/// Metric models usable in the projective-equivalence checks. Conformal kinds
/// wrap a [`ConformalSurface`]; the Beltrami–Klein metric is the one
/// non-conformal model needed (straight-chord geodesics, curvature −1).
#[derive(Debug, Clone)]
pub enum ModelMetric {
    Conformal(ConformalSurface),
    Klein,
}

impl ModelMetric {
    /// Bilinear form g(x; v, w).
    pub fn g(&self, x1: f64, x2: f64, v: (f64, f64), w: (f64, f64)) -> f64 {
        match self {
            ModelMetric::Conformal(s) => {
                let f = (2.0 * s.lambda(x1, x2)).exp();
                f * (v.0 * w.0 + v.1 * w.1)
            }
            ModelMetric::Klein => {
                let r2 = x1 * x1 + x2 * x2;
                let one = 1.0 - r2;
                let xv = x1 * v.0 + x2 * v.1;
                let xw = x1 * w.0 + x2 * w.1;
                (v.0 * w.0 + v.1 * w.1) / one + xv * xw / (one * one)
            }
        }
    }

    pub fn det_g(&self, x1: f64, x2: f64) -> f64 {
        match self {
            ModelMetric::Conformal(s) => {
                let f = (2.0 * s.lambda(x1, x2)).exp();
                f * f
            }
            ModelMetric::Klein => {
                let one = 1.0 - (x1 * x1 + x2 * x2);
                1.0 / (one * one * one)
            }
        }
    }
}

/// The geodesic-equivalence first integral
/// `H(x,v) = (det g₁ / det g₂)^{2/3} · g₂(v, v)` evaluated with `v` taken
/// `g₁`-unit in the direction θ of `p`.
pub fn first_integral_h(g1: &ModelMetric, g2: &ModelMetric, p: SMPoint) -> f64 {
    let dir = (p.theta.cos(), p.theta.sin());
    let n1 = g1.g(p.x1, p.x2, dir, dir).sqrt();
    let v = (dir.0 / n1, dir.1 / n1);
    let ratio = g1.det_g(p.x1, p.x2) / g2.det_g(p.x1, p.x2);
    ratio.powf(2.0 / 3.0) * g2.g(p.x1, p.x2, v, v)
}

/// Max drift of H along the g₁-geodesic through `start` (g₁ must be one of
/// the conformal kinds so the flow is available).
pub fn first_integral_drift(
    g1: &ConformalSurface,
    g2: &ModelMetric,
    start: SMPoint,
    ctl: &StepControl,
) -> Result<f64> {
    let trace = g1.geodesic_flow(start, f64::INFINITY, ctl);
    if let Some(msg) = trace.failure {
        return Err(Error::Integration(msg));
    }
    let m1 = ModelMetric::Conformal(g1.clone());
    let h0 = first_integral_h(&m1, g2, start);
    let mut drift: f64 = 0.0;
    for &(_, p) in &trace.samples {
        // Skip points that exited the Klein model disc.
        if matches!(g2, ModelMetric::Klein) && p.radius_sq() >= 1.0 - 1e-9 {
            continue;
        }
        drift = drift.max((first_integral_h(&m1, g2, p) - h0).abs());
    }
    Ok(drift)
}

/// Serializable surface description (`{kind, radius, kappa?, lambda_expr?, grid?}`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub kind: String,
    pub radius: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_expr: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1_expr: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d2_expr: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lap_expr: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<LambdaGridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_margin: Option<f64>,
}

/// λ given as grids of values and derivatives over a uniform tensor grid on
/// `[−extent, extent]²` (row-major, `n × n`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGridSpec {
    pub n: usize,
    pub extent: f64,
    pub lambda: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub lap: Vec<f64>,
}

impl SurfaceSpec {
    pub fn simple(kind: &str, radius: f64) -> Self {
        SurfaceSpec {
            kind: kind.into(),
            radius,
            kappa: None,
            lambda_expr: None,
            d1_expr: None,
            d2_expr: None,
            lap_expr: None,
            grid: None,
            boundary_margin: None,
        }
    }

    pub fn to_surface(&self) -> Result<ConformalSurface> {
        if !(self.radius > 0.0) {
            return Err(Error::Config("radius must be positive".into()));
        }
        let mut s = match self.kind.as_str() {
            "euclidean_disc" => ConformalSurface::euclidean(self.radius),
            "poincare_disc" => {
                if self.radius >= 1.0 {
                    return Err(Error::Config(
                        "poincare_disc requires radius < 1".into(),
                    ));
                }
                ConformalSurface::poincare(self.radius)
            }
            "scaled_hyperbolic" => {
                let kappa = self
                    .kappa
                    .ok_or_else(|| Error::Config("scaled_hyperbolic requires kappa".into()))?;
                if kappa <= 0.0 {
                    return Err(Error::Config("kappa must be positive".into()));
                }
                if self.radius >= 1.0 {
                    return Err(Error::Config(
                        "scaled_hyperbolic requires radius < 1".into(),
                    ));
                }
                ConformalSurface::scaled_hyperbolic(kappa, self.radius)
            }
            "variable_negative" => ConformalSurface::variable_negative(self.radius),
            "custom" => {
                if self.grid.is_some() {
                    return Err(Error::Config(
                        "grid-specified λ is documented but this build accepts \
                         expression form only; supply lambda_expr"
                            .into(),
                    ));
                }
                let expr = self
                    .lambda_expr
                    .as_deref()
                    .ok_or_else(|| Error::Config("custom surface requires lambda_expr".into()))?;
                let lam = CustomLambda::from_exprs(
                    expr,
                    self.d1_expr.as_deref(),
                    self.d2_expr.as_deref(),
                    self.lap_expr.as_deref(),
                )?;
                let defect = lam.derivative_defect(self.radius);
                if defect > 1e-4 {
                    return Err(Error::Config(format!(
                        "custom λ derivatives inconsistent with finite differences \
                         (defect {defect:.3e})"
                    )));
                }
                ConformalSurface::custom(lam, self.radius)
            }
            other => return Err(Error::Config(format!("unknown surface kind '{other}'"))),
        };
        if let Some(m) = self.boundary_margin {
            if m < 0.0 {
                return Err(Error::Config("boundary_margin must be nonnegative".into()));
            }
            s.boundary_margin = m;
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn curvature_constants() {
        let e = ConformalSurface::euclidean(1.0);
        assert_eq!(e.gaussian_curvature(0.2, -0.1).unwrap(), 0.0);

        let p = ConformalSurface::poincare(0.7);
        assert_eq!(p.gaussian_curvature(0.1, 0.3).unwrap(), -1.0);

        let s = ConformalSurface::scaled_hyperbolic(4.0, 0.7);
        assert_eq!(s.gaussian_curvature(0.0, 0.0).unwrap(), -4.0);
    }

    // Independent oracle for the constant-curvature claims: evaluate
    // K = −e^{−2λ}Δλ with Δλ by central differences of λ itself.
    #[test]
    fn curvature_matches_fd_laplacian() {
        for (surf, expected) in [
            (ConformalSurface::poincare(0.7), -1.0),
            (ConformalSurface::scaled_hyperbolic(4.0, 0.7), -4.0),
        ] {
            let h = 1e-4;
            for (x1, x2) in [(0.0, 0.0), (0.2, -0.3), (0.45, 0.1)] {
                let lap = (surf.lambda(x1 + h, x2)
                    + surf.lambda(x1 - h, x2)
                    + surf.lambda(x1, x2 + h)
                    + surf.lambda(x1, x2 - h)
                    - 4.0 * surf.lambda(x1, x2))
                    / (h * h);
                let k = -(-2.0 * surf.lambda(x1, x2)).exp() * lap;
                assert!(
                    (k - expected).abs() < 1e-6,
                    "fd curvature {k} vs {expected} at ({x1},{x2})"
                );
            }
        }
    }

    #[test]
    fn curvature_rejects_outside_point() {
        let e = ConformalSurface::euclidean(1.0);
        assert!(e.gaussian_curvature(2.0, 0.0).is_err());
    }

    #[test]
    fn variable_negative_surface_is_certified() {
        let s = ConformalSurface::variable_negative(1.0);
        s.certify_curvature_at_most(-0.5).unwrap();
        // K(0) = −1.4, K(boundary) = −1.4 e^{−0.7}
        let k0 = s.gaussian_curvature(0.0, 0.0).unwrap();
        assert!((k0 + 1.4).abs() < 1e-12);
    }

    #[test]
    fn flat_flow_is_straight() {
        let s = ConformalSurface::euclidean(1.0);
        let tr = s.geodesic_flow(SMPoint::new(0.0, 0.0, 0.0), 0.5, &StepControl::default());
        let end = tr.end();
        assert!((end.x1 - 0.5).abs() < 1e-12);
        assert!(end.x2.abs() < 1e-12);
        assert!(end.theta.abs() < 1e-12);
        assert!(tr.exit_time.is_none());
    }

    #[test]
    fn poincare_diameter_stays_on_axis() {
        let s = ConformalSurface::poincare(0.7);
        let tr = s.geodesic_flow(SMPoint::new(0.0, 0.0, 0.0), 0.8, &StepControl::default());
        for &(_, p) in &tr.samples {
            assert!(p.x2.abs() < 1e-12);
            assert!(p.theta.abs() < 1e-12);
        }
    }

    #[test]
    fn flow_reversibility() {
        let s = ConformalSurface::variable_negative(1.0);
        let ctl = StepControl::default();
        let start = SMPoint::new(0.15, -0.2, 0.83);
        let t = 0.5;
        let fwd = s.geodesic_flow(start, t, &ctl).end();
        let back = s.geodesic_flow(fwd.reversed(), t, &ctl).end().reversed();
        assert!((back.x1 - start.x1).abs() < 1e-9);
        assert!((back.x2 - start.x2).abs() < 1e-9);
        let dtheta = (back.theta - start.theta).rem_euclid(2.0 * PI);
        assert!(dtheta.min(2.0 * PI - dtheta) < 1e-9);
    }

    #[test]
    fn euclidean_exit_times() {
        let s = ConformalSurface::euclidean(1.0);
        let ctl = StepControl::default();
        for theta in [0.0, 1.0, 2.5] {
            let t = s.exit_time(SMPoint::new(0.0, 0.0, theta), &ctl).unwrap();
            assert!((t - 1.0).abs() < 1e-5, "radius chord, got {t}");
        }
        let t = s.exit_time(SMPoint::new(1.0, 0.0, PI), &ctl).unwrap();
        assert!((t - 2.0).abs() < 1e-5, "diameter, got {t}");
    }

    #[test]
    fn poincare_exit_time_matches_hyperbolic_distance() {
        // d(0, ρ) = 2 artanh(ρ) for the curvature −1 Poincaré metric.
        let s = ConformalSurface::poincare(0.5);
        let t = s
            .exit_time(SMPoint::new(0.0, 0.0, 0.0), &StepControl::default())
            .unwrap();
        let expected = 2.0 * 0.5f64.atanh();
        assert!((t - expected).abs() < 1e-5, "got {t}, want {expected}");
    }

    #[test]
    fn tangential_boundary_start_exits_immediately() {
        let s = ConformalSurface::euclidean(1.0);
        // At (1, 0) moving along +x2 the chord leaves instantly (flat disc).
        let t = s
            .exit_time(SMPoint::new(1.0, 0.0, PI / 2.0), &StepControl::default())
            .unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn exit_chord_consistency() {
        // γ(τ) lies on ∂M; reversed-ray exit reconstructs the chord.
        let s = ConformalSurface::poincare(0.7);
        let ctl = StepControl::default();
        let start = SMPoint::new(0.2, -0.1, 1.1);
        let tr = s.geodesic_flow(start, f64::INFINITY, &ctl);
        let end = tr.end();
        assert!((end.radius_sq().sqrt() - 0.7).abs() < 1e-6);
        let back = s.exit_time(start.reversed(), &ctl).unwrap();
        assert!(back > 0.0);
    }

    #[test]
    fn klein_map_values() {
        assert_eq!(klein_poincare_map(0.0, 0.0), (0.0, 0.0));
        let (w1, w2) = klein_poincare_map(0.5, 0.0);
        assert!((w1 - 0.8).abs() < 1e-15 && w2.abs() < 1e-15);
        let (z1, z2) = klein_poincare_inverse(0.8, 0.0);
        assert!((z1 - 0.5).abs() < 1e-15 && z2.abs() < 1e-15);
    }

    #[test]
    fn mapped_poincare_geodesic_is_collinear_in_klein() {
        let s = ConformalSurface::poincare(0.9);
        let ctl = StepControl::default();
        let start = SMPoint::new(0.3, 0.1, 2.0);
        let tr = s.geodesic_flow(start, f64::INFINITY, &ctl);
        let pts: Vec<(f64, f64)> = tr
            .samples
            .iter()
            .map(|&(_, p)| klein_poincare_map(p.x1, p.x2))
            .collect();
        // Chord through first and last mapped points; max deviation.
        let (a, b) = (pts[0], *pts.last().unwrap());
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = (dx * dx + dy * dy).sqrt();
        let mut worst: f64 = 0.0;
        for &(px, py) in &pts {
            let dist = ((px - a.0) * dy - (py - a.1) * dx).abs() / len;
            worst = worst.max(dist);
        }
        assert!(worst < 1e-6, "collinearity residual {worst}");
    }

    #[test]
    fn first_integral_identical_metrics() {
        let e = ConformalSurface::euclidean(1.0);
        let m = ModelMetric::Conformal(e.clone());
        for p in [SMPoint::new(0.0, 0.0, 0.3), SMPoint::new(0.4, -0.2, 1.7)] {
            assert!((first_integral_h(&m, &m, p) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn first_integral_euclid_klein_conserved() {
        let e = ConformalSurface::euclidean(0.95);
        let drift = first_integral_drift(
            &e,
            &ModelMetric::Klein,
            SMPoint::new(0.2, 0.35, 2.4),
            &StepControl::default(),
        )
        .unwrap();
        assert!(drift < 1e-5, "drift {drift}");
    }

    #[test]
    fn first_integral_euclid_poincare_not_conserved() {
        let e = ConformalSurface::euclidean(0.95);
        let g2 = ModelMetric::Conformal(ConformalSurface::poincare(0.99));
        let drift = first_integral_drift(
            &e,
            &g2,
            SMPoint::new(0.5, 0.0, PI / 2.0),
            &StepControl::default(),
        )
        .unwrap();
        assert!(drift > 0.01, "negative control drift {drift} unexpectedly small");
    }

    #[test]
    fn surface_spec_roundtrip() {
        let spec: SurfaceSpec =
            serde_json::from_str(r#"{"kind":"scaled_hyperbolic","radius":0.7,"kappa":4.0}"#)
                .unwrap();
        let s = spec.to_surface().unwrap();
        assert_eq!(s.gaussian_curvature(0.0, 0.0).unwrap(), -4.0);

        let bad: SurfaceSpec =
            serde_json::from_str(r#"{"kind":"poincare_disc","radius":1.5}"#).unwrap();
        assert!(bad.to_surface().is_err());
    }
}
