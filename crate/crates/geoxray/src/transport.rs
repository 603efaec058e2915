//! Attenuated transport along geodesics: `(X + A + Φ)u = −f` with
//! `u|∂₋(SM) = 0`, the X-ray transform `I_{A+Φ}f = u|∂₊(SM)`, scattering
//! data, gauge transforms, the boundary-extension solve, and the
//! projective-equivalence chord transforms.
//!
//! Rays are integrated with the same fixed-step RK4 as the geodesic flow. A
//! solve is assembled as an explicit quadrature `u(0) = Σ_q w_q Q_q f(p_q)`
//! where `Q(t)` solves `Q̇ = Q·M` (`M = A + Φ` along the ray, `Q(0) = Id`),
//! which both imposes `u|∂₋ = 0` exactly and exposes the linear-in-`f`
//! structure the reconstruction adjoint transposes.

use crate::bundle::{fourier_modes, slot_to_k, SMField};
use crate::error::{Error, Result};
use crate::grid::GridRef;
use crate::linalg::{C64, CMat};
use crate::surface::{ConformalSurface, SMPoint, StepControl};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const NMAX: usize = 4;
const NMAX2: usize = NMAX * NMAX;

/// n×n complex matrix field sampled on the spatial grid
/// (entry-major: `idx·n² + row·n + col`).
#[derive(Debug, Clone)]
pub struct MatField {
    pub grid: GridRef,
    pub n: usize,
    pub data: Vec<C64>,
}

impl MatField {
    pub fn zeros(grid: GridRef, n: usize) -> Self {
        assert!(n >= 1 && n <= NMAX);
        let len = grid.node_count() * n * n;
        MatField { grid, n, data: vec![C64::new(0.0, 0.0); len] }
    }

    pub fn identity(grid: GridRef, n: usize) -> Self {
        let mut m = Self::zeros(grid, n);
        for idx in 0..m.grid.node_count() {
            for i in 0..n {
                m.data[idx * n * n + i * n + i] = C64::new(1.0, 0.0);
            }
        }
        m
    }

    pub fn from_fn(grid: GridRef, n: usize, f: impl Fn(f64, f64) -> CMat) -> Self {
        let mut m = Self::zeros(grid.clone(), n);
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                let idx = grid.idx(i1, i2);
                let v = f(grid.xs[i1], grid.ys[i2]);
                debug_assert_eq!(v.n, n);
                m.data[idx * n * n..(idx + 1) * n * n].copy_from_slice(&v.a);
            }
        }
        m
    }

    pub fn at_node(&self, idx: usize) -> CMat {
        CMat {
            n: self.n,
            a: self.data[idx * self.n * self.n..(idx + 1) * self.n * self.n].to_vec(),
        }
    }

    /// Bicubic interpolation of every entry into a stack buffer.
    #[inline]
    pub fn eval_into(&self, x: f64, y: f64, out: &mut [C64]) {
        let g = &self.grid;
        let (ix, wx) = g.interp_axis(x, 0);
        let (iy, wy) = g.interp_axis(y, 1);
        let nn = self.n * self.n;
        out[..nn].fill(C64::new(0.0, 0.0));
        for a in 0..4 {
            for b in 0..4 {
                let w = wx[a] * wy[b];
                if w == 0.0 {
                    continue;
                }
                let base = (ix[a] * g.n2 + iy[b]) * nn;
                for (e, o) in out[..nn].iter_mut().enumerate() {
                    *o += self.data[base + e] * w;
                }
            }
        }
    }

    /// Entrywise spatial derivative via the grid stencils (`axis` 0 or 1).
    /// Matrix fields live on the whole coordinate square, so full grid lines
    /// are used (centered stencils except at the square frame).
    pub fn derivative(&self, axis: usize) -> MatField {
        let g = self.grid.clone();
        let nn = self.n * self.n;
        let count = g.node_count();
        let mut out = MatField::zeros(g.clone(), self.n);
        let mut slice = vec![C64::new(0.0, 0.0); count];
        let mut d = vec![C64::new(0.0, 0.0); count];
        for e in 0..nn {
            for idx in 0..count {
                slice[idx] = self.data[idx * nn + e];
            }
            if axis == 0 {
                g.dx1_full(&slice, &mut d);
            } else {
                g.dx2_full(&slice, &mut d);
            }
            for idx in 0..count {
                out.data[idx * nn + e] = d[idx];
            }
        }
        out
    }

    /// Max spectral norm over in-disc nodes.
    pub fn max_norm(&self) -> f64 {
        let nn = self.n * self.n;
        (0..self.grid.node_count())
            .filter(|&idx| self.grid.in_disc[idx])
            .map(|idx| {
                CMat { n: self.n, a: self.data[idx * nn..(idx + 1) * nn].to_vec() }
                    .spectral_norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Connection 1-form components and Higgs field:
/// `A(x, θ) = e^{−λ}(A₁ cos θ + A₂ sin θ)`, `Φ = Φ(x)`.
#[derive(Debug, Clone)]
pub struct AttenuationPair {
    pub a1: MatField,
    pub a2: MatField,
    pub phi: MatField,
    pub support_margin: f64,
    pub unitary: bool,
}

impl AttenuationPair {
    pub fn zero(grid: GridRef, n: usize) -> Self {
        AttenuationPair {
            a1: MatField::zeros(grid.clone(), n),
            a2: MatField::zeros(grid.clone(), n),
            phi: MatField::zeros(grid, n),
            support_margin: 0.0,
            unitary: true,
        }
    }

    pub fn n(&self) -> usize {
        self.a1.n
    }

    /// Skew-Hermitian defect of the connection components (must be ≤ 1e−12
    /// when flagged unitary).
    pub fn unitarity_defect(&self) -> f64 {
        let nn = self.n() * self.n();
        let mut worst: f64 = 0.0;
        for idx in 0..self.a1.grid.node_count() {
            if !self.a1.grid.in_disc[idx] {
                continue;
            }
            for f in [&self.a1, &self.a2] {
                let m = CMat { n: self.n(), a: f.data[idx * nn..(idx + 1) * nn].to_vec() };
                worst = worst.max(m.skew_hermitian_defect());
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        if self.unitary && self.unitarity_defect() > 1e-12 {
            return Err(Error::Precondition(
                "attenuation flagged unitary but A is not skew-Hermitian".into(),
            ));
        }
        Ok(())
    }

    /// Bound R with ‖(Au + Φu)_l‖ ≤ R(‖u_{l−1}‖ + ‖u_l‖ + ‖u_{l+1}‖):
    /// the max of the connection and Higgs sup norms (connection entries
    /// carry the e^{−λ} unit-vector factor).
    pub fn degree_shift_bound(&self, surface: &ConformalSurface) -> f64 {
        let g = &self.a1.grid;
        let nn = self.n() * self.n();
        let mut worst: f64 = 0.0;
        for idx in 0..g.node_count() {
            if !g.in_disc[idx] {
                continue;
            }
            let em = (-g.lambda[idx]).exp();
            for f in [&self.a1, &self.a2] {
                let m = CMat { n: self.n(), a: f.data[idx * nn..(idx + 1) * nn].to_vec() };
                // each of A₁, A₂ contributes e^{−λ}·‖A_i‖/2 per shifted mode
                worst = worst.max(em * m.spectral_norm());
            }
            let m = CMat {
                n: self.n(),
                a: self.phi.data[idx * nn..(idx + 1) * nn].to_vec(),
            };
            worst = worst.max(m.spectral_norm());
        }
        let _ = surface;
        worst
    }

    /// Seeded random pair: polynomial matrix entries of max modulus ≈ `scale`.
    /// `unitary` forces A₁, A₂ skew-Hermitian (Φ stays general).
    pub fn random(grid: GridRef, n: usize, seed: u64, scale: f64, unitary: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15));
        let mut rand_poly_mat = |skew: bool| -> Vec<[C64; 6]> {
            // per entry: c0 + c1 x + c2 y + c3 x² + c4 xy + c5 y²
            let mut entries = vec![[C64::new(0.0, 0.0); 6]; n * n];
            for e in entries.iter_mut() {
                for (t, c) in e.iter_mut().enumerate() {
                    let damp = scale / (2.0 + 2.0 * t as f64);
                    *c = C64::new(
                        rng.gen_range(-1.0..1.0) * damp,
                        rng.gen_range(-1.0..1.0) * damp,
                    );
                }
            }
            if skew {
                for i in 0..n {
                    for j in i..n {
                        for t in 0..6 {
                            let a = entries[i * n + j][t];
                            let b = entries[j * n + i][t];
                            let upper = (a - b.conj()) * 0.5;
                            entries[i * n + j][t] = upper;
                            entries[j * n + i][t] = -upper.conj();
                        }
                    }
                }
            }
            entries
        };
        let eval = move |entries: &[[C64; 6]], x: f64, y: f64| -> CMat {
            let basis = [1.0, x, y, x * x, x * y, y * y];
            let mut m = CMat::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    let mut acc = C64::new(0.0, 0.0);
                    for t in 0..6 {
                        acc += entries[i * n + j][t] * basis[t];
                    }
                    m[(i, j)] = acc;
                }
            }
            m
        };
        let e1 = rand_poly_mat(unitary);
        let e2 = rand_poly_mat(unitary);
        let ep = rand_poly_mat(false);
        AttenuationPair {
            a1: MatField::from_fn(grid.clone(), n, |x, y| eval(&e1, x, y)),
            a2: MatField::from_fn(grid.clone(), n, |x, y| eval(&e2, x, y)),
            phi: MatField::from_fn(grid, n, |x, y| eval(&ep, x, y)),
            support_margin: 0.0,
            unitary,
        }
    }

    /// Relative fiber-mode mass of `A(x, ·)` outside modes ±1 on a probe
    /// field (testable degree-1 invariant).
    pub fn fiber_degree_defect(&self, surface: &ConformalSurface, n_theta: usize) -> f64 {
        let grid = self.a1.grid.clone();
        let n = self.n();
        let field = SMField::from_fn(
            grid.clone(),
            n_theta,
            1,
            &surface.descriptor(),
            |x, y, th, _| {
                let em = (-surface.lambda(x, y)).exp();
                let mut a1 = [C64::new(0.0, 0.0); NMAX2];
                let mut a2 = [C64::new(0.0, 0.0); NMAX2];
                self.a1.eval_into(x, y, &mut a1);
                self.a2.eval_into(x, y, &mut a2);
                (a1[0] * th.cos() + a2[0] * th.sin()) * em
            },
        );
        let _ = n;
        let modes = fourier_modes(&field);
        let mut inside = 0.0;
        let mut outside = 0.0;
        for slot in 0..n_theta {
            let k = slot_to_k(slot, n_theta);
            let v = modes.mode_norm_sq_x(k);
            if k.abs() == 1 {
                inside += v;
            } else {
                outside += v;
            }
        }
        (outside / (inside + outside).max(1e-300)).sqrt()
    }
}

/// Fan parametrization of `∂₊(SM)` (or `∂₋`): boundary angle β ∈ [0, 2π),
/// inclination α from the normal in (−π/2 + margin, π/2 − margin), midpoint
/// grids in both.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FanGrid {
    pub n_beta: usize,
    pub n_alpha: usize,
    pub alpha_margin: f64,
}

impl FanGrid {
    pub fn new(n_beta: usize, n_alpha: usize) -> Self {
        FanGrid { n_beta, n_alpha, alpha_margin: 0.05 }
    }

    pub fn node_count(&self) -> usize {
        self.n_beta * self.n_alpha
    }

    pub fn beta(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * (i as f64 + 0.5) / self.n_beta as f64
    }

    pub fn alpha(&self, j: usize) -> f64 {
        let a_max = std::f64::consts::FRAC_PI_2 - self.alpha_margin;
        -a_max + (j as f64 + 0.5) * 2.0 * a_max / self.n_alpha as f64
    }

    /// Inward-pointing SM point of node (i, j) on the disc of radius r.
    pub fn inward_point(&self, i: usize, j: usize, radius: f64) -> SMPoint {
        let b = self.beta(i);
        SMPoint::new(
            radius * b.cos(),
            radius * b.sin(),
            b + std::f64::consts::PI + self.alpha(j),
        )
    }

    /// Outward-pointing SM point (∂₋ fans).
    pub fn outward_point(&self, i: usize, j: usize, radius: f64) -> SMPoint {
        let b = self.beta(i);
        SMPoint::new(radius * b.cos(), radius * b.sin(), b + self.alpha(j))
    }

    /// Quadrature weight of node (·, j): cos α · e^{λ(x)} r Δβ Δα.
    pub fn weight(&self, j: usize, radius: f64, lambda_boundary: f64) -> f64 {
        let a_max = std::f64::consts::FRAC_PI_2 - self.alpha_margin;
        let dbeta = 2.0 * std::f64::consts::PI / self.n_beta as f64;
        let dalpha = 2.0 * a_max / self.n_alpha as f64;
        self.alpha(j).cos() * lambda_boundary.exp() * radius * dbeta * dalpha
    }
}

/// Vector-valued boundary data on a fan grid (node-major values).
#[derive(Debug, Clone)]
pub struct BoundaryFan {
    pub grid: FanGrid,
    pub nchan: usize,
    pub values: Vec<C64>,
}

impl BoundaryFan {
    pub fn zeros(grid: FanGrid, nchan: usize) -> Self {
        BoundaryFan {
            grid,
            nchan,
            values: vec![C64::new(0.0, 0.0); grid.node_count() * nchan],
        }
    }

    pub fn node(&self, i: usize, j: usize) -> &[C64] {
        let base = (i * self.grid.n_alpha + j) * self.nchan;
        &self.values[base..base + self.nchan]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_node_distance(&self, other: &BoundaryFan) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Matrix-valued boundary data (scattering), with per-node condition numbers.
#[derive(Debug, Clone)]
pub struct MatrixFan {
    pub grid: FanGrid,
    pub n: usize,
    pub values: Vec<CMat>,
    pub condition_numbers: Vec<f64>,
}

impl MatrixFan {
    pub fn max_node_distance(&self, other: &MatrixFan) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max)
    }
}

/// One f-evaluation point of a ray quadrature: position, stage weight and the
/// propagator `Q` there (flattened n×n, `Q̇ = Q·M`, `Q(0) = Id`).
#[derive(Debug, Clone)]
pub struct RaySample {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub weight: f64,
    pub q: [C64; NMAX2],
}

/// Linear quadrature form of one transport solve:
/// `u(start) = Σ_q weight_q · Q_q · f(p_q)`.
#[derive(Debug, Clone)]
pub struct RayQuadrature {
    pub n: usize,
    pub samples: Vec<RaySample>,
    pub exit_time: f64,
    /// Q at the exit; its inverse is the ray's fundamental solution (identity
    /// at the start point).
    pub q_exit: CMat,
}

#[derive(Clone, Copy)]
struct RayState {
    pos: [f64; 3],
    q: [C64; NMAX2],
}

struct AttEval<'a> {
    surface: &'a ConformalSurface,
    att: &'a AttenuationPair,
    /// Smooth cutoff of the attenuation over (r_inner, r_outer) for the
    /// extension solve.
    cutoff: Option<(f64, f64)>,
    buf_a1: [C64; NMAX2],
    buf_a2: [C64; NMAX2],
    buf_phi: [C64; NMAX2],
}

impl<'a> AttEval<'a> {
    fn new(surface: &'a ConformalSurface, att: &'a AttenuationPair) -> Self {
        AttEval {
            surface,
            att,
            cutoff: None,
            buf_a1: [C64::new(0.0, 0.0); NMAX2],
            buf_a2: [C64::new(0.0, 0.0); NMAX2],
            buf_phi: [C64::new(0.0, 0.0); NMAX2],
        }
    }

    /// M(x, θ) = A(x, θ) + Φ(x).
    fn eval_into(&mut self, x: f64, y: f64, theta: f64, out: &mut [C64]) {
        let n = self.att.n();
        let nn = n * n;
        let mut amp = 1.0;
        if let Some((r0, r1)) = self.cutoff {
            let rho = (x * x + y * y).sqrt();
            amp = smooth_step((r1 - rho) / (r1 - r0));
        }
        if amp == 0.0 {
            out[..nn].fill(C64::new(0.0, 0.0));
            return;
        }
        self.att.a1.eval_into(x, y, &mut self.buf_a1);
        self.att.a2.eval_into(x, y, &mut self.buf_a2);
        self.att.phi.eval_into(x, y, &mut self.buf_phi);
        let em = (-self.surface.lambda(x, y)).exp();
        let (s, c) = theta.sin_cos();
        for e in 0..nn {
            out[e] = ((self.buf_a1[e] * c + self.buf_a2[e] * s) * em + self.buf_phi[e]) * amp;
        }
    }
}

/// C^∞ step: 0 for t ≤ 0, 1 for t ≥ 1, flat at both ends.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

fn rhs(
    surface: &ConformalSurface,
    attev: &mut AttEval,
    n: usize,
    st: &RayState,
    out: &mut RayState,
) {
    out.pos = surface.flow_rhs(st.pos[0], st.pos[1], st.pos[2]);
    let mut m = [C64::new(0.0, 0.0); NMAX2];
    attev.eval_into(st.pos[0], st.pos[1], st.pos[2], &mut m);
    for i in 0..n {
        for j in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += st.q[i * n + k] * m[k * n + j];
            }
            out.q[i * n + j] = acc;
        }
    }
}

fn axpy(y: &RayState, a: f64, k: &RayState, n: usize) -> RayState {
    let mut out = *y;
    for i in 0..3 {
        out.pos[i] = y.pos[i] + a * k.pos[i];
    }
    for e in 0..n * n {
        out.q[e] = y.q[e] + k.q[e] * a;
    }
    out
}

/// One RK4 step of the joint (position, Q) system; optionally records the
/// four stage states with Simpson-type weights h/6·(1,2,2,1) as quadrature
/// samples.
fn rk4_ray_step(
    surface: &ConformalSurface,
    attev: &mut AttEval,
    n: usize,
    st: &RayState,
    h: f64,
    samples: Option<&mut Vec<RaySample>>,
) -> RayState {
    let mut k1 = *st;
    let mut k2 = *st;
    let mut k3 = *st;
    let mut k4 = *st;
    rhs(surface, attev, n, st, &mut k1);
    let s2 = axpy(st, 0.5 * h, &k1, n);
    rhs(surface, attev, n, &s2, &mut k2);
    let s3 = axpy(st, 0.5 * h, &k2, n);
    rhs(surface, attev, n, &s3, &mut k3);
    let s4 = axpy(st, h, &k3, n);
    rhs(surface, attev, n, &s4, &mut k4);

    if let Some(samples) = samples {
        for (state, w) in [(st, h / 6.0), (&s2, h / 3.0), (&s3, h / 3.0), (&s4, h / 6.0)] {
            samples.push(RaySample {
                x: state.pos[0],
                y: state.pos[1],
                theta: state.pos[2],
                weight: w,
                q: state.q,
            });
        }
    }

    let mut out = *st;
    for i in 0..3 {
        out.pos[i] =
            st.pos[i] + h / 6.0 * (k1.pos[i] + 2.0 * k2.pos[i] + 2.0 * k3.pos[i] + k4.pos[i]);
    }
    for e in 0..n * n {
        out.q[e] = st.q[e] + (k1.q[e] + (k2.q[e] + k3.q[e]) * 2.0 + k4.q[e]) * (h / 6.0);
    }
    out
}

/// Trace the forward ray from `start` to the boundary of the disc of radius
/// `r_bound`, assembling the transport quadrature. `cutoff` smoothly damps
/// the attenuation over the given radial band (extension solve).
pub fn trace_transport_ray(
    surface: &ConformalSurface,
    att: &AttenuationPair,
    start: SMPoint,
    ctl: &StepControl,
    r_bound: f64,
    cutoff: Option<(f64, f64)>,
) -> Result<RayQuadrature> {
    let n = att.n();
    let mut attev = AttEval::new(surface, att);
    attev.cutoff = cutoff;
    let rho = |p: &[f64; 3]| r_bound * r_bound - p[0] * p[0] - p[1] * p[1];

    let mut st =
        RayState { pos: [start.x1, start.x2, start.theta], q: [C64::new(0.0, 0.0); NMAX2] };
    for i in 0..n {
        st.q[i * n + i] = C64::new(1.0, 0.0);
    }
    if rho(&st.pos) < -1e-7 * r_bound * r_bound {
        return Err(Error::OutsideDomain(start.x1, start.x2));
    }
    let mut samples = Vec::new();
    let mut t = 0.0;
    let mut steps = 0usize;
    loop {
        if steps > ctl.max_steps {
            return Err(Error::Integration("transport ray exceeded max steps".into()));
        }
        steps += 1;
        let trial = rk4_ray_step(surface, &mut attev, n, &st, ctl.h, None);
        if rho(&trial.pos) < 0.0 {
            // keep the inside endpoint of the bisection bracket so chords can
            // be re-traced from the exit point
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            for _ in 0..ctl.bisection_steps {
                let mid = 0.5 * (lo + hi);
                let probe = rk4_ray_step(surface, &mut attev, n, &st, mid * ctl.h, None);
                if rho(&probe.pos) < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            if lo * ctl.h > 1e-14 {
                st = rk4_ray_step(surface, &mut attev, n, &st, lo * ctl.h, Some(&mut samples));
            }
            t += lo * ctl.h;
            break;
        }
        st = rk4_ray_step(surface, &mut attev, n, &st, ctl.h, Some(&mut samples));
        t += ctl.h;
    }
    Ok(RayQuadrature {
        n,
        samples,
        exit_time: t,
        q_exit: CMat { n, a: st.q[..n * n].to_vec() },
    })
}

/// A thinned stack of fiber modes of a source, evaluable along rays by
/// bicubic interpolation and exact fiber phases.
#[derive(Debug, Clone)]
pub struct ModeStack {
    pub grid: GridRef,
    pub nchan: usize,
    /// (k, per-channel spatial coefficient arrays).
    pub modes: Vec<(i64, Vec<Vec<C64>>)>,
}

impl ModeStack {
    /// Thin the field's fiber modes and extrapolate each kept coefficient
    /// array into a two-node ghost band outside the disc (quadratic along
    /// grid lines), so bicubic stencils near the boundary do not see the
    /// zero-extension kink.
    pub fn from_field(field: &SMField, floor: f64) -> ModeStack {
        let modes = fourier_modes(field);
        let mut total = 0.0;
        for slot in 0..field.n_theta {
            total += modes.mode_norm_sq_x(slot_to_k(slot, field.n_theta));
        }
        let mut kept = Vec::new();
        for slot in 0..field.n_theta {
            let k = slot_to_k(slot, field.n_theta);
            if modes.mode_norm_sq_x(k) > floor * floor * total {
                let mut chans = modes.coeffs[slot].clone();
                for arr in &mut chans {
                    fill_ghost_band(&field.grid, arr);
                }
                kept.push((k, chans));
            }
        }
        ModeStack { grid: field.grid.clone(), nchan: field.nchan, modes: kept }
    }

    /// Raw variant without ghost extrapolation: the evaluation is then a
    /// strictly linear function of the in-disc node values (used by the
    /// reconstruction adjoint).
    pub fn from_field_raw(field: &SMField, floor: f64) -> ModeStack {
        let modes = fourier_modes(field);
        let mut total = 0.0;
        for slot in 0..field.n_theta {
            total += modes.mode_norm_sq_x(slot_to_k(slot, field.n_theta));
        }
        let mut kept = Vec::new();
        for slot in 0..field.n_theta {
            let k = slot_to_k(slot, field.n_theta);
            if modes.mode_norm_sq_x(k) > floor * floor * total {
                kept.push((k, modes.coeffs[slot].clone()));
            }
        }
        ModeStack { grid: field.grid.clone(), nchan: field.nchan, modes: kept }
    }

    #[inline]
    pub fn eval_into(&self, x: f64, y: f64, theta: f64, out: &mut [C64]) {
        out[..self.nchan].fill(C64::new(0.0, 0.0));
        let g = &self.grid;
        let (ix, wx) = g.interp_axis(x, 0);
        let (iy, wy) = g.interp_axis(y, 1);
        for (k, chans) in &self.modes {
            let phase = C64::new(0.0, *k as f64 * theta).exp();
            for (ch, arr) in chans.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..4 {
                    let base = ix[a] * g.n2;
                    let mut row = C64::new(0.0, 0.0);
                    for b in 0..4 {
                        row += arr[base + iy[b]] * wy[b];
                    }
                    acc += row * wx[a];
                }
                out[ch] += acc * phase;
            }
        }
    }
}

/// Quadratic extrapolation of a disc-supported 2D array into a two-node
/// ghost band, along rows first, then columns for nodes still unfilled.
pub fn fill_ghost_band(grid: &crate::grid::SpatialGrid, arr: &mut [C64]) {
    let (n1, n2) = (grid.n1, grid.n2);
    let mut filled = vec![false; n1 * n2];
    let extrap = |a: C64, b: C64, c: C64, g: usize| -> C64 {
        // quadratic through offsets 0,1,2 evaluated at −g
        match g {
            1 => a * 3.0 - b * 3.0 + c,
            _ => a * 6.0 - b * 8.0 + c * 3.0,
        }
    };
    for i2 in 0..n2 {
        if let Some((lo, hi)) = grid.range_x1[i2] {
            if hi - lo + 1 < 3 {
                continue;
            }
            for g in 1..=2usize {
                if lo >= g {
                    let (a, b, c) = (arr[lo * n2 + i2], arr[(lo + 1) * n2 + i2], arr[(lo + 2) * n2 + i2]);
                    arr[(lo - g) * n2 + i2] = extrap(a, b, c, g);
                    filled[(lo - g) * n2 + i2] = true;
                }
                if hi + g < n1 {
                    let (a, b, c) = (arr[hi * n2 + i2], arr[(hi - 1) * n2 + i2], arr[(hi - 2) * n2 + i2]);
                    arr[(hi + g) * n2 + i2] = extrap(a, b, c, g);
                    filled[(hi + g) * n2 + i2] = true;
                }
            }
        }
    }
    for i1 in 0..n1 {
        if let Some((lo, hi)) = grid.range_x2[i1] {
            if hi - lo + 1 < 3 {
                continue;
            }
            for g in 1..=2usize {
                if lo >= g && !filled[i1 * n2 + lo - g] && !grid.in_disc[i1 * n2 + lo - g] {
                    let (a, b, c) = (arr[i1 * n2 + lo], arr[i1 * n2 + lo + 1], arr[i1 * n2 + lo + 2]);
                    arr[i1 * n2 + lo - g] = extrap(a, b, c, g);
                }
                if hi + g < n2 && !filled[i1 * n2 + hi + g] && !grid.in_disc[i1 * n2 + hi + g] {
                    let (a, b, c) = (arr[i1 * n2 + hi], arr[i1 * n2 + hi - 1], arr[i1 * n2 + hi - 2]);
                    arr[i1 * n2 + hi + g] = extrap(a, b, c, g);
                }
            }
        }
    }
}

impl RayQuadrature {
    /// Apply the quadrature to a mode-stack source.
    pub fn integrate(&self, src: &ModeStack) -> Vec<C64> {
        let n = self.n;
        let mut u = vec![C64::new(0.0, 0.0); n];
        let mut f = [C64::new(0.0, 0.0); NMAX];
        for s in &self.samples {
            src.eval_into(s.x, s.y, s.theta, &mut f);
            for i in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..n {
                    acc += s.q[i * n + j] * f[j];
                }
                u[i] += acc * s.weight;
            }
        }
        u
    }

    /// Apply to a closure source.
    pub fn integrate_fn(&self, f: impl Fn(f64, f64, f64) -> Vec<C64>) -> Vec<C64> {
        let n = self.n;
        let mut u = vec![C64::new(0.0, 0.0); n];
        for s in &self.samples {
            let fv = f(s.x, s.y, s.theta);
            for i in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..n {
                    acc += s.q[i * n + j] * fv[j];
                }
                u[i] += acc * s.weight;
            }
        }
        u
    }
}

/// Solve `(X + A + Φ)u = −f`, `u|∂₋ = 0`, and return `u(start)`.
pub fn solve_transport_ray(
    surface: &ConformalSurface,
    att: &AttenuationPair,
    f: &ModeStack,
    start: SMPoint,
    ctl: &StepControl,
) -> Result<Vec<C64>> {
    let ray = trace_transport_ray(surface, att, start, ctl, surface.radius, None)?;
    Ok(ray.integrate(f))
}

/// Attenuated X-ray transform on a fan of inward boundary points.
pub fn xray_transform(
    surface: &ConformalSurface,
    att: &AttenuationPair,
    f: &ModeStack,
    fan: FanGrid,
    ctl: &StepControl,
) -> Result<BoundaryFan> {
    let n = att.n();
    let mut out = BoundaryFan::zeros(fan, n);
    for i in 0..fan.n_beta {
        for j in 0..fan.n_alpha {
            let start = fan.inward_point(i, j, surface.radius);
            let u = solve_transport_ray(surface, att, f, start, ctl)?;
            let base = (i * fan.n_alpha + j) * n;
            out.values[base..base + n].copy_from_slice(&u);
        }
    }
    Ok(out)
}

/// Scattering data `C_{A,Φ}` on a fan of outward boundary points: the
/// fundamental solution with identity data at the chord entry, evaluated at
/// the exit.
pub fn scattering_data(
    surface: &ConformalSurface,
    att: &AttenuationPair,
    fan_minus: FanGrid,
    ctl: &StepControl,
) -> Result<MatrixFan> {
    let n = att.n();
    let zero = AttenuationPair::zero(att.a1.grid.clone(), 1);
    let mut values = Vec::with_capacity(fan_minus.node_count());
    let mut conds = Vec::with_capacity(fan_minus.node_count());
    for i in 0..fan_minus.n_beta {
        for j in 0..fan_minus.n_alpha {
            let node = fan_minus.outward_point(i, j, surface.radius);
            // chord entry by tracing the reversed ray
            let back =
                trace_transport_ray(surface, &zero, node.reversed(), ctl, surface.radius, None)?;
            let last = back.samples.last().ok_or_else(|| {
                Error::Integration("reversed ray produced no samples".into())
            })?;
            let entry = SMPoint::new(last.x, last.y, last.theta).reversed();
            // forward: Q̇ = QM, Q(0) = Id at the entry; U = Q⁻¹ solves
            // (d/dt + M)U = 0 with U(entry) = Id, so C = Q(τ)⁻¹.
            let fwd = trace_transport_ray(surface, att, entry, ctl, surface.radius, None)?;
            let c = fwd
                .q_exit
                .inverse()
                .ok_or_else(|| Error::Integration("singular propagator".into()))?;
            conds.push(c.condition_number());
            values.push(c);
        }
    }
    Ok(MatrixFan { grid: fan_minus, n, values, condition_numbers: conds })
}

/// Gauge transform `B = Q⁻¹dQ + Q⁻¹AQ`, `Ψ = Q⁻¹ΦQ`; `Q` must be invertible
/// (min |det Q| > 1e−8) with `Q = Id` on the outermost ring.
pub fn gauge_transform(att: &AttenuationPair, q: &MatField) -> Result<AttenuationPair> {
    let n = att.n();
    let g = q.grid.clone();
    let nn = n * n;
    let mut min_det = f64::INFINITY;
    for idx in 0..g.node_count() {
        if g.in_disc[idx] {
            min_det = min_det.min(q.at_node(idx).det().norm());
        }
    }
    if min_det <= 1e-8 {
        return Err(Error::Precondition(format!(
            "gauge Q nearly singular (min |det Q| = {min_det:.3e})"
        )));
    }
    let id = CMat::identity(n);
    let r2 = g.radius * g.radius;
    for i1 in 0..g.n1 {
        for i2 in 0..g.n2 {
            let idx = g.idx(i1, i2);
            let rr = g.xs[i1] * g.xs[i1] + g.ys[i2] * g.ys[i2];
            if g.in_disc[idx] && rr >= r2 * (1.0 - 1e-12) {
                let defect = q.at_node(idx).distance(&id);
                if defect > 1e-10 {
                    return Err(Error::Precondition(format!(
                        "Q ≠ Id on the outermost ring (defect {defect:.3e})"
                    )));
                }
            }
        }
    }

    let dq1 = q.derivative(0);
    let dq2 = q.derivative(1);
    let mut b1 = MatField::zeros(g.clone(), n);
    let mut b2 = MatField::zeros(g.clone(), n);
    let mut psi = MatField::zeros(g.clone(), n);
    // All nodes are transformed (ray interpolation reads the straddling
    // out-of-disc nodes too); dQ is zero there, which matches Q = Id outside.
    for idx in 0..g.node_count() {
        let qm = q.at_node(idx);
        let qinv = match qm.inverse() {
            Some(m) => m,
            None => continue,
        };
        let b1m = qinv
            .matmul(&dq1.at_node(idx))
            .add(&qinv.matmul(&att.a1.at_node(idx)).matmul(&qm));
        let b2m = qinv
            .matmul(&dq2.at_node(idx))
            .add(&qinv.matmul(&att.a2.at_node(idx)).matmul(&qm));
        let psim = qinv.matmul(&att.phi.at_node(idx)).matmul(&qm);
        b1.data[idx * nn..(idx + 1) * nn].copy_from_slice(&b1m.a);
        b2.data[idx * nn..(idx + 1) * nn].copy_from_slice(&b2m.a);
        psi.data[idx * nn..(idx + 1) * nn].copy_from_slice(&psim.a);
    }
    Ok(AttenuationPair {
        a1: b1,
        a2: b2,
        phi: psi,
        support_margin: att.support_margin,
        unitary: false,
    })
}

/// Random gauge field `Q = Id + ((r²−|x|²)/r²)²·G(x)` with a small linear
/// polynomial matrix G. Q is a global polynomial of degree ≤ 5 (the grid
/// stencils differentiate it exactly up to the square frame), equals the
/// identity on the boundary circle, and stays invertible on the whole square.
pub fn random_gauge(grid: GridRef, n: usize, seed: u64, scale: f64) -> MatField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xabcdef));
    let coeffs: Vec<[C64; 3]> = (0..n * n)
        .map(|_| {
            [
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            ]
        })
        .collect();
    let r = grid.radius;
    let r2 = r * r;
    // ‖cut²·G‖ ≤ 1·(1 + 2r)·amp·n over the square
    let amp = scale.min(0.45) / (n as f64 * (1.0 + 2.0 * r));
    MatField::from_fn(grid.clone(), n, |x, y| {
        let cut = (r2 - x * x - y * y) / r2;
        let cut2 = cut * cut;
        let mut m = CMat::identity(n);
        for i in 0..n {
            for j in 0..n {
                let c = coeffs[i * n + j];
                m[(i, j)] += (c[0] + c[1] * x + c[2] * y) * (amp * cut2);
            }
        }
        m
    })
}

/// Flatness defect `max‖∂₁B₂ − ∂₂B₁ + [B₁, B₂]‖` over interior nodes
/// (the outermost band is skipped: the one-sided stencils there act on the
/// gauge cutoff kink).
pub fn curvature_defect(att: &AttenuationPair) -> f64 {
    let d1b2 = att.a2.derivative(0);
    let d2b1 = att.a1.derivative(1);
    let g = &att.a1.grid;
    let r2 = g.radius * g.radius;
    let mut worst: f64 = 0.0;
    for i1 in 0..g.n1 {
        for i2 in 0..g.n2 {
            let idx = g.idx(i1, i2);
            if !g.in_disc[idx] {
                continue;
            }
            let rr = g.xs[i1] * g.xs[i1] + g.ys[i2] * g.ys[i2];
            if rr > r2 * 0.92 {
                continue;
            }
            let b1 = att.a1.at_node(idx);
            let b2 = att.a2.at_node(idx);
            let f = d1b2
                .at_node(idx)
                .sub(&d2b1.at_node(idx))
                .add(&b1.matmul(&b2))
                .sub(&b2.matmul(&b1));
            worst = worst.max(f.frobenius_norm());
        }
    }
    worst
}

/// Extension solve: embed in the collar-extended disc, extend the attenuation
/// by a smooth cutoff and `f` by zero, and integrate from the (smooth) exit
/// time of the extension. Agrees with [`solve_transport_ray`] on convex discs
/// and stays smooth across tangential rays.
pub fn solve_transport_extended(
    surface: &ConformalSurface,
    att: &AttenuationPair,
    f: &ModeStack,
    start: SMPoint,
    ctl: &StepControl,
) -> Result<Vec<C64>> {
    let r = surface.radius;
    let collar = if surface.boundary_margin > 0.0 { surface.boundary_margin } else { 0.2 * r };
    let mut r_ext = r + collar;
    if !matches!(surface.kind, crate::surface::SurfaceKind::EuclideanDisc) {
        r_ext = r_ext.min(0.5 * (1.0 + r)); // model discs live inside |x| < 1
    }
    let mut ext_surface = surface.clone();
    ext_surface.radius = r_ext;
    let ray = trace_transport_ray(&ext_surface, att, start, ctl, r_ext, Some((r, r_ext)))?;
    let rr = r * r;
    let nchan = f.nchan;
    Ok(ray.integrate_fn(|x, y, th| {
        let mut out = vec![C64::new(0.0, 0.0); nchan];
        if x * x + y * y < rr {
            f.eval_into(x, y, th, &mut out);
        }
        out
    }))
}

// --- projective-equivalence chord transforms --------------------------------

/// `√g_K(w, w)` of the Klein metric along the unit-Euclidean direction w.
pub fn klein_speed(x: f64, y: f64, wx: f64, wy: f64) -> f64 {
    let r2 = x * x + y * y;
    let one = 1.0 - r2;
    let xv = x * wx + y * wy;
    ((wx * wx + wy * wy) / one + xv * xv / (one * one)).sqrt()
}

/// Attenuated chord transform of a ℂⁿ-valued symmetric k-tensor on the
/// Euclidean disc: integrates `u' + A(w)u = −f(x, w)·φ(x, w)` along the
/// straight chord in Euclidean arclength (`φ` an optional extra scalar
/// weight, e.g. the `(g₂)^{(1−k)/2}` factor of the transfer identity).
/// `entry` is the inward ∂₊ node.
#[allow(clippy::too_many_arguments)]
pub fn chord_transform_euclidean(
    radius: f64,
    n: usize,
    a_form: &dyn Fn(f64, f64, f64, f64) -> CMat,
    f_tensor: &dyn Fn(f64, f64, f64, f64) -> Vec<C64>,
    extra_weight: Option<&dyn Fn(f64, f64, f64, f64) -> f64>,
    entry: SMPoint,
    h: f64,
) -> Vec<C64> {
    let (wx, wy) = (entry.theta.cos(), entry.theta.sin());
    let dot = entry.x1 * wx + entry.x2 * wy;
    let disc = (radius * radius - entry.radius_sq() + dot * dot).max(0.0);
    let chord = -dot + disc.sqrt();
    let steps = (chord / h).ceil().max(2.0) as usize;
    let dr = chord / steps as f64;
    let mut q = CMat::identity(n);
    let mut u = vec![C64::new(0.0, 0.0); n];
    let eval = |rho: f64, q: &CMat| -> (CMat, Vec<C64>) {
        let x = entry.x1 + rho * wx;
        let y = entry.x2 + rho * wy;
        let a = a_form(x, y, wx, wy);
        let mut f = f_tensor(x, y, wx, wy);
        if let Some(wgt) = extra_weight {
            let s = wgt(x, y, wx, wy);
            for v in &mut f {
                *v *= s;
            }
        }
        (q.matmul(&a), q.matvec(&f))
    };
    for s in 0..steps {
        let rho0 = s as f64 * dr;
        let (k1q, k1u) = eval(rho0, &q);
        let (k2q, k2u) = eval(rho0 + 0.5 * dr, &q.add(&k1q.scale(C64::new(0.5 * dr, 0.0))));
        let (k3q, k3u) = eval(rho0 + 0.5 * dr, &q.add(&k2q.scale(C64::new(0.5 * dr, 0.0))));
        let (k4q, k4u) = eval(rho0 + dr, &q.add(&k3q.scale(C64::new(dr, 0.0))));
        q = q
            .add(&k1q.scale(C64::new(dr / 6.0, 0.0)))
            .add(&k2q.scale(C64::new(dr / 3.0, 0.0)))
            .add(&k3q.scale(C64::new(dr / 3.0, 0.0)))
            .add(&k4q.scale(C64::new(dr / 6.0, 0.0)));
        for i in 0..n {
            u[i] += (k1u[i] + (k2u[i] + k3u[i]) * 2.0 + k4u[i]) * (dr / 6.0);
        }
    }
    u
}

/// The matched transform on the Beltrami–Klein disc, integrated in Klein
/// arclength: an independent discretization of `I²_A(f)` at the matched node
/// `(x, v/√g₂(v,v))`, with `f` homogeneous of degree `k_order`.
pub fn chord_transform_klein(
    radius: f64,
    n: usize,
    k_order: i32,
    a_form: &dyn Fn(f64, f64, f64, f64) -> CMat,
    f_tensor: &dyn Fn(f64, f64, f64, f64) -> Vec<C64>,
    entry: SMPoint,
    h_klein: f64,
) -> Vec<C64> {
    let (wx, wy) = (entry.theta.cos(), entry.theta.sin());
    let dot = entry.x1 * wx + entry.x2 * wy;
    let disc = (radius * radius - entry.radius_sq() + dot * dot).max(0.0);
    let chord = -dot + disc.sqrt();

    // State (ρ, Q, u) in Klein arclength s along the chord:
    //   dρ/ds = 1/κ(ρ),  Q' = Q·A(w)/κ,  u' = Q·f(x, w)·κ^{−k},
    // where κ = √g_K(w, w) and f is k-homogeneous in the velocity.
    #[derive(Clone)]
    struct St {
        rho: f64,
        q: CMat,
        u: Vec<C64>,
    }
    let deriv = |st: &St| -> St {
        let rho_c = st.rho.min(chord);
        let x = entry.x1 + rho_c * wx;
        let y = entry.x2 + rho_c * wy;
        let kap = klein_speed(x, y, wx, wy);
        let drho = 1.0 / kap;
        let mut f = f_tensor(x, y, wx, wy);
        let fk = kap.powi(-k_order);
        for v in &mut f {
            *v *= fk;
        }
        St {
            rho: drho,
            q: st.q.matmul(&a_form(x, y, wx, wy).scale(C64::new(drho, 0.0))),
            u: st.q.matvec(&f),
        }
    };
    let step = |st: &St, ds: f64| -> St {
        let ax = |s: &St, a: f64, k: &St| -> St {
            St {
                rho: s.rho + a * k.rho,
                q: s.q.add(&k.q.scale(C64::new(a, 0.0))),
                u: s.u.iter().zip(&k.u).map(|(x, y)| x + y * a).collect(),
            }
        };
        let k1 = deriv(st);
        let k2 = deriv(&ax(st, 0.5 * ds, &k1));
        let k3 = deriv(&ax(st, 0.5 * ds, &k2));
        let k4 = deriv(&ax(st, ds, &k3));
        let mut out = st.clone();
        out.rho += ds / 6.0 * (k1.rho + 2.0 * (k2.rho + k3.rho) + k4.rho);
        out.q = out
            .q
            .add(&k1.q.scale(C64::new(ds / 6.0, 0.0)))
            .add(&k2.q.scale(C64::new(ds / 3.0, 0.0)))
            .add(&k3.q.scale(C64::new(ds / 3.0, 0.0)))
            .add(&k4.q.scale(C64::new(ds / 6.0, 0.0)));
        for i in 0..out.u.len() {
            out.u[i] += (k1.u[i] + (k2.u[i] + k3.u[i]) * 2.0 + k4.u[i]) * (ds / 6.0);
        }
        out
    };

    let mut st = St { rho: 0.0, q: CMat::identity(n), u: vec![C64::new(0.0, 0.0); n] };
    let mut guard = 0usize;
    while st.rho < chord - 1e-13 {
        guard += 1;
        if guard > 10_000_000 {
            break;
        }
        let trial = step(&st, h_klein);
        if trial.rho > chord {
            // shrink the final step by bisection on ds to land on the chord end
            let mut lo = 0.0;
            let mut hi = h_klein;
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if step(&st, mid).rho > chord {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            st = step(&st, 0.5 * (lo + hi));
            break;
        }
        st = trial;
    }
    st.u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{apply_x, make_test_field, TestFieldKind};
    use crate::grid::SpatialGrid;
    use std::f64::consts::PI;

    fn euclid(n: usize) -> (ConformalSurface, GridRef) {
        let s = ConformalSurface::euclidean(1.0);
        let g = SpatialGrid::new(&s, n, n);
        (s, g)
    }

    fn const_source(grid: GridRef, nchan: usize, v: C64) -> ModeStack {
        let nn = grid.node_count();
        ModeStack { grid, nchan, modes: vec![(0, (0..nchan).map(|_| vec![v; nn]).collect())] }
    }

    #[test]
    fn unattenuated_diameter_integral() {
        let (s, g) = euclid(32);
        let att = AttenuationPair::zero(g.clone(), 1);
        let f = const_source(g, 1, C64::new(1.0, 0.0));
        let u =
            solve_transport_ray(&s, &att, &f, SMPoint::new(1.0, 0.0, PI), &StepControl::default())
                .unwrap();
        assert!((u[0].re - 2.0).abs() < 1e-5, "u = {}", u[0]);
        assert!(u[0].im.abs() < 1e-12);
    }

    #[test]
    fn constant_higgs_closed_form() {
        // Φ = a·Id, f ≡ 1 on a chord of length L: u = (e^{aL} − 1)/a.
        let (s, g) = euclid(32);
        let a = 0.6;
        let mut att = AttenuationPair::zero(g.clone(), 1);
        att.phi = MatField::from_fn(g.clone(), 1, |_, _| CMat::from_rows(1, &[C64::new(a, 0.0)]));
        att.unitary = false;
        let f = const_source(g, 1, C64::new(1.0, 0.0));
        let u =
            solve_transport_ray(&s, &att, &f, SMPoint::new(1.0, 0.0, PI), &StepControl::default())
                .unwrap();
        let want = ((a * 2.0f64).exp() - 1.0) / a;
        assert!((u[0].re - want).abs() < 1e-5, "u = {} vs {want}", u[0]);
    }

    #[test]
    fn zero_source_gives_zero() {
        let (s, g) = euclid(24);
        let att = AttenuationPair::random(g.clone(), 2, 3, 0.5, false);
        let f = const_source(g, 2, C64::new(0.0, 0.0));
        let u = solve_transport_ray(
            &s,
            &att,
            &f,
            SMPoint::new(0.2, 0.1, 0.7),
            &StepControl::default(),
        )
        .unwrap();
        assert!(u.iter().all(|v| v.norm() < 1e-14));
    }

    #[test]
    fn fan_values_are_chord_lengths() {
        let (s, g) = euclid(24);
        let att = AttenuationPair::zero(g.clone(), 1);
        let f = const_source(g, 1, C64::new(1.0, 0.0));
        let fan = FanGrid::new(8, 6);
        let data = xray_transform(&s, &att, &f, fan, &StepControl::default()).unwrap();
        for i in 0..fan.n_beta {
            for j in 0..fan.n_alpha {
                let want = 2.0 * fan.alpha(j).cos();
                let got = data.node(i, j)[0].re;
                assert!((got - want).abs() < 1e-4, "chord ({i},{j}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn xh_is_in_the_kernel() {
        // f = Xh with boundary-vanishing h integrates to zero along chords.
        let (s, g) = euclid(192);
        let att = AttenuationPair::zero(g.clone(), 1);
        let h = make_test_field(
            TestFieldKind::SmoothPoly,
            17,
            &[0, 1, 2],
            g.clone(),
            32,
            1,
            &s.descriptor(),
        );
        let xh = apply_x(&h).unwrap();
        let f = ModeStack::from_field(&xh, 1e-14);
        let fan = FanGrid::new(6, 4);
        let data = xray_transform(&s, &att, &f, fan, &StepControl::default()).unwrap();
        assert!(data.max_abs() < 1e-5, "I(Xh) max = {}", data.max_abs());
    }

    #[test]
    fn scattering_identity_when_unattenuated() {
        let (s, g) = euclid(16);
        let att = AttenuationPair::zero(g, 2);
        let fan = FanGrid::new(4, 3);
        let data = scattering_data(&s, &att, fan, &StepControl::default()).unwrap();
        let id = CMat::identity(2);
        for c in &data.values {
            assert!(c.distance(&id) < 1e-9);
        }
        for &k in &data.condition_numbers {
            assert!((k - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn abelian_scattering_closed_form() {
        // n = 1, A = 0: C = exp(−∫φ), cross-checked against quadrature of φ
        // along the same chord.
        let (s, g) = euclid(48);
        let mut att = AttenuationPair::zero(g.clone(), 1);
        att.phi = MatField::from_fn(g.clone(), 1, |x, y| {
            CMat::from_rows(1, &[C64::new(0.3 + 0.2 * x - 0.1 * y * y, 0.15 * x * y)])
        });
        att.unitary = false;
        let fan = FanGrid::new(5, 4);
        let ctl = StepControl::default();
        let data = scattering_data(&s, &att, fan, &ctl).unwrap();
        let zero = AttenuationPair::zero(g.clone(), 1);
        for i in 0..fan.n_beta {
            for j in 0..fan.n_alpha {
                let node = fan.outward_point(i, j, s.radius);
                let rev = trace_transport_ray(&s, &zero, node.reversed(), &ctl, 1.0, None).unwrap();
                let last = rev.samples.last().unwrap();
                let entry = SMPoint::new(last.x, last.y, last.theta).reversed();
                let fwd = trace_transport_ray(&s, &zero, entry, &ctl, 1.0, None).unwrap();
                let mut phi_int = C64::new(0.0, 0.0);
                let mut buf = [C64::new(0.0, 0.0); 1];
                for smp in &fwd.samples {
                    att.phi.eval_into(smp.x, smp.y, &mut buf);
                    phi_int += buf[0] * smp.weight;
                }
                let want = (-phi_int).exp();
                let got = data.values[i * fan.n_alpha + j][(0, 0)];
                assert!((got - want).norm() < 1e-6, "node ({i},{j}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn gauge_identity_q_is_noop() {
        let (_s, g) = euclid(24);
        let att = AttenuationPair::random(g.clone(), 2, 5, 0.4, false);
        let q = MatField::identity(g, 2);
        let t = gauge_transform(&att, &q).unwrap();
        let d1: f64 = att
            .a1
            .data
            .iter()
            .zip(&t.a1.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(d1 < 1e-12);
    }

    #[test]
    fn pure_gauge_connection_is_flat() {
        let (_s, g) = euclid(128);
        let zero = AttenuationPair::zero(g.clone(), 2);
        let q = random_gauge(g, 2, 11, 0.4);
        let b = gauge_transform(&zero, &q).unwrap();
        let defect = curvature_defect(&b);
        assert!(defect < 1e-4, "‖dB + B∧B‖ = {defect}");
    }

    #[test]
    fn scattering_gauge_invariance_single() {
        let (s, g) = euclid(48);
        let att = AttenuationPair::random(g.clone(), 2, 7, 0.5, false);
        let q = random_gauge(g, 2, 8, 0.4);
        let gauged = gauge_transform(&att, &q).unwrap();
        let fan = FanGrid::new(6, 4);
        let ctl = StepControl::default();
        let c1 = scattering_data(&s, &att, fan, &ctl).unwrap();
        let c2 = scattering_data(&s, &gauged, fan, &ctl).unwrap();
        let d = c1.max_node_distance(&c2);
        assert!(d < 1e-5, "gauge invariance defect {d}");
    }

    #[test]
    fn attenuation_is_fiber_degree_one() {
        let (s, g) = euclid(32);
        let att = AttenuationPair::random(g, 2, 19, 0.7, false);
        let defect = att.fiber_degree_defect(&s, 32);
        assert!(defect < 1e-12, "fiber degree defect {defect}");
    }

    #[test]
    fn semigroup_property_of_propagator() {
        let (s, g) = euclid(32);
        let att = AttenuationPair::random(g, 2, 9, 0.6, false);
        let ctl = StepControl::default();
        let start = SMPoint::new(-0.4, 0.2, 0.3);
        let ray = trace_transport_ray(&s, &att, start, &ctl, 1.0, None).unwrap();
        // pick a step-start stage mid-ray: Q(t₂)Q(t₁)⁻¹ vs restarted transport
        let mid_idx = (ray.samples.len() / 8) * 4; // stage 1 of some step
        let mid = &ray.samples[mid_idx];
        assert!((mid.weight - ctl.h / 6.0).abs() < 1e-15);
        let q1 = CMat { n: 2, a: mid.q[..4].to_vec() };
        let restart = SMPoint::new(mid.x, mid.y, mid.theta);
        let ray2 = trace_transport_ray(&s, &att, restart, &ctl, 1.0, None).unwrap();
        // Q(t₂) = Q(t₁)·Q̃(t₂ − t₁), i.e. the fundamental solution U = Q⁻¹
        // satisfies U(t₂)U(t₁)⁻¹ = Q̃⁻¹ = (restarted transport)
        let composed = q1.inverse().unwrap().matmul(&ray.q_exit);
        let per_len = composed.distance(&ray2.q_exit) / ray2.exit_time.max(1e-9);
        assert!(per_len < 1e-8, "semigroup defect {per_len} per unit length");
    }

    #[test]
    fn extended_solver_matches_interior_solver() {
        let (s, g) = euclid(64);
        let att = AttenuationPair::random(g.clone(), 2, 13, 0.4, false);
        let f_field = make_test_field(
            TestFieldKind::GaussBump,
            21,
            &[0, 1],
            g.clone(),
            16,
            2,
            &s.descriptor(),
        );
        let f = ModeStack::from_field(&f_field, 1e-13);
        let ctl = StepControl::default();
        let fan = FanGrid::new(5, 4);
        let mut worst: f64 = 0.0;
        for i in 0..fan.n_beta {
            for j in 0..fan.n_alpha {
                let start = fan.inward_point(i, j, s.radius);
                let a = solve_transport_ray(&s, &att, &f, start, &ctl).unwrap();
                let b = solve_transport_extended(&s, &att, &f, start, &ctl).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    worst = worst.max((x - y).norm());
                }
            }
        }
        assert!(worst < 1e-6, "extended vs direct deviation {worst}");
    }

    #[test]
    fn near_tangential_smoothness_of_extended_solver() {
        let (s, g) = euclid(64);
        let att = AttenuationPair::zero(g.clone(), 1);
        let f_field = make_test_field(
            TestFieldKind::GaussBump,
            31,
            &[0],
            g.clone(),
            16,
            1,
            &s.descriptor(),
        );
        let f = ModeStack::from_field(&f_field, 1e-13);
        let ctl = StepControl::default();
        let beta = 0.9f64;
        let alphas: Vec<f64> =
            (0..7).map(|i| std::f64::consts::FRAC_PI_2 - 2e-3 + 2.5e-4 * i as f64).collect();
        let vals: Vec<f64> = alphas
            .iter()
            .map(|&a| {
                let p = SMPoint::new(beta.cos(), beta.sin(), beta + PI + a);
                solve_transport_extended(&s, &att, &f, p, &ctl).unwrap()[0].re
            })
            .collect();
        for w in vals.windows(3) {
            let second = (w[2] - 2.0 * w[1] + w[0]).abs();
            assert!(second < 1e-4, "second difference {second} across tangency");
        }
    }

    #[test]
    fn projective_transfer_one_form() {
        let n = 2;
        let a_form = |x: f64, y: f64, wx: f64, wy: f64| -> CMat {
            let a1 = CMat::from_rows(
                2,
                &[
                    C64::new(0.2 * x, 0.1),
                    C64::new(0.1 * y, -0.05),
                    C64::new(-0.07, 0.02 * x),
                    C64::new(0.12 * y, 0.0),
                ],
            );
            let a2 = CMat::from_rows(
                2,
                &[
                    C64::new(-0.1 * y, 0.05 * x),
                    C64::new(0.2, 0.0),
                    C64::new(0.03, -0.04),
                    C64::new(0.05 * x * y, 0.1),
                ],
            );
            a1.scale(C64::new(wx, 0.0)).add(&a2.scale(C64::new(wy, 0.0)))
        };
        let f_tensor = |x: f64, y: f64, wx: f64, wy: f64| -> Vec<C64> {
            vec![
                C64::new((1.0 - x * x - y * y) * wx, 0.3 * wy),
                C64::new(0.5 * x * wy, (1.0 - x * x - y * y) * wx * 0.2),
            ]
        };
        let entry = SMPoint::new(0.8 * (1.2f64).cos(), 0.8 * (1.2f64).sin(), 1.2 + PI + 0.4);
        let u1 = chord_transform_euclidean(0.8, n, &a_form, &f_tensor, None, entry, 2e-3);
        let u2 = chord_transform_klein(0.8, n, 1, &a_form, &f_tensor, entry, 2e-3);
        let d: f64 = u1.iter().zip(&u2).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(d < 1e-4, "1-form transfer defect {d}");
    }

    #[test]
    fn projective_transfer_k_tensor() {
        // symmetric 2-tensor: I¹_A(f·(g₂)^{(1−k)/2}) = I²_A(f), k = 2.
        let n = 1;
        let a_form = |x: f64, _y: f64, wx: f64, wy: f64| -> CMat {
            CMat::from_rows(1, &[C64::new(0.15 * x * wx, 0.1 * wy)])
        };
        let f_tensor = |x: f64, y: f64, wx: f64, wy: f64| -> Vec<C64> {
            vec![C64::new((1.0 + 0.3 * x - 0.2 * y) * (wx * wx + 2.0 * wx * wy), 0.0)]
        };
        let radius = 0.8;
        let weight =
            |x: f64, y: f64, wx: f64, wy: f64| -> f64 { klein_speed(x, y, wx, wy).powi(-1) };
        let entry =
            SMPoint::new(radius * (2.4f64).cos(), radius * (2.4f64).sin(), 2.4 + PI - 0.25);
        let u1 =
            chord_transform_euclidean(radius, n, &a_form, &f_tensor, Some(&weight), entry, 2e-3);
        let u2 = chord_transform_klein(radius, n, 2, &a_form, &f_tensor, entry, 2e-3);
        let d = (u1[0] - u2[0]).norm();
        assert!(d < 1e-4, "2-tensor transfer defect {d}");
    }
}
