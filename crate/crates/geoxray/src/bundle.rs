//! Fields on the unit sphere bundle `SM` and the first-order operators acting
//! on them.
//!
//! A field is sampled on (spatial grid) × (uniform fiber angles). The fiber
//! direction is spectral: `V = ∂θ` is exact on the grid, multiplication by the
//! degree-one trigonometric coefficients of `X` shifts fiber modes exactly, so
//! `X` maps fiber mode `k` into modes `k ± 1` with no leakage. The spatial
//! direction uses the grid's 4th-order stencils.
//!
//! Degree ladder: with `X⊥ = e^{−λ}(−sinθ ∂₁ + cosθ ∂₂ − (∂₁λ cosθ + ∂₂λ sinθ)∂θ)`
//! the raising/lowering parts of `X` acting on the fiber mode `k` coefficient
//! `w` are
//!
//! ```text
//! X₊ = (X − iX⊥)/2 :  w ↦ (e^{−λ}/2) [ (∂₁ − i∂₂)w − k·w·(∂₁ − i∂₂)λ ]   (k → k+1)
//! X₋ = (X + iX⊥)/2 :  w ↦ (e^{−λ}/2) [ (∂₁ + i∂₂)w + k·w·(∂₁ + i∂₂)λ ]   (k → k−1)
//! ```
//!
//! and the divergence-free part of the horizontal gradient is carried by
//! `Z(u) = −(X⊥u)₀ · iv`, so `‖Z(u)‖ = ‖(X⊥u)₀‖`.

use crate::error::{Error, Result};
use crate::grid::{GridRef, SpatialGrid};
use crate::linalg::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

thread_local! {
    static FFT_CACHE: RefCell<HashMap<usize, (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>> =
        RefCell::new(HashMap::new());
}

fn with_ffts<R>(n: usize, f: impl FnOnce(&Arc<dyn Fft<f64>>, &Arc<dyn Fft<f64>>) -> R) -> R {
    FFT_CACHE.with(|cache| {
        let mut cache = cache.borrow_mut();
        let (fwd, inv) = cache
            .entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
            })
            .clone();
        f(&fwd, &inv)
    })
}

/// Complex n-vector-valued field sampled on (N₁ × N₂ spatial) × (N_θ fiber).
#[derive(Debug, Clone)]
pub struct SMField {
    pub grid: GridRef,
    pub n_theta: usize,
    pub nchan: usize,
    /// Layout: `((i1·N₂ + i2)·N_θ + it)·n + ch`.
    pub data: Vec<C64>,
    pub boundary_vanishing: bool,
    /// Identifier of the owning surface (descriptor string).
    pub surface_ref: String,
}

impl SMField {
    pub fn zeros(grid: GridRef, n_theta: usize, nchan: usize, surface_ref: &str) -> Self {
        assert!(n_theta.is_power_of_two(), "N_θ must be a power of two");
        let len = grid.node_count() * n_theta * nchan;
        SMField {
            grid,
            n_theta,
            nchan,
            data: vec![C64::new(0.0, 0.0); len],
            boundary_vanishing: false,
            surface_ref: surface_ref.to_string(),
        }
    }

    #[inline]
    pub fn at(&self, i1: usize, i2: usize, it: usize, ch: usize) -> C64 {
        self.data[((i1 * self.grid.n2 + i2) * self.n_theta + it) * self.nchan + ch]
    }

    #[inline]
    pub fn at_mut(&mut self, i1: usize, i2: usize, it: usize, ch: usize) -> &mut C64 {
        let idx = ((i1 * self.grid.n2 + i2) * self.n_theta + it) * self.nchan + ch;
        &mut self.data[idx]
    }

    pub fn theta(&self, it: usize) -> f64 {
        2.0 * std::f64::consts::PI * it as f64 / self.n_theta as f64
    }

    pub fn same_shape(&self) -> SMField {
        SMField {
            grid: self.grid.clone(),
            n_theta: self.n_theta,
            nchan: self.nchan,
            data: vec![C64::new(0.0, 0.0); self.data.len()],
            boundary_vanishing: false,
            surface_ref: self.surface_ref.clone(),
        }
    }

    /// Fill from a pointwise function of `(x₁, x₂, θ, channel)`; masked to the
    /// closed disc.
    pub fn from_fn(
        grid: GridRef,
        n_theta: usize,
        nchan: usize,
        surface_ref: &str,
        f: impl Fn(f64, f64, f64, usize) -> C64,
    ) -> Self {
        let mut out = Self::zeros(grid.clone(), n_theta, nchan, surface_ref);
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                if !grid.in_disc[grid.idx(i1, i2)] {
                    continue;
                }
                for it in 0..n_theta {
                    let th = out.theta(it);
                    for ch in 0..nchan {
                        *out.at_mut(i1, i2, it, ch) = f(grid.xs[i1], grid.ys[i2], th, ch);
                    }
                }
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> SMField {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= s;
        }
        out
    }

    pub fn add(&self, other: &SMField) -> SMField {
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v += w;
        }
        out.boundary_vanishing = self.boundary_vanishing && other.boundary_vanishing;
        out
    }

    pub fn sub(&self, other: &SMField) -> SMField {
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v -= w;
        }
        out.boundary_vanishing = self.boundary_vanishing && other.boundary_vanishing;
        out
    }

    /// Max modulus over the outermost spatial ring.
    pub fn outer_ring_max(&self) -> f64 {
        let g = &self.grid;
        let r2 = g.radius * g.radius;
        let mut worst: f64 = 0.0;
        for i1 in 0..g.n1 {
            for i2 in 0..g.n2 {
                let rr = g.xs[i1] * g.xs[i1] + g.ys[i2] * g.ys[i2];
                if rr >= r2 * (1.0 - 1e-12) {
                    for it in 0..self.n_theta {
                        for ch in 0..self.nchan {
                            worst = worst.max(self.at(i1, i2, it, ch).norm());
                        }
                    }
                }
            }
        }
        worst
    }
}

/// Liouville inner product `∫ a · conj(b) e^{2λ} dx dθ` (exact spectral
/// trapezoid in θ, coverage-weighted cells in x).
pub fn l2_inner(a: &SMField, b: &SMField) -> C64 {
    assert_eq!(a.data.len(), b.data.len());
    let g = &a.grid;
    let dth = 2.0 * std::f64::consts::PI / a.n_theta as f64;
    let mut acc = C64::new(0.0, 0.0);
    let stride = a.n_theta * a.nchan;
    for idx in 0..g.node_count() {
        let w = g.quad_area[idx] * g.metric_weight[idx];
        if w == 0.0 {
            continue;
        }
        let base = idx * stride;
        let mut cell = C64::new(0.0, 0.0);
        for off in 0..stride {
            cell += a.data[base + off] * b.data[base + off].conj();
        }
        acc += cell * w;
    }
    acc * dth
}

pub fn l2_norm_sq(a: &SMField) -> f64 {
    l2_inner(a, a).re
}

/// Geodesic vector field
/// `X = e^{−λ}(cosθ ∂₁ + sinθ ∂₂ + (−∂₁λ sinθ + ∂₂λ cosθ) ∂θ)`.
pub fn apply_x(field: &SMField) -> Result<SMField> {
    apply_first_order(field, false)
}

/// `X⊥ = e^{−λ}(−sinθ ∂₁ + cosθ ∂₂ − (∂₁λ cosθ + ∂₂λ sinθ) ∂θ)`.
pub fn apply_xperp(field: &SMField) -> Result<SMField> {
    apply_first_order(field, true)
}

fn apply_first_order(field: &SMField, perp: bool) -> Result<SMField> {
    if field.n_theta < 8 {
        return Err(Error::Config("N_θ < 8 is too coarse for spectral fibers".into()));
    }
    let g = field.grid.clone();
    let (n1, n2) = (g.n1, g.n2);
    let nn = n1 * n2;
    let nth = field.n_theta;
    let nch = field.nchan;
    let mut out = field.same_shape();

    // Spatial part: per (θ, channel) slice.
    let mut slice = vec![C64::new(0.0, 0.0); nn];
    let mut d1 = vec![C64::new(0.0, 0.0); nn];
    let mut d2 = vec![C64::new(0.0, 0.0); nn];
    for it in 0..nth {
        let th = field.theta(it);
        let (s, c) = th.sin_cos();
        let (c1, c2) = if perp { (-s, c) } else { (c, s) };
        for ch in 0..nch {
            for idx in 0..nn {
                slice[idx] = field.data[(idx * nth + it) * nch + ch];
            }
            g.dx1(&slice, &mut d1);
            g.dx2(&slice, &mut d2);
            for idx in 0..nn {
                if !g.in_disc[idx] {
                    continue;
                }
                let em = (-g.lambda[idx]).exp();
                out.data[(idx * nth + it) * nch + ch] = (d1[idx] * c1 + d2[idx] * c2) * em;
            }
        }
    }

    // Fiber part: spectral ∂θ then multiply by the θ-dependent coefficient.
    let vtheta = apply_v(field);
    for idx in 0..nn {
        if !g.in_disc[idx] {
            continue;
        }
        let em = (-g.lambda[idx]).exp();
        let (l1, l2) = g.dlambda[idx];
        for it in 0..nth {
            let th = field.theta(it);
            let (s, c) = th.sin_cos();
            let coef = if perp { -(l1 * c + l2 * s) } else { -l1 * s + l2 * c };
            let f = em * coef;
            if f == 0.0 {
                continue;
            }
            for ch in 0..nch {
                let o = (idx * nth + it) * nch + ch;
                out.data[o] += vtheta.data[o] * f;
            }
        }
    }
    Ok(out)
}

/// Vertical derivative `V = ∂θ`, spectral in the fiber.
pub fn apply_v(field: &SMField) -> SMField {
    let nth = field.n_theta;
    let nch = field.nchan;
    let nn = field.grid.node_count();
    let mut out = field.same_shape();
    let scale = 1.0 / nth as f64;
    with_ffts(nth, |fwd, inv| {
        let mut line = vec![C64::new(0.0, 0.0); nth];
        for idx in 0..nn {
            for ch in 0..nch {
                for it in 0..nth {
                    line[it] = field.data[(idx * nth + it) * nch + ch];
                }
                fwd.process(&mut line);
                for (t, v) in line.iter_mut().enumerate() {
                    let k = slot_to_k(t, nth);
                    *v *= C64::new(0.0, k as f64);
                }
                inv.process(&mut line);
                for it in 0..nth {
                    out.data[(idx * nth + it) * nch + ch] = line[it] * scale;
                }
            }
        }
    });
    out
}

#[inline]
pub fn slot_to_k(slot: usize, n_theta: usize) -> i64 {
    if slot < n_theta / 2 {
        slot as i64
    } else {
        slot as i64 - n_theta as i64
    }
}

#[inline]
pub fn k_to_slot(k: i64, n_theta: usize) -> usize {
    k.rem_euclid(n_theta as i64) as usize
}

/// Per-spatial-point fiber Fourier coefficients û_k.
#[derive(Debug, Clone)]
pub struct FourierModes {
    pub grid: GridRef,
    pub n_theta: usize,
    pub nchan: usize,
    /// Mode slot-major layout: `slot → nchan 2D arrays`, each `n1·n2` long:
    /// `coeffs[slot][ch][spatial_idx]`.
    pub coeffs: Vec<Vec<Vec<C64>>>,
    pub surface_ref: String,
}

impl FourierModes {
    pub fn zeros(grid: GridRef, n_theta: usize, nchan: usize, surface_ref: &str) -> Self {
        let nn = grid.node_count();
        FourierModes {
            grid,
            n_theta,
            nchan,
            coeffs: (0..n_theta)
                .map(|_| (0..nchan).map(|_| vec![C64::new(0.0, 0.0); nn]).collect())
                .collect(),
            surface_ref: surface_ref.to_string(),
        }
    }

    pub fn mode(&self, k: i64) -> &Vec<Vec<C64>> {
        &self.coeffs[k_to_slot(k, self.n_theta)]
    }

    /// Spatial Liouville norm² of mode k summed over channels (no 2π factor).
    pub fn mode_norm_sq_x(&self, k: i64) -> f64 {
        let g = &self.grid;
        let slot = k_to_slot(k, self.n_theta);
        let mut acc = 0.0;
        for ch in 0..self.nchan {
            let arr = &self.coeffs[slot][ch];
            for idx in 0..g.node_count() {
                let w = g.quad_area[idx] * g.metric_weight[idx];
                if w > 0.0 {
                    acc += arr[idx].norm_sqr() * w;
                }
            }
        }
        acc
    }

    /// ‖u_m‖² in L²(SM): 2π(‖û_m‖² + ‖û_{−m}‖²) for m ≥ 1, 2π‖û₀‖² for m = 0.
    pub fn degree_norm_sq(&self, m: usize) -> f64 {
        let tp = 2.0 * std::f64::consts::PI;
        if m == 0 {
            tp * self.mode_norm_sq_x(0)
        } else if m == self.n_theta / 2 {
            tp * self.mode_norm_sq_x(-(m as i64))
        } else if m < self.n_theta / 2 {
            tp * (self.mode_norm_sq_x(m as i64) + self.mode_norm_sq_x(-(m as i64)))
        } else {
            0.0
        }
    }

    /// All degree norms² `m = 0 .. N_θ/2`.
    pub fn degree_norms(&self) -> Vec<f64> {
        (0..=self.n_theta / 2).map(|m| self.degree_norm_sq(m)).collect()
    }

    /// Largest degree with ‖u_m‖ > floor·‖u‖.
    pub fn significant_degree(&self, floor: f64) -> usize {
        let norms = self.degree_norms();
        let total: f64 = norms.iter().sum();
        let cut = floor * floor * total;
        norms.iter().rposition(|&v| v > cut).unwrap_or(0)
    }

    /// Keep only modes ±m, zeroing the rest.
    pub fn project_degree(&self, m: usize) -> FourierModes {
        let mut out = FourierModes::zeros(
            self.grid.clone(),
            self.n_theta,
            self.nchan,
            &self.surface_ref,
        );
        let pair = [m as i64, -(m as i64)];
        for &k in &pair {
            let slot = k_to_slot(k, self.n_theta);
            out.coeffs[slot] = self.coeffs[slot].clone();
            if m == 0 {
                break;
            }
        }
        out
    }
}

/// Forward fiber transform: û_k = (1/N_θ) Σ_t u(θ_t) e^{−ikθ_t}.
pub fn fourier_modes(field: &SMField) -> FourierModes {
    let nth = field.n_theta;
    let nch = field.nchan;
    let nn = field.grid.node_count();
    let mut out = FourierModes::zeros(field.grid.clone(), nth, nch, &field.surface_ref);
    let scale = 1.0 / nth as f64;
    with_ffts(nth, |fwd, _| {
        let mut line = vec![C64::new(0.0, 0.0); nth];
        for idx in 0..nn {
            for ch in 0..nch {
                for it in 0..nth {
                    line[it] = field.data[(idx * nth + it) * nch + ch];
                }
                fwd.process(&mut line);
                for (slot, v) in line.iter().enumerate() {
                    out.coeffs[slot][ch][idx] = v * scale;
                }
            }
        }
    });
    out
}

/// Inverse fiber transform; exact inverse of [`fourier_modes`] on the grid.
pub fn synthesize(modes: &FourierModes) -> SMField {
    let nth = modes.n_theta;
    let nch = modes.nchan;
    let nn = modes.grid.node_count();
    let mut out = SMField::zeros(modes.grid.clone(), nth, nch, &modes.surface_ref);
    with_ffts(nth, |_, inv| {
        let mut line = vec![C64::new(0.0, 0.0); nth];
        for idx in 0..nn {
            for ch in 0..nch {
                for (slot, v) in line.iter_mut().enumerate() {
                    *v = modes.coeffs[slot][ch][idx];
                }
                inv.process(&mut line);
                for it in 0..nth {
                    out.data[(idx * nth + it) * nch + ch] = line[it];
                }
            }
        }
    });
    out
}

/// The degree-raising operator η₊ applied to the mode-k coefficient array.
pub fn ladder_raise(grid: &SpatialGrid, w: &[C64], k: i64) -> Vec<C64> {
    ladder(grid, w, k, true)
}

/// The degree-lowering operator η₋ applied to the mode-k coefficient array.
pub fn ladder_lower(grid: &SpatialGrid, w: &[C64], k: i64) -> Vec<C64> {
    ladder(grid, w, k, false)
}

fn ladder(grid: &SpatialGrid, w: &[C64], k: i64, raise: bool) -> Vec<C64> {
    let nn = grid.node_count();
    let mut d1 = vec![C64::new(0.0, 0.0); nn];
    let mut d2 = vec![C64::new(0.0, 0.0); nn];
    grid.dx1(w, &mut d1);
    grid.dx2(w, &mut d2);
    let mut out = vec![C64::new(0.0, 0.0); nn];
    let i = C64::new(0.0, 1.0);
    let kf = k as f64;
    for idx in 0..nn {
        if !grid.in_disc[idx] {
            continue;
        }
        let em = 0.5 * (-grid.lambda[idx]).exp();
        let (l1, l2) = grid.dlambda[idx];
        let v = if raise {
            let dl = C64::new(l1, -l2); // (∂₁ − i∂₂)λ
            d1[idx] - i * d2[idx] - w[idx] * dl * kf
        } else {
            let dl = C64::new(l1, l2); // (∂₁ + i∂₂)λ
            d1[idx] + i * d2[idx] + w[idx] * dl * kf
        };
        out[idx] = v * em;
    }
    out
}

/// The degree split of `X` applied degreewise to the whole decomposition:
/// returns `(X₋u, X₊u)` as mode collections, with `(X₋u)` holding the
/// contributions `η₋û_{k}` in slot `k−1` and `(X₊u)` the `η₊û_k` in `k+1`.
/// Their sum reconstructs `fourier_modes(apply_x(u))` up to round-off for
/// band-limited fields.
pub fn degree_split_x(field: &SMField) -> Result<(FourierModes, FourierModes)> {
    let modes = fourier_modes(field);
    degree_split_modes(&modes)
}

pub fn degree_split_modes(modes: &FourierModes) -> Result<(FourierModes, FourierModes)> {
    let nth = modes.n_theta;
    let half = (nth / 2) as i64;
    let mut minus = FourierModes::zeros(
        modes.grid.clone(),
        nth,
        modes.nchan,
        &modes.surface_ref,
    );
    let mut plus = minus.clone();
    for k in -half..half {
        let slot = k_to_slot(k, nth);
        for ch in 0..modes.nchan {
            let w = &modes.coeffs[slot][ch];
            if w.iter().all(|v| *v == C64::new(0.0, 0.0)) {
                continue;
            }
            // Degree (not mode) classification: a contribution landing in
            // mode j came from degree |k| and lands in degree |j|.
            if k + 1 < half {
                let up = ladder_raise(&modes.grid, w, k);
                let uslot = k_to_slot(k + 1, nth);
                let target = if (k + 1).abs() > k.abs() { &mut plus } else { &mut minus };
                for (o, v) in target.coeffs[uslot][ch].iter_mut().zip(up) {
                    *o += v;
                }
            }
            if k - 1 >= -half {
                let dn = ladder_lower(&modes.grid, w, k);
                let dslot = k_to_slot(k - 1, nth);
                let target = if (k - 1).abs() < k.abs() { &mut minus } else { &mut plus };
                for (o, v) in target.coeffs[dslot][ch].iter_mut().zip(dn) {
                    *o += v;
                }
            }
        }
    }
    Ok((minus, plus))
}

/// `(‖X₋u_m‖², ‖X₊u_m‖²)` for the single-degree component `u_m` of `modes`.
/// Handles the `m = 1` merge (both η₋û₁ and η₊û₋₁ land in mode 0) and
/// `m = 0` (no lowering).
pub fn xminus_xplus_norms_sq(modes: &FourierModes, m: usize) -> (f64, f64) {
    let g = &modes.grid;
    let tp = 2.0 * std::f64::consts::PI;
    let nn = g.node_count();
    let wsum = |arrs: &[Vec<Vec<C64>>]| -> f64 {
        let mut acc = 0.0;
        for idx in 0..nn {
            let w = g.quad_area[idx] * g.metric_weight[idx];
            if w == 0.0 {
                continue;
            }
            for arr in arrs {
                for ch in arr {
                    acc += ch[idx].norm_sqr() * w;
                }
            }
        }
        acc
    };
    let apply = |k: i64, raise: bool| -> Vec<Vec<C64>> {
        let slot = k_to_slot(k, modes.n_theta);
        (0..modes.nchan)
            .map(|ch| ladder(g, &modes.coeffs[slot][ch], k, raise))
            .collect()
    };
    if m == 0 {
        let up = apply(0, true);
        let dn = apply(0, false);
        (0.0, tp * (wsum(&[up]) + wsum(&[dn])))
    } else if m == 1 {
        // lowering: η₋û₁ + η₊û₋₁ merge in mode 0
        let a = apply(1, false);
        let b = apply(-1, true);
        let merged: Vec<Vec<C64>> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
            .collect();
        let up1 = apply(1, true);
        let up2 = apply(-1, false);
        (tp * wsum(&[merged]), tp * (wsum(&[up1]) + wsum(&[up2])))
    } else {
        let dn1 = apply(m as i64, false);
        let dn2 = apply(-(m as i64), true);
        let up1 = apply(m as i64, true);
        let up2 = apply(-(m as i64), false);
        (
            tp * (wsum(&[dn1]) + wsum(&[dn2])),
            tp * (wsum(&[up1]) + wsum(&[up2])),
        )
    }
}

/// `‖Z(u)‖² = ‖(X⊥u)₀‖²` (2D realization of the div-free horizontal part).
pub fn z_norm_sq(field: &SMField) -> Result<f64> {
    let xp = apply_xperp(field)?;
    let modes = fourier_modes(&xp);
    Ok(2.0 * std::f64::consts::PI * modes.mode_norm_sq_x(0))
}

/// `(Z(u), Z(w))` pairing via the mode-0 components of X⊥.
pub fn z_pairing(u: &SMField, w: &SMField) -> Result<C64> {
    let xu = fourier_modes(&apply_xperp(u)?);
    let xw = fourier_modes(&apply_xperp(w)?);
    let g = &u.grid;
    let mut acc = C64::new(0.0, 0.0);
    for ch in 0..u.nchan {
        let a = &xu.coeffs[0][ch];
        let b = &xw.coeffs[0][ch];
        for idx in 0..g.node_count() {
            let wq = g.quad_area[idx] * g.metric_weight[idx];
            if wq > 0.0 {
                acc += a[idx] * b[idx].conj() * wq;
            }
        }
    }
    Ok(acc * 2.0 * std::f64::consts::PI)
}

/// `(K u, u)` — the curvature-weighted L²(SM) norm² of a field itself.
pub fn curvature_weighted_norm_sq(u: &SMField) -> f64 {
    let g = &u.grid;
    let dth = 2.0 * std::f64::consts::PI / u.n_theta as f64;
    let stride = u.n_theta * u.nchan;
    let mut acc = 0.0;
    for idx in 0..g.node_count() {
        let wq = g.quad_area[idx] * g.metric_weight[idx] * g.curvature[idx];
        if wq == 0.0 {
            continue;
        }
        let base = idx * stride;
        let mut cell = 0.0;
        for off in 0..stride {
            cell += u.data[base + off].norm_sqr();
        }
        acc += cell * wq;
    }
    acc * dth
}

/// `(K Vu, Vw)` with the grid curvature.
pub fn curvature_pairing(u: &SMField, w: &SMField) -> C64 {
    let vu = apply_v(u);
    let vw = apply_v(w);
    let g = &u.grid;
    let dth = 2.0 * std::f64::consts::PI / u.n_theta as f64;
    let stride = u.n_theta * u.nchan;
    let mut acc = C64::new(0.0, 0.0);
    for idx in 0..g.node_count() {
        let wq = g.quad_area[idx] * g.metric_weight[idx] * g.curvature[idx];
        if wq == 0.0 {
            continue;
        }
        let base = idx * stride;
        let mut cell = C64::new(0.0, 0.0);
        for off in 0..stride {
            cell += vu.data[base + off] * vw.data[base + off].conj();
        }
        acc += cell * wq;
    }
    acc * dth
}

/// Kinds of generated test fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFieldKind {
    /// Random low-order polynomial spatial coefficients.
    SmoothPoly,
    /// Random Gaussian bumps.
    GaussBump,
}

/// Analytic description of a generated field: per (degree-signed mode,
/// channel), a closed-form coefficient function. Evaluable on any grid, so
/// refinement studies compare the same continuum field.
#[derive(Debug, Clone)]
pub struct TestFieldSpec {
    pub kind: TestFieldKind,
    pub seed: u64,
    pub nchan: usize,
    /// (k, channel, polynomial coeffs a[p][q] for x₁^p x₂^q) or bump params.
    terms: Vec<Term>,
    radius: f64,
}

#[derive(Debug, Clone)]
enum Term {
    Poly { k: i64, ch: usize, coef: Vec<C64> }, // 4x4 grid of x1^p x2^q
    Bump { k: i64, ch: usize, amp: C64, cx: f64, cy: f64, width: f64 },
}

impl TestFieldSpec {
    /// Seeded generator; `degree_profile` lists the fiber degrees to populate.
    pub fn generate(
        kind: TestFieldKind,
        seed: u64,
        degree_profile: &[usize],
        nchan: usize,
        radius: f64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for &m in degree_profile {
            let ks: Vec<i64> = if m == 0 { vec![0] } else { vec![m as i64, -(m as i64)] };
            for k in ks {
                for ch in 0..nchan {
                    match kind {
                        TestFieldKind::SmoothPoly => {
                            let coef: Vec<C64> = (0..16)
                                .map(|pq| {
                                    let (p, q) = (pq / 4, pq % 4);
                                    if p + q > 3 {
                                        return C64::new(0.0, 0.0);
                                    }
                                    let s = 1.0 / (1.0 + (p + q) as f64);
                                    C64::new(
                                        rng.gen_range(-1.0..1.0) * s,
                                        rng.gen_range(-1.0..1.0) * s,
                                    )
                                })
                                .collect();
                            terms.push(Term::Poly { k, ch, coef });
                        }
                        TestFieldKind::GaussBump => {
                            let rr = 0.55 * radius * rng.gen_range(0.0..1.0f64).sqrt();
                            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                            terms.push(Term::Bump {
                                k,
                                ch,
                                amp: C64::new(
                                    rng.gen_range(-1.0..1.0),
                                    rng.gen_range(-1.0..1.0),
                                ),
                                cx: rr * phi.cos(),
                                cy: rr * phi.sin(),
                                width: radius * rng.gen_range(0.35..0.7),
                            });
                        }
                    }
                }
            }
        }
        TestFieldSpec { kind, seed, nchan, terms, radius }
    }

    /// Coefficient of fiber mode k for channel ch at (x, y), including the
    /// boundary cutoff (r² − |x|²)²/r⁴.
    pub fn mode_coeff(&self, k: i64, ch: usize, x: f64, y: f64) -> C64 {
        let r2 = self.radius * self.radius;
        let d = r2 - x * x - y * y;
        if d <= 0.0 {
            return C64::new(0.0, 0.0);
        }
        let cut = (d * d) / (r2 * r2);
        let mut acc = C64::new(0.0, 0.0);
        for t in &self.terms {
            match t {
                Term::Poly { k: tk, ch: tch, coef } if *tk == k && *tch == ch => {
                    let mut xp = 1.0;
                    for p in 0..4 {
                        let mut yq = 1.0;
                        for q in 0..4 {
                            acc += coef[p * 4 + q] * (xp * yq);
                            yq *= y;
                        }
                        xp *= x;
                    }
                }
                Term::Bump { k: tk, ch: tch, amp, cx, cy, width } if *tk == k && *tch == ch => {
                    let dx = x - cx;
                    let dy = y - cy;
                    acc += amp * (-(dx * dx + dy * dy) / (width * width)).exp();
                }
                _ => {}
            }
        }
        acc * cut
    }

    /// Evaluate on a grid (the surface must have the same radius).
    pub fn realize(&self, grid: GridRef, n_theta: usize, surface_ref: &str) -> SMField {
        let ks: Vec<i64> = {
            let mut s: Vec<i64> = self
                .terms
                .iter()
                .map(|t| match t {
                    Term::Poly { k, .. } => *k,
                    Term::Bump { k, .. } => *k,
                })
                .collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        let mut modes = FourierModes::zeros(grid.clone(), n_theta, self.nchan, surface_ref);
        for &k in &ks {
            let slot = k_to_slot(k, n_theta);
            for ch in 0..self.nchan {
                for i1 in 0..grid.n1 {
                    for i2 in 0..grid.n2 {
                        let idx = grid.idx(i1, i2);
                        if grid.in_disc[idx] {
                            modes.coeffs[slot][ch][idx] =
                                self.mode_coeff(k, ch, grid.xs[i1], grid.ys[i2]);
                        }
                    }
                }
            }
        }
        let mut f = synthesize(&modes);
        f.boundary_vanishing = true;
        f
    }
}

/// Convenience wrapper matching the spec operation: seeded boundary-vanishing
/// field with the given degree profile.
pub fn make_test_field(
    kind: TestFieldKind,
    seed: u64,
    degree_profile: &[usize],
    grid: GridRef,
    n_theta: usize,
    nchan: usize,
    surface_ref: &str,
) -> SMField {
    let spec = TestFieldSpec::generate(kind, seed, degree_profile, nchan, grid.radius);
    spec.realize(grid, n_theta, surface_ref)
}

// --- binary snapshots ------------------------------------------------------

const SNAPSHOT_MAGIC: &[u8; 4] = b"GXF1";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Flat binary field snapshot: magic, (N₁,N₂,N_θ,n) as u32 LE, FNV-1a hash of
/// the surface descriptor as u64 LE, then row-major complex doubles.
pub fn write_snapshot<W: Write>(field: &SMField, mut w: W) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    for v in [
        field.grid.n1 as u32,
        field.grid.n2 as u32,
        field.n_theta as u32,
        field.nchan as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&fnv1a(field.surface_ref.as_bytes()).to_le_bytes())?;
    for v in &field.data {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

/// Read a snapshot written by [`write_snapshot`]; the grid must match the
/// stored dimensions and surface hash.
pub fn read_snapshot<R: Read>(
    grid: GridRef,
    surface_ref: &str,
    mut r: R,
) -> Result<SMField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Config("not a field snapshot".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut dims = [0u32; 4];
    for d in &mut dims {
        r.read_exact(&mut u32buf)?;
        *d = u32::from_le_bytes(u32buf);
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let hash = u64::from_le_bytes(u64buf);
    if dims[0] as usize != grid.n1 || dims[1] as usize != grid.n2 {
        return Err(Error::Config("snapshot grid mismatch".into()));
    }
    if hash != fnv1a(surface_ref.as_bytes()) {
        return Err(Error::Config("snapshot surface hash mismatch".into()));
    }
    let mut f = SMField::zeros(grid, dims[2] as usize, dims[3] as usize, surface_ref);
    let mut buf = [0u8; 16];
    for v in &mut f.data {
        r.read_exact(&mut buf)?;
        let re = f64::from_le_bytes(buf[0..8].try_into().unwrap());
        let im = f64::from_le_bytes(buf[8..16].try_into().unwrap());
        *v = C64::new(re, im);
    }
    Ok(f)
}

/// Build a field on a different surface's grid from one channel of an
/// existing `SMField`-shaped function, used by checkers that need scalar
/// variants. (Helper for the Riccati Z-fields.)
pub fn extract_channel(field: &SMField, ch: usize) -> SMField {
    let mut out = SMField::zeros(field.grid.clone(), field.n_theta, 1, &field.surface_ref);
    for idx in 0..field.grid.node_count() {
        for it in 0..field.n_theta {
            out.data[idx * field.n_theta + it] =
                field.data[(idx * field.n_theta + it) * field.nchan + ch];
        }
    }
    out.boundary_vanishing = field.boundary_vanishing;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use crate::surface::ConformalSurface;

    fn flat_setup(n: usize, _nth: usize) -> (ConformalSurface, GridRef) {
        let s = ConformalSurface::euclidean(1.0);
        let g = SpatialGrid::new(&s, n, n);
        (s, g)
    }

    #[test]
    fn x_of_linear_is_cos_theta() {
        let (s, g) = flat_setup(32, 16);
        let u = SMField::from_fn(g.clone(), 16, 1, &s.descriptor(), |x, _, _, _| {
            C64::new(x, 0.0)
        });
        let xu = apply_x(&u).unwrap();
        for i1 in 0..g.n1 {
            for i2 in 0..g.n2 {
                if !g.in_disc[g.idx(i1, i2)] {
                    continue;
                }
                if let Some((lo, hi)) = g.range_x1[i2] {
                    if hi - lo + 1 < 5 {
                        continue;
                    }
                }
                for it in 0..16 {
                    let th = u.theta(it);
                    let v = xu.at(i1, i2, it, 0);
                    assert!(
                        (v.re - th.cos()).abs() < 1e-10 && v.im.abs() < 1e-10,
                        "Xu at ({i1},{i2},{it}) = {v}"
                    );
                }
            }
        }
    }

    #[test]
    fn x_kills_x_independent_flat_fields() {
        let (s, g) = flat_setup(24, 16);
        let u = SMField::from_fn(g, 16, 1, &s.descriptor(), |_, _, th, _| {
            C64::new(th.cos(), th.sin())
        });
        let xu = apply_x(&u).unwrap();
        let worst = xu.data.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "‖Xu‖∞ = {worst}");
    }

    #[test]
    fn xperp_of_x2_is_cos_theta() {
        let (s, g) = flat_setup(32, 16);
        let u = SMField::from_fn(g.clone(), 16, 1, &s.descriptor(), |_, y, _, _| {
            C64::new(y, 0.0)
        });
        let xp = apply_xperp(&u).unwrap();
        for i1 in 0..g.n1 {
            for i2 in 0..g.n2 {
                if !g.in_disc[g.idx(i1, i2)] {
                    continue;
                }
                if let Some((lo, hi)) = g.range_x2[i1] {
                    if hi - lo + 1 < 5 {
                        continue;
                    }
                }
                let v = xp.at(i1, i2, 0, 0); // θ = 0 → cos θ = 1
                assert!((v.re - 1.0).abs() < 1e-10, "X⊥u = {v}");
            }
        }
    }

    #[test]
    fn v_is_spectral_multiplication() {
        let (s, g) = flat_setup(16, 32);
        let u = SMField::from_fn(g, 32, 1, &s.descriptor(), |x, y, th, _| {
            C64::new(0.0, 3.0 * th).exp() * C64::new(x + y, 0.0)
        });
        let vu = apply_v(&u);
        for (a, b) in vu.data.iter().zip(&u.data) {
            let want = C64::new(0.0, 3.0) * b;
            assert!((a - want).norm() < 1e-10);
        }
    }

    #[test]
    fn v_of_real_field_has_zero_fiber_mean() {
        let (s, g) = flat_setup(16, 16);
        let u = SMField::from_fn(g, 16, 1, &s.descriptor(), |x, y, th, _| {
            C64::new((1.0 + x) * th.cos() + y * (2.0 * th).sin(), 0.0)
        });
        let vu = apply_v(&u);
        let modes = fourier_modes(&vu);
        assert!(modes.mode_norm_sq_x(0) < 1e-24);
    }

    #[test]
    fn v_norm_matches_degree_sum() {
        let s = ConformalSurface::poincare(0.7);
        let g = SpatialGrid::new(&s, 40, 40);
        let u = make_test_field(
            TestFieldKind::SmoothPoly,
            7,
            &[0, 1, 2, 3],
            g,
            32,
            1,
            &s.descriptor(),
        );
        let vu = apply_v(&u);
        let lhs = l2_norm_sq(&vu);
        let norms = fourier_modes(&u).degree_norms();
        let rhs: f64 = norms
            .iter()
            .enumerate()
            .map(|(m, v)| (m * m) as f64 * v)
            .sum();
        assert!(
            (lhs - rhs).abs() <= 1e-10 * lhs.max(rhs).max(1e-30),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn commutator_vx_minus_xv_equals_xperp() {
        // ‖(VX − XV − X⊥)u‖ on a band-limited smooth field: fp-level.
        let s = ConformalSurface::variable_negative(1.0);
        let g = SpatialGrid::new(&s, 48, 48);
        let u = make_test_field(
            TestFieldKind::SmoothPoly,
            3,
            &[0, 1, 2, 4],
            g,
            32,
            1,
            &s.descriptor(),
        );
        let vxu = apply_v(&apply_x(&u).unwrap());
        let xvu = apply_x(&apply_v(&u)).unwrap();
        let xp = apply_xperp(&u).unwrap();
        let resid = vxu.sub(&xvu).sub(&xp);
        let rel = l2_norm_sq(&resid).sqrt() / l2_norm_sq(&u).sqrt();
        assert!(rel < 1e-4, "commutator residual {rel}");
    }

    #[test]
    fn xperp_of_constant_is_zero() {
        let (s, g) = flat_setup(16, 16);
        let u = SMField::from_fn(g, 16, 1, &s.descriptor(), |_, _, _, _| C64::new(2.5, -1.0));
        let xp = apply_xperp(&u).unwrap();
        assert!(xp.data.iter().map(|v| v.norm()).fold(0.0, f64::max) < 1e-12);
        let xu = apply_x(&u).unwrap();
        assert!(xu.data.iter().map(|v| v.norm()).fold(0.0, f64::max) < 1e-12);
    }

    #[test]
    fn fourier_roundtrip_and_degrees() {
        let (s, g) = flat_setup(20, 16);
        // u = 3 + e^{2iθ}
        let u = SMField::from_fn(g, 16, 1, &s.descriptor(), |_, _, th, _| {
            C64::new(3.0, 0.0) + C64::new(0.0, 2.0 * th).exp()
        });
        let modes = fourier_modes(&u);
        let norms = modes.degree_norms();
        for (m, &v) in norms.iter().enumerate() {
            if m == 0 || m == 2 {
                assert!(v > 1e-6, "degree {m} should be populated");
            } else {
                assert!(v < 1e-20, "degree {m} leaked: {v}");
            }
        }
        let back = synthesize(&modes);
        let err: f64 = back
            .data
            .iter()
            .zip(&u.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "roundtrip error {err}");
    }

    #[test]
    fn parseval_on_random_field() {
        let s = ConformalSurface::scaled_hyperbolic(2.0, 0.7);
        let g = SpatialGrid::new(&s, 40, 40);
        let u = make_test_field(
            TestFieldKind::GaussBump,
            11,
            &[0, 1, 3, 5],
            g,
            32,
            2,
            &s.descriptor(),
        );
        let total = l2_norm_sq(&u);
        let sum: f64 = fourier_modes(&u).degree_norms().iter().sum();
        assert!((total - sum).abs() <= 1e-10 * total, "{total} vs {sum}");
    }

    #[test]
    fn inner_product_flat_constants() {
        let (s, g) = flat_setup(96, 16);
        let one = SMField::from_fn(g, 16, 1, &s.descriptor(), |_, _, _, _| C64::new(1.0, 0.0));
        let v = l2_inner(&one, &one).re;
        let want = 2.0 * std::f64::consts::PI * std::f64::consts::PI;
        assert!((v - want).abs() / want < 1e-3, "⟨1,1⟩ = {v}, want {want}");
    }

    #[test]
    fn fiber_orthogonality() {
        let (s, g) = flat_setup(16, 16);
        let e1 = SMField::from_fn(g.clone(), 16, 1, &s.descriptor(), |_, _, th, _| {
            C64::new(0.0, th).exp()
        });
        for k in [0i64, 2, 3, -1] {
            let ek = SMField::from_fn(g.clone(), 16, 1, &s.descriptor(), |_, _, th, _| {
                C64::new(0.0, k as f64 * th).exp()
            });
            let v = l2_inner(&e1, &ek).norm();
            if k == 1 {
                assert!(v > 1.0);
            } else {
                assert!(v < 1e-12, "⟨e^iθ, e^{k}iθ⟩ = {v}");
            }
        }
    }

    #[test]
    fn x_skew_symmetry_on_boundary_vanishing_fields() {
        let s = ConformalSurface::euclidean(1.0);
        let g = SpatialGrid::new(&s, 96, 96);
        let u = make_test_field(
            TestFieldKind::SmoothPoly,
            5,
            &[0, 1, 2, 3],
            g,
            32,
            1,
            &s.descriptor(),
        );
        let xu = apply_x(&u).unwrap();
        let re = l2_inner(&xu, &u).re.abs();
        let nn = l2_norm_sq(&u);
        assert!(re <= 1e-6 * nn, "Re⟨Xu,u⟩ = {re}, ‖u‖² = {nn}");
    }

    #[test]
    fn degree_split_flat_formula_and_leakage() {
        let (s, g) = flat_setup(48, 32);
        // u = w(x) e^{2iθ} with w = cutoff-free polynomial; compare X₊ with
        // the symbolic flat formula ½ e^{3iθ}(∂₁ − i∂₂)w.
        let u = SMField::from_fn(g.clone(), 32, 1, &s.descriptor(), |x, y, th, _| {
            C64::new(0.0, 2.0 * th).exp() * C64::new(x * y + 0.5 * x, 0.0)
        });
        let (minus, plus) = degree_split_x(&u).unwrap();
        // leakage: modes other than 1 and 3 must vanish
        let xu_modes = fourier_modes(&apply_x(&u).unwrap());
        let mut xnorm = 0.0;
        for k in -15i64..16 {
            xnorm += xu_modes.mode_norm_sq_x(k);
        }
        for k in -15i64..16 {
            if k != 1 && k != 3 {
                let leak = xu_modes.mode_norm_sq_x(k);
                assert!(leak <= 1e-12 * xnorm, "leakage at k={k}: {leak}");
            }
        }
        // symbolic check of η₊ on interior nodes: ½(∂₁ − i∂₂)(xy + x/2)
        //  = ½((y + 1/2) − i x)
        let up = plus.mode(3);
        for i1 in 4..g.n1 - 4 {
            for i2 in 4..g.n2 - 4 {
                let idx = g.idx(i1, i2);
                if !g.in_disc[idx] {
                    continue;
                }
                if let Some((lo, hi)) = g.range_x1[i2] {
                    if i1 < lo + 2 || i1 + 2 > hi {
                        continue;
                    }
                }
                if let Some((lo, hi)) = g.range_x2[i1] {
                    if i2 < lo + 2 || i2 + 2 > hi {
                        continue;
                    }
                }
                let want = C64::new(0.5 * (g.ys[i2] + 0.5), -0.5 * g.xs[i1]);
                assert!(
                    (up[0][idx] - want).norm() < 1e-10,
                    "η₊ at ({i1},{i2}): {} vs {want}",
                    up[0][idx]
                );
            }
        }
        // Ω_0 input has no lowering part.
        let u0 = SMField::from_fn(g, 32, 1, &s.descriptor(), |x, y, _, _| {
            C64::new(x + y * y, 0.0)
        });
        let (m0, _p0) = degree_split_x(&u0).unwrap();
        let low: f64 = (0..32).map(|slot| {
            m0.coeffs[slot][0].iter().map(|v| v.norm_sqr()).sum::<f64>()
        })
        .sum();
        assert!(low < 1e-20, "X₋ on Ω₀ = {low}");
        let _ = minus;
    }

    #[test]
    fn split_reconstructs_x() {
        let s = ConformalSurface::variable_negative(1.0);
        let g = SpatialGrid::new(&s, 40, 40);
        let u = make_test_field(
            TestFieldKind::SmoothPoly,
            9,
            &[0, 1, 2, 3, 5],
            g,
            32,
            1,
            &s.descriptor(),
        );
        let (minus, plus) = degree_split_x(&u).unwrap();
        let xu = fourier_modes(&apply_x(&u).unwrap());
        let mut num = 0.0;
        let mut den = 0.0;
        for k in -14i64..15 {
            let slot = k_to_slot(k, 32);
            for ch in 0..1 {
                for idx in 0..u.grid.node_count() {
                    let rec = minus.coeffs[slot][ch][idx] + plus.coeffs[slot][ch][idx];
                    num += (rec - xu.coeffs[slot][ch][idx]).norm_sqr();
                    den += xu.coeffs[slot][ch][idx].norm_sqr();
                }
            }
        }
        assert!(num.sqrt() <= 1e-10 * den.sqrt(), "split mismatch {}", num.sqrt());
    }

    #[test]
    fn test_field_determinism_and_cutoff() {
        let s = ConformalSurface::euclidean(1.0);
        let g = SpatialGrid::new(&s, 32, 32);
        let a = make_test_field(
            TestFieldKind::SmoothPoly,
            42,
            &[0, 1, 2, 3],
            g.clone(),
            16,
            1,
            &s.descriptor(),
        );
        let b = make_test_field(
            TestFieldKind::SmoothPoly,
            42,
            &[0, 1, 2, 3],
            g.clone(),
            16,
            1,
            &s.descriptor(),
        );
        assert_eq!(a.data, b.data);
        assert!(a.outer_ring_max() <= 1e-12);
        let norms = fourier_modes(&a).degree_norms();
        let total: f64 = norms.iter().sum();
        for (m, &v) in norms.iter().enumerate().skip(4) {
            assert!(v <= 1e-24 * total, "degree {m} populated: {v}");
        }
    }

    #[test]
    fn snapshot_roundtrip() {
        let s = ConformalSurface::poincare(0.6);
        let g = SpatialGrid::new(&s, 16, 16);
        let u = make_test_field(
            TestFieldKind::GaussBump,
            1,
            &[0, 2],
            g.clone(),
            8,
            2,
            &s.descriptor(),
        );
        let mut buf = Vec::new();
        write_snapshot(&u, &mut buf).unwrap();
        let back = read_snapshot(g, &s.descriptor(), buf.as_slice()).unwrap();
        assert_eq!(u.data, back.data);
    }
}
