//! Uniform tensor grid over the coordinate square `[−r, r]²` masked to the
//! disc, with disc quadrature (partial boundary cells weighted by coverage
//! fraction), 4th-order spatial difference stencils (one-sided closure at the
//! in-disc range ends), and 4-point Lagrange (bicubic) interpolation.

use crate::linalg::C64;
use crate::surface::ConformalSurface;
use std::sync::Arc;

/// Spatial grid shared by all fields living on one surface.
#[derive(Debug)]
pub struct SpatialGrid {
    pub n1: usize,
    pub n2: usize,
    pub radius: f64,
    pub h1: f64,
    pub h2: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Closed-disc membership per node, index `i1 * n2 + i2`.
    pub in_disc: Vec<bool>,
    /// Coverage-weighted cell areas (zero outside the disc).
    pub quad_area: Vec<f64>,
    /// e^{2λ} at nodes.
    pub metric_weight: Vec<f64>,
    /// λ at nodes.
    pub lambda: Vec<f64>,
    /// (∂₁λ, ∂₂λ) at nodes.
    pub dlambda: Vec<(f64, f64)>,
    /// Gaussian curvature at nodes (zero outside the disc).
    pub curvature: Vec<f64>,
    /// Per `i2` (x₂ line): inclusive in-disc `i1` range.
    pub range_x1: Vec<Option<(usize, usize)>>,
    /// Per `i1` (x₁ line): inclusive in-disc `i2` range.
    pub range_x2: Vec<Option<(usize, usize)>>,
}

pub type GridRef = Arc<SpatialGrid>;

impl SpatialGrid {
    pub fn new(surface: &ConformalSurface, n1: usize, n2: usize) -> GridRef {
        assert!(n1 >= 8 && n2 >= 8, "spatial grid too coarse");
        let r = surface.radius;
        let h1 = 2.0 * r / (n1 - 1) as f64;
        let h2 = 2.0 * r / (n2 - 1) as f64;
        let xs: Vec<f64> = (0..n1).map(|i| -r + h1 * i as f64).collect();
        let ys: Vec<f64> = (0..n2).map(|j| -r + h2 * j as f64).collect();

        let mut in_disc = vec![false; n1 * n2];
        let mut quad_area = vec![0.0; n1 * n2];
        let mut metric_weight = vec![0.0; n1 * n2];
        let mut lambda = vec![0.0; n1 * n2];
        let mut dlambda = vec![(0.0, 0.0); n1 * n2];
        let mut curvature = vec![0.0; n1 * n2];
        let r2 = r * r;

        for i1 in 0..n1 {
            for i2 in 0..n2 {
                let idx = i1 * n2 + i2;
                let (x, y) = (xs[i1], ys[i2]);
                let inside = x * x + y * y <= r2 * (1.0 + 1e-12);
                in_disc[idx] = inside;
                if inside {
                    lambda[idx] = surface.lambda(x, y);
                    dlambda[idx] = surface.dlambda(x, y);
                    metric_weight[idx] = (2.0 * lambda[idx]).exp();
                    curvature[idx] = surface
                        .gaussian_curvature(x, y)
                        .expect("in-disc point is in domain");
                }
                quad_area[idx] = cell_coverage(x, y, h1, h2, r) * h1 * h2;
            }
        }

        // Straddling cells whose node fell outside the disc would otherwise
        // drop their coverage (field values are masked there); fold it into
        // the nearest in-disc node so the disc measure is preserved.
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                let idx = i1 * n2 + i2;
                if in_disc[idx] || quad_area[idx] == 0.0 {
                    continue;
                }
                let mut best: Option<(f64, usize)> = None;
                for a in i1.saturating_sub(2)..(i1 + 3).min(n1) {
                    for b in i2.saturating_sub(2)..(i2 + 3).min(n2) {
                        let j = a * n2 + b;
                        if !in_disc[j] {
                            continue;
                        }
                        let d2 = (xs[a] - xs[i1]).powi(2) + (ys[b] - ys[i2]).powi(2);
                        if best.map_or(true, |(bd, _)| d2 < bd) {
                            best = Some((d2, j));
                        }
                    }
                }
                if let Some((_, j)) = best {
                    quad_area[j] += quad_area[idx];
                }
                quad_area[idx] = 0.0;
            }
        }

        let mut range_x1 = vec![None; n2];
        for (i2, slot) in range_x1.iter_mut().enumerate() {
            let mut lo = None;
            let mut hi = None;
            for i1 in 0..n1 {
                if in_disc[i1 * n2 + i2] {
                    if lo.is_none() {
                        lo = Some(i1);
                    }
                    hi = Some(i1);
                }
            }
            *slot = lo.zip(hi);
        }
        let mut range_x2 = vec![None; n1];
        for (i1, slot) in range_x2.iter_mut().enumerate() {
            let mut lo = None;
            let mut hi = None;
            for i2 in 0..n2 {
                if in_disc[i1 * n2 + i2] {
                    if lo.is_none() {
                        lo = Some(i2);
                    }
                    hi = Some(i2);
                }
            }
            *slot = lo.zip(hi);
        }

        Arc::new(SpatialGrid {
            n1,
            n2,
            radius: r,
            h1,
            h2,
            xs,
            ys,
            in_disc,
            quad_area,
            metric_weight,
            lambda,
            dlambda,
            curvature,
            range_x1,
            range_x2,
        })
    }

    #[inline]
    pub fn idx(&self, i1: usize, i2: usize) -> usize {
        i1 * self.n2 + i2
    }

    pub fn node_count(&self) -> usize {
        self.n1 * self.n2
    }

    /// ∂/∂x₁ of a complex 2D array, 4th-order with one-sided closure.
    pub fn dx1(&self, f: &[C64], out: &mut [C64]) {
        debug_assert_eq!(f.len(), self.node_count());
        out.fill(C64::new(0.0, 0.0));
        for i2 in 0..self.n2 {
            if let Some((lo, hi)) = self.range_x1[i2] {
                line_derivative(
                    f,
                    out,
                    lo,
                    hi,
                    self.h1,
                    |i| i * self.n2 + i2, // stride over i1
                );
            }
        }
    }

    /// ∂/∂x₂ of a complex 2D array.
    pub fn dx2(&self, f: &[C64], out: &mut [C64]) {
        debug_assert_eq!(f.len(), self.node_count());
        out.fill(C64::new(0.0, 0.0));
        for i1 in 0..self.n1 {
            if let Some((lo, hi)) = self.range_x2[i1] {
                line_derivative(f, out, lo, hi, self.h2, |i| i1 * self.n2 + i);
            }
        }
    }

    /// ∂/∂x₁ over full grid lines (no disc masking), for fields defined on the
    /// whole coordinate square such as gauge matrices.
    pub fn dx1_full(&self, f: &[C64], out: &mut [C64]) {
        for i2 in 0..self.n2 {
            line_derivative(f, out, 0, self.n1 - 1, self.h1, |i| i * self.n2 + i2);
        }
    }

    /// ∂/∂x₂ over full grid lines.
    pub fn dx2_full(&self, f: &[C64], out: &mut [C64]) {
        for i1 in 0..self.n1 {
            line_derivative(f, out, 0, self.n2 - 1, self.h2, |i| i1 * self.n2 + i);
        }
    }

    /// Degree-of-freedom weight for reconstruction unknowns: the full cell
    /// area times e^{2λ} on in-disc nodes (coverage-fractioned weights would
    /// let near-zero-measure rim nodes dominate normal equations).
    #[inline]
    pub fn dof_weight(&self, idx: usize) -> f64 {
        if self.in_disc[idx] {
            self.h1 * self.h2 * self.metric_weight[idx]
        } else {
            0.0
        }
    }

    /// Liouville-weighted spatial inner product Σ w·e^{2λ}·a·conj(b).
    pub fn inner_x(&self, a: &[C64], b: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for idx in 0..self.node_count() {
            let w = self.quad_area[idx] * self.metric_weight[idx];
            if w > 0.0 {
                acc += a[idx] * b[idx].conj() * w;
            }
        }
        acc
    }

    /// 4-point Lagrange weights along one axis for coordinate `x`; returns
    /// the four node indices (clamped) and weights.
    #[inline]
    pub fn interp_axis(&self, x: f64, axis: usize) -> ([usize; 4], [f64; 4]) {
        let (n, h, x0) = if axis == 0 {
            (self.n1, self.h1, self.xs[0])
        } else {
            (self.n2, self.h2, self.ys[0])
        };
        let t = (x - x0) / h;
        let i0 = (t.floor() as isize).clamp(1, n as isize - 3) as usize;
        let s = t - i0 as f64;
        let w = lagrange4(s);
        ([i0 - 1, i0, i0 + 1, i0 + 2], w)
    }

    /// Bicubic interpolation of a complex 2D array at `(x, y)`.
    pub fn bicubic(&self, f: &[C64], x: f64, y: f64) -> C64 {
        let (ix, wx) = self.interp_axis(x, 0);
        let (iy, wy) = self.interp_axis(y, 1);
        let mut acc = C64::new(0.0, 0.0);
        for a in 0..4 {
            let base = ix[a] * self.n2;
            let mut row = C64::new(0.0, 0.0);
            for b in 0..4 {
                row += f[base + iy[b]] * wy[b];
            }
            acc += row * wx[a];
        }
        acc
    }

    /// Max modulus over the outermost spatial ring (nodes on or outside the
    /// boundary circle): the boundary-vanishing certificate.
    pub fn outer_ring_max(&self, f: &[C64]) -> f64 {
        let r2 = self.radius * self.radius;
        let mut worst: f64 = 0.0;
        for i1 in 0..self.n1 {
            for i2 in 0..self.n2 {
                let rr = self.xs[i1] * self.xs[i1] + self.ys[i2] * self.ys[i2];
                if rr >= r2 * (1.0 - 1e-12) {
                    worst = worst.max(f[self.idx(i1, i2)].norm());
                }
            }
        }
        worst
    }
}

/// 4-point Lagrange interpolation weights at fraction `s ∈ [0,1]` between the
/// middle two of four equispaced nodes.
#[inline]
pub fn lagrange4(s: f64) -> [f64; 4] {
    let s1 = s - 1.0;
    let s2 = s - 2.0;
    let p = s + 1.0;
    [
        -s * s1 * s2 / 6.0,
        p * s1 * s2 * 0.5,
        -p * s * s2 * 0.5,
        p * s * s1 / 6.0,
    ]
}

/// First derivative along one grid line `lo..=hi` with 4th-order stencils,
/// shifted (one-sided) near the range ends, degrading gracefully on short
/// rows near the top and bottom of the circle.
fn line_derivative<F: Fn(usize) -> usize>(
    f: &[C64],
    out: &mut [C64],
    lo: usize,
    hi: usize,
    h: f64,
    at: F,
) {
    let len = hi - lo + 1;
    let g = |i: usize| f[at(lo + i)];
    match len {
        0 => {}
        1 => out[at(lo)] = C64::new(0.0, 0.0),
        2 => {
            let d = (g(1) - g(0)) / h;
            out[at(lo)] = d;
            out[at(lo + 1)] = d;
        }
        3 | 4 => {
            // second-order fallback for short rows
            out[at(lo)] = (g(1) * 4.0 - g(0) * 3.0 - g(2)) / (2.0 * h);
            for i in 1..len - 1 {
                out[at(lo + i)] = (g(i + 1) - g(i - 1)) / (2.0 * h);
            }
            out[at(lo + len - 1)] =
                (g(len - 1) * 3.0 - g(len - 2) * 4.0 + g(len - 3)) / (2.0 * h);
        }
        _ => {
            let c = 1.0 / (12.0 * h);
            out[at(lo)] =
                (g(0) * -25.0 + g(1) * 48.0 - g(2) * 36.0 + g(3) * 16.0 - g(4) * 3.0) * c;
            out[at(lo + 1)] =
                (g(0) * -3.0 - g(1) * 10.0 + g(2) * 18.0 - g(3) * 6.0 + g(4)) * c;
            for i in 2..len - 2 {
                out[at(lo + i)] = (g(i - 2) - g(i - 1) * 8.0 + g(i + 1) * 8.0 - g(i + 2)) * c;
            }
            let e = len - 1;
            out[at(lo + e - 1)] =
                (g(e - 4) * -1.0 + g(e - 3) * 6.0 - g(e - 2) * 18.0 + g(e - 1) * 10.0 + g(e) * 3.0)
                    * c;
            out[at(lo + e)] = (g(e - 4) * 3.0 - g(e - 3) * 16.0 + g(e - 2) * 36.0
                - g(e - 1) * 48.0
                + g(e) * 25.0)
                * c;
        }
    }
}

/// Fraction of the cell centred at `(x, y)` with half-widths `h1/2, h2/2`
/// covered by the disc of radius `r` (midpoint subsampling on straddling
/// cells).
fn cell_coverage(x: f64, y: f64, h1: f64, h2: f64, r: f64) -> f64 {
    let r2 = r * r;
    let corners = [
        (x - 0.5 * h1, y - 0.5 * h2),
        (x + 0.5 * h1, y - 0.5 * h2),
        (x - 0.5 * h1, y + 0.5 * h2),
        (x + 0.5 * h1, y + 0.5 * h2),
    ];
    let inside = corners
        .iter()
        .filter(|(cx, cy)| cx * cx + cy * cy <= r2)
        .count();
    if inside == 4 {
        return 1.0;
    }
    // Quick reject: nearest point of cell farther than r.
    let nx = x.abs() - 0.5 * h1;
    let ny = y.abs() - 0.5 * h2;
    let nx = nx.max(0.0);
    let ny = ny.max(0.0);
    if inside == 0 && nx * nx + ny * ny > r2 {
        return 0.0;
    }
    const S: usize = 48;
    let mut hits = 0usize;
    for a in 0..S {
        let sx = x - 0.5 * h1 + (a as f64 + 0.5) * h1 / S as f64;
        for b in 0..S {
            let sy = y - 0.5 * h2 + (b as f64 + 0.5) * h2 / S as f64;
            if sx * sx + sy * sy <= r2 {
                hits += 1;
            }
        }
    }
    hits as f64 / (S * S) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::ConformalSurface;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn quadrature_recovers_disc_area() {
        let s = ConformalSurface::euclidean(1.0);
        let g = SpatialGrid::new(&s, 96, 96);
        let area: f64 = g.quad_area.iter().sum();
        assert!(
            (area - std::f64::consts::PI).abs() < 2e-4,
            "area {area} vs π"
        );
    }

    #[test]
    fn derivative_exact_on_cubics() {
        let s = ConformalSurface::euclidean(1.0);
        let g = SpatialGrid::new(&s, 48, 48);
        let f: Vec<C64> = (0..g.node_count())
            .map(|idx| {
                let (i1, i2) = (idx / g.n2, idx % g.n2);
                let (x, y) = (g.xs[i1], g.ys[i2]);
                c(x * x * x + 2.0 * x * y - y * y)
            })
            .collect();
        let mut dx = vec![c(0.0); g.node_count()];
        g.dx1(&f, &mut dx);
        for i1 in 0..g.n1 {
            for i2 in 0..g.n2 {
                let idx = g.idx(i1, i2);
                if !g.in_disc[idx] {
                    continue;
                }
                // skip very short rows where the stencil degrades by design
                if let Some((lo, hi)) = g.range_x1[i2] {
                    if hi - lo + 1 < 5 {
                        continue;
                    }
                }
                let (x, y) = (g.xs[i1], g.ys[i2]);
                let want = 3.0 * x * x + 2.0 * y;
                assert!(
                    (dx[idx].re - want).abs() < 1e-10,
                    "dx at ({x},{y}): {} vs {want}",
                    dx[idx].re
                );
            }
        }
    }

    #[test]
    fn bicubic_exact_on_cubics() {
        let s = ConformalSurface::euclidean(1.0);
        let g = SpatialGrid::new(&s, 32, 32);
        let f: Vec<C64> = (0..g.node_count())
            .map(|idx| {
                let (i1, i2) = (idx / g.n2, idx % g.n2);
                let (x, y) = (g.xs[i1], g.ys[i2]);
                c(1.0 + x - y + x * y * y + 0.5 * x * x * x)
            })
            .collect();
        for (x, y) in [(0.13, -0.41), (0.0, 0.0), (-0.55, 0.2)] {
            let v = g.bicubic(&f, x, y).re;
            let want = 1.0 + x - y + x * y * y + 0.5 * x * x * x;
            assert!((v - want).abs() < 1e-12, "bicubic {v} vs {want}");
        }
    }

    #[test]
    fn metric_weight_poincare_center() {
        let s = ConformalSurface::poincare(0.5);
        let g = SpatialGrid::new(&s, 33, 33);
        let idx = g.idx(16, 16);
        assert!((g.metric_weight[idx] - 4.0).abs() < 1e-12); // e^{2 log 2}
    }
}
