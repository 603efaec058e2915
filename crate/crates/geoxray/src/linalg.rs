//! Small dense complex matrices (n ≤ 8) used for attenuation pairs and
//! propagators. Row-major, heap-free operations where it matters.

use num_complex::Complex64;

pub type C64 = Complex64;

/// Row-major n×n complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub n: usize,
    pub a: Vec<C64>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        CMat { n, a: vec![C64::new(0.0, 0.0); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(n: usize, rows: &[C64]) -> Self {
        assert_eq!(rows.len(), n * n);
        CMat { n, a: rows.to_vec() }
    }

    pub fn scale(&self, s: C64) -> CMat {
        CMat { n: self.n, a: self.a.iter().map(|x| x * s).collect() }
    }

    pub fn add(&self, other: &CMat) -> CMat {
        debug_assert_eq!(self.n, other.n);
        CMat {
            n: self.n,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x + y).collect(),
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        debug_assert_eq!(self.n, other.n);
        CMat {
            n: self.n,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x - y).collect(),
        }
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        let n = self.n;
        debug_assert_eq!(n, other.n);
        let mut out = CMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self[(i, k)];
                if aik == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    /// Matrix–vector product into a fresh vector.
    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        let n = self.n;
        debug_assert_eq!(v.len(), n);
        let mut out = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..n {
                acc += self[(i, j)] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMat {
        let n = self.n;
        let mut out = CMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = self[(j, i)].conj();
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Spectral norm via power iteration on A†A (deterministic start).
    pub fn spectral_norm(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 0.0;
        }
        let ata = self.adjoint().matmul(self);
        let mut v: Vec<C64> = (0..n)
            .map(|i| C64::new(1.0 + 0.3 * i as f64, 0.1 * i as f64))
            .collect();
        let mut lam = 0.0_f64;
        for _ in 0..60 {
            let w = ata.matvec(&v);
            let norm = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lam = norm;
            v = w.iter().map(|x| x / norm).collect();
        }
        lam.sqrt()
    }

    /// Inverse by Gauss–Jordan with partial pivoting. Returns `None` when the
    /// pivot falls below `1e-300` (numerically singular).
    pub fn inverse(&self) -> Option<CMat> {
        let n = self.n;
        let mut a = self.a.clone();
        let mut inv = CMat::identity(n);
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].norm();
            for r in (col + 1)..n {
                let m = a[r * n + col].norm();
                if m > best {
                    best = m;
                    piv = r;
                }
            }
            if best < 1e-300 {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                    inv.a.swap(col * n + j, piv * n + j);
                }
            }
            let d = a[col * n + col];
            for j in 0..n {
                a[col * n + j] /= d;
                inv.a[col * n + j] /= d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r * n + col];
                if f == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    let x = a[col * n + j];
                    let y = inv.a[col * n + j];
                    a[r * n + j] -= f * x;
                    inv.a[r * n + j] -= f * y;
                }
            }
        }
        Some(inv)
    }

    pub fn det(&self) -> C64 {
        let n = self.n;
        let mut a = self.a.clone();
        let mut det = C64::new(1.0, 0.0);
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].norm();
            for r in (col + 1)..n {
                let m = a[r * n + col].norm();
                if m > best {
                    best = m;
                    piv = r;
                }
            }
            if best == 0.0 {
                return C64::new(0.0, 0.0);
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                det = -det;
            }
            let d = a[col * n + col];
            det *= d;
            for r in (col + 1)..n {
                let f = a[r * n + col] / d;
                for j in col..n {
                    let x = a[col * n + j];
                    a[r * n + j] -= f * x;
                }
            }
        }
        det
    }

    /// 2-norm condition number estimate ‖A‖‖A⁻¹‖ (∞ for singular input).
    pub fn condition_number(&self) -> f64 {
        match self.inverse() {
            Some(inv) => self.spectral_norm() * inv.spectral_norm(),
            None => f64::INFINITY,
        }
    }

    /// Frobenius distance to another matrix.
    pub fn distance(&self, other: &CMat) -> f64 {
        self.sub(other).frobenius_norm()
    }

    /// Max norm of A + A† (zero iff skew-Hermitian).
    pub fn skew_hermitian_defect(&self) -> f64 {
        self.add(&self.adjoint()).frobenius_norm()
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.a[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.a[i * self.n + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn inverse_roundtrip() {
        let m = CMat::from_rows(
            2,
            &[c(1.0, 0.5), c(0.2, -0.1), c(-0.3, 0.0), c(2.0, 1.0)],
        );
        let inv = m.inverse().unwrap();
        let id = m.matmul(&inv);
        assert!(id.distance(&CMat::identity(2)) < 1e-12);
    }

    #[test]
    fn det_of_identity_scale() {
        let m = CMat::identity(3).scale(c(2.0, 0.0));
        assert!((m.det() - c(8.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn spectral_norm_diagonal() {
        let mut m = CMat::zeros(2);
        m[(0, 0)] = c(3.0, 0.0);
        m[(1, 1)] = c(0.0, -5.0);
        assert!((m.spectral_norm() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn singular_matrix_has_no_inverse() {
        let m = CMat::from_rows(2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]);
        assert!(m.inverse().is_none());
    }
}
