//! Dense LDLᵀ factorization without pivoting.
//!
//! Used on the quasi-definite KKT matrix `[P Aᵀ; A 0]` with `P` positive
//! definite, for which the unpivoted factorization exists whenever `A` has
//! full row rank: the first `n` pivots are positive and the last `m` negative.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LdlFailure {
    /// Pivot `k` was NaN or infinite.
    NonFinite(usize),
    /// Pivot `k` had magnitude below the floor.
    Small(usize),
}

/// Packed unit-lower factor `L` (row-major, strict lower part) and diagonal `D`.
#[derive(Debug, Clone, Default)]
pub struct Ldl {
    n: usize,
    l: Vec<f64>,
    d: Vec<f64>,
    w: Vec<f64>,
}

impl Ldl {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            n,
            l: vec![0.0; n * n],
            d: vec![0.0; n],
            w: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.d
    }

    /// Factors the symmetric matrix `a` (row-major, only the lower triangle is
    /// read) in place of any previous factorization.
    pub fn factor(&mut self, a: &[f64], n: usize, pivot_floor: f64) -> Result<(), LdlFailure> {
        debug_assert_eq!(a.len(), n * n);
        self.n = n;
        // every entry read below is written first, so stale values are harmless
        self.l.resize(n * n, 0.0);
        self.d.resize(n, 0.0);
        self.w.resize(n, 0.0);
        let l = &mut self.l;
        let d = &mut self.d;
        // w[k] = L[j][k] * d[k] for the current column j
        let w = &mut self.w;
        for j in 0..n {
            let mut dj = a[j * n + j];
            let lj = &l[j * n..j * n + j];
            for ((wk, ljk), dk) in w[..j].iter_mut().zip(lj).zip(&d[..j]) {
                *wk = ljk * dk;
                dj -= ljk * *wk;
            }
            if !dj.is_finite() {
                return Err(LdlFailure::NonFinite(j));
            }
            if dj.abs() < pivot_floor {
                return Err(LdlFailure::Small(j));
            }
            d[j] = dj;
            let wj = &w[..j];
            for i in (j + 1)..n {
                let ri = i * n;
                let s = a[ri + j] - dot(&l[ri..ri + j], wj);
                l[ri + j] = s / dj;
            }
        }
        Ok(())
    }

    /// Solves `L D Lᵀ x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let s = dot(&self.l[i * n..i * n + i], &b[..i]);
            b[i] -= s;
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let xi = b[i];
            for (bk, lik) in b[..i].iter_mut().zip(&self.l[i * n..i * n + i]) {
                *bk -= lik * xi;
            }
        }
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for t in 0..4 {
            acc[t] += x[t] * y[t];
        }
    }
    let mut s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn solves_spd_system() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.3]);
        let mut ldl = Ldl::default();
        ldl.factor(m.transpose().as_slice(), 3, 1e-12).unwrap();
        let mut x = b.as_slice().to_vec();
        ldl.solve_in_place(&mut x);
        let r = &m * DVector::from_vec(x) - b;
        assert!(r.norm() < 1e-14);
        assert!(ldl.diagonal().iter().all(|d| *d > 0.0));
    }

    #[test]
    fn solves_quasi_definite_kkt() {
        // [[2, 0, 1], [0, 1, 1], [1, 1, 0]]
        let a = [2.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0];
        let mut ldl = Ldl::default();
        ldl.factor(&a, 3, 1e-12).unwrap();
        assert!(ldl.diagonal()[2] < 0.0);
        let mut x = vec![1.0, 2.0, 3.0];
        ldl.solve_in_place(&mut x);
        let m = DMatrix::from_row_slice(3, 3, &a);
        let r = m * DVector::from_vec(x) - DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(r.norm() < 1e-13);
    }

    #[test]
    fn reports_small_and_non_finite_pivots() {
        let mut ldl = Ldl::default();
        assert_eq!(ldl.factor(&[0.0, 0.0, 0.0, 1.0], 2, 1e-12), Err(LdlFailure::Small(0)));
        assert_eq!(
            ldl.factor(&[f64::NAN, 0.0, 0.0, 1.0], 2, 1e-12),
            Err(LdlFailure::NonFinite(0))
        );
    }
}
