//! Safe lower/upper bounds on the spectrum and the affine map onto [-1, 1].

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dense_eig::{eig_projected, ProjectedMatrix};
use crate::linalg::{axpy, orthogonalize, scal, DenseBlock};
use crate::sparse::SparseSymMatrix;

/// Affine map sending `[lo, hi]` onto the Chebyshev reference interval
/// [-1, 1]: `t -> (t - c) / d`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SpectralMap {
    pub lo: f64,
    pub hi: f64,
    pub c: f64,
    pub d: f64,
}

impl SpectralMap {
    pub fn from_bounds(lo: f64, hi: f64) -> Self {
        assert!(lo < hi, "spectral bounds must satisfy lo < hi");
        SpectralMap {
            lo,
            hi,
            c: 0.5 * (hi + lo),
            d: 0.5 * (hi - lo),
        }
    }

    /// (t - c) / d
    pub fn to_reference(&self, t: f64) -> f64 {
        (t - self.c) / self.d
    }

    /// c + d x
    pub fn from_reference(&self, x: f64) -> f64 {
        self.c + self.d * x
    }
}

/// Number of Lanczos steps used by default when estimating bounds.
pub const DEFAULT_BOUND_STEPS: usize = 60;

/// Estimate containment bounds for spec(A) from a short Lanczos run with full
/// reorthogonalization. The extreme Ritz values are pushed outward by their
/// residual bound |beta_{m+1} e_m^T y| plus a small safety nudge, which makes
/// the bounds err on the wide side without spoiling the filter quality.
pub fn estimate_bounds(a: &SparseSymMatrix, steps: usize, seed: u64) -> SpectralMap {
    let n = a.n();
    assert!(steps >= 2, "need at least 2 Lanczos steps");
    if n == 1 {
        let v = a.matvec_alloc(&[1.0])[0];
        let pad = 1e-12 * v.abs().max(1.0);
        return SpectralMap::from_bounds(v - pad, v + pad);
    }
    let m = steps.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut q = DenseBlock::with_capacity(n, m + 1);
    let mut v: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let nv = crate::linalg::norm2(&v);
    scal(1.0 / nv, &mut v);
    q.push_col(&v);

    let mut alphas: Vec<f64> = Vec::with_capacity(m);
    let mut betas: Vec<f64> = Vec::with_capacity(m);
    let mut w = vec![0.0; n];
    let mut last_beta = 0.0;
    for j in 0..m {
        a.matvec(q.col(j), &mut w);
        if j > 0 {
            axpy(-betas[j - 1], q.col(j - 1), &mut w);
        }
        let alpha = crate::linalg::dot(q.col(j), &w);
        axpy(-alpha, q.col(j), &mut w);
        let norm = orthogonalize(&mut w, &[(&q, j + 1)]);
        alphas.push(alpha);
        last_beta = norm;
        if norm <= 1e-13 * a.max_abs().max(1.0) {
            last_beta = 0.0;
            break;
        }
        if j + 1 < m {
            betas.push(norm);
            scal(1.0 / norm, &mut w);
            q.push_col(&w);
        }
    }

    let mm = alphas.len();
    let proj = ProjectedMatrix::tridiagonal(alphas, betas[..mm - 1].to_vec());
    let (vals, vecs) = eig_projected(&proj).expect("tridiagonal eigensolve failed");
    // vals descending
    let theta_max = vals[0];
    let theta_min = vals[mm - 1];
    let r_max = (last_beta * vecs.col(0)[mm - 1]).abs();
    let r_min = (last_beta * vecs.col(mm - 1)[mm - 1]).abs();
    let range = theta_max - theta_min;
    let scale = theta_max.abs().max(theta_min.abs()).max(1.0);
    let pad = 1e-9 * range + 1e-12 * scale;
    SpectralMap::from_bounds(theta_min - r_min - pad, theta_max + r_max + pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{gen_laplacian3d, laplacian_eigs_in, SparseSymMatrix};

    #[test]
    fn map_is_consistent() {
        let map = SpectralMap::from_bounds(0.00795, 11.99205);
        assert!((map.to_reference(map.lo) + 1.0).abs() < 1e-15);
        assert!((map.to_reference(map.hi) - 1.0).abs() < 1e-15);
        assert_eq!(map.to_reference(map.c), 0.0);
        // arithmetic oracle: (0.6 - 6.0) / 5.99205
        let expect = (0.6 - 6.0) / 5.99205;
        assert!((map.to_reference(0.6) - expect).abs() < 1e-15);
        assert!((expect + 0.901195).abs() < 1e-6);
    }

    #[test]
    fn diagonal_bounds_exact_after_full_krylov() {
        let d: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let a = SparseSymMatrix::diagonal(&d);
        let map = estimate_bounds(&a, 10, 42);
        assert!(map.lo <= 1.0);
        assert!(map.hi >= 10.0);
        assert!(map.hi - 10.0 <= 1e-8, "hi overshoot {}", map.hi - 10.0);
        assert!(1.0 - map.lo <= 1e-8);
    }

    #[test]
    fn identity_bounds_tight() {
        let a = SparseSymMatrix::identity(40);
        let map = estimate_bounds(&a, 10, 1);
        assert!(map.lo <= 1.0 && 1.0 <= map.hi);
        assert!(map.hi - map.lo <= 1e-8);
    }

    #[test]
    fn bounds_contain_spectrum_100_of_100() {
        // containment and loose tightness over 100 seeded trials, on both an
        // analytically known diagonal and a Laplacian
        let (nx, ny, nz) = (8, 8, 8);
        let lap = gen_laplacian3d(nx, ny, nz);
        let eigs = laplacian_eigs_in(nx, ny, nz, f64::NEG_INFINITY, f64::INFINITY);
        let (lmin, lmax) = (eigs[0], eigs[eigs.len() - 1]);
        let d: Vec<f64> = (0..200).map(|i| -3.0 + 0.05 * i as f64).collect();
        let diag = SparseSymMatrix::diagonal(&d);
        let (dmin, dmax) = (d[0], d[199]);
        for seed in 0..100 {
            let map = estimate_bounds(&lap, 60, seed);
            assert!(map.lo <= lmin, "seed {seed}: lo {} > {}", map.lo, lmin);
            assert!(map.hi >= lmax, "seed {seed}: hi {} < {}", map.hi, lmax);
            assert!(map.hi - lmax <= 0.05 * (lmax - lmin));
            assert!(lmin - map.lo <= 0.05 * (lmax - lmin));

            let map = estimate_bounds(&diag, 60, seed);
            assert!(map.lo <= dmin && map.hi >= dmax, "seed {seed} (diagonal)");
        }
    }

    #[test]
    fn laplacian60_bounds_contain_quoted_interval() {
        let a = gen_laplacian3d(60, 60, 60);
        let map = estimate_bounds(&a, 60, 7);
        assert!(map.lo <= 0.00795 + 1e-5, "lo = {}", map.lo);
        assert!(map.hi >= 11.99205 - 1e-5, "hi = {}", map.hi);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = gen_laplacian3d(6, 6, 6);
        let m1 = estimate_bounds(&a, 30, 5);
        let m2 = estimate_bounds(&a, 30, 5);
        assert_eq!(m1.lo, m2.lo);
        assert_eq!(m1.hi, m2.hi);
    }
}
