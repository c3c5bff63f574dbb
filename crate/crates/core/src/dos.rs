//! Stochastic spectral-density estimation (Chebyshev moments with Jackson
//! damping) and partitioning of a target interval into slices holding
//! approximately equal eigenvalue counts.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bounds::SpectralMap;
use crate::filter::jackson_coeffs;
use crate::sparse::SparseSymMatrix;

pub const DEFAULT_DOS_DEGREE: usize = 80;
pub const DEFAULT_DOS_NVEC: usize = 30;
/// Target eigenvalues per slice when the slice count is chosen automatically.
pub const AUTO_EIGS_PER_SLICE: f64 = 250.0;

/// Estimated spectral density on the mapped interval [-1, 1], with a monotone
/// cumulative count function used for partitioning.
#[derive(Clone, Debug)]
pub struct DosCurve {
    /// Chebyshev-node grid (interior of [-1, 1]).
    pub grid: Vec<f64>,
    /// Clipped density estimate scaled to integrate to the matrix dimension.
    pub density: Vec<f64>,
    pub nvec: usize,
    pub degree: usize,
    map: SpectralMap,
    n: usize,
    /// Monotone cumulative counts at theta nodes descending from pi to 0
    /// (t ascending over [-1, 1]).
    cum_val: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("estimated eigenvalue count {estimate:.1} in the interval is below {nslices} slices; use fewer slices")]
    TooManySlices { estimate: f64, nslices: usize },
}

/// Estimate the density of states by the kernel polynomial method: `nvec`
/// Rademacher probes, Chebyshev moments up to `degree`, Jackson damping.
/// Deterministic for a fixed seed.
pub fn kpm_dos(
    a: &SparseSymMatrix,
    map: &SpectralMap,
    degree: usize,
    nvec: usize,
    seed: u64,
) -> DosCurve {
    assert!(degree >= 10, "KPM degree must be at least 10");
    assert!(nvec >= 1, "need at least one probe vector");
    let n = a.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut moments = vec![0.0f64; degree + 1];
    let mut w0 = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for _ in 0..nvec {
        let v: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        w0.copy_from_slice(&v);
        moments[0] += crate::linalg::dot(&v, &w0);
        if degree >= 1 {
            mapped_matvec(a, map, &w0, &mut w1);
            moments[1] += crate::linalg::dot(&v, &w1);
        }
        #[allow(clippy::needless_range_loop)]
        for j in 2..=degree {
            mapped_matvec(a, map, &w1, &mut tmp);
            for ((x, t), p) in w2.iter_mut().zip(&tmp).zip(&w0) {
                *x = 2.0 * t - p;
            }
            moments[j] += crate::linalg::dot(&v, &w2);
            std::mem::swap(&mut w0, &mut w1);
            std::mem::swap(&mut w1, &mut w2);
        }
    }
    let scale = 1.0 / (n as f64 * nvec as f64);
    for mu in moments.iter_mut() {
        *mu *= scale;
    }
    let g = jackson_coeffs(degree);
    let damped: Vec<f64> = moments.iter().zip(&g).map(|(mu, gj)| mu * gj).collect();

    // density on a Chebyshev-node grid (avoids the weight singularity at +-1)
    let gridsize = 4 * degree;
    let mut grid = Vec::with_capacity(gridsize);
    let mut density = Vec::with_capacity(gridsize);
    for i in (0..gridsize).rev() {
        let theta = (2 * i + 1) as f64 * std::f64::consts::PI / (2 * gridsize) as f64;
        let t = theta.cos();
        let mut series = damped[0];
        for (j, &dj) in damped.iter().enumerate().skip(1) {
            series += 2.0 * dj * (j as f64 * theta).cos();
        }
        let phi = n as f64 * series / (std::f64::consts::PI * theta.sin());
        grid.push(t);
        density.push(phi.max(0.0));
    }

    // cumulative counts from the closed-form antiderivative of the expansion
    // in the theta variable, forced monotone against stochastic noise
    let cum_nodes = 4 * degree + 1;
    let mut cum_val = Vec::with_capacity(cum_nodes);
    let mut running = 0.0f64;
    for i in 0..cum_nodes {
        let theta = std::f64::consts::PI * (1.0 - i as f64 / (cum_nodes - 1) as f64);
        let raw = cumulative_closed_form(&damped, n, theta);
        running = running.max(raw);
        cum_val.push(running);
    }

    DosCurve {
        grid,
        density,
        nvec,
        degree,
        map: *map,
        n,
        cum_val,
    }
}

fn mapped_matvec(a: &SparseSymMatrix, map: &SpectralMap, x: &[f64], y: &mut [f64]) {
    a.matvec(x, y);
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = (*yi - map.c * xi) / map.d;
    }
}

/// Estimated count of eigenvalues in [-1, cos(theta)]:
/// n/pi * (d_0 (pi - theta) - 2 sum d_j sin(j theta)/j).
fn cumulative_closed_form(damped: &[f64], n: usize, theta: f64) -> f64 {
    let mut s = damped[0] * (std::f64::consts::PI - theta);
    for (j, &dj) in damped.iter().enumerate().skip(1) {
        s -= 2.0 * dj * (j as f64 * theta).sin() / j as f64;
    }
    n as f64 * s / std::f64::consts::PI
}

impl DosCurve {
    pub fn map(&self) -> &SpectralMap {
        &self.map
    }

    pub fn matrix_dim(&self) -> usize {
        self.n
    }

    /// Monotone estimate of the eigenvalue count at or below `t` (original
    /// coordinates), by linear interpolation of the cumulative nodes.
    pub fn cumulative(&self, t: f64) -> f64 {
        let x = self.map.to_reference(t).clamp(-1.0, 1.0);
        let theta = x.acos();
        let nodes = self.cum_val.len();
        let pos = (1.0 - theta / std::f64::consts::PI) * (nodes - 1) as f64;
        let i = (pos.floor() as usize).min(nodes - 2);
        let frac = pos - i as f64;
        self.cum_val[i] * (1.0 - frac) + self.cum_val[i + 1] * frac
    }

    /// Unrounded estimate of the count inside [xi, eta].
    pub fn estimate_in(&self, xi: f64, eta: f64) -> f64 {
        if eta <= xi {
            return 0.0;
        }
        self.cumulative(eta) - self.cumulative(xi)
    }
}

/// Rounded cumulative count inside [xi, eta].
pub fn estimate_count(dos: &DosCurve, xi: f64, eta: f64) -> usize {
    dos.estimate_in(xi, eta).round().max(0.0) as usize
}

/// A partition of [xi, eta] into contiguous slices with per-slice count
/// estimates.
#[derive(Clone, Debug, Serialize)]
pub struct SlicePlan {
    pub slices: Vec<(f64, f64)>,
    pub counts: Vec<usize>,
    pub total_estimate: usize,
}

impl SlicePlan {
    pub fn nslices(&self) -> usize {
        self.slices.len()
    }
}

/// Number of slices targeting ~250 eigenvalues per slice.
pub fn auto_nslices(estimate: f64) -> usize {
    (estimate / AUTO_EIGS_PER_SLICE).ceil().max(1.0) as usize
}

const BISECT_TOL: f64 = 1e-10;

/// Choose slice boundaries by bisection on the cumulative count so every
/// slice holds total/nslices estimated eigenvalues. Counts are attached by
/// cumulative rounding, so they telescope to the whole-interval estimate.
pub fn plan_slices(
    dos: &DosCurve,
    xi: f64,
    eta: f64,
    nslices: usize,
) -> Result<SlicePlan, PlanError> {
    assert!(nslices >= 1, "need at least one slice");
    assert!(xi < eta, "interval must satisfy xi < eta");
    let total = dos.estimate_in(xi, eta);
    if total < nslices as f64 {
        return Err(PlanError::TooManySlices {
            estimate: total,
            nslices,
        });
    }
    let base = dos.cumulative(xi);
    let per = total / nslices as f64;
    let mut bounds = Vec::with_capacity(nslices + 1);
    bounds.push(xi);
    for i in 1..nslices {
        let target = base + per * i as f64;
        let mut lo = bounds[i - 1];
        let mut hi = eta;
        while hi - lo > BISECT_TOL {
            let mid = 0.5 * (lo + hi);
            if dos.cumulative(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        bounds.push(0.5 * (lo + hi));
    }
    bounds.push(eta);

    let mut slices = Vec::with_capacity(nslices);
    let mut counts = Vec::with_capacity(nslices);
    let mut prev_rounded = 0i64;
    for i in 0..nslices {
        slices.push((bounds[i], bounds[i + 1]));
        let upto = (dos.cumulative(bounds[i + 1]) - base).round() as i64;
        counts.push((upto - prev_rounded).max(1) as usize);
        prev_rounded = upto;
    }
    Ok(SlicePlan {
        slices,
        counts,
        total_estimate: total.round() as usize,
    })
}
