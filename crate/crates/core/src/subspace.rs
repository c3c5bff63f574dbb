//! Filtered subspace iteration: the block alternative to the Lanczos engine
//! over the same filter. One sweep applies the filter to every active column,
//! runs a Rayleigh-Ritz step with respect to the filtered operator and locks
//! converged columns whose Rayleigh quotients fall inside the interval.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bounds::SpectralMap;
use crate::dense_eig::eig_symmetric_dense;
use crate::filter::{FilteredOperator, PolyFilter};
use crate::lanczos::{classify_candidate, Classification, EigResult, SolveError, SolverStats};

/// Roundoff slack below the bar when selecting candidate columns, matching
/// the Lanczos engine.
const BAR_SLACK: f64 = 1e-10;
use crate::linalg::{dot, orthogonalize, scal, DenseBlock};
use crate::sparse::SparseSymMatrix;

#[derive(Clone, Copy, Debug)]
pub struct SubspaceConfig {
    /// Block size; should slightly exceed the expected eigenvalue count.
    pub s: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

pub const DEFAULT_MAX_SWEEPS: usize = 600;

impl SubspaceConfig {
    /// Block size ceil(1.1 nev) + 5 over the estimated count.
    pub fn for_nev(nev: usize, seed: u64) -> Self {
        assert!(nev >= 1);
        SubspaceConfig {
            s: (1.1 * nev as f64).ceil() as usize + 5,
            tol: crate::lanczos::DEFAULT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            seed,
        }
    }
}

/// Extra diagnostics: the active block's sorted Ritz values (with respect to
/// the filtered operator) and the number of directions locked, per sweep.
#[derive(Clone, Debug, Default)]
pub struct SubspaceStats {
    pub base: SolverStats,
    pub sweeps: usize,
    pub ritz_history: Vec<Vec<f64>>,
    pub locks_per_sweep: Vec<usize>,
}

/// Compute all eigenpairs of `a` inside [xi, eta] by filtered subspace
/// iteration. `x0` provides warm-start columns (padded or truncated to the
/// block size).
pub fn solve_subspace(
    a: &SparseSymMatrix,
    map: &SpectralMap,
    filter: &PolyFilter,
    xi: f64,
    eta: f64,
    config: &SubspaceConfig,
    x0: Option<&DenseBlock>,
) -> Result<(Vec<EigResult>, SubspaceStats), SolveError> {
    let n = a.n();
    assert!(xi < eta, "interval must satisfy xi < eta");
    assert!(config.s >= 1, "block size must be at least 1");
    let s = config.s.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut op = FilteredOperator::new(a, *map, filter);
    let mut stats = SubspaceStats::default();
    let mut locked = DenseBlock::with_capacity(n, s);
    let mut results: Vec<EigResult> = Vec::new();

    // initial orthonormal block
    let mut q = DenseBlock::with_capacity(n, s);
    for j in 0..s {
        let mut col: Vec<f64> = match x0 {
            Some(x) if j < x.cols() => x.col(j).to_vec(),
            _ => (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        let norm = orthogonalize(&mut col, &[(&locked, 0), (&q, j)]);
        if norm <= 1e-12 {
            fill_random_orthogonal(&mut col, &locked, &q, j, &mut rng);
        } else {
            scal(1.0 / norm, &mut col);
        }
        q.push_col(&col);
    }

    // `deflated` holds every converged direction found so far: reported
    // eigenvectors and converged-but-outside boundary directions alike, so
    // neither can re-enter the iteration.
    let bar_gate = filter.bar - BAR_SLACK;
    while stats.sweeps < config.max_sweeps {
        stats.sweeps += 1;
        let active = q.cols();
        if active == 0 {
            break;
        }
        // W = B Q with the deflated block projected out
        let mut w = DenseBlock::with_capacity(n, active);
        let mut buf = vec![0.0; n];
        for j in 0..active {
            let t0 = Instant::now();
            op.apply(q.col(j), &mut buf);
            stats.base.matvec_seconds += t0.elapsed().as_secs_f64();
            stats.base.steps += 1;
            if !locked.is_empty() {
                let mut h = vec![0.0; locked.cols()];
                locked.gemv_t(locked.cols(), &buf, &mut h);
                locked.subtract_combination(locked.cols(), &h, &mut buf);
            }
            w.push_col(&buf);
        }
        // Rayleigh-Ritz with respect to B: G = Q^T W, symmetrized
        let mut g = vec![0.0; active * active];
        for i in 0..active {
            for j in 0..active {
                g[i * active + j] = dot(q.col(i), w.col(j));
            }
        }
        for i in 0..active {
            for j in (i + 1)..active {
                let v = 0.5 * (g[i * active + j] + g[j * active + i]);
                g[i * active + j] = v;
                g[j * active + i] = v;
            }
        }
        let (thetas, v) = eig_symmetric_dense(&g, active).expect("Rayleigh-Ritz eigensolve");
        stats.ritz_history.push(thetas.clone());

        // rotate to Ritz vectors U = Q V and their images BU = W V
        let mut ritz = DenseBlock::with_capacity(n, active);
        let mut ritz_image = DenseBlock::with_capacity(n, active);
        for j in 0..active {
            ritz.push_col(&q.combine(active, v.col(j)));
            ritz_image.push_col(&w.combine(active, v.col(j)));
        }
        // settlement of the dominant directions, from the B-residuals that
        // the rotated images give for free
        let mut settle = 0.0f64;
        for (j, &theta) in thetas.iter().enumerate().take(3) {
            let mut r2 = 0.0;
            for (im, u) in ritz_image.col(j).iter().zip(ritz.col(j)) {
                let d = im - theta * u;
                r2 += d * d;
            }
            settle = settle.max(r2.sqrt());
        }

        // candidates above the bar: lock or keep; everything else iterates on
        let mut keep: Vec<usize> = Vec::new();
        let mut above_bar_unconverged = 0usize;
        let mut locked_this_sweep = 0usize;
        for (j, &theta_j) in thetas.iter().enumerate() {
            if theta_j < bar_gate {
                keep.push(j);
                continue;
            }
            let mut u = ritz.col(j).to_vec();
            let nu = crate::linalg::norm2(&u);
            scal(1.0 / nu, &mut u);
            let t0 = Instant::now();
            let (class, lambda, residual) = classify_candidate(a, &u, xi, eta, config.tol);
            stats.base.matvec_seconds += t0.elapsed().as_secs_f64();
            stats.base.aux_matvecs += 1;
            let converged = residual <= config.tol;
            if converged {
                let mut h = vec![0.0; locked.cols()];
                if !locked.is_empty() {
                    locked.gemv_t(locked.cols(), &u, &mut h);
                }
                if crate::linalg::norm2(&h) >= 0.9 {
                    continue; // copy of a deflated direction; drop the column
                }
                normalize_sign(&mut u);
                locked.push_col(&u);
                locked_this_sweep += 1;
                if class == Classification::Locked {
                    results.push(EigResult {
                        lambda,
                        vector: u,
                        residual,
                        theta: theta_j,
                        slice_id: 0,
                    });
                }
                // converged-but-outside directions are deflated silently
            } else {
                above_bar_unconverged += 1;
                keep.push(j);
            }
        }
        stats.locks_per_sweep.push(locked_this_sweep);
        let above_bar_active = keep.iter().any(|&j| thetas[j] >= bar_gate);
        // the block may stop once the dominant directions have settled and
        // nothing above the bar remains active
        if !above_bar_active && settle <= 1e-3 && thetas[0] < filter.bar - 10.0 * settle {
            break;
        }
        if stats.sweeps == config.max_sweeps {
            if above_bar_unconverged > 0 {
                stats.base.filter_matvecs = stats.base.steps as u64 * filter.k as u64;
                sort(&mut results);
                return Err(SolveError::Budget {
                    max_its: config.max_sweeps,
                    unconverged: above_bar_unconverged,
                    converged: results,
                    stats: stats.base,
                });
            }
            break;
        }

        // next subspace: orthonormalized images of the kept Ritz vectors
        let mut next = DenseBlock::with_capacity(n, keep.len().max(1));
        for &j in &keep {
            let mut col = ritz_image.col(j).to_vec();
            let norm = orthogonalize(&mut col, &[(&locked, locked.cols()), (&next, next.cols())]);
            if norm <= 1e-12 {
                fill_random_orthogonal(&mut col, &locked, &next, next.cols(), &mut rng);
            } else {
                scal(1.0 / norm, &mut col);
            }
            next.push_col(&col);
        }
        if next.is_empty() {
            // every column was consumed by locking; refill one direction to
            // let the stop rule confirm exhaustion
            let mut col = vec![0.0; n];
            fill_random_orthogonal(&mut col, &locked, &next, 0, &mut rng);
            next.push_col(&col);
        }
        q = next;
    }

    stats.base.filter_matvecs = stats.base.steps as u64 * filter.k as u64;
    sort(&mut results);
    Ok((results, stats))
}

fn sort(results: &mut [EigResult]) {
    results.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
}

fn normalize_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut mag = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > mag {
            mag = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        scal(-1.0, v);
    }
}

fn fill_random_orthogonal(
    col: &mut [f64],
    locked: &DenseBlock,
    q: &DenseBlock,
    qcols: usize,
    rng: &mut ChaCha8Rng,
) {
    for _ in 0..3 {
        for x in col.iter_mut() {
            *x = rng.sample::<f64, _>(StandardNormal);
        }
        let norm = orthogonalize(col, &[(locked, locked.cols()), (q, qcols)]);
        if norm > 1e-8 {
            scal(1.0 / norm, col);
            return;
        }
    }
    panic!("no orthogonal direction left for the subspace block");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{select_degree, DampingKind, FilterSpec};
    use crate::sparse::{gen_laplacian3d, laplacian_eigs_in, SparseSymMatrix};

    #[test]
    fn diagonal_interval_recovered() {
        let d: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let a = SparseSymMatrix::diagonal(&d);
        let map = crate::bounds::estimate_bounds(&a, 10, 3);
        let spec = FilterSpec::new(2.5, 4.5, DampingKind::LanczosSigma, 0.6);
        let filter = select_degree(&spec, &map).unwrap();
        let config = SubspaceConfig {
            s: 4,
            tol: 1e-8,
            max_sweeps: 200,
            seed: 5,
        };
        let (results, _) = solve_subspace(&a, &map, &filter, 2.5, 4.5, &config, None).unwrap();
        assert_eq!(results.len(), 2);
        assert!((results[0].lambda - 3.0).abs() <= 1e-9);
        assert!((results[1].lambda - 4.0).abs() <= 1e-9);
    }

    #[test]
    fn warm_start_with_exact_eigenvectors_converges_first_sweep() {
        let d: Vec<f64> = (1..=12).map(|i| i as f64 * 0.7).collect();
        let a = SparseSymMatrix::diagonal(&d);
        let map = crate::bounds::estimate_bounds(&a, 12, 9);
        let (xi, eta) = (2.0, 4.0);
        let inside: Vec<usize> = d
            .iter()
            .enumerate()
            .filter(|(_, &v)| (xi..=eta).contains(&v))
            .map(|(i, _)| i)
            .collect();
        let spec = FilterSpec::new(xi, eta, DampingKind::Jackson, 0.6);
        let filter = select_degree(&spec, &map).unwrap();
        let mut x0 = DenseBlock::with_capacity(12, inside.len());
        for &i in &inside {
            let mut e = vec![0.0; 12];
            e[i] = 1.0;
            x0.push_col(&e);
        }
        let config = SubspaceConfig {
            s: inside.len() + 3,
            tol: 1e-8,
            max_sweeps: 50,
            seed: 1,
        };
        let (results, stats) =
            solve_subspace(&a, &map, &filter, xi, eta, &config, Some(&x0)).unwrap();
        assert_eq!(results.len(), inside.len());
        assert_eq!(
            stats.locks_per_sweep[0],
            inside.len(),
            "warm start should lock everything in the first sweep"
        );
    }

    #[test]
    fn agrees_with_lanczos_engine() {
        let (nx, ny, nz) = (7, 7, 7);
        let a = gen_laplacian3d(nx, ny, nz);
        let map = crate::bounds::estimate_bounds(&a, 60, 17);
        let (xi, eta) = (4.7, 5.0);
        let oracle = laplacian_eigs_in(nx, ny, nz, xi, eta);
        assert!(!oracle.is_empty());
        let spec = FilterSpec::new(xi, eta, DampingKind::LanczosSigma, 0.8);
        let filter = select_degree(&spec, &map).unwrap();
        let l_config = crate::lanczos::SolverConfig::for_nev(oracle.len(), 3);
        let (lres, _) =
            crate::lanczos::solve_interval(&a, &map, &filter, xi, eta, &l_config).unwrap();
        let s_config = SubspaceConfig::for_nev(oracle.len(), 4);
        let (sres, stats) = solve_subspace(&a, &map, &filter, xi, eta, &s_config, None).unwrap();
        assert_eq!(lres.len(), oracle.len());
        assert_eq!(sres.len(), oracle.len());
        for ((l, s), o) in lres.iter().zip(&sres).zip(&oracle) {
            assert!((l.lambda - s.lambda).abs() <= 1e-8);
            assert!((l.lambda - o).abs() <= 1e-8);
            assert!(s.residual <= s_config.tol);
        }
        // sorted within each sweep, and columns climb monotonically (up to
        // roundoff) across sweeps where no direction was locked away
        for (s_idx, sweep) in stats.ritz_history.iter().enumerate() {
            for w in sweep.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "sweep {s_idx} not sorted");
            }
        }
        for i in 1..stats.ritz_history.len() {
            if stats.locks_per_sweep[i - 1] > 0 {
                continue;
            }
            let prev = &stats.ritz_history[i - 1];
            let cur = &stats.ritz_history[i];
            for (j, (p, c)) in prev.iter().zip(cur).enumerate() {
                assert!(c >= &(p - 1e-9), "column {j} regressed between sweeps");
            }
        }
        assert_eq!(
            stats.base.filter_matvecs,
            stats.base.steps as u64 * filter.k as u64
        );
    }
}
