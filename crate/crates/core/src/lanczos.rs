//! Thick-restart Lanczos with deflation on the filtered operator.
//!
//! The engine runs plain Lanczos cycles on B = (I - UU^T) rho(Ahat) with full
//! reorthogonalization, analyzes the projected matrix whenever the basis
//! fills up (or an early-restart check fires), preselects Ritz values at or
//! above the filter bar, validates each candidate against the original matrix
//! through its Rayleigh quotient and residual, locks converged pairs and
//! restarts with the unconverged candidates as the thick-restart set.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::bounds::SpectralMap;
use crate::dense_eig::{eig_projected, ProjectedMatrix};
use crate::filter::{FilteredOperator, PolyFilter};
use crate::linalg::{axpy, dot, norm2, orthogonalize, scal, DenseBlock};
use crate::sparse::SparseSymMatrix;

/// A symmetric linear operator applied through matrix-vector products. `&mut`
/// so implementations can reuse internal workspace.
pub trait SymOperator {
    fn dim(&self) -> usize;
    fn apply(&mut self, x: &[f64], out: &mut [f64]);
}

impl<'a> SymOperator for FilteredOperator<'a> {
    fn dim(&self) -> usize {
        self.n()
    }
    fn apply(&mut self, x: &[f64], out: &mut [f64]) {
        FilteredOperator::apply(self, x, out)
    }
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_NCYCLE: usize = 30;
pub const DEFAULT_NTEST: usize = 50;

/// Per-interval solver knobs. `m` and `max_its` default to 4x and 16x the
/// estimated eigenvalue count.
#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    pub nev: usize,
    pub m: usize,
    pub max_its: usize,
    pub tol: f64,
    pub ncycle: usize,
    pub ntest: usize,
    pub seed: u64,
    /// Track orthonormality defects of [U | Q] at restart boundaries
    /// (quadratic cost; used by the verification suites).
    pub validate: bool,
}

impl SolverConfig {
    pub fn for_nev(nev: usize, seed: u64) -> Self {
        assert!(nev >= 1, "nev must be at least 1");
        SolverConfig {
            nev,
            m: 4 * nev,
            max_its: 16 * nev,
            tol: DEFAULT_TOL,
            ncycle: DEFAULT_NCYCLE,
            ntest: DEFAULT_NTEST,
            seed,
            validate: false,
        }
    }
}

/// One converged eigenpair of the original matrix.
#[derive(Clone, Debug)]
pub struct EigResult {
    pub lambda: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    /// Ritz value of the filtered operator at extraction time.
    pub theta: f64,
    pub slice_id: usize,
}

/// Work counters for a single interval solve.
#[derive(Clone, Copy, Debug, Default)]
pub struct SolverStats {
    /// Filtered Lanczos steps (one filter application each).
    pub steps: usize,
    pub restarts: usize,
    /// Matvecs spent inside filter applications: degree x steps.
    pub filter_matvecs: u64,
    /// Matvecs spent on candidate Rayleigh-quotient/residual checks.
    pub aux_matvecs: u64,
    /// Seconds inside matrix-vector work.
    pub matvec_seconds: f64,
    /// Largest orthonormality defect of [U | Q] seen at a restart boundary
    /// (only populated when `validate` is set).
    pub max_ortho_defect: f64,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(
        "iteration budget {max_its} exhausted with {unconverged} unconverged candidates ({} locked)",
        converged.len()
    )]
    Budget {
        max_its: usize,
        unconverged: usize,
        converged: Vec<EigResult>,
        stats: SolverStats,
    },
}

/// Lanczos basis plus the projected matrix it generates.
pub struct LanczosState {
    pub q: DenseBlock,
    pub proj: ProjectedMatrix,
    /// Norm of the latest residual vector (couples the basis to q_last).
    pub last_beta: f64,
}

impl LanczosState {
    /// Fresh state with capacity for `m + 1` basis vectors, starting from `q1`
    /// (assumed unit norm).
    pub fn fresh(m: usize, q1: &[f64]) -> Self {
        let mut q = DenseBlock::with_capacity(q1.len(), m + 1);
        q.push_col(q1);
        LanczosState {
            q,
            proj: ProjectedMatrix::default(),
            last_beta: 0.0,
        }
    }

    /// Projected size: number of completed Lanczos positions.
    pub fn size(&self) -> usize {
        self.proj.size()
    }
}

/// Restart data for one kept Ritz pair: value, residual coefficient
/// s = beta_{m+1} * (last eigenvector component), and the Ritz vector.
pub struct TrPair {
    pub theta: f64,
    pub s: f64,
    pub vector: Vec<f64>,
}

/// Build the post-restart state: basis [u_1 .. u_l, q_next] and the arrowhead
/// head of the projected matrix. An empty TR set degenerates to a fresh start
/// from `q_next`.
pub fn thick_restart(m: usize, tr: &[TrPair], q_next: &[f64]) -> LanczosState {
    let mut state = LanczosState {
        q: DenseBlock::with_capacity(q_next.len(), m + 1),
        proj: ProjectedMatrix::default(),
        last_beta: 0.0,
    };
    for pair in tr {
        state.q.push_col(&pair.vector);
        state.proj.head_diag.push(pair.theta);
        state.proj.spike.push(pair.s);
    }
    state.q.push_col(q_next);
    state
}

const BREAKDOWN_TOL: f64 = 1e-13;

/// Extend the basis with plain (fully reorthogonalized) Lanczos steps until
/// the projected size reaches `to`. Breakdown is survived by replacing the
/// next vector with a random direction orthogonal to everything computed so
/// far; returns false if no such direction with usable norm exists (the
/// active space is exhausted).
pub fn lanczos_cycle(
    state: &mut LanczosState,
    op: &mut dyn SymOperator,
    locked: &DenseBlock,
    to: usize,
    rng: &mut ChaCha8Rng,
    stats: &mut SolverStats,
) -> bool {
    let n = op.dim();
    let mut w = vec![0.0; n];
    while state.size() < to {
        let jpos = state.q.cols() - 1;
        debug_assert_eq!(jpos, state.size());
        let t0 = Instant::now();
        op.apply(state.q.col(jpos), &mut w);
        stats.matvec_seconds += t0.elapsed().as_secs_f64();
        stats.steps += 1;
        // deflate against the locked block
        if !locked.is_empty() {
            let mut h = vec![0.0; locked.cols()];
            locked.gemv_t(locked.cols(), &w, &mut h);
            locked.subtract_combination(locked.cols(), &h, &mut w);
        }
        if state.proj.tri_alpha.is_empty() {
            // first step after a thick restart: subtract the known residual
            // couplings into the restart vectors
            for (i, &s) in state.proj.spike.iter().enumerate() {
                axpy(-s, state.q.col(i), &mut w);
            }
        } else if state.last_beta != 0.0 {
            axpy(-state.last_beta, state.q.col(jpos - 1), &mut w);
        }
        let alpha = dot(state.q.col(jpos), &w);
        axpy(-alpha, state.q.col(jpos), &mut w);
        let norm = orthogonalize(&mut w, &[(locked, locked.cols()), (&state.q, jpos + 1)]);
        if !state.proj.tri_alpha.is_empty() {
            state.proj.tri_beta.push(state.last_beta);
        }
        state.proj.tri_alpha.push(alpha);
        let scale = state.proj.max_abs().max(1.0);
        if norm <= BREAKDOWN_TOL * scale {
            // invariant subspace: continue from a random orthogonal direction
            state.last_beta = 0.0;
            let mut found = false;
            for _ in 0..3 {
                for x in w.iter_mut() {
                    *x = rng.sample::<f64, _>(StandardNormal);
                }
                let nv = orthogonalize(&mut w, &[(locked, locked.cols()), (&state.q, jpos + 1)]);
                if nv > 1e-8 {
                    scal(1.0 / nv, &mut w);
                    found = true;
                    break;
                }
            }
            if !found {
                // no orthogonal direction left: the reachable space is fully
                // represented; park a zero carrier and report exhaustion
                w.fill(0.0);
                state.q.push_col(&w);
                return false;
            }
        } else {
            state.last_beta = norm;
            scal(1.0 / norm, &mut w);
        }
        state.q.push_col(&w);
    }
    true
}

/// How a validated candidate is routed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    Locked,
    Tr,
    Rejected,
}

/// Rayleigh-quotient and residual check of a unit-norm candidate vector
/// against the original matrix: pairs outside [xi, eta] are rejected no
/// matter how small the residual. The interval comparison carries a
/// roundoff-level guard so an eigenvalue sitting exactly on an endpoint is
/// not dropped by the last bits of the quotient.
pub fn classify_candidate(
    a: &SparseSymMatrix,
    u: &[f64],
    xi: f64,
    eta: f64,
    tol: f64,
) -> (Classification, f64, f64) {
    let mut w = a.matvec_alloc(u);
    let lambda = dot(u, &w);
    axpy(-lambda, u, &mut w);
    let residual = norm2(&w);
    let eps = 1e-12 * xi.abs().max(eta.abs()).max(1.0);
    if lambda < xi - eps || lambda > eta + eps {
        (Classification::Rejected, lambda, residual)
    } else if residual <= tol {
        (Classification::Locked, lambda, residual)
    } else {
        (Classification::Tr, lambda, residual)
    }
}

/// Flip the sign so the largest-magnitude component is positive.
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

/// Projection threshold above which a converged candidate is treated as a
/// copy of an already locked vector.
const DUP_PROJECTION: f64 = 0.9;

/// Roundoff slack under the bar when preselecting candidates: an eigenvalue
/// exactly at an interval endpoint maps to the bar itself, so the comparison
/// must not hinge on the last bits. Anything admitted from just outside is
/// discarded by the Rayleigh-quotient check.
const BAR_SLACK: f64 = 1e-10;

/// An early stop needs the spectrum to be clear of the bar region entirely,
/// not just momentarily below it while Ritz values are still climbing.
const NEAR_BAR_FRACTION: f64 = 0.9;

/// Compute all eigenpairs of `a` inside [xi, eta] using the given balanced
/// filter. The iteration stops when an analysis of the projected matrix shows
/// no Ritz value at or above the filter bar.
pub fn solve_interval(
    a: &SparseSymMatrix,
    map: &SpectralMap,
    filter: &PolyFilter,
    xi: f64,
    eta: f64,
    config: &SolverConfig,
) -> Result<(Vec<EigResult>, SolverStats), SolveError> {
    let n = a.n();
    assert!(xi < eta, "interval must satisfy xi < eta");
    assert!(
        config.nev >= 1 && config.m > config.nev,
        "need m > nev >= 1"
    );
    let m = config.m.min(n);
    let ntest = config.ntest.min(m);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut op = FilteredOperator::new(a, *map, filter);
    let mut stats = SolverStats::default();
    let mut locked = DenseBlock::with_capacity(n, config.nev + 8);
    let mut results: Vec<EigResult> = Vec::new();

    let fresh_vector = |rng: &mut ChaCha8Rng, locked: &DenseBlock| -> Vec<f64> {
        let mut v: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = orthogonalize(&mut v, &[(locked, locked.cols())]);
        scal(1.0 / norm, &mut v);
        v
    };

    let q1 = fresh_vector(&mut rng, &locked);
    let mut state = LanczosState::fresh(m, &q1);

    'outer: loop {
        let l = state.proj.head_len();
        let m_eff = m.min(n.saturating_sub(locked.cols()).max(l + 2));
        // run to the basis cap, pausing at the early-restart checkpoints
        let mut exhausted = false;
        loop {
            let size = state.size();
            if size >= m_eff {
                break;
            }
            let to_checkpoint = config.ncycle - stats.steps % config.ncycle;
            let target = (size + to_checkpoint).min(m_eff);
            if !lanczos_cycle(&mut state, &mut op, &locked, target, &mut rng, &mut stats) {
                exhausted = true;
                break;
            }
            let size = state.size();
            if size >= m_eff {
                break;
            }
            if size < l + ntest {
                continue;
            }
            // checkpoint analysis on the current projected matrix
            let (thetas, vecs) = eig_projected(&state.proj).expect("projected eigensolve");
            let gate = filter.bar - BAR_SLACK;
            let ncand = thetas.iter().filter(|&&t| t >= gate).count();
            if ncand == 0 {
                let near = thetas
                    .iter()
                    .filter(|&&t| t >= NEAR_BAR_FRACTION * filter.bar)
                    .count();
                if near == 0 && size >= l + 2 * ntest {
                    // nothing anywhere near the bar after a long stretch:
                    // stop extending and let the final analysis confirm
                    break;
                }
                continue;
            }
            let tnorm = thetas
                .first()
                .unwrap()
                .abs()
                .max(thetas.last().unwrap().abs());
            let mut nconv = 0usize;
            for (j, &t) in thetas.iter().enumerate() {
                if t >= gate
                    && (state.last_beta * vecs.col(j)[size - 1]).abs() <= config.tol * tnorm
                {
                    nconv += 1;
                }
            }
            if nconv + results.len() > config.nev {
                break; // early restart
            }
        }

        let size = state.size();
        if size == 0 {
            break 'outer;
        }
        if config.validate {
            let defect = restart_defect(&locked, &state.q, size);
            stats.max_ortho_defect = stats.max_ortho_defect.max(defect);
        }

        // Rayleigh-Ritz analysis and candidate routing
        let (thetas, vecs) = eig_projected(&state.proj).expect("projected eigensolve");
        let gate = filter.bar - BAR_SLACK;
        let mut tr: Vec<TrPair> = Vec::new();
        let mut locked_now = 0usize;
        for (j, &theta) in thetas.iter().enumerate() {
            if theta < gate {
                break; // descending order
            }
            let y = vecs.col(j);
            let mut u = state.q.combine(size, y);
            let nu = norm2(&u);
            scal(1.0 / nu, &mut u);
            let t0 = Instant::now();
            let (class, lambda, residual) = classify_candidate(a, &u, xi, eta, config.tol);
            stats.matvec_seconds += t0.elapsed().as_secs_f64();
            stats.aux_matvecs += 1;
            match class {
                Classification::Rejected => {}
                Classification::Locked => {
                    if !locked.is_empty() {
                        let mut h = vec![0.0; locked.cols()];
                        locked.gemv_t(locked.cols(), &u, &mut h);
                        if norm2(&h) >= DUP_PROJECTION {
                            continue; // a copy of an already locked vector
                        }
                    }
                    normalize_sign(&mut u);
                    locked.push_col(&u);
                    locked_now += 1;
                    results.push(EigResult {
                        lambda,
                        vector: u,
                        residual,
                        theta,
                        slice_id: 0,
                    });
                }
                Classification::Tr => {
                    if tr.len() + 2 < m {
                        tr.push(TrPair {
                            theta,
                            s: state.last_beta * y[size - 1],
                            vector: u,
                        });
                    }
                }
            }
        }

        let any_candidates = thetas.first().map(|&t| t >= gate).unwrap_or(false);
        if !any_candidates {
            break 'outer; // interval exhausted
        }
        if tr.is_empty() && locked_now == 0 {
            break 'outer; // candidates were all rejected outsiders or copies
        }
        if stats.steps >= config.max_its {
            let unconverged = tr.len();
            if unconverged > 0 {
                stats.filter_matvecs = stats.steps as u64 * filter.k as u64;
                sort_results(&mut results);
                return Err(SolveError::Budget {
                    max_its: config.max_its,
                    unconverged,
                    converged: results,
                    stats,
                });
            }
            break 'outer;
        }
        if exhausted {
            // active space fully consumed: no further steps can improve the
            // remaining candidates
            break 'outer;
        }

        stats.restarts += 1;
        if tr.is_empty() {
            // everything above the bar converged this cycle; hunt remaining
            // copies of multiple eigenvalues from a fresh direction with the
            // found ones deflated away
            let q1 = fresh_vector(&mut rng, &locked);
            state = LanczosState::fresh(m, &q1);
        } else {
            let q_next = state.q.col(size).to_vec();
            state = thick_restart(m, &tr, &q_next);
        }
    }

    stats.filter_matvecs = stats.steps as u64 * filter.k as u64;
    sort_results(&mut results);
    Ok((results, stats))
}

fn sort_results(results: &mut [EigResult]) {
    results.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
}

/// Orthonormality defect of [locked | basis] at a restart boundary.
fn restart_defect(locked: &DenseBlock, q: &DenseBlock, basis_cols: usize) -> f64 {
    let mut worst = locked.orthonormality_defect(locked.cols());
    worst = worst.max(q.orthonormality_defect(basis_cols));
    for i in 0..locked.cols() {
        for j in 0..basis_cols {
            worst = worst.max(dot(locked.col(i), q.col(j)).abs());
        }
    }
    worst
}
