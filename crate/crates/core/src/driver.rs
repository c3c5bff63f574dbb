//! End-to-end orchestration: spectral bounds, density-of-states slicing,
//! per-slice filtered solves (optionally in parallel), duplicate-free merging
//! and the run report with its matvec accounting.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bounds::{estimate_bounds, SpectralMap, DEFAULT_BOUND_STEPS};
use crate::dos::{auto_nslices, kpm_dos, plan_slices, PlanError, SlicePlan};
use crate::filter::{select_degree, DampingKind, FilterError, FilterSpec};
use crate::lanczos::{solve_interval, EigResult, SolveError, SolverConfig, SolverStats};
use crate::linalg::dot;
use crate::sparse::SparseSymMatrix;
use crate::subspace::{solve_subspace, SubspaceConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Lanczos,
    Subspace,
}

impl std::str::FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lanczos" => Ok(Engine::Lanczos),
            "subspace" => Ok(Engine::Subspace),
            other => Err(format!("unknown engine '{other}' (lanczos|subspace)")),
        }
    }
}

/// Everything a sliced run needs beyond the matrix itself.
#[derive(Clone, Copy, Debug)]
pub struct RunParams {
    pub xi: f64,
    pub eta: f64,
    /// None picks the slice count targeting ~250 eigenvalues per slice.
    pub nslices: Option<usize>,
    pub phi: f64,
    pub damping: DampingKind,
    pub tol: f64,
    pub m_factor: usize,
    pub its_factor: usize,
    pub threads: usize,
    pub seed: u64,
    pub engine: Engine,
    pub validate: bool,
    pub dos_degree: usize,
    pub dos_nvec: usize,
    pub bound_steps: usize,
}

impl RunParams {
    pub fn new(xi: f64, eta: f64) -> Self {
        RunParams {
            xi,
            eta,
            nslices: None,
            phi: 0.8,
            damping: DampingKind::LanczosSigma,
            tol: crate::lanczos::DEFAULT_TOL,
            m_factor: 4,
            its_factor: 16,
            threads: 1,
            seed: 42,
            engine: Engine::Lanczos,
            validate: false,
            dos_degree: crate::dos::DEFAULT_DOS_DEGREE,
            dos_nvec: crate::dos::DEFAULT_DOS_NVEC,
            bound_steps: DEFAULT_BOUND_STEPS,
        }
    }
}

/// Per-slice accounting mirroring the experiment tables: degree, iterations,
/// matvecs, times and residual extremes.
#[derive(Clone, Debug, Serialize)]
pub struct SliceRecord {
    pub slice_id: usize,
    pub xi: f64,
    pub eta: f64,
    pub deg: usize,
    pub iter: usize,
    /// Filter matvecs (deg x iter) plus the per-candidate check matvecs.
    pub matvecs: u64,
    pub filter_matvecs: u64,
    pub aux_matvecs: u64,
    pub matvec_seconds: f64,
    pub total_seconds: f64,
    pub residual_max: f64,
    pub residual_avg: f64,
    pub count: usize,
    pub restarts: usize,
    pub max_ortho_defect: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub lo: f64,
    pub hi: f64,
    pub plan: SlicePlan,
    pub slices: Vec<SliceRecord>,
    pub bound_matvecs: u64,
    pub dos_matvecs: u64,
    pub total_matvecs: u64,
    pub total_seconds: f64,
    pub count: usize,
    pub residual_max: f64,
    pub residual_avg: f64,
    /// Slices that exhausted their budget, with the error text.
    pub failures: Vec<(usize, String)>,
}

/// Merged eigenpairs plus the report. `failures` non-empty means partial
/// results: everything that converged is still present.
pub struct RunOutcome {
    pub results: Vec<EigResult>,
    pub report: RunReport,
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("slice {slice_id} [{xi}, {eta}]: {source}")]
    Filter {
        slice_id: usize,
        xi: f64,
        eta: f64,
        source: FilterError,
    },
}

/// Deterministic stream derivation so thread scheduling cannot influence any
/// random choice: every consumer gets its own seed from (seed, stream).
pub fn subseed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed.wrapping_add(splitmix64(stream.wrapping_add(0x9E3779B97F4A7C15))))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

const BOUNDS_STREAM: u64 = 1;
const DOS_STREAM: u64 = 2;
const SLICE_STREAM_BASE: u64 = 16;

/// Plan slices over [xi, eta] using fresh bounds and DOS estimates.
pub fn plan_run(
    a: &SparseSymMatrix,
    params: &RunParams,
) -> Result<(SpectralMap, SlicePlan, u64, u64), PlanError> {
    let mv0 = a.matvec_count();
    let map = estimate_bounds(
        a,
        params.bound_steps.min(a.n()).max(2),
        subseed(params.seed, BOUNDS_STREAM),
    );
    let bound_matvecs = a.matvec_count() - mv0;
    let mv1 = a.matvec_count();
    let dos = kpm_dos(
        a,
        &map,
        params.dos_degree,
        params.dos_nvec,
        subseed(params.seed, DOS_STREAM),
    );
    let dos_matvecs = a.matvec_count() - mv1;
    let nslices = match params.nslices {
        Some(k) => k,
        None => auto_nslices(dos.estimate_in(params.xi, params.eta)),
    };
    let plan = plan_slices(&dos, params.xi, params.eta, nslices)?;
    Ok((map, plan, bound_matvecs, dos_matvecs))
}

/// Solve every slice of the plan, in parallel up to `params.threads`, and
/// merge the results. Results are bitwise independent of the thread count.
pub fn solve_sliced(a: &SparseSymMatrix, params: &RunParams) -> Result<RunOutcome, DriverError> {
    let t_start = Instant::now();
    let (map, plan, bound_matvecs, dos_matvecs) = plan_run(a, params)?;

    // filters are selected up front so an over-narrow slice fails fast
    let mut filters = Vec::with_capacity(plan.nslices());
    for (i, &(sxi, seta)) in plan.slices.iter().enumerate() {
        let mut fspec = FilterSpec::new(sxi, seta, params.damping, params.phi);
        fspec.k_min = crate::filter::DEFAULT_K_MIN;
        let filter = select_degree(&fspec, &map).map_err(|source| DriverError::Filter {
            slice_id: i,
            xi: sxi,
            eta: seta,
            source,
        })?;
        filters.push(filter);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.threads.max(1))
        .build()
        .expect("thread pool construction");
    let slice_runs: Vec<(Vec<EigResult>, SliceRecord, Option<String>)> = pool.install(|| {
        plan.slices
            .par_iter()
            .enumerate()
            .map(|(i, &(sxi, seta))| {
                let t0 = Instant::now();
                let nev = plan.counts[i];
                let seed = subseed(params.seed, SLICE_STREAM_BASE + i as u64);
                let filter = &filters[i];
                let outcome: Result<(Vec<EigResult>, SolverStats), SolveError> = match params.engine
                {
                    Engine::Lanczos => {
                        let mut config = SolverConfig::for_nev(nev, seed);
                        config.m = (params.m_factor * nev).max(nev + 2);
                        config.max_its = params.its_factor * nev;
                        config.tol = params.tol;
                        config.validate = params.validate;
                        solve_interval(a, &map, filter, sxi, seta, &config)
                    }
                    Engine::Subspace => {
                        let mut config = SubspaceConfig::for_nev(nev, seed);
                        config.tol = params.tol;
                        solve_subspace(a, &map, filter, sxi, seta, &config, None)
                            .map(|(r, s)| (r, s.base))
                    }
                };
                let (mut results, stats, failure) = match outcome {
                    Ok((r, s)) => (r, s, None),
                    Err(SolveError::Budget {
                        converged,
                        stats,
                        max_its,
                        unconverged,
                    }) => {
                        let msg = format!(
                            "budget {max_its} exhausted with {unconverged} unconverged candidates"
                        );
                        (converged, stats, Some(msg))
                    }
                };
                for r in results.iter_mut() {
                    r.slice_id = i;
                }
                let (rmax, ravg) = residual_summary(&results);
                let record = SliceRecord {
                    slice_id: i,
                    xi: sxi,
                    eta: seta,
                    deg: filter.k,
                    iter: stats.steps,
                    matvecs: stats.filter_matvecs + stats.aux_matvecs,
                    filter_matvecs: stats.filter_matvecs,
                    aux_matvecs: stats.aux_matvecs,
                    matvec_seconds: stats.matvec_seconds,
                    total_seconds: t0.elapsed().as_secs_f64(),
                    residual_max: rmax,
                    residual_avg: ravg,
                    count: results.len(),
                    restarts: stats.restarts,
                    max_ortho_defect: stats.max_ortho_defect,
                };
                (results, record, failure)
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut records = Vec::with_capacity(slice_runs.len());
    let mut per_slice: Vec<Vec<EigResult>> = Vec::with_capacity(slice_runs.len());
    for (results, record, failure) in slice_runs {
        if let Some(msg) = failure {
            failures.push((record.slice_id, msg));
        }
        records.push(record);
        per_slice.push(results);
    }

    let results = merge_slices(per_slice, &plan, map.d);
    let (rmax, ravg) = residual_summary(&results);
    let slice_matvecs: u64 = records.iter().map(|r| r.matvecs).sum();
    let report = RunReport {
        lo: map.lo,
        hi: map.hi,
        plan,
        slices: records,
        bound_matvecs,
        dos_matvecs,
        total_matvecs: slice_matvecs + bound_matvecs + dos_matvecs,
        total_seconds: t_start.elapsed().as_secs_f64(),
        count: results.len(),
        residual_max: rmax,
        residual_avg: ravg,
        failures,
    };
    Ok(RunOutcome { results, report })
}

fn residual_summary(results: &[EigResult]) -> (f64, f64) {
    if results.is_empty() {
        return (0.0, 0.0);
    }
    let max = results.iter().fold(0.0f64, |m, r| m.max(r.residual));
    let avg = results.iter().map(|r| r.residual).sum::<f64>() / results.len() as f64;
    (max, avg)
}

/// Matching tolerances of the cross-slice duplicate guard.
const BOUNDARY_BAND_FACTOR: f64 = 1e-10;
const DUP_VALUE_TOL: f64 = 1e-8;
const DUP_OVERLAP: f64 = 0.9;

/// Concatenate per-slice results; an eigenpair reported by both sides of a
/// shared boundary (value and eigenvector direction agree) is emitted once,
/// keeping the lower slice's copy.
fn merge_slices(
    mut per_slice: Vec<Vec<EigResult>>,
    plan: &SlicePlan,
    half_width: f64,
) -> Vec<EigResult> {
    let band = BOUNDARY_BAND_FACTOR * half_width;
    for i in 0..per_slice.len().saturating_sub(1) {
        let boundary = plan.slices[i].1;
        let mut drop_right: Vec<usize> = Vec::new();
        {
            let (left, right) = per_slice.split_at(i + 1);
            let left = &left[i];
            let right = &right[0];
            for (rj, r) in right.iter().enumerate() {
                if (r.lambda - boundary).abs() > band {
                    continue;
                }
                for l in left.iter() {
                    if (l.lambda - boundary).abs() > band {
                        continue;
                    }
                    if (l.lambda - r.lambda).abs() <= DUP_VALUE_TOL
                        && dot(&l.vector, &r.vector).abs() >= DUP_OVERLAP
                    {
                        drop_right.push(rj);
                        break;
                    }
                }
            }
        }
        for &rj in drop_right.iter().rev() {
            per_slice[i + 1].remove(rj);
        }
    }
    let mut all: Vec<EigResult> = per_slice.into_iter().flatten().collect();
    all.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
    all
}

/// Write the eigenvalue CSV: one `slice_id,eigenvalue,residual` row per pair,
/// in merged (ascending eigenvalue) order.
pub fn write_eigenvalue_csv(results: &[EigResult], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "slice_id,eigenvalue,residual")?;
    for r in results {
        writeln!(w, "{},{},{:e}", r.slice_id, r.lambda, r.residual)?;
    }
    Ok(())
}

pub const VECTOR_FILE_MAGIC: &[u8; 8] = b"EIGVEC01";

/// Binary eigenvector file: magic, n and count as little-endian u64, then the
/// vectors column-major as little-endian f64.
pub fn write_vectors_binary(
    results: &[EigResult],
    n: usize,
    w: &mut impl Write,
) -> std::io::Result<()> {
    w.write_all(VECTOR_FILE_MAGIC)?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&(results.len() as u64).to_le_bytes())?;
    for r in results {
        for x in &r.vector {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Outcome of comparing computed eigenvalues against an oracle list (both
/// sorted ascending, multiplicities included).
#[derive(Debug, Default)]
pub struct OracleDiff {
    pub matched: usize,
    /// Oracle values no computed value claimed.
    pub missed: Vec<f64>,
    /// Computed values (with slice id) that claimed no oracle value.
    pub spurious: Vec<(usize, f64)>,
}

impl OracleDiff {
    pub fn is_exact(&self) -> bool {
        self.missed.is_empty() && self.spurious.is_empty()
    }
}

/// Greedy two-pointer matching of sorted computed results against a sorted
/// oracle list; a computed value consumes the nearest unclaimed oracle value
/// within `tol`.
pub fn diff_against_oracle(results: &[EigResult], oracle: &[f64], tol: f64) -> OracleDiff {
    let mut diff = OracleDiff::default();
    let mut oi = 0usize;
    for r in results {
        while oi < oracle.len() && oracle[oi] < r.lambda - tol {
            diff.missed.push(oracle[oi]);
            oi += 1;
        }
        if oi < oracle.len() && (oracle[oi] - r.lambda).abs() <= tol {
            diff.matched += 1;
            oi += 1;
        } else {
            diff.spurious.push((r.slice_id, r.lambda));
        }
    }
    while oi < oracle.len() {
        diff.missed.push(oracle[oi]);
        oi += 1;
    }
    diff
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{gen_laplacian3d, laplacian_eigs_in};

    #[test]
    fn subseed_streams_are_distinct_and_stable() {
        assert_eq!(subseed(7, 1), subseed(7, 1));
        assert_ne!(subseed(7, 1), subseed(7, 2));
        assert_ne!(subseed(7, 1), subseed(8, 1));
    }

    #[test]
    fn sliced_diagonal_run_matches_oracle() {
        let d: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let a = crate::sparse::SparseSymMatrix::diagonal(&d);
        let mut params = RunParams::new(10.5, 20.5);
        params.nslices = Some(2);
        params.phi = 0.6;
        params.seed = 5;
        let outcome = solve_sliced(&a, &params).unwrap();
        assert!(outcome.report.failures.is_empty());
        assert_eq!(outcome.results.len(), 10);
        for (r, want) in outcome.results.iter().zip(11..=20) {
            assert!((r.lambda - want as f64).abs() <= 1e-9);
        }
        // both slices contribute roughly half
        for rec in &outcome.report.slices {
            assert!((3..=7).contains(&rec.count), "slice count {}", rec.count);
        }
        // accounting identity: per-slice matvecs decompose exactly
        for rec in &outcome.report.slices {
            assert_eq!(
                rec.matvecs,
                rec.deg as u64 * rec.iter as u64 + rec.aux_matvecs
            );
        }
    }

    #[test]
    fn sliced_laplacian_counts_exact() {
        let (nx, ny, nz) = (10, 10, 10);
        let a = gen_laplacian3d(nx, ny, nz);
        let (xi, eta) = (4.5, 4.9);
        let oracle = laplacian_eigs_in(nx, ny, nz, xi, eta);
        let mut params = RunParams::new(xi, eta);
        params.nslices = Some(2);
        params.seed = 3;
        let outcome = solve_sliced(&a, &params).unwrap();
        assert!(outcome.report.failures.is_empty());
        let diff = diff_against_oracle(&outcome.results, &oracle, 1e-8);
        assert!(
            diff.is_exact(),
            "missed {:?} spurious {:?}",
            diff.missed,
            diff.spurious
        );
        // total matvec accounting against the matrix counter is exact because
        // this matrix served exactly this run
        assert_eq!(outcome.report.total_matvecs, a.matvec_count());
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let a = gen_laplacian3d(8, 8, 8);
        let (xi, eta) = (4.5, 4.8);
        let mut params = RunParams::new(xi, eta);
        params.nslices = Some(2);
        params.seed = 11;
        params.threads = 1;
        let one = solve_sliced(&a, &params).unwrap();
        params.threads = 4;
        let four = solve_sliced(&a, &params).unwrap();
        let mut csv1 = Vec::new();
        let mut csv4 = Vec::new();
        write_eigenvalue_csv(&one.results, &mut csv1).unwrap();
        write_eigenvalue_csv(&four.results, &mut csv4).unwrap();
        assert_eq!(csv1, csv4);
    }

    #[test]
    fn oracle_diff_reports_misses_and_spurious() {
        let mk = |lams: &[f64]| -> Vec<EigResult> {
            lams.iter()
                .map(|&l| EigResult {
                    lambda: l,
                    vector: vec![1.0],
                    residual: 0.0,
                    theta: 1.0,
                    slice_id: 0,
                })
                .collect()
        };
        let oracle = [1.0, 2.0, 3.0];
        let d = diff_against_oracle(&mk(&[1.0, 3.0]), &oracle, 1e-9);
        assert_eq!(d.matched, 2);
        assert_eq!(d.missed, vec![2.0]);
        assert!(d.spurious.is_empty());
        let d = diff_against_oracle(&mk(&[1.0, 2.0, 2.5, 3.0]), &oracle, 1e-9);
        assert_eq!(d.spurious.len(), 1);
        assert!(d.missed.is_empty());
    }

    #[test]
    fn vector_file_layout() {
        let results = vec![EigResult {
            lambda: 1.5,
            vector: vec![1.0, -2.0],
            residual: 1e-12,
            theta: 0.9,
            slice_id: 0,
        }];
        let mut buf = Vec::new();
        write_vectors_binary(&results, 2, &mut buf).unwrap();
        assert_eq!(&buf[0..8], VECTOR_FILE_MAGIC);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(buf[32..40].try_into().unwrap()), -2.0);
    }
}
