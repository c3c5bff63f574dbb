//! Computes all eigenpairs of a large sparse real symmetric matrix inside a
//! given interval. Eigenvalues in the interval are made dominant by a
//! least-squares Chebyshev approximation of a Dirac delta centered in the
//! interval, then extracted by a thick-restart Lanczos iteration with
//! deflation (or, alternatively, by filtered subspace iteration). Large
//! eigenvalue counts are handled by splitting the interval into slices with
//! balanced estimated counts from a stochastic density-of-states estimate and
//! solving the slices independently, optionally in parallel.

pub mod bounds;
pub mod dense_eig;
pub mod dos;
pub mod driver;
pub mod filter;
pub mod lanczos;
pub mod linalg;
pub mod sparse;
pub mod subspace;

pub use bounds::{estimate_bounds, SpectralMap, DEFAULT_BOUND_STEPS};
pub use dense_eig::{eig_general, eig_projected, ProjectedMatrix};
pub use dos::{estimate_count, kpm_dos, plan_slices, DosCurve, SlicePlan};
pub use driver::{
    diff_against_oracle, solve_sliced, subseed, write_eigenvalue_csv, write_vectors_binary, Engine,
    OracleDiff, RunOutcome, RunParams, RunReport, SliceRecord,
};
pub use filter::{
    apply_filter, balance, default_phi, delta_coeffs, eval_cheb, filter_norm_sq,
    hessenberg_balance, jackson_coeffs, kernel_poly_eval, select_degree, sigma_coeffs, DampingKind,
    FilterSpec, PolyFilter,
};
pub use lanczos::{solve_interval, EigResult, SolveError, SolverConfig, SolverStats};
pub use sparse::{
    gen_laplacian3d, laplacian_eigs_in, load_matrix_market, write_matrix_market, MatrixMarketError,
    SparseSymMatrix,
};
pub use subspace::{solve_subspace, SubspaceConfig};
