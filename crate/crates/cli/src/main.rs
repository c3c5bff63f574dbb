//! Command-line driver: solve an interval eigenproblem slice by slice,
//! design filters, plan slices, verify against the analytic Laplacian
//! oracle, or emit test matrices.
//!
//! Exit codes: 0 success, 1 verification mismatch, 2 usage error,
//! 3 numerical failure (partial results are still written).

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eigslice::{
    diff_against_oracle, estimate_bounds, gen_laplacian3d, kpm_dos, laplacian_eigs_in,
    load_matrix_market, plan_slices, select_degree, solve_sliced, write_eigenvalue_csv,
    write_matrix_market, write_vectors_binary, DampingKind, Engine, FilterSpec, RunParams,
    SparseSymMatrix, DEFAULT_BOUND_STEPS,
};

use config::{parse_config, FileConfig};

const EXIT_MISMATCH: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "eigslice",
    about = "Eigenpairs of a sparse symmetric matrix inside an interval, by Chebyshev delta filters with thick-restart Lanczos and spectrum slicing"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute all eigenpairs in the interval and write them as CSV
    Solve(SolveArgs),
    /// Select, balance and tabulate a filter polynomial for one interval
    FilterDesign(FilterDesignArgs),
    /// Partition the interval into slices of balanced estimated counts
    SlicePlan(SliceArgs),
    /// Solve a generated problem and verify against the analytic oracle
    Check(SolveArgs),
    /// Write a 3D Laplacian test matrix in Matrix Market format
    GenLaplacian(GenArgs),
}

#[derive(Args, Clone)]
struct MatrixSource {
    /// Matrix Market file with a real symmetric matrix
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Generate the 7-point 3D Laplacian on an NX x NY x NZ grid
    #[arg(long, num_args = 3, value_names = ["NX", "NY", "NZ"])]
    laplacian: Option<Vec<usize>>,
}

#[derive(Args)]
struct SolveArgs {
    /// Configuration file (flat key = value); flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    source: MatrixSource,
    /// Target interval
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    interval: Option<Vec<f64>>,
    /// Number of slices, or "auto" for ~250 eigenvalues per slice
    #[arg(long)]
    slices: Option<String>,
    /// Filter threshold at the interval endpoints
    #[arg(long)]
    phi: Option<f64>,
    /// Damping of the Chebyshev expansion: none|jackson|sigma
    #[arg(long)]
    damping: Option<DampingKind>,
    /// Residual tolerance for locking an eigenpair
    #[arg(long)]
    tol: Option<f64>,
    /// Concurrent slice solves
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Engine per slice: lanczos|subspace
    #[arg(long)]
    engine: Option<Engine>,
    /// Basis size as a multiple of the estimated count
    #[arg(long)]
    m_factor: Option<usize>,
    /// Iteration budget as a multiple of the estimated count
    #[arg(long)]
    its_factor: Option<usize>,
    /// Eigenvalue CSV destination ("-" for stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional binary eigenvector file
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Optional JSON run report
    #[arg(long)]
    report: Option<PathBuf>,
    /// Track basis orthonormality at restart boundaries
    #[arg(long)]
    validate: bool,
}

#[derive(Args)]
struct FilterDesignArgs {
    #[command(flatten)]
    source: MatrixSource,
    /// Spectrum bounds, skipping the Lanczos estimation
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    bounds: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, required = true)]
    interval: Vec<f64>,
    #[arg(long, default_value_t = 0.8)]
    phi: f64,
    #[arg(long, default_value = "sigma")]
    damping: DampingKind,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// TSV curve destination (summary goes to stdout); stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SliceArgs {
    #[command(flatten)]
    source: MatrixSource,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, required = true)]
    interval: Vec<f64>,
    #[arg(long, default_value = "auto")]
    slices: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// JSON destination; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_names = ["NX", "NY", "NZ"], num_args = 3)]
    dims: Vec<usize>,
    #[arg(long, required = true)]
    out: PathBuf,
}

struct CmdError {
    code: u8,
    message: String,
}

impl CmdError {
    fn usage(message: impl Into<String>) -> Self {
        CmdError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
    fn numerical(message: impl Into<String>) -> Self {
        CmdError {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }
    fn mismatch(message: impl Into<String>) -> Self {
        CmdError {
            code: EXIT_MISMATCH,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Solve(args) => cmd_solve(args, false),
        Cmd::Check(args) => cmd_solve(args, true),
        Cmd::FilterDesign(args) => cmd_filter_design(args),
        Cmd::SlicePlan(args) => cmd_slice_plan(args),
        Cmd::GenLaplacian(args) => cmd_gen_laplacian(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// Matrix plus, when generated, the grid sizes for the analytic oracle.
type LoadedSource = (SparseSymMatrix, Option<(usize, usize, usize)>);

fn load_source(source: &MatrixSource) -> Result<LoadedSource, CmdError> {
    match (&source.matrix, &source.laplacian) {
        (Some(_), Some(_)) => Err(CmdError::usage(
            "give either --matrix or --laplacian, not both",
        )),
        (None, None) => Err(CmdError::usage(
            "a matrix source is required (--matrix or --laplacian)",
        )),
        (Some(path), None) => {
            let m = load_matrix_market(path)
                .map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))?;
            Ok((m, None))
        }
        (None, Some(dims)) => {
            let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
            if nx == 0 || ny == 0 || nz == 0 {
                return Err(CmdError::usage("grid dimensions must be positive"));
            }
            Ok((gen_laplacian3d(nx, ny, nz), Some((nx, ny, nz))))
        }
    }
}

struct SolveSettings {
    source: MatrixSource,
    params_interval: (f64, f64),
    slices: Option<usize>,
    phi: f64,
    damping: DampingKind,
    tol: f64,
    threads: usize,
    seed: u64,
    engine: Engine,
    m_factor: usize,
    its_factor: usize,
    out: Option<PathBuf>,
    vectors: Option<PathBuf>,
    report: Option<PathBuf>,
    validate: bool,
}

fn merge_settings(args: SolveArgs) -> Result<SolveSettings, CmdError> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))?;
            parse_config(&text).map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let source = MatrixSource {
        matrix: args.source.matrix.or(file.matrix),
        laplacian: args
            .source
            .laplacian
            .or_else(|| file.laplacian.map(|(a, b, c)| vec![a, b, c])),
    };
    let interval = match (&args.interval, file.interval) {
        (Some(v), _) => (v[0], v[1]),
        (None, Some(pair)) => pair,
        (None, None) => return Err(CmdError::usage("--interval LO HI is required")),
    };
    if interval.0 >= interval.1 {
        return Err(CmdError::usage("interval must satisfy LO < HI"));
    }
    let slices = match args.slices {
        Some(s) if s == "auto" => None,
        Some(s) => Some(
            s.parse::<usize>()
                .map_err(|_| CmdError::usage("--slices takes a count or 'auto'"))?,
        ),
        None => file.slices.unwrap_or(None),
    };
    if slices == Some(0) {
        return Err(CmdError::usage("slice count must be positive"));
    }
    let threads = args.threads.or(file.threads).unwrap_or(1);
    if threads == 0 {
        return Err(CmdError::usage("thread count must be positive"));
    }
    let phi = args.phi.or(file.phi).unwrap_or(0.8);
    if !(0.0..1.0).contains(&phi) || phi <= 0.0 {
        return Err(CmdError::usage("phi must lie in (0, 1)"));
    }
    let tol = args.tol.or(file.tol).unwrap_or(1e-8);
    if tol <= 0.0 {
        return Err(CmdError::usage("tol must be positive"));
    }
    Ok(SolveSettings {
        source,
        params_interval: interval,
        slices,
        phi,
        damping: args
            .damping
            .or(file.damping)
            .unwrap_or(DampingKind::LanczosSigma),
        tol,
        threads,
        seed: args.seed.or(file.seed).unwrap_or(42),
        engine: args.engine.or(file.engine).unwrap_or(Engine::Lanczos),
        m_factor: args.m_factor.or(file.m_factor).unwrap_or(4),
        its_factor: args.its_factor.or(file.its_factor).unwrap_or(16),
        out: args.out.or(file.out),
        vectors: args.vectors.or(file.vectors),
        report: args.report.or(file.report),
        validate: args.validate,
    })
}

fn cmd_solve(args: SolveArgs, check_mode: bool) -> Result<(), CmdError> {
    let settings = merge_settings(args)?;
    let (matrix, grid) = load_source(&settings.source)?;
    if check_mode && grid.is_none() {
        return Err(CmdError::usage(
            "check needs a generated matrix with a known oracle (--laplacian)",
        ));
    }
    let mut params = RunParams::new(settings.params_interval.0, settings.params_interval.1);
    params.nslices = settings.slices;
    params.phi = settings.phi;
    params.damping = settings.damping;
    params.tol = settings.tol;
    params.threads = settings.threads;
    params.seed = settings.seed;
    params.engine = settings.engine;
    params.m_factor = settings.m_factor;
    params.its_factor = settings.its_factor;
    params.validate = settings.validate;

    let outcome = solve_sliced(&matrix, &params).map_err(|e| CmdError::numerical(e.to_string()))?;

    print_report_table(&outcome.report);

    if let Some(path) = &settings.out {
        if path.as_os_str() == "-" {
            write_eigenvalue_csv(&outcome.results, &mut std::io::stdout().lock())
                .map_err(|e| CmdError::numerical(format!("writing eigenvalues: {e}")))?;
        } else {
            let mut w = BufWriter::new(
                File::create(path)
                    .map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))?,
            );
            write_eigenvalue_csv(&outcome.results, &mut w)
                .map_err(|e| CmdError::numerical(format!("writing eigenvalues: {e}")))?;
        }
    }
    if let Some(path) = &settings.vectors {
        let mut w = BufWriter::new(
            File::create(path).map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))?,
        );
        write_vectors_binary(&outcome.results, matrix.n(), &mut w)
            .map_err(|e| CmdError::numerical(format!("writing vectors: {e}")))?;
    }
    if let Some(path) = &settings.report {
        let mut w = BufWriter::new(
            File::create(path).map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))?,
        );
        serde_json::to_writer_pretty(&mut w, &outcome.report)
            .map_err(|e| CmdError::numerical(format!("writing report: {e}")))?;
        writeln!(w).ok();
    }

    if !outcome.report.failures.is_empty() {
        let mut msg = String::from("slices with partial results:");
        for (id, reason) in &outcome.report.failures {
            msg.push_str(&format!("\n  slice {id}: {reason}"));
        }
        return Err(CmdError::numerical(msg));
    }

    if check_mode {
        let (nx, ny, nz) = grid.unwrap();
        let oracle = laplacian_eigs_in(nx, ny, nz, params.xi, params.eta);
        let diff = diff_against_oracle(&outcome.results, &oracle, 1e-8);
        let bad_residual = outcome
            .results
            .iter()
            .filter(|r| r.residual > settings.tol)
            .count();
        if diff.is_exact() && bad_residual == 0 {
            println!(
                "check passed: {} eigenpairs match the oracle (residuals <= {:.1e})",
                oracle.len(),
                settings.tol
            );
        } else {
            let mut msg = format!(
                "check failed: {} matched of {} oracle values",
                diff.matched,
                oracle.len()
            );
            for v in diff.missed.iter().take(10) {
                msg.push_str(&format!("\n  missed   {v}"));
            }
            for (slice, v) in diff.spurious.iter().take(10) {
                msg.push_str(&format!("\n  spurious {v} (slice {slice})"));
            }
            if bad_residual > 0 {
                msg.push_str(&format!("\n  {bad_residual} residuals above tolerance"));
            }
            return Err(CmdError::mismatch(msg));
        }
    }
    Ok(())
}

fn print_report_table(report: &eigslice::RunReport) {
    println!("bounds: [{:.6}, {:.6}]", report.lo, report.hi);
    println!(
        "{:>5} {:>22} {:>5} {:>7} {:>10} {:>10} {:>9} {:>10} {:>10} {:>6}",
        "slice",
        "interval",
        "deg",
        "iter",
        "matvecs",
        "mv sec",
        "total s",
        "res max",
        "res avg",
        "count"
    );
    for s in &report.slices {
        println!(
            "{:>5} [{:>9.5}, {:>9.5}] {:>5} {:>7} {:>10} {:>10.2} {:>9.2} {:>10.2e} {:>10.2e} {:>6}",
            s.slice_id,
            s.xi,
            s.eta,
            s.deg,
            s.iter,
            s.matvecs,
            s.matvec_seconds,
            s.total_seconds,
            s.residual_max,
            s.residual_avg,
            s.count
        );
    }
    println!(
        "total: {} eigenpairs, {} matvecs ({} bounds, {} dos), {:.2} s",
        report.count,
        report.total_matvecs,
        report.bound_matvecs,
        report.dos_matvecs,
        report.total_seconds
    );
}

const CURVE_POINTS: usize = 2001;

fn cmd_filter_design(args: FilterDesignArgs) -> Result<(), CmdError> {
    let (lo, hi) = match &args.bounds {
        Some(b) => {
            if b[0] >= b[1] {
                return Err(CmdError::usage("--bounds must satisfy LO < HI"));
            }
            (b[0], b[1])
        }
        None => {
            let (matrix, _) = load_source(&args.source)?;
            let map = estimate_bounds(
                &matrix,
                DEFAULT_BOUND_STEPS.min(matrix.n()).max(2),
                args.seed,
            );
            (map.lo, map.hi)
        }
    };
    let map = eigslice::SpectralMap::from_bounds(lo, hi);
    let (xi, eta) = (args.interval[0], args.interval[1]);
    if xi >= eta {
        return Err(CmdError::usage("interval must satisfy LO < HI"));
    }
    if map.to_reference(xi) < -1.0 - 1e-9 || map.to_reference(eta) > 1.0 + 1e-9 {
        return Err(CmdError::usage(
            "interval must lie inside the spectrum bounds",
        ));
    }
    let spec = FilterSpec::new(xi, eta, args.damping, args.phi);
    let filter = select_degree(&spec, &map).map_err(|e| CmdError::numerical(e.to_string()))?;

    let summary = format!(
        "k={} gamma={} bar={} balanced={}",
        filter.k, filter.gamma, filter.bar, filter.balanced
    );
    let emit = |w: &mut dyn Write| -> std::io::Result<()> {
        writeln!(w, "# t\trho(t)")?;
        for i in 0..CURVE_POINTS {
            let t = -1.0 + 2.0 * i as f64 / (CURVE_POINTS - 1) as f64;
            writeln!(w, "{t}\t{}", filter.eval(t))?;
        }
        Ok(())
    };
    match &args.out {
        Some(path) => {
            let mut w = BufWriter::new(
                File::create(path)
                    .map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))?,
            );
            emit(&mut w).map_err(|e| CmdError::numerical(format!("writing curve: {e}")))?;
            println!("{summary}");
        }
        None => {
            emit(&mut std::io::stdout().lock())
                .map_err(|e| CmdError::numerical(format!("writing curve: {e}")))?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn cmd_slice_plan(args: SliceArgs) -> Result<(), CmdError> {
    let (matrix, _) = load_source(&args.source)?;
    let (xi, eta) = (args.interval[0], args.interval[1]);
    if xi >= eta {
        return Err(CmdError::usage("interval must satisfy LO < HI"));
    }
    let map = estimate_bounds(
        &matrix,
        DEFAULT_BOUND_STEPS.min(matrix.n()).max(2),
        eigslice::subseed(args.seed, 1),
    );
    let dos = kpm_dos(
        &matrix,
        &map,
        eigslice::dos::DEFAULT_DOS_DEGREE,
        eigslice::dos::DEFAULT_DOS_NVEC,
        eigslice::subseed(args.seed, 2),
    );
    let nslices = if args.slices == "auto" {
        eigslice::dos::auto_nslices(dos.estimate_in(xi, eta))
    } else {
        args.slices
            .parse::<usize>()
            .map_err(|_| CmdError::usage("--slices takes a count or 'auto'"))?
    };
    let plan =
        plan_slices(&dos, xi, eta, nslices).map_err(|e| CmdError::numerical(e.to_string()))?;
    let json = serde_json::to_string_pretty(&plan)
        .map_err(|e| CmdError::numerical(format!("serializing plan: {e}")))?;
    match &args.out {
        Some(path) => std::fs::write(path, json + "\n")
            .map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_gen_laplacian(args: GenArgs) -> Result<(), CmdError> {
    let (nx, ny, nz) = (args.dims[0], args.dims[1], args.dims[2]);
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(CmdError::usage("grid dimensions must be positive"));
    }
    let m = gen_laplacian3d(nx, ny, nz);
    let mut w = BufWriter::new(
        File::create(&args.out)
            .map_err(|e| CmdError::usage(format!("{}: {e}", args.out.display())))?,
    );
    write_matrix_market(&m, &mut w)
        .map_err(|e| CmdError::numerical(format!("writing matrix: {e}")))?;
    println!(
        "wrote {}x{}x{} Laplacian (n = {}) to {}",
        nx,
        ny,
        nz,
        m.n(),
        args.out.display()
    );
    Ok(())
}
