//! Sparse symmetric matrix storage (CSR, both triangles), Matrix Market
//! ingestion and the 3D Laplacian test-problem generators.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

/// Relative asymmetry tolerated when a `general` Matrix Market file claims
/// symmetric content.
const SYMMETRY_RTOL: f64 = 1e-12;

/// Real symmetric sparse matrix in CSR format with the full pattern stored
/// (both triangles). Immutable after construction; safe for concurrent reads.
///
/// Every matrix-vector product bumps an internal counter, which is what the
/// solver reports alongside its own per-slice accounting.
pub struct SparseSymMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    matvecs: AtomicU64,
}

impl fmt::Debug for SparseSymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SparseSymMatrix")
            .field("n", &self.n)
            .field("nnz", &self.nnz())
            .finish()
    }
}

#[derive(Debug, Error)]
pub enum MatrixMarketError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("unsupported field '{0}': only 'real' coordinate matrices are accepted")]
    NonRealField(String),
    #[error("line {line}: entry ({i},{j}) breaks symmetry: {a} vs {b}")]
    Asymmetric {
        line: usize,
        i: usize,
        j: usize,
        a: f64,
        b: f64,
    },
}

fn parse_err(line: usize, msg: impl Into<String>) -> MatrixMarketError {
    MatrixMarketError::Parse {
        line,
        msg: msg.into(),
    }
}

impl SparseSymMatrix {
    /// Build from unordered triplets. Entries for both triangles must be
    /// present; duplicates are summed. Symmetry is the caller's obligation
    /// and is checked in debug builds.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(i, j, _) in triplets {
            assert!(i < n && j < n, "triplet index out of range");
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut col_idx = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            let p = next[i];
            col_idx[p] = j;
            vals[p] = v;
            next[i] += 1;
        }
        // sort each row by column and merge duplicates
        let mut row_ptr = vec![0usize; n + 1];
        let mut out_col = Vec::with_capacity(col_idx.len());
        let mut out_val = Vec::with_capacity(vals.len());
        for i in 0..n {
            let lo = counts[i];
            let hi = counts[i + 1];
            let mut row: Vec<(usize, f64)> = (lo..hi).map(|p| (col_idx[p], vals[p])).collect();
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if let Some(last) = out_col.last() {
                    if *last == c && out_col.len() > row_ptr[i] {
                        *out_val.last_mut().unwrap() += v;
                        continue;
                    }
                }
                out_col.push(c);
                out_val.push(v);
            }
            row_ptr[i + 1] = out_col.len();
        }
        SparseSymMatrix {
            n,
            row_ptr,
            col_idx: out_col,
            vals: out_val,
            matvecs: AtomicU64::new(0),
        }
    }

    pub fn identity(n: usize) -> Self {
        let trip: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &trip)
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let trip: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), &trip)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    /// Number of matvecs performed on this matrix instance so far.
    pub fn matvec_count(&self) -> u64 {
        self.matvecs.load(Ordering::Relaxed)
    }

    /// y = A x. Panics on dimension mismatch.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n, "matvec: x has wrong length");
        assert_eq!(y.len(), self.n, "matvec: y has wrong length");
        for (yi, w) in y.iter_mut().zip(self.row_ptr.windows(2)) {
            let mut s = 0.0;
            for p in w[0]..w[1] {
                s += self.vals[p] * x[self.col_idx[p]];
            }
            *yi = s;
        }
        self.matvecs.fetch_add(1, Ordering::Relaxed);
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max |A_ij - A_ji| over the stored pattern; 0 for an exactly symmetric
    /// matrix. Missing transposed entries count with full magnitude.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let vt = self.get(j, i);
                worst = worst.max((v - vt).abs());
            }
        }
        worst
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }
}

/// Read a Matrix Market coordinate file (real, symmetric or general with
/// symmetric content). 1-based indices in the file become 0-based; symmetric
/// files get the mirrored triangle filled in.
pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<SparseSymMatrix, MatrixMarketError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (lno, header) = match lines.next() {
        Some((i, l)) => (i + 1, l?),
        None => return Err(parse_err(1, "empty file")),
    };
    let tokens: Vec<String> = header
        .split_whitespace()
        .map(|t| t.to_lowercase())
        .collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(lno, "missing %%MatrixMarket matrix header"));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(
            lno,
            format!("unsupported format '{}'", tokens[2]),
        ));
    }
    if tokens[3] != "real" {
        return Err(MatrixMarketError::NonRealField(tokens[3].clone()));
    }
    let symmetric = match tokens[4].as_str() {
        "symmetric" => true,
        "general" => false,
        other => return Err(parse_err(lno, format!("unsupported symmetry '{other}'"))),
    };

    // size line (after comments)
    let (mut rows, mut cols, mut nnz) = (0usize, 0usize, 0usize);
    let mut size_line = 0usize;
    for (i, l) in lines.by_ref() {
        let l = l?;
        let t = l.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_err(i + 1, "size line must be 'rows cols nnz'"));
        }
        rows = parts[0]
            .parse()
            .map_err(|_| parse_err(i + 1, "bad row count"))?;
        cols = parts[1]
            .parse()
            .map_err(|_| parse_err(i + 1, "bad col count"))?;
        nnz = parts[2]
            .parse()
            .map_err(|_| parse_err(i + 1, "bad nnz count"))?;
        size_line = i + 1;
        break;
    }
    if size_line == 0 {
        return Err(parse_err(lno, "missing size line"));
    }
    if rows != cols {
        return Err(MatrixMarketError::NotSquare { rows, cols });
    }
    let n = rows;

    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * nnz);
    let mut entry_lines: Vec<(usize, usize, usize)> = Vec::with_capacity(nnz); // (i, j, line)
    let mut seen = 0usize;
    for (i, l) in lines {
        let l = l?;
        let t = l.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let lnum = i + 1;
        let parts: Vec<&str> = t.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_err(lnum, "entry line must be 'i j value'"));
        }
        let r: usize = parts[0]
            .parse()
            .map_err(|_| parse_err(lnum, "bad row index"))?;
        let c: usize = parts[1]
            .parse()
            .map_err(|_| parse_err(lnum, "bad col index"))?;
        let v: f64 = parts[2].parse().map_err(|_| parse_err(lnum, "bad value"))?;
        if r < 1 || r > n || c < 1 || c > n {
            return Err(parse_err(
                lnum,
                format!("index ({r},{c}) out of range 1..{n}"),
            ));
        }
        if !v.is_finite() {
            return Err(parse_err(lnum, "non-finite value"));
        }
        let (r, c) = (r - 1, c - 1);
        triplets.push((r, c, v));
        entry_lines.push((r, c, lnum));
        if symmetric && r != c {
            triplets.push((c, r, v));
        }
        seen += 1;
    }
    if seen != nnz {
        return Err(parse_err(
            0,
            format!("expected {nnz} entries, found {seen}"),
        ));
    }

    let m = SparseSymMatrix::from_triplets(n, &triplets);

    if !symmetric {
        let scale = m.max_abs().max(1.0);
        for &(i, j, lnum) in &entry_lines {
            let a = m.get(i, j);
            let b = m.get(j, i);
            if (a - b).abs() > SYMMETRY_RTOL * scale {
                return Err(MatrixMarketError::Asymmetric {
                    line: lnum,
                    i: i + 1,
                    j: j + 1,
                    a,
                    b,
                });
            }
        }
    }
    Ok(m)
}

/// Write a matrix in Matrix Market coordinate/real/symmetric format (lower
/// triangle only, 1-based indices).
pub fn write_matrix_market(
    m: &SparseSymMatrix,
    w: &mut impl std::io::Write,
) -> std::io::Result<()> {
    let mut entries = Vec::new();
    for i in 0..m.n() {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j <= i {
                entries.push((i + 1, j + 1, v));
            }
        }
    }
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(w, "{} {} {}", m.n(), m.n(), entries.len())?;
    for (i, j, v) in entries {
        writeln!(w, "{} {} {:.17e}", i, j, v)?;
    }
    Ok(())
}

/// 7-point stencil Laplacian on an nx x ny x nz grid with homogeneous
/// Dirichlet boundaries: diagonal 6, -1 couplings, no grid-spacing scaling.
pub fn gen_laplacian3d(nx: usize, ny: usize, nz: usize) -> SparseSymMatrix {
    assert!(
        nx >= 1 && ny >= 1 && nz >= 1,
        "grid dimensions must be >= 1"
    );
    let n = nx * ny * nz;
    let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(7 * n);
    let mut vals = Vec::with_capacity(7 * n);
    row_ptr.push(0);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                // columns emitted in ascending order
                if k > 0 {
                    col_idx.push(idx(i, j, k - 1));
                    vals.push(-1.0);
                }
                if j > 0 {
                    col_idx.push(idx(i, j - 1, k));
                    vals.push(-1.0);
                }
                if i > 0 {
                    col_idx.push(idx(i - 1, j, k));
                    vals.push(-1.0);
                }
                col_idx.push(idx(i, j, k));
                vals.push(6.0);
                if i + 1 < nx {
                    col_idx.push(idx(i + 1, j, k));
                    vals.push(-1.0);
                }
                if j + 1 < ny {
                    col_idx.push(idx(i, j + 1, k));
                    vals.push(-1.0);
                }
                if k + 1 < nz {
                    col_idx.push(idx(i, j, k + 1));
                    vals.push(-1.0);
                }
                row_ptr.push(col_idx.len());
            }
        }
    }
    SparseSymMatrix {
        n,
        row_ptr,
        col_idx,
        vals,
        matvecs: AtomicU64::new(0),
    }
}

/// All eigenvalues of `gen_laplacian3d(nx, ny, nz)` inside `[lo, hi]`, with
/// multiplicity, sorted ascending. Closed form:
/// lambda_{ijk} = 6 - 2(cos(i pi/(nx+1)) + cos(j pi/(ny+1)) + cos(k pi/(nz+1))).
pub fn laplacian_eigs_in(nx: usize, ny: usize, nz: usize, lo: f64, hi: f64) -> Vec<f64> {
    assert!(
        nx >= 1 && ny >= 1 && nz >= 1,
        "grid dimensions must be >= 1"
    );
    assert!(lo <= hi, "lo must not exceed hi");
    let axis = |m: usize| -> Vec<f64> {
        (1..=m)
            .map(|i| (i as f64 * std::f64::consts::PI / (m as f64 + 1.0)).cos())
            .collect()
    };
    let (cx, cy, cz) = (axis(nx), axis(ny), axis(nz));
    let mut out = Vec::new();
    for a in &cx {
        for b in &cy {
            for c in &cz {
                let lam = 6.0 - 2.0 * (a + b + c);
                if lam >= lo && lam <= hi {
                    out.push(lam);
                }
            }
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn dense_matvec(n: usize, a: &SparseSymMatrix, x: &[f64]) -> Vec<f64> {
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                dense[i * n + j] = v;
            }
        }
        (0..n)
            .map(|i| (0..n).map(|j| dense[i * n + j] * x[j]).sum())
            .collect()
    }

    #[test]
    fn matvec_identity() {
        let a = SparseSymMatrix::identity(5);
        let x = vec![1.0, -2.0, 3.0, 0.5, 0.0];
        assert_eq!(a.matvec_alloc(&x), x);
    }

    #[test]
    fn matvec_permutation() {
        let a = SparseSymMatrix::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        assert_eq!(a.matvec_alloc(&[1.0, 0.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn matvec_counts_calls() {
        let a = SparseSymMatrix::identity(3);
        assert_eq!(a.matvec_count(), 0);
        a.matvec_alloc(&[1.0, 2.0, 3.0]);
        a.matvec_alloc(&[1.0, 2.0, 3.0]);
        assert_eq!(a.matvec_count(), 2);
    }

    #[test]
    fn laplacian_matvec_matches_dense() {
        let a = gen_laplacian3d(3, 3, 3);
        let x = vec![1.0; 27];
        let y = a.matvec_alloc(&x);
        assert_eq!(y, dense_matvec(27, &a, &x));
    }

    #[test]
    fn laplacian_structure() {
        let a = gen_laplacian3d(1, 1, 1);
        assert_eq!(a.n(), 1);
        assert_eq!(a.matvec_alloc(&[1.0]), vec![6.0]);

        let a = gen_laplacian3d(4, 3, 2);
        assert!(a.symmetry_defect() == 0.0);
        for i in 0..a.n() {
            let (cols, _) = a.row(i);
            assert!(cols.len() <= 7);
        }
    }

    #[test]
    fn laplacian_211_eigenvalues() {
        let eigs = laplacian_eigs_in(2, 1, 1, f64::NEG_INFINITY, f64::INFINITY);
        assert!((eigs[0] - 5.0).abs() < 1e-12);
        assert!((eigs[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn laplacian_60_extreme_eigs() {
        let eigs = laplacian_eigs_in(60, 60, 60, f64::NEG_INFINITY, f64::INFINITY);
        assert_eq!(eigs.len(), 216000);
        let lo = 6.0 - 6.0 * (std::f64::consts::PI / 61.0).cos();
        let hi = 6.0 + 6.0 * (std::f64::consts::PI / 61.0).cos();
        assert!((eigs[0] - lo).abs() < 1e-12);
        assert!((eigs[215999] - hi).abs() < 1e-12);
        // the printed five-digit interval from the reference experiments
        assert!((lo - 0.00795).abs() < 1e-5);
        assert!((hi - 11.99205).abs() < 1e-5);
    }

    #[test]
    fn laplacian_oracle_counts() {
        assert_eq!(laplacian_eigs_in(60, 60, 60, 0.60000, 0.67568).len(), 337);
        assert_eq!(laplacian_eigs_in(60, 60, 60, 0.6, 1.2).len(), 3406);
        assert_eq!(laplacian_eigs_in(2, 2, 2, 0.0, 100.0).len(), 8);
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn mm_minimal_symmetric() {
        let f = write_tmp(
            "%%MatrixMarket matrix coordinate real symmetric\n2 2 3\n1 1 2.0\n2 1 1.0\n2 2 2.0\n",
        );
        let m = load_matrix_market(f.path()).unwrap();
        assert_eq!(m.n(), 2);
        assert_eq!(m.matvec_alloc(&[1.0, 0.0]), vec![2.0, 1.0]);
        assert_eq!(m.matvec_alloc(&[0.0, 1.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn mm_general_symmetric_content() {
        let f = write_tmp(
            "%%MatrixMarket matrix coordinate real general\n% comment\n2 2 4\n1 1 2.0\n1 2 1.0\n2 1 1.0\n2 2 2.0\n",
        );
        let m = load_matrix_market(f.path()).unwrap();
        assert_eq!(m.nnz(), 4);
    }

    #[test]
    fn mm_asymmetric_rejected_with_line() {
        let f =
            write_tmp("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 2 1.0\n2 1 5.0\n");
        match load_matrix_market(f.path()) {
            Err(MatrixMarketError::Asymmetric { line, .. }) => assert!(line >= 3),
            other => panic!("expected asymmetry error, got {other:?}"),
        }
    }

    #[test]
    fn mm_non_real_rejected() {
        let f =
            write_tmp("%%MatrixMarket matrix coordinate complex symmetric\n1 1 1\n1 1 1.0 0.0\n");
        assert!(matches!(
            load_matrix_market(f.path()),
            Err(MatrixMarketError::NonRealField(_))
        ));
    }

    #[test]
    fn mm_non_square_rejected() {
        let f = write_tmp("%%MatrixMarket matrix coordinate real general\n2 3 1\n1 1 1.0\n");
        assert!(matches!(
            load_matrix_market(f.path()),
            Err(MatrixMarketError::NotSquare { .. })
        ));
    }

    #[test]
    fn mm_write_read_roundtrip() {
        let a = gen_laplacian3d(3, 2, 2);
        let mut buf = Vec::new();
        write_matrix_market(&a, &mut buf).unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&buf).unwrap();
        let b = load_matrix_market(f.path()).unwrap();
        assert_eq!(a.n(), b.n());
        let x: Vec<f64> = (0..a.n()).map(|i| (i as f64).sin()).collect();
        let ya = a.matvec_alloc(&x);
        let yb = b.matvec_alloc(&x);
        for (p, q) in ya.iter().zip(&yb) {
            assert!((p - q).abs() < 1e-14);
        }
    }
}
