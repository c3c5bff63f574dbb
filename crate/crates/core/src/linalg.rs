//! Dense vector/block primitives shared by the solver engines.
//!
//! Everything here is deliberately plain `f64` slice arithmetic with a fixed
//! summation order, so that results are bit-reproducible for a fixed seed no
//! matter how many solver instances run concurrently.

/// Dot product with left-to-right accumulation.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut s = 0.0;
    for (a, b) in x.iter().zip(y) {
        s += a * b;
    }
    s
}

/// Euclidean norm.
pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// x *= alpha
pub fn scal(alpha: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= alpha;
    }
}

/// Column-major block of `rows x cols` reals. Used for the Lanczos basis,
/// the locked eigenvector set and subspace-iteration blocks.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseBlock {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseBlock {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Empty block with reserved capacity; columns are appended with `push_col`.
    pub fn with_capacity(rows: usize, cap_cols: usize) -> Self {
        DenseBlock {
            rows,
            cols: 0,
            data: Vec::with_capacity(rows * cap_cols),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.cols == 0
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn push_col(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.rows, "column length mismatch");
        self.data.extend_from_slice(v);
        self.cols += 1;
    }

    pub fn truncate_cols(&mut self, cols: usize) {
        assert!(cols <= self.cols);
        self.data.truncate(cols * self.rows);
        self.cols = cols;
    }

    /// data slice in column-major order
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// y = self[:, 0..ncols] * x
    pub fn gemv(&self, ncols: usize, x: &[f64], y: &mut [f64]) {
        assert!(ncols <= self.cols && x.len() >= ncols && y.len() == self.rows);
        y.fill(0.0);
        for (j, &xj) in x.iter().enumerate().take(ncols) {
            axpy(xj, self.col(j), y);
        }
    }

    /// h = self[:, 0..ncols]^T * w
    pub fn gemv_t(&self, ncols: usize, w: &[f64], h: &mut [f64]) {
        assert!(ncols <= self.cols && w.len() == self.rows && h.len() >= ncols);
        for (j, hj) in h.iter_mut().enumerate().take(ncols) {
            *hj = dot(self.col(j), w);
        }
    }

    /// w -= self[:, 0..ncols] * h
    pub fn subtract_combination(&self, ncols: usize, h: &[f64], w: &mut [f64]) {
        for (j, &hj) in h.iter().enumerate().take(ncols) {
            axpy(-hj, self.col(j), w);
        }
    }

    /// Linear combination of the leading `ncols` columns with coefficients `x`.
    pub fn combine(&self, ncols: usize, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.gemv(ncols, x, &mut y);
        y
    }

    /// max |self^T self - I| over the leading `ncols` columns.
    pub fn orthonormality_defect(&self, ncols: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..ncols {
            for j in i..ncols {
                let g = dot(self.col(i), self.col(j));
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

/// Threshold ratio of the DGKS test: a second Gram-Schmidt pass runs when the
/// projection removed more than 1 - 1/sqrt(2) of the vector.
const DGKS_RATIO: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Orthogonalize `w` against the leading columns of the given blocks using
/// classical Gram-Schmidt, with at most one repeat pass (DGKS correction).
/// Returns the final norm of `w`.
pub fn orthogonalize(w: &mut [f64], blocks: &[(&DenseBlock, usize)]) -> f64 {
    let mut scratch: Vec<f64> = Vec::new();
    let mut norm = norm2(w);
    for _pass in 0..2 {
        let before = norm;
        for &(block, ncols) in blocks {
            if ncols == 0 {
                continue;
            }
            scratch.resize(ncols, 0.0);
            block.gemv_t(ncols, w, &mut scratch);
            block.subtract_combination(ncols, &scratch, w);
        }
        norm = norm2(w);
        if norm >= DGKS_RATIO * before {
            break;
        }
    }
    norm
}
