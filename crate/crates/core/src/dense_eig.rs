//! Dense eigensolvers for the small projected problems.
//!
//! The symmetric path (Householder reduction + implicit-shift QL with
//! eigenvector accumulation) serves the tridiagonal and
//! tridiagonal-plus-arrowhead matrices produced by the Lanczos engines and
//! the Rayleigh-Ritz step of subspace iteration. The nonsymmetric path
//! (balancing + elimination to Hessenberg form + Francis double-shift QR,
//! eigenvalues only) serves the companion-matrix route of filter balancing.
//! Projected sizes stay in the low thousands, so O(m^3) dense kernels are the
//! right tool.
//!
//! The reduction/iteration kernels are direct translations of the classic
//! EISPACK algorithms; their index-heavy loops are kept in that shape.
#![allow(clippy::needless_range_loop)]

use thiserror::Error;

use crate::linalg::DenseBlock;

/// Projected operator built by the thick-restart Lanczos process: an l x l
/// diagonal head coupled to the first tridiagonal position through a spike
/// column, followed by a plain tridiagonal tail. `l = 0` is an ordinary
/// tridiagonal matrix.
#[derive(Clone, Debug, Default)]
pub struct ProjectedMatrix {
    pub head_diag: Vec<f64>,
    pub spike: Vec<f64>,
    pub tri_alpha: Vec<f64>,
    pub tri_beta: Vec<f64>,
}

impl ProjectedMatrix {
    pub fn tridiagonal(alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        assert!(beta.len() + 1 == alpha.len() || alpha.is_empty() && beta.is_empty());
        ProjectedMatrix {
            head_diag: Vec::new(),
            spike: Vec::new(),
            tri_alpha: alpha,
            tri_beta: beta,
        }
    }

    pub fn size(&self) -> usize {
        self.head_diag.len() + self.tri_alpha.len()
    }

    pub fn head_len(&self) -> usize {
        self.head_diag.len()
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let l = self.head_diag.len();
        let m = self.size();
        let mut a = vec![0.0; m * m];
        for i in 0..l {
            a[i * m + i] = self.head_diag[i];
            a[i * m + l] = self.spike[i];
            a[l * m + i] = self.spike[i];
        }
        for (i, &v) in self.tri_alpha.iter().enumerate() {
            a[(l + i) * m + (l + i)] = v;
        }
        for (i, &v) in self.tri_beta.iter().enumerate() {
            a[(l + i) * m + (l + i + 1)] = v;
            a[(l + i + 1) * m + (l + i)] = v;
        }
        a
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for v in self
            .head_diag
            .iter()
            .chain(&self.spike)
            .chain(&self.tri_alpha)
            .chain(&self.tri_beta)
        {
            m = m.max(v.abs());
        }
        m
    }
}

#[derive(Debug, Error)]
pub enum EigError {
    #[error("QL iteration failed to converge at index {0}")]
    QlNonConvergence(usize),
    #[error("Hessenberg QR failed to converge at index {0}")]
    QrNonConvergence(usize),
}

/// Full eigendecomposition of a projected matrix. Eigenvalues come back in
/// descending order with matching orthonormal eigenvector columns.
pub fn eig_projected(m: &ProjectedMatrix) -> Result<(Vec<f64>, DenseBlock), EigError> {
    let n = m.size();
    assert!(n >= 1, "empty projected matrix");
    let (mut d, mut e, mut v) = if m.head_len() == 0 {
        // already tridiagonal: skip the Householder stage
        let mut d = m.tri_alpha.clone();
        let mut e = vec![0.0; n];
        e[1..].copy_from_slice(&m.tri_beta);
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        let _ = &mut d;
        (d, e, v)
    } else {
        let mut a = m.to_dense();
        let (d, e) = tred2(&mut a, n);
        (d, e, a)
    };
    tql2(&mut d, &mut e, &mut v, n)?;
    // tql2 sorts ascending; flip to descending
    let mut vals = Vec::with_capacity(n);
    let mut vecs = DenseBlock::with_capacity(n, n);
    for j in (0..n).rev() {
        vals.push(d[j]);
        let col: Vec<f64> = (0..n).map(|i| v[i * n + j]).collect();
        vecs.push_col(&col);
    }
    Ok((vals, vecs))
}

/// Eigendecomposition of a dense symmetric matrix (row-major), descending.
pub fn eig_symmetric_dense(a: &[f64], n: usize) -> Result<(Vec<f64>, DenseBlock), EigError> {
    assert_eq!(a.len(), n * n);
    let mut work = a.to_vec();
    let (mut d, mut e) = tred2(&mut work, n);
    tql2(&mut d, &mut e, &mut work, n)?;
    let mut vals = Vec::with_capacity(n);
    let mut vecs = DenseBlock::with_capacity(n, n);
    for j in (0..n).rev() {
        vals.push(d[j]);
        let col: Vec<f64> = (0..n).map(|i| work[i * n + j]).collect();
        vecs.push_col(&col);
    }
    Ok((vals, vecs))
}

/// All eigenvalues (possibly complex, as re/im pairs) of a dense real matrix.
/// Balancing, elimination to upper Hessenberg form, then double-shift QR
/// without eigenvector accumulation.
pub fn eig_general(a: &[f64], n: usize) -> Result<Vec<(f64, f64)>, EigError> {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![(a[0], 0.0)]);
    }
    let mut work = a.to_vec();
    balance(&mut work, n);
    elmhes(&mut work, n);
    hqr(&mut work, n)
}

/// Householder reduction of a symmetric matrix to tridiagonal form with
/// accumulated transformations (EISPACK tred2). On return `a` holds the
/// orthogonal matrix; returns (diagonal, subdiagonal-with-leading-zero).
fn tred2(a: &mut [f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let at = |a: &[f64], i: usize, j: usize| a[i * n + j];

    for j in 0..n {
        d[j] = at(a, n - 1, j);
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = at(a, i - 1, j);
                a[i * n + j] = 0.0;
                a[j * n + i] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }
            for j in 0..i {
                f = d[j];
                a[j * n + i] = f;
                g = e[j] + at(a, j, j) * f;
                for k in (j + 1)..i {
                    g += at(a, k, j) * d[k];
                    e[k] += at(a, k, j) * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    a[k * n + j] -= f * e[k] + g * d[k];
                }
                d[j] = at(a, i - 1, j);
                a[i * n + j] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..(n - 1) {
        a[(n - 1) * n + i] = at(a, i, i);
        a[i * n + i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = at(a, k, i + 1) / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += at(a, k, i + 1) * at(a, k, j);
                }
                for k in 0..=i {
                    a[k * n + j] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            a[k * n + (i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = at(a, n - 1, j);
        a[(n - 1) * n + j] = 0.0;
    }
    a[(n - 1) * n + (n - 1)] = 1.0;
    e[0] = 0.0;
    (d, e)
}

/// Implicit-shift QL for a symmetric tridiagonal matrix, accumulating the
/// rotations into `v` (EISPACK tql2). `e[0]` is ignored; eigenvalues land in
/// `d` sorted ascending with matching columns of `v`.
fn tql2(d: &mut [f64], e: &mut [f64], v: &mut [f64], n: usize) -> Result<(), EigError> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0f64;
    let mut tst1 = 0.0f64;
    let eps = 2.0f64.powi(-52);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(EigError::QlNonConvergence(l));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[k * n + i + 1];
                        v[k * n + i + 1] = s * v[k * n + i] + c * h;
                        v[k * n + i] = c * v[k * n + i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    // ascending sort with eigenvector columns
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for j in (i + 1)..n {
            if d[j] < p {
                k = j;
                p = d[j];
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for r in 0..n {
                v.swap(r * n + i, r * n + k);
            }
        }
    }
    Ok(())
}

const RADIX: f64 = 2.0;

/// Diagonal similarity balancing (EISPACK balanc, in-place, row-major).
fn balance(a: &mut [f64], n: usize) {
    let sqrdx = RADIX * RADIX;
    loop {
        let mut done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j * n + i].abs();
                    r += a[i * n + j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                let mut c = c;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[i * n + j] *= g;
                    }
                    for j in 0..n {
                        a[j * n + i] *= f;
                    }
                }
            }
        }
        if done {
            break;
        }
    }
}

/// Reduction to upper Hessenberg form by stabilized elementary similarity
/// transformations (EISPACK elmhes). Entries below the first subdiagonal are
/// left as multiplier garbage; `hqr` never reads them.
fn elmhes(a: &mut [f64], n: usize) {
    for m in 1..n.saturating_sub(1) {
        let mut x = 0.0f64;
        let mut i = m;
        for j in m..n {
            if a[j * n + m - 1].abs() > x.abs() {
                x = a[j * n + m - 1];
                i = j;
            }
        }
        if i != m {
            for j in (m - 1)..n {
                a.swap(i * n + j, m * n + j);
            }
            for j in 0..n {
                a.swap(j * n + i, j * n + m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..n {
                let mut y = a[i * n + m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i * n + m - 1] = y;
                    for j in m..n {
                        a[i * n + j] -= y * a[m * n + j];
                    }
                    for j in 0..n {
                        a[j * n + m] += y * a[j * n + i];
                    }
                }
            }
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix, eigenvalues only
/// (EISPACK hqr). Destroys `a`.
fn hqr(a: &mut [f64], n: usize) -> Result<Vec<(f64, f64)>, EigError> {
    let mut out = vec![(0.0, 0.0); n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i * n + j].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0f64;
    while nn >= 0 {
        let mut its = 0;
        loop {
            // look for a small subdiagonal element
            let mut l = nn;
            while l >= 1 {
                let s = a[(l as usize - 1) * n + l as usize - 1].abs()
                    + a[l as usize * n + l as usize].abs();
                let s = if s == 0.0 { anorm } else { s };
                if a[l as usize * n + l as usize - 1].abs() + s == s {
                    a[l as usize * n + l as usize - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let x = a[nn as usize * n + nn as usize];
            if l == nn {
                out[nn as usize] = (x + t, 0.0);
                nn -= 1;
                break;
            }
            let y = a[(nn as usize - 1) * n + nn as usize - 1];
            let w = a[nn as usize * n + nn as usize - 1] * a[(nn as usize - 1) * n + nn as usize];
            if l == nn - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                let x = x + t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    let r1 = x + z;
                    let r2 = if z != 0.0 { x - w / z } else { x + z };
                    out[nn as usize - 1] = (r1, 0.0);
                    out[nn as usize] = (r2, 0.0);
                } else {
                    out[nn as usize - 1] = (x + p, z);
                    out[nn as usize] = (x + p, -z);
                }
                nn -= 2;
                break;
            }
            if its == 60 {
                return Err(EigError::QrNonConvergence(nn as usize));
            }
            let mut x = x;
            let y;
            let mut w = w;
            if its > 0 && its % 10 == 0 {
                // exceptional shift
                t += x;
                for i in 0..=nn as usize {
                    a[i * n + i] -= x;
                }
                let s = a[nn as usize * n + nn as usize - 1].abs()
                    + a[(nn as usize - 1) * n + nn as usize - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            } else {
                y = a[(nn as usize - 1) * n + nn as usize - 1];
            }
            its += 1;
            // find two consecutive small subdiagonal elements
            let mut m = nn - 2;
            let mut p = 0.0;
            let mut q = 0.0;
            let mut r = 0.0;
            while m >= l {
                let mu = m as usize;
                let z = a[mu * n + mu];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[(mu + 1) * n + mu] + a[mu * n + mu + 1];
                q = a[(mu + 1) * n + mu + 1] - z - rr - ss;
                r = a[(mu + 2) * n + mu + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[mu * n + mu - 1].abs() * (q.abs() + r.abs());
                let v = p.abs()
                    * (a[(mu - 1) * n + mu - 1].abs() + z.abs() + a[(mu + 1) * n + mu + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            let m = m.max(l) as usize;
            for i in (m + 2)..=(nn as usize) {
                a[i * n + i - 2] = 0.0;
                if i != m + 2 {
                    a[i * n + i - 3] = 0.0;
                }
            }
            // double QR step over rows l..nn
            for k in m..(nn as usize) {
                if k != m {
                    p = a[k * n + k - 1];
                    q = a[(k + 1) * n + k - 1];
                    r = 0.0;
                    if k != nn as usize - 1 {
                        r = a[(k + 2) * n + k - 1];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l as usize != m {
                            a[k * n + k - 1] = -a[k * n + k - 1];
                        }
                    } else {
                        a[k * n + k - 1] = -s * x;
                    }
                    p += s;
                    let px = p / s;
                    let py = q / s;
                    let pz = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=(nn as usize) {
                        let mut pp = a[k * n + j] + q * a[(k + 1) * n + j];
                        if k != nn as usize - 1 {
                            pp += r * a[(k + 2) * n + j];
                            a[(k + 2) * n + j] -= pp * pz;
                        }
                        a[(k + 1) * n + j] -= pp * py;
                        a[k * n + j] -= pp * px;
                    }
                    let mmin = (nn as usize).min(k + 3);
                    for i in (l as usize)..=mmin {
                        let mut pp = px * a[i * n + k] + py * a[i * n + k + 1];
                        if k != nn as usize - 1 {
                            pp += pz * a[i * n + k + 2];
                            a[i * n + k + 2] -= pp * r;
                        }
                        a[i * n + k + 1] -= pp * q;
                        a[i * n + k] -= pp;
                    }
                }
            }
        }
    }
    Ok(out)
}
