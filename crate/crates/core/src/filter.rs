//! Least-squares Chebyshev approximations of a Dirac delta centered inside
//! the search interval: coefficient construction with optional damping,
//! degree selection, center balancing (Newton plus a companion-eigenvalue
//! fallback) and application of the filter polynomial to vectors through the
//! matrix.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::SpectralMap;
use crate::dense_eig::eig_general;
use crate::sparse::SparseSymMatrix;

/// Damping applied to the truncated Chebyshev expansion to suppress Gibbs
/// oscillations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DampingKind {
    None,
    Jackson,
    LanczosSigma,
}

impl std::fmt::Display for DampingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DampingKind::None => write!(f, "none"),
            DampingKind::Jackson => write!(f, "jackson"),
            DampingKind::LanczosSigma => write!(f, "sigma"),
        }
    }
}

impl std::str::FromStr for DampingKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(DampingKind::None),
            "jackson" => Ok(DampingKind::Jackson),
            "sigma" | "lanczos" => Ok(DampingKind::LanczosSigma),
            other => Err(format!("unknown damping '{other}' (none|jackson|sigma)")),
        }
    }
}

/// Jackson smoothing factors g_0..g_k. Written so that g_0 evaluates to
/// exactly 1: sin(a)/sin(a) + (k+1) all over (k+2).
pub fn jackson_coeffs(k: usize) -> Vec<f64> {
    let alpha = PI / (k as f64 + 2.0);
    let sin_alpha = alpha.sin();
    let kp2 = k as f64 + 2.0;
    (0..=k)
        .map(|j| {
            let jf = j as f64;
            let ratio = ((jf + 1.0) * alpha).sin() / sin_alpha;
            (ratio + (kp2 - jf - 1.0) * (jf * alpha).cos()) / kp2
        })
        .collect()
}

/// Lanczos sigma factors: sigma_0 = 1, sigma_j = sin(j pi/(k+1)) / (j pi/(k+1)).
pub fn sigma_coeffs(k: usize) -> Vec<f64> {
    let theta = PI / (k as f64 + 1.0);
    (0..=k)
        .map(|j| {
            if j == 0 {
                1.0
            } else {
                let x = j as f64 * theta;
                x.sin() / x
            }
        })
        .collect()
}

fn damping_coeffs(k: usize, damping: DampingKind) -> Vec<f64> {
    match damping {
        DampingKind::None => vec![1.0; k + 1],
        DampingKind::Jackson => jackson_coeffs(k),
        DampingKind::LanczosSigma => sigma_coeffs(k),
    }
}

/// Unscaled expansion coefficients of the damped delta filter centered at
/// cos(theta_gamma): g_0/2 for j = 0 and g_j cos(j theta_gamma) for j >= 1.
/// The halved leading term is the expansion convention; every evaluator in
/// this module takes plain Chebyshev series and needs no special cases.
pub fn delta_coeffs(theta_gamma: f64, k: usize, damping: DampingKind) -> Vec<f64> {
    assert!(
        (0.0..=PI).contains(&theta_gamma),
        "theta_gamma outside [0, pi]"
    );
    let g = damping_coeffs(k, damping);
    (0..=k)
        .map(|j| {
            if j == 0 {
                0.5 * g[0]
            } else {
                g[j] * (j as f64 * theta_gamma).cos()
            }
        })
        .collect()
}

/// Evaluate a Chebyshev series sum c_j T_j(t) by the Clenshaw recurrence.
/// `t` slightly outside [-1, 1] from rounding is clamped.
pub fn eval_cheb(coeffs: &[f64], t: f64) -> f64 {
    let t = t.clamp(-1.0, 1.0);
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coeffs.iter().skip(1).rev() {
        let b = 2.0 * t * b1 - b2 + c;
        b2 = b1;
        b1 = b;
    }
    t * b1 - b2 + coeffs[0]
}

/// The normalized filter through the kernel-polynomial route:
/// sum That_j(gamma) That_j(t) / sum That_j(gamma)^2 with That_0 = T_0/sqrt(pi)
/// and That_j = T_j/sqrt(pi/2). Exact 1 at t == gamma by construction.
pub fn kernel_poly_eval(gamma: f64, k: usize, t: f64) -> f64 {
    let tg = gamma.clamp(-1.0, 1.0).acos();
    let tt = t.clamp(-1.0, 1.0).acos();
    let mut num = 0.5;
    let mut den = 0.5;
    for j in 1..=k {
        let cg = (j as f64 * tg).cos();
        let ct = (j as f64 * tt).cos();
        num += cg * ct;
        den += cg * cg;
    }
    num / den
}

/// Chebyshev-weighted squared norm of the normalized filter,
/// 2 pi/(2k+1) / (1 + sin((2k+1)t)/((2k+1) sin t)) at t = arccos(gamma).
/// The Dirichlet term tends to 1 at gamma = +-1, giving pi/(2k+1).
pub fn filter_norm_sq(gamma: f64, k: usize) -> f64 {
    assert!(k >= 1);
    let tg = gamma.clamp(-1.0, 1.0).acos();
    let st = tg.sin();
    let dirichlet = if st.abs() < 1e-14 {
        1.0
    } else {
        let m = (2 * k + 1) as f64;
        (m * tg).sin() / (m * st)
    };
    2.0 * PI / (2 * k + 1) as f64 / (1.0 + dirichlet)
}

/// Result of centering the filter so both interval endpoints take the same
/// value. `balanced = false` flags the pathological case where no root was
/// found inside the interval and the geometric mid-angle is returned instead.
#[derive(Clone, Copy, Debug)]
pub struct BalanceOutcome {
    pub theta_gamma: f64,
    pub balanced: bool,
    pub used_fallback: bool,
}

/// f(theta) of the balance equation and its derivative: the difference of the
/// damped expansions at the two endpoints as a function of the center angle.
fn balance_fn(theta: f64, g: &[f64], brackets: &[f64]) -> (f64, f64) {
    let mut f = 0.0;
    let mut fp = 0.0;
    for (j, (&gj, &br)) in g.iter().zip(brackets).enumerate() {
        let jf = j as f64;
        f += gj * (jf * theta).cos() * br;
        fp -= gj * jf * (jf * theta).sin() * br;
    }
    (f, fp)
}

const NEWTON_RTOL: f64 = 1e-12;

/// Move the delta center so the filter takes equal values at both endpoints.
/// Two Newton steps from the mid-angle; on failure the root is taken from the
/// companion eigenvalue problem and polished.
pub fn balance(theta_xi: f64, theta_eta: f64, k: usize, damping: DampingKind) -> BalanceOutcome {
    assert!(
        (0.0..=PI).contains(&theta_eta) && theta_eta < theta_xi && theta_xi <= PI,
        "need 0 <= theta_eta < theta_xi <= pi"
    );
    let g = damping_coeffs(k, damping);
    let brackets: Vec<f64> = (0..=k)
        .map(|j| (j as f64 * theta_xi).cos() - (j as f64 * theta_eta).cos())
        .collect();
    let scale: f64 = g
        .iter()
        .zip(&brackets)
        .map(|(gj, br)| (gj * br).abs())
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let tol = NEWTON_RTOL * scale;
    let theta_c = 0.5 * (theta_xi + theta_eta);
    let inside = |t: f64| t > theta_eta && t < theta_xi;

    let mut theta = theta_c;
    let mut converged = false;
    for _ in 0..=2 {
        let (f, fp) = balance_fn(theta, &g, &brackets);
        if f.abs() <= tol && inside(theta) {
            converged = true;
            break;
        }
        if fp == 0.0 || !theta.is_finite() {
            break;
        }
        theta -= f / fp;
    }
    if converged {
        return BalanceOutcome {
            theta_gamma: theta,
            balanced: true,
            used_fallback: false,
        };
    }

    match hessenberg_balance(theta_xi, theta_eta, k, damping, theta_c) {
        Some(mut theta) => {
            // polish the companion root down to the Newton tolerance
            for _ in 0..40 {
                let (f, fp) = balance_fn(theta, &g, &brackets);
                if f.abs() <= tol {
                    break;
                }
                if fp == 0.0 {
                    break;
                }
                let next = theta - f / fp;
                if !inside(next) {
                    break;
                }
                theta = next;
            }
            let (f, _) = balance_fn(theta, &g, &brackets);
            let ok = f.abs() <= tol && inside(theta);
            BalanceOutcome {
                theta_gamma: if ok { theta } else { theta_c },
                balanced: ok,
                used_fallback: true,
            }
        }
        None => BalanceOutcome {
            theta_gamma: theta_c,
            balanced: false,
            used_fallback: true,
        },
    }
}

/// Imaginary magnitude up to which a companion eigenvalue still seeds a
/// candidate root (through its real part). Ill-scaled companion matrices can
/// push a real root far off the axis; every candidate is polished against
/// the balance equation and verified by residual, so the gate only has to
/// exclude far-complex garbage.
const COMPANION_IM_TOL: f64 = 0.5;

/// Residual bound every returned companion root must satisfy.
const COMPANION_RTOL: f64 = 1e-8;

/// Relative size below which trailing expansion coefficients are dropped
/// from the companion construction. Jackson damping sends the tail
/// coefficients to zero quadratically, which would otherwise produce a
/// wildly ill-scaled companion matrix; the dropped tail moves each root far
/// less than the polishing basin, and polishing runs against the full
/// equation.
const COMPANION_TRUNC: f64 = 1e-5;

/// Solve the balance equation by the eigenvalues of the k x k companion-like
/// Hessenberg matrix H: roots of the equation are eigenvalues of H/2. Among
/// the real eigenvalues inside the mapped interval, the one closest to
/// cos(theta_c) is refined against the balance equation and returned as an
/// angle; None if no usable root exists.
pub fn hessenberg_balance(
    theta_xi: f64,
    theta_eta: f64,
    k: usize,
    damping: DampingKind,
    theta_c: f64,
) -> Option<f64> {
    let g = damping_coeffs(k, damping);
    let brackets: Vec<f64> = (0..=k)
        .map(|j| (j as f64 * theta_xi).cos() - (j as f64 * theta_eta).cos())
        .collect();
    let num_max = g
        .iter()
        .zip(&brackets)
        .map(|(gj, br)| (gj * br).abs())
        .fold(0.0f64, f64::max);

    // drop the negligible tail of the construction
    let mut kk = k;
    while kk >= 1 && (g[kk] * brackets[kk]).abs() <= COMPANION_TRUNC * num_max {
        kk -= 1;
    }
    if kk == 0 {
        return None;
    }
    let den = g[kk] * brackets[kk];
    let beta: Vec<f64> = (0..kk).map(|j| g[j] * brackets[j] / den).collect();

    let gammas: Vec<f64> = if kk == 1 {
        // single relation 2 gamma t_0 = -2 beta_0 t_0
        vec![-beta[0]]
    } else {
        let n = kk;
        let mut h = vec![0.0; n * n];
        h[1] = 2.0; // first row: (0, 2, 0, ..)
        for i in 1..n - 1 {
            h[i * n + i - 1] = 1.0;
            h[i * n + i + 1] = 1.0;
        }
        for (j, &b) in beta.iter().enumerate() {
            h[(n - 1) * n + j] = -b;
        }
        h[(n - 1) * n + n - 2] += 1.0;
        let eigs = eig_general(&h, n).ok()?;
        eigs.into_iter()
            .filter(|&(_, im)| im.abs() <= COMPANION_IM_TOL)
            .map(|(re, _)| re / 2.0)
            .collect()
    };

    let lo = theta_xi.cos(); // mapped xi
    let hi = theta_eta.cos(); // mapped eta
    let slack = 1e-6 * (1.0 + hi - lo);
    let target = theta_c.cos();
    let scale: f64 = g
        .iter()
        .zip(&brackets)
        .map(|(gj, br)| (gj * br).abs())
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);

    // polish each in-interval candidate against the balance equation (the
    // companion eigenvalues carry QR noise when the matrix is ill-scaled),
    // keep the verified roots and take the one closest to the mid-angle value
    let mut best: Option<(f64, f64)> = None; // (distance, theta)
    let mut candidates: Vec<f64> = gammas
        .into_iter()
        .filter(|gm| *gm >= lo - slack && *gm <= hi + slack)
        .collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for gm in candidates {
        let mut theta = gm.clamp(lo.max(-1.0), hi.min(1.0)).acos();
        for _ in 0..30 {
            let (f, fp) = balance_fn(theta, &g, &brackets);
            if f.abs() <= 1e-13 * scale || fp == 0.0 {
                break;
            }
            theta -= f / fp;
        }
        let (f, _) = balance_fn(theta, &g, &brackets);
        if f.abs() > COMPANION_RTOL * scale || theta <= theta_eta || theta >= theta_xi {
            continue;
        }
        let dist = (theta.cos() - target).abs();
        if best.map(|(d, _)| dist < d).unwrap_or(true) {
            best = Some((dist, theta));
        }
    }
    best.map(|(_, theta)| theta)
}

/// Inputs for degree selection: interval, damping, bar threshold and the scan
/// limits.
#[derive(Clone, Copy, Debug)]
pub struct FilterSpec {
    pub xi: f64,
    pub eta: f64,
    pub damping: DampingKind,
    pub phi_threshold: f64,
    pub k_min: usize,
    pub k_max: usize,
}

pub const DEFAULT_K_MIN: usize = 3;
pub const DEFAULT_K_MAX: usize = 3000;

impl FilterSpec {
    pub fn new(xi: f64, eta: f64, damping: DampingKind, phi_threshold: f64) -> Self {
        assert!(xi < eta, "interval must satisfy xi < eta");
        assert!(
            phi_threshold > 0.0 && phi_threshold < 1.0,
            "threshold must lie in (0, 1)"
        );
        FilterSpec {
            xi,
            eta,
            damping,
            phi_threshold,
            k_min: DEFAULT_K_MIN,
            k_max: DEFAULT_K_MAX,
        }
    }
}

/// Default bar threshold: 0.6 for interior intervals, 0.3 when an endpoint
/// touches a spectrum end.
pub fn default_phi(map: &SpectralMap, xi: f64, eta: f64) -> f64 {
    let span = map.hi - map.lo;
    if xi <= map.lo + 1e-9 * span || eta >= map.hi - 1e-9 * span {
        0.3
    } else {
        0.6
    }
}

/// A selected, balanced, normalized filter polynomial.
#[derive(Clone, Debug)]
pub struct PolyFilter {
    pub k: usize,
    /// Scaled coefficients: damped expansion divided by its value at gamma,
    /// so the filter evaluates to 1 at the center.
    pub coeffs: Vec<f64>,
    pub gamma: f64,
    pub theta_gamma: f64,
    /// Common endpoint value; Ritz values at or above it are candidates.
    pub bar: f64,
    pub damping: DampingKind,
    pub balanced: bool,
}

impl PolyFilter {
    /// Normalized filter value at a mapped point t in [-1, 1].
    pub fn eval(&self, t: f64) -> f64 {
        eval_cheb(&self.coeffs, t)
    }
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error(
        "degree cap {k_max} exceeded: endpoint values {at_xi:.3e}/{at_eta:.3e} above threshold {threshold}; interval too narrow, re-slice"
    )]
    DegreeCapExceeded {
        k_max: usize,
        at_xi: f64,
        at_eta: f64,
        threshold: f64,
    },
}

/// Pick the smallest degree whose endpoint values drop below the threshold
/// (scanning with the center held at the mid-angle), then balance the center
/// at that degree and normalize.
pub fn select_degree(spec: &FilterSpec, map: &SpectralMap) -> Result<PolyFilter, FilterError> {
    assert!(spec.k_min >= 1, "k_min must be at least 1");
    let xi_hat = map.to_reference(spec.xi);
    let eta_hat = map.to_reference(spec.eta);
    assert!(
        xi_hat >= -1.0 - 1e-9 && eta_hat <= 1.0 + 1e-9,
        "interval must lie inside the spectral bounds"
    );
    let xi_hat = xi_hat.clamp(-1.0, 1.0);
    let eta_hat = eta_hat.clamp(-1.0, 1.0);
    let theta_xi = xi_hat.acos();
    let theta_eta = eta_hat.acos();
    let theta_c = 0.5 * (theta_xi + theta_eta);
    let gamma_c = theta_c.cos();

    let mut chosen = None;
    let mut last_vals = (f64::INFINITY, f64::INFINITY);
    for k in spec.k_min..=spec.k_max {
        let coeffs = delta_coeffs(theta_c, k, spec.damping);
        let at_gamma = eval_cheb(&coeffs, gamma_c);
        let at_xi = eval_cheb(&coeffs, xi_hat) / at_gamma;
        let at_eta = eval_cheb(&coeffs, eta_hat) / at_gamma;
        last_vals = (at_xi, at_eta);
        if at_xi <= spec.phi_threshold && at_eta <= spec.phi_threshold {
            chosen = Some(k);
            break;
        }
    }
    let k = chosen.ok_or(FilterError::DegreeCapExceeded {
        k_max: spec.k_max,
        at_xi: last_vals.0,
        at_eta: last_vals.1,
        threshold: spec.phi_threshold,
    })?;

    let outcome = balance(theta_xi, theta_eta, k, spec.damping);
    let theta_gamma = outcome.theta_gamma;
    let gamma = theta_gamma.cos();
    let raw = delta_coeffs(theta_gamma, k, spec.damping);
    let at_gamma = eval_cheb(&raw, gamma);
    let coeffs: Vec<f64> = raw.iter().map(|c| c / at_gamma).collect();
    let at_xi = eval_cheb(&coeffs, xi_hat);
    let at_eta = eval_cheb(&coeffs, eta_hat);
    Ok(PolyFilter {
        k,
        coeffs,
        gamma,
        theta_gamma,
        bar: at_xi.min(at_eta),
        damping: spec.damping,
        balanced: outcome.balanced,
    })
}

/// Applies the filter polynomial of the mapped matrix to vectors through the
/// three-term Chebyshev recurrence; owns its workspace so the solver hot loop
/// does not allocate. Exactly `k` matvecs per application.
pub struct FilteredOperator<'a> {
    a: &'a SparseSymMatrix,
    map: SpectralMap,
    filter: &'a PolyFilter,
    w_prev: Vec<f64>,
    w_cur: Vec<f64>,
    w_next: Vec<f64>,
}

impl<'a> FilteredOperator<'a> {
    pub fn new(a: &'a SparseSymMatrix, map: SpectralMap, filter: &'a PolyFilter) -> Self {
        let n = a.n();
        FilteredOperator {
            a,
            map,
            filter,
            w_prev: vec![0.0; n],
            w_cur: vec![0.0; n],
            w_next: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn degree(&self) -> usize {
        self.filter.k
    }

    /// out = rho(Ahat) v
    pub fn apply(&mut self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.a.n(), "filter apply: dimension mismatch");
        let coeffs: &[f64] = &self.filter.coeffs;
        self.w_prev.copy_from_slice(v);
        for (o, p) in out.iter_mut().zip(&self.w_prev) {
            *o = coeffs[0] * p;
        }
        if coeffs.len() == 1 {
            return;
        }
        apply_mapped(self.a, &self.map, v, &mut self.w_cur);
        for (o, w) in out.iter_mut().zip(&self.w_cur) {
            *o += coeffs[1] * w;
        }
        for &cj in &coeffs[2..] {
            apply_mapped(self.a, &self.map, &self.w_cur, &mut self.w_next);
            for (nx, p) in self.w_next.iter_mut().zip(&self.w_prev) {
                *nx = 2.0 * *nx - p;
            }
            for (o, w) in out.iter_mut().zip(&self.w_next) {
                *o += cj * w;
            }
            std::mem::swap(&mut self.w_prev, &mut self.w_cur);
            std::mem::swap(&mut self.w_cur, &mut self.w_next);
        }
    }
}

/// y = ((A - cI)/d) x
fn apply_mapped(a: &SparseSymMatrix, map: &SpectralMap, x: &[f64], y: &mut [f64]) {
    a.matvec(x, y);
    let (c, d) = (map.c, map.d);
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = (*yi - c * xi) / d;
    }
}

/// rho(Ahat) v as a standalone call.
pub fn apply_filter(
    a: &SparseSymMatrix,
    map: &SpectralMap,
    filter: &PolyFilter,
    v: &[f64],
) -> Vec<f64> {
    let mut op = FilteredOperator::new(a, *map, filter);
    let mut out = vec![0.0; a.n()];
    op.apply(v, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jackson_leading_coefficient_is_one() {
        for k in [0, 1, 2, 7, 50, 500] {
            assert_eq!(jackson_coeffs(k)[0], 1.0, "k = {k}");
        }
    }

    #[test]
    fn jackson_k1_hand_value() {
        // alpha = pi/3: sin(2pi/3)/(3 sin(pi/3)) + (1/3) cos(pi/3) = 1/3 + 1/6
        let g = jackson_coeffs(1);
        assert!((g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn jackson_range_scan() {
        for k in 0..=500 {
            for &g in &jackson_coeffs(k) {
                assert!((-1e-15..=1.0 + 1e-12).contains(&g), "k={k} g={g}");
            }
        }
    }

    #[test]
    fn sigma_basics() {
        for k in [0, 1, 5, 100] {
            assert_eq!(sigma_coeffs(k)[0], 1.0);
        }
        let s = sigma_coeffs(1);
        assert!((s[1] - 2.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn sigma_decreasing_scan() {
        for k in 1..=500 {
            let s = sigma_coeffs(k);
            for w in s.windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "k={k}");
            }
        }
    }

    #[test]
    fn delta_coeffs_center_zero() {
        // gamma = 0: cos(j pi/2) pattern 1/2, 0, -1, 0, 1, ...
        let c = delta_coeffs(PI / 2.0, 6, DampingKind::None);
        let want = [0.5, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0];
        for (a, b) in c.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn delta_coeffs_center_one() {
        let c = delta_coeffs(0.0, 5, DampingKind::None);
        assert_eq!(c[0], 0.5);
        for &v in &c[1..] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn delta_coeffs_compose_with_damping() {
        let theta = (0.3f64).acos();
        let k = 20;
        let c = delta_coeffs(theta, k, DampingKind::Jackson);
        let g = jackson_coeffs(k);
        for (j, &v) in c.iter().enumerate() {
            let mu = if j == 0 {
                0.5
            } else {
                (j as f64 * theta).cos()
            };
            assert!((v - g[j] * mu).abs() < 1e-15);
        }
    }

    #[test]
    fn eval_cheb_degree_zero_and_t2() {
        for t in [-1.0, -0.3, 0.0, 0.9, 1.0] {
            assert_eq!(eval_cheb(&[0.5], t), 0.5);
        }
        // T_2 alone at 0 is -1
        assert!((eval_cheb(&[0.0, 0.0, 1.0], 0.0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn eval_cheb_matches_trig_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coeffs: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for i in 0..=1000 {
            let t = -1.0 + 2.0 * i as f64 / 1000.0;
            let th = t.acos();
            let direct: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c * (j as f64 * th).cos())
                .sum();
            assert!((eval_cheb(&coeffs, t) - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn kernel_exact_one_at_center() {
        for gamma in [-0.9, -0.3, 0.0, 0.3, 0.9] {
            for k in [1, 5, 20] {
                assert_eq!(kernel_poly_eval(gamma, k, gamma), 1.0);
            }
        }
    }

    #[test]
    fn kernel_k1_gamma1_closed_form() {
        // kernel route with k=1, gamma=1: (1 + 2t)/3, matching the normalized
        // expansion (1/2 + t)/(3/2)
        for i in 0..=10 {
            let t = -1.0 + 0.2 * i as f64;
            assert!((kernel_poly_eval(1.0, 1, t) - (1.0 + 2.0 * t) / 3.0).abs() < 1e-14);
            let c = delta_coeffs(0.0, 1, DampingKind::None);
            let normalized = eval_cheb(&c, t) / eval_cheb(&c, 1.0);
            assert!((normalized - (1.0 + 2.0 * t) / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_equals_normalized_expansion() {
        let gamma = 0.3f64;
        let k = 20;
        let c = delta_coeffs(gamma.acos(), k, DampingKind::None);
        let at_gamma = eval_cheb(&c, gamma);
        for i in 0..=1000 {
            let t = -1.0 + 2.0 * i as f64 / 1000.0;
            let diff = (eval_cheb(&c, t) / at_gamma - kernel_poly_eval(gamma, k, t)).abs();
            assert!(diff <= 1e-12, "t={t} diff={diff}");
        }
    }

    /// Gauss-Chebyshev quadrature of f(s)/sqrt(1-s^2) over [-1, 1].
    fn gauss_cheb_quad(f: impl Fn(f64) -> f64, nodes: usize) -> f64 {
        let mut s = 0.0;
        for i in 1..=nodes {
            let t = ((2 * i - 1) as f64 * PI / (2 * nodes) as f64).cos();
            s += f(t);
        }
        PI / nodes as f64 * s
    }

    #[test]
    fn norm_sq_limits_and_values() {
        for k in [1, 3, 10] {
            assert!((filter_norm_sq(1.0, k) - PI / (2 * k + 1) as f64).abs() < 1e-14);
            assert!((filter_norm_sq(-1.0, k) - PI / (2 * k + 1) as f64).abs() < 1e-14);
        }
        // gamma = 0, k = 1: sin(3 pi/2) = -1 gives (2pi/3)/(1 - 1/3) = pi
        assert!((filter_norm_sq(0.0, 1) - PI).abs() < 1e-14);
    }

    #[test]
    fn norm_sq_matches_sum_and_quadrature() {
        for gamma in [-0.9, -0.3, 0.0, 0.3, 0.9] {
            for k in [3, 10, 20, 50] {
                let closed = filter_norm_sq(gamma, k);
                let tg = gamma.acos();
                let mut den = 0.5;
                for j in 1..=k {
                    den += (j as f64 * tg).cos().powi(2);
                }
                let by_sum = PI / 2.0 / den;
                assert!((closed - by_sum).abs() <= 1e-12);
                let quad = gauss_cheb_quad(|t| kernel_poly_eval(gamma, k, t).powi(2), 4 * (k + 1));
                assert!((closed - quad).abs() <= 1e-10, "g={gamma} k={k}");
            }
        }
    }

    #[test]
    fn balance_symmetric_interval_is_midangle() {
        // mapped interval symmetric about 0: balanced center is gamma = 0
        let theta_xi = (-0.4f64).acos();
        let theta_eta = (0.4f64).acos();
        for damping in [DampingKind::Jackson, DampingKind::LanczosSigma] {
            let out = balance(theta_xi, theta_eta, 30, damping);
            assert!(out.balanced);
            assert!((out.theta_gamma - PI / 2.0).abs() < 1e-10);
            let h = hessenberg_balance(theta_xi, theta_eta, 30, damping, PI / 2.0).unwrap();
            assert!((h - PI / 2.0).abs() < 1e-8);
        }
    }

    fn endpoint_gap(theta_xi: f64, theta_eta: f64, k: usize, d: DampingKind, tg: f64) -> f64 {
        let c = delta_coeffs(tg, k, d);
        let s = eval_cheb(&c, tg.cos());
        (eval_cheb(&c, theta_xi.cos()) / s - eval_cheb(&c, theta_eta.cos()) / s).abs()
    }

    #[test]
    fn balance_random_intervals() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..60 {
            let a: f64 = rng.gen_range(-0.95..0.85);
            let b = (a + rng.gen_range(0.01..0.3)).min(0.97);
            let (theta_xi, theta_eta) = (a.acos(), b.acos());
            let k = rng.gen_range(5..=300);
            for damping in [DampingKind::Jackson, DampingKind::LanczosSigma] {
                let out = balance(theta_xi, theta_eta, k, damping);
                assert!(out.balanced, "k={k} a={a} b={b} {damping:?}");
                let gap = endpoint_gap(theta_xi, theta_eta, k, damping, out.theta_gamma);
                assert!(gap <= 1e-10, "gap {gap:.2e} k={k}");
            }
        }
    }

    #[test]
    fn balance_midspectrum_center_stays_close() {
        // balanced center barely moves from the mid-angle on narrow
        // mid-spectrum intervals
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let center: f64 = rng.gen_range(-0.7..0.7);
            let w: f64 = rng.gen_range(0.01..0.05);
            let (theta_xi, theta_eta) = ((center - w / 2.0).acos(), (center + w / 2.0).acos());
            let k = rng.gen_range(20..200);
            let out = balance(theta_xi, theta_eta, k, DampingKind::LanczosSigma);
            let theta_c = 0.5 * (theta_xi + theta_eta);
            assert!((out.theta_gamma - theta_c).abs() <= 0.2);
        }
    }

    #[test]
    fn hessenberg_agrees_with_newton() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut compared = 0;
        for _ in 0..100 {
            let a: f64 = rng.gen_range(-0.9..0.8);
            let b = (a + rng.gen_range(0.02..0.25)).min(0.95);
            let (theta_xi, theta_eta) = (a.acos(), b.acos());
            let theta_c = 0.5 * (theta_xi + theta_eta);
            let k = rng.gen_range(10..=200);
            let damping = if rng.gen_bool(0.5) {
                DampingKind::Jackson
            } else {
                DampingKind::LanczosSigma
            };
            // full Newton until convergence (no 2-step cap) as the reference
            let g = damping_coeffs(k, damping);
            let brackets: Vec<f64> = (0..=k)
                .map(|j| (j as f64 * theta_xi).cos() - (j as f64 * theta_eta).cos())
                .collect();
            let scale: f64 = g.iter().zip(&brackets).map(|(x, y)| (x * y).abs()).sum();
            let mut theta = theta_c;
            let mut ok = false;
            for _ in 0..100 {
                let (f, fp) = balance_fn(theta, &g, &brackets);
                if f.abs() <= 1e-13 * scale {
                    ok = true;
                    break;
                }
                if fp == 0.0 {
                    break;
                }
                theta -= f / fp;
            }
            if !ok || theta <= theta_eta || theta >= theta_xi {
                continue;
            }
            let h = hessenberg_balance(theta_xi, theta_eta, k, damping, theta_c)
                .expect("companion root expected when Newton converges");
            // residual contract of the companion route
            let (fh, _) = balance_fn(h, &g, &brackets);
            assert!(fh.abs() <= 1e-8 * scale);
            assert!((h - theta).abs() <= 1e-8, "k={k} {damping:?}");
            compared += 1;
        }
        assert!(compared >= 80, "only {compared} comparisons ran");
    }

    fn laplacian60_map() -> SpectralMap {
        let lo = 6.0 - 6.0 * (PI / 61.0).cos();
        let hi = 6.0 + 6.0 * (PI / 61.0).cos();
        SpectralMap::from_bounds(lo, hi)
    }

    #[test]
    fn select_degree_reproduces_reference_rows() {
        let map = laplacian60_map();
        for (phi, want) in [(0.6, 172.0), (0.8, 116.0), (0.9, 80.0)] {
            let spec = FilterSpec::new(0.60000, 0.67568, DampingKind::LanczosSigma, phi);
            let f = select_degree(&spec, &map).unwrap();
            let rel = (f.k as f64 - want).abs() / want;
            assert!(rel <= 0.05, "phi={phi}: got {} want {want} +-5%", f.k);
            assert!(f.balanced);
            assert!((f.eval(f.gamma) - 1.0).abs() <= 1e-12);
            assert!(f.bar > 0.0 && f.bar < 1.0);
            let gap = (f.eval(map.to_reference(0.60000)) - f.eval(map.to_reference(0.67568))).abs();
            assert!(gap <= 1e-10);
        }
    }

    #[test]
    fn select_degree_monotone_in_threshold() {
        let map = laplacian60_map();
        let mut prev = usize::MAX;
        for phi in [0.6, 0.8, 0.9] {
            let spec = FilterSpec::new(0.9, 1.0, DampingKind::Jackson, phi);
            let f = select_degree(&spec, &map).unwrap();
            assert!(f.k <= prev);
            prev = f.k;
        }
    }

    #[test]
    fn select_degree_cap_errors() {
        let map = laplacian60_map();
        let mut spec = FilterSpec::new(0.9, 0.9001, DampingKind::Jackson, 0.6);
        spec.k_max = 50;
        match select_degree(&spec, &map) {
            Err(FilterError::DegreeCapExceeded { at_xi, at_eta, .. }) => {
                assert!(at_xi > 0.6 || at_eta > 0.6);
            }
            other => panic!("expected degree cap error, got {other:?}"),
        }
    }

    #[test]
    fn balanced_filter_membership() {
        // for the balanced filter, value >= bar on a fine grid happens exactly
        // inside the interval (up to rounding-width around the endpoints)
        let map = laplacian60_map();
        let (xi, eta) = (0.9, 1.1);
        let spec = FilterSpec::new(xi, eta, DampingKind::LanczosSigma, 0.8);
        let f = select_degree(&spec, &map).unwrap();
        let eps = 1e-8 * map.d;
        for i in 0..=20000 {
            let lam = map.lo + (map.hi - map.lo) * i as f64 / 20000.0;
            let inside = lam >= xi && lam <= eta;
            let above = f.eval(map.to_reference(lam)) >= f.bar;
            if above {
                assert!(
                    lam >= xi - eps && lam <= eta + eps,
                    "false positive at {lam}"
                );
            }
            if inside {
                assert!(above, "false negative at {lam}");
            }
        }
    }

    #[test]
    fn apply_filter_diagonal_action() {
        let d: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let a = SparseSymMatrix::diagonal(&d);
        let map = SpectralMap::from_bounds(-0.5, 7.5);
        let spec = FilterSpec::new(3.0, 4.0, DampingKind::Jackson, 0.6);
        let f = select_degree(&spec, &map).unwrap();
        for i in 0..8 {
            let mut e = vec![0.0; 8];
            e[i] = 1.0;
            let y = apply_filter(&a, &map, &f, &e);
            let want = f.eval(map.to_reference(d[i]));
            for (j, &v) in y.iter().enumerate() {
                let expect = if j == i { want } else { 0.0 };
                assert!((v - expect).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn apply_filter_matches_dense_spectral_oracle() {
        // compare against U rho(Lambda) U^T v from the dense eigendecomposition
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, rng.gen_range(-2.0..2.0)));
        }
        for _ in 0..120 {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j {
                let v = rng.gen_range(-1.0..1.0);
                trip.push((i, j, v));
                trip.push((j, i, v));
            }
        }
        let a = SparseSymMatrix::from_triplets(n, &trip);
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                dense[i * n + j] = v;
            }
        }
        let (vals, vecs) = crate::dense_eig::eig_symmetric_dense(&dense, n).unwrap();
        let map = SpectralMap::from_bounds(vals[n - 1] - 0.1, vals[0] + 0.1);
        let spec = FilterSpec::new(-0.5, 0.5, DampingKind::LanczosSigma, 0.7);
        let f = select_degree(&spec, &map).unwrap();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = apply_filter(&a, &map, &f, &v);
        let mut want = vec![0.0; n];
        for (j, &val) in vals.iter().enumerate() {
            let uj = vecs.col(j);
            let coef = crate::linalg::dot(uj, &v) * f.eval(map.to_reference(val));
            crate::linalg::axpy(coef, uj, &mut want);
        }
        let scale = want.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn apply_filter_costs_exactly_k_matvecs() {
        let a = crate::sparse::gen_laplacian3d(4, 4, 4);
        let map = SpectralMap::from_bounds(0.0, 12.0);
        let spec = FilterSpec::new(5.0, 6.0, DampingKind::Jackson, 0.6);
        let f = select_degree(&spec, &map).unwrap();
        let v = vec![1.0; a.n()];
        let before = a.matvec_count();
        let _ = apply_filter(&a, &map, &f, &v);
        assert_eq!(a.matvec_count() - before, f.k as u64);
    }

    #[test]
    fn default_phi_rule() {
        let map = SpectralMap::from_bounds(0.0, 10.0);
        assert_eq!(default_phi(&map, 2.0, 3.0), 0.6);
        assert_eq!(default_phi(&map, 0.0, 3.0), 0.3);
        assert_eq!(default_phi(&map, 8.0, 10.0), 0.3);
    }
}
