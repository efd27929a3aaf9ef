//! Kurtosis-contrast component extraction with an algebraically optimal
//! step size: contrast and gradient, exact quartic line search, closed-form
//! quartic roots, and deflation of extracted components.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::{C64, CMat, CVec};

/// Projects data rows onto an extractor: `y = u^H z`.
pub fn project(z: &CMat, u: &CVec) -> Vec<C64> {
    let (n, q) = (z.nrows(), z.ncols());
    debug_assert_eq!(u.len(), n);
    (0..q)
        .map(|col| {
            let mut acc = C64::default();
            for row in 0..n {
                acc += u[row].conj() * z[(row, col)];
            }
            acc
        })
        .collect()
}

struct Moments {
    m2: f64,
    m4: f64,
    c2: C64,
}

fn moments(y: &[C64]) -> Moments {
    let q = y.len() as f64;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    let mut c2 = C64::default();
    for v in y {
        let p = v.norm_sqr();
        m2 += p;
        m4 += p * p;
        c2 += v * v;
    }
    Moments {
        m2: m2 / q,
        m4: m4 / q,
        c2: c2 / q,
    }
}

/// Normalized fourth-order marginal cumulant
/// `(E|y|^4 - 2 E^2|y|^2 - |E y^2|^2) / E^2|y|^2`.
pub fn kurtosis(y: &[C64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::UndefinedContrast("empty signal".into()));
    }
    let mo = moments(y);
    if mo.m2 == 0.0 {
        return Err(Error::UndefinedContrast("zero-energy signal".into()));
    }
    Ok((mo.m4 - 2.0 * mo.m2 * mo.m2 - mo.c2.norm_sqr()) / (mo.m2 * mo.m2))
}

/// Wirtinger gradient of the kurtosis contrast with respect to `conj(u)`,
/// evaluated over the data block: `grad_i = (dK/dRe(u_i) + i dK/dIm(u_i))/2`.
pub fn kurtosis_gradient(z: &CMat, u: &CVec) -> Result<CVec> {
    let n = z.nrows();
    if u.len() != n {
        return Err(Error::InvalidArgument(format!(
            "extractor has {} entries for {} channels",
            u.len(),
            n
        )));
    }
    let y = project(z, u);
    let q = y.len() as f64;
    let mo = moments(&y);
    if mo.m2 == 0.0 {
        return Err(Error::UndefinedContrast("zero-energy output signal".into()));
    }

    let mut g2 = CVec::zeros(n);
    let mut g4 = CVec::zeros(n);
    let mut gc = CVec::zeros(n);
    for (col, yv) in y.iter().enumerate() {
        let yc = yv.conj();
        let p = yv.norm_sqr();
        for row in 0..n {
            let zv = z[(row, col)];
            g2[row] += zv * yc;
            g4[row] += zv * yc * p;
            gc[row] += zv * yv;
        }
    }
    g2 /= C64::new(q, 0.0);
    g4 = g4 * C64::new(2.0 / q, 0.0);
    gc = gc * C64::new(2.0 / q, 0.0);

    let num = mo.m4 - 2.0 * mo.m2 * mo.m2 - mo.c2.norm_sqr();
    let m2 = mo.m2;
    let mut grad = CVec::zeros(n);
    for i in 0..n {
        let dnum = g4[i] - g2[i] * C64::new(4.0 * m2, 0.0) - mo.c2.conj() * gc[i];
        grad[i] = (dnum - g2[i] * C64::new(2.0 * num / m2, 0.0)) / C64::new(m2 * m2, 0.0);
    }
    Ok(grad)
}

/// Real quartic `p(mu) = sum a_n mu^n`, coefficients ordered `a_0..a_4`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quartic {
    pub coeffs: [f64; 5],
}

/// Step-size polynomial plus the mu^5 coefficient that cancels analytically
/// (kept for diagnostics; it must be numerically negligible).
#[derive(Debug, Clone)]
pub struct StepPoly {
    pub quartic: Quartic,
    pub dropped_mu5: f64,
}

/// Builds the quartic whose real roots are the stationary points of
/// `mu -> K(y + mu*gy)` with `y = u^H z`, `gy = g^H z`.
///
/// The degree-4 contrast numerator `N(mu)` and the degree-2 output power
/// `q(mu)` are recovered by exact interpolation from direct moment
/// evaluations of `y + mu*gy`, then combined as `p = N' q - 2 N q'`; the
/// leading mu^5 terms cancel analytically and are dropped.
pub fn step_poly(z: &CMat, u: &CVec, g: &CVec) -> StepPoly {
    let y = project(z, u);
    let gy = project(z, g);
    line_step_poly(&y, &gy)
}

fn line_step_poly(y: &[C64], gy: &[C64]) -> StepPoly {
    let zero = StepPoly {
        quartic: Quartic { coeffs: [0.0; 5] },
        dropped_mu5: 0.0,
    };
    let m2y = moments(y).m2;
    let m2g = moments(gy).m2;
    if m2g == 0.0 {
        return zero;
    }
    // Balance the two line endpoints so the interpolation nodes are
    // well-conditioned regardless of the gradient magnitude.
    let scale = if m2y > 0.0 { (m2y / m2g).sqrt() } else { 1.0 };

    let shifted_moments = |t: f64| -> Moments {
        let mu = t * scale;
        let w: Vec<C64> = y
            .iter()
            .zip(gy)
            .map(|(yv, gv)| yv + gv * mu)
            .collect();
        moments(&w)
    };

    let numerator_nodes = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let numerator_vals: Vec<f64> = numerator_nodes
        .iter()
        .map(|&t| {
            let mo = shifted_moments(t);
            mo.m4 - 2.0 * mo.m2 * mo.m2 - mo.c2.norm_sqr()
        })
        .collect();
    let n_t = fit_polynomial(&numerator_nodes, &numerator_vals);

    let power_nodes = [-1.0, 0.0, 1.0];
    let power_vals: Vec<f64> = power_nodes.iter().map(|&t| shifted_moments(t).m2).collect();
    let q_t = fit_polynomial(&power_nodes, &power_vals);

    // p = N' q - 2 N q', degree 5 with an analytically zero leading term
    let n_deriv = differentiate(&n_t);
    let q_deriv = differentiate(&q_t);
    let mut p_t = convolve(&n_deriv, &q_t);
    let nq = convolve(&n_t, &q_deriv);
    if p_t.len() < nq.len() {
        p_t.resize(nq.len(), 0.0);
    }
    for (pc, nc) in p_t.iter_mut().zip(&nq) {
        *pc -= 2.0 * nc;
    }
    p_t.resize(6, 0.0);

    // Convert from the normalized parameter t back to mu = t * scale.
    // The fit represents n_t(t) = N(st), so d/dt brings in one factor of s:
    // p_t(t) = s * p(s t), hence p's mu^j coefficient is p_t[j] / s^(j+1).
    let mut coeffs = [0.0; 5];
    for (j, c) in coeffs.iter_mut().enumerate() {
        *c = p_t[j] / scale.powi(j as i32 + 1);
    }
    StepPoly {
        quartic: Quartic { coeffs },
        dropped_mu5: p_t[5] / scale.powi(6),
    }
}

/// Solves a k x k Vandermonde system for polynomial coefficients.
fn fit_polynomial(nodes: &[f64], values: &[f64]) -> Vec<f64> {
    let k = nodes.len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (row, &t) in nodes.iter().enumerate() {
        let mut pw = 1.0;
        for col in 0..k {
            a[row][col] = pw;
            pw *= t;
        }
        a[row][k] = values[row];
    }
    // Gaussian elimination with partial pivoting
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..k {
            let factor = a[row][col] / diag;
            for c in col..=k {
                a[row][c] -= factor * a[col][c];
            }
        }
    }
    let mut coeffs = vec![0.0; k];
    for row in (0..k).rev() {
        let mut acc = a[row][k];
        for col in row + 1..k {
            acc -= a[row][col] * coeffs[col];
        }
        coeffs[row] = acc / a[row][row];
    }
    coeffs
}

fn differentiate(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, &c)| j as f64 * c)
        .collect()
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &av) in a.iter().enumerate() {
        for (j, &bv) in b.iter().enumerate() {
            out[i + j] += av * bv;
        }
    }
    out
}

fn eval_poly(coeffs: &[f64], x: C64) -> C64 {
    let mut acc = C64::default();
    for &c in coeffs.iter().rev() {
        acc = acc * x + C64::new(c, 0.0);
    }
    acc
}

fn eval_poly_deriv(coeffs: &[f64], x: C64) -> C64 {
    let mut acc = C64::default();
    for (j, &c) in coeffs.iter().enumerate().skip(1).rev() {
        acc = acc * x + C64::new(j as f64 * c, 0.0);
    }
    acc
}

fn newton_polish(coeffs: &[f64], root: C64) -> C64 {
    let mut best = root;
    let mut best_res = eval_poly(coeffs, best).norm();
    let mut r = root;
    for _ in 0..6 {
        let dp = eval_poly_deriv(coeffs, r);
        if dp.norm() < 1e-300 {
            break;
        }
        let step = eval_poly(coeffs, r) / dp;
        r -= step;
        let res = eval_poly(coeffs, r).norm();
        if res < best_res {
            best_res = res;
            best = r;
        }
        if step.norm() <= 1e-16 * (1.0 + r.norm()) {
            break;
        }
    }
    best
}

fn quadratic_roots(a: C64, b: C64, c: C64) -> Vec<C64> {
    // a x^2 + b x + c
    let disc = b * b - a * c * 4.0;
    let sd = disc.sqrt();
    let two_a = a * 2.0;
    vec![(-b + sd) / two_a, (-b - sd) / two_a]
}

fn cubic_roots(c0: f64, c1: f64, c2: f64, c3: f64) -> Vec<C64> {
    // monic shift x = t - b2/3
    let b2 = c2 / c3;
    let b1 = c1 / c3;
    let b0 = c0 / c3;
    let p = b1 - b2 * b2 / 3.0;
    let q = 2.0 * b2.powi(3) / 27.0 - b2 * b1 / 3.0 + b0;
    let shift = -b2 / 3.0;

    let disc = C64::new((q / 2.0) * (q / 2.0) + (p / 3.0).powi(3), 0.0);
    let sd = disc.sqrt();
    let cand1 = C64::new(-q / 2.0, 0.0) + sd;
    let cand2 = C64::new(-q / 2.0, 0.0) - sd;
    let w3 = if cand1.norm() >= cand2.norm() { cand1 } else { cand2 };
    if w3.norm() == 0.0 {
        // p = q = 0: triple root at the shift point
        return vec![C64::new(shift, 0.0); 3];
    }
    let w = w3.powf(1.0 / 3.0);
    let omega = C64::new(-0.5, 3f64.sqrt() / 2.0);
    let mut roots = Vec::with_capacity(3);
    let mut wk = w;
    for _ in 0..3 {
        let t = wk - C64::new(p / 3.0, 0.0) / wk;
        roots.push(t + C64::new(shift, 0.0));
        wk *= omega;
    }
    roots
}

fn ferrari_roots(c0: f64, c1: f64, c2: f64, c3: f64, c4: f64) -> Vec<C64> {
    // monic depressed quartic t^4 + p t^2 + q t + r via mu = t - b/4
    let b = c3 / c4;
    let cc = c2 / c4;
    let d = c1 / c4;
    let e = c0 / c4;
    let p = cc - 3.0 * b * b / 8.0;
    let q = d - b * cc / 2.0 + b.powi(3) / 8.0;
    let r = e - b * d / 4.0 + b * b * cc / 16.0 - 3.0 * b.powi(4) / 256.0;
    let shift = C64::new(-b / 4.0, 0.0);

    if q.abs() <= 1e-14 * (1.0 + p.abs() + r.abs()) {
        // biquadratic: solve lambda^2 + p lambda + r, then t = +-sqrt(lambda)
        let lambdas = quadratic_roots(C64::new(1.0, 0.0), C64::new(p, 0.0), C64::new(r, 0.0));
        let mut roots = Vec::with_capacity(4);
        for l in lambdas {
            let s = l.sqrt();
            roots.push(s + shift);
            roots.push(-s + shift);
        }
        return roots;
    }

    // resolvent cubic 8 m^3 + 8 p m^2 + (2 p^2 - 8 r) m - q^2 = 0
    let resolvent = cubic_roots(-q * q, 2.0 * p * p - 8.0 * r, 8.0 * p, 8.0);
    let m = resolvent
        .into_iter()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap();
    let s = (m * 2.0).sqrt();
    let term = C64::new(p / 2.0, 0.0) + m;
    let qc = C64::new(q, 0.0);
    let one = C64::new(1.0, 0.0);
    let mut roots = quadratic_roots(one, s, term - qc / (s * 2.0));
    roots.extend(quadratic_roots(one, -s, term + qc / (s * 2.0)));
    roots.iter().map(|t| t + shift).collect()
}

fn companion_roots(coeffs: &[f64]) -> Vec<C64> {
    let deg = coeffs.len() - 1;
    let lead = coeffs[deg];
    let mut m = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        m[(i, i - 1)] = 1.0;
    }
    for (i, &c) in coeffs.iter().take(deg).enumerate() {
        m[(i, deg - 1)] = -c / lead;
    }
    m.complex_eigenvalues().iter().cloned().collect()
}

fn quartic_residual_ok(coeffs: &[f64; 5], max_abs: f64, root: C64) -> bool {
    let res = eval_poly(coeffs, root).norm();
    res <= 1e-8 * max_abs * root.norm().max(1.0).powi(4)
}

/// Returns all complex roots of the quartic (fewer when the leading
/// coefficients vanish). Every returned root `r` satisfies
/// `|p(r)| <= 1e-8 * max|a_n| * max(1, |r|)^4`; an eigenvalue fallback
/// covers coefficient sets where the closed forms lose accuracy.
pub fn solve_quartic(p: &Quartic) -> Result<Vec<C64>> {
    let max_abs = p.coeffs.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
    if max_abs == 0.0 {
        return Err(Error::DegeneratePolynomial);
    }
    let mut c = [0.0; 5];
    for (dst, src) in c.iter_mut().zip(&p.coeffs) {
        *dst = src / max_abs;
    }
    let degree = (0..5).rev().find(|&j| c[j].abs() > 1e-12).unwrap_or(0);

    let closed_form = match degree {
        0 => Vec::new(),
        1 => vec![C64::new(-c[0] / c[1], 0.0)],
        2 => quadratic_roots(C64::new(c[2], 0.0), C64::new(c[1], 0.0), C64::new(c[0], 0.0)),
        3 => cubic_roots(c[0], c[1], c[2], c[3]),
        _ => ferrari_roots(c[0], c[1], c[2], c[3], c[4]),
    };

    let polish_all = |roots: Vec<C64>| -> Vec<C64> {
        roots.into_iter().map(|r| newton_polish(&c, r)).collect()
    };
    let roots = polish_all(closed_form);
    if roots.iter().all(|&r| quartic_residual_ok(&c, 1.0, r)) {
        return Ok(roots);
    }

    // closed forms lost accuracy; fall back to companion-matrix eigenvalues
    let fallback = polish_all(companion_roots(&c[..=degree.max(1)]));
    let worst = |rs: &[C64]| {
        rs.iter()
            .map(|&r| eval_poly(&c, r).norm() / r.norm().max(1.0).powi(4))
            .fold(0.0, f64::max)
    };
    if fallback.len() == roots.len() && worst(&fallback) < worst(&roots) {
        Ok(fallback)
    } else {
        Ok(roots)
    }
}

/// Picks the step size among the quartic roots that maximizes the absolute
/// contrast along the search line. Real roots are the candidates; real
/// parts of complex roots are used only when no real root exists.
pub fn select_step(z: &CMat, u: &CVec, g: &CVec, roots: &[C64]) -> Result<f64> {
    if roots.is_empty() {
        return Err(Error::NoStep);
    }
    let real: Vec<f64> = roots
        .iter()
        .filter(|r| r.im.abs() <= 1e-9 * (1.0 + r.re.abs()))
        .map(|r| r.re)
        .collect();
    let mut candidates = if real.is_empty() {
        roots.iter().map(|r| r.re).collect()
    } else {
        real
    };
    candidates.dedup_by(|a, b| a == b);

    let y = project(z, u);
    let gy = project(z, g);
    let mut best: Option<(f64, f64)> = None;
    for &mu in &candidates {
        let shifted: Vec<C64> = y.iter().zip(&gy).map(|(yv, gv)| yv + gv * mu).collect();
        if let Ok(k) = kurtosis(&shifted) {
            let score = k.abs();
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, mu));
            }
        }
    }
    best.map(|(_, mu)| mu).ok_or(Error::NoStep)
}

#[derive(Debug, Clone)]
pub struct ExtractOpts {
    pub max_iter: usize,
    pub conv_tol: f64,
}

impl Default for ExtractOpts {
    fn default() -> Self {
        Self {
            max_iter: 100,
            conv_tol: 1e-6,
        }
    }
}

/// Outcome of one deflation run.
#[derive(Debug, Clone)]
pub struct ExtractionState {
    pub iterations: usize,
    pub mu_opt: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub u: CVec,
    pub y: Vec<C64>,
    pub state: ExtractionState,
}

fn gram_schmidt(u: &CVec, priors: &[CVec]) -> CVec {
    let mut v = u.clone();
    for p in priors {
        let coeff = p.dotc(&v); // <p, v> = p^H v
        v -= p * coeff;
    }
    v
}

/// Iterates the optimal-step contrast update until the old and new
/// extractors align (`|<u_new, u_old>| >= 1 - conv_tol`) or the iteration
/// budget runs out. Each iterate is re-orthogonalized against previously
/// extracted directions and renormalized. A stalled line search leaves the
/// last iterate in place with `converged = false`.
pub fn extract_component(
    z: &CMat,
    u0: &CVec,
    priors: &[CVec],
    opts: &ExtractOpts,
) -> Result<Extraction> {
    if u0.norm() == 0.0 {
        return Err(Error::InvalidArgument("initial extractor is zero".into()));
    }
    let n = z.nrows();
    let mut u = gram_schmidt(u0, priors);
    if u.norm() <= 1e-12 {
        u = complement_vector(priors, n)
            .ok_or_else(|| Error::InvalidArgument("no direction left outside prior span".into()))?;
    }
    u /= C64::new(u.norm(), 0.0);

    let mut state = ExtractionState {
        iterations: 0,
        mu_opt: 0.0,
        converged: false,
    };

    for iter in 0..opts.max_iter {
        state.iterations = iter + 1;
        let Ok(g) = kurtosis_gradient(z, &u) else {
            break; // extractor fell outside the remaining signal span
        };
        let sp = step_poly(z, &u, &g);
        let Ok(roots) = solve_quartic(&sp.quartic) else {
            break;
        };
        let Ok(mu) = select_step(z, &u, &g, &roots) else {
            break;
        };
        state.mu_opt = mu;

        // Eq-(34)-style update; the line search over signed real roots
        // absorbs the gradient sign convention.
        let mut unew = &u + &g * C64::new(mu, 0.0);
        unew = gram_schmidt(&unew, priors);
        let norm = unew.norm();
        if norm <= 1e-12 {
            break;
        }
        unew /= C64::new(norm, 0.0);
        let alignment = unew.dotc(&u).norm();
        u = unew;
        if alignment >= 1.0 - opts.conv_tol {
            state.converged = true;
            break;
        }
    }

    let y = project(z, &u);
    Ok(Extraction { u, y, state })
}

/// First canonical basis direction with a nonzero residual outside the
/// prior span.
fn complement_vector(priors: &[CVec], n: usize) -> Option<CVec> {
    let mut best: Option<(f64, CVec)> = None;
    for k in 0..n {
        let mut e = CVec::zeros(n);
        e[k] = C64::new(1.0, 0.0);
        let residual = gram_schmidt(&e, priors);
        let norm = residual.norm();
        if norm > 1e-8 && best.as_ref().is_none_or(|(b, _)| norm > *b) {
            best = Some((norm, residual / C64::new(norm, 0.0)));
        }
    }
    best.map(|(_, v)| v)
}

/// Removes the least-squares contribution of an extracted signal from the
/// data block: `h = z y^H / (y y^H)`, result `z - h y`.
pub fn deflate_subtract(z: &CMat, y: &[C64]) -> Result<CMat> {
    let (n, q) = (z.nrows(), z.ncols());
    if y.len() != q {
        return Err(Error::InvalidArgument(format!(
            "signal has {} samples for {} data columns",
            y.len(),
            q
        )));
    }
    let energy: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    if energy == 0.0 {
        return Err(Error::InvalidArgument("zero-energy signal".into()));
    }
    let mut h = CVec::zeros(n);
    for (col, yv) in y.iter().enumerate() {
        let yc = yv.conj();
        for row in 0..n {
            h[row] += z[(row, col)] * yc;
        }
    }
    h /= C64::new(energy, 0.0);
    let mut out = z.clone();
    for (col, yv) in y.iter().enumerate() {
        for row in 0..n {
            out[(row, col)] -= h[row] * yv;
        }
    }
    Ok(out)
}

/// Extractor initialization for [`demix_bin`].
#[derive(Debug, Clone)]
pub enum InitStrategy {
    /// Component `n` starts at canonical basis vector `e_n`.
    CanonicalBasis,
    /// Seeded random unit vectors.
    SeededRandom(u64),
}

#[derive(Debug, Clone)]
pub struct DemixOpts {
    pub extract: ExtractOpts,
    pub init: InitStrategy,
}

impl Default for DemixOpts {
    fn default() -> Self {
        Self {
            extract: ExtractOpts::default(),
            init: InitStrategy::CanonicalBasis,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BinDemix {
    /// Unitary extractor matrix; component `n` is column `n`.
    pub u: CMat,
    pub states: Vec<ExtractionState>,
}

/// Extracts all `N` components of one whitened bin, combining Gram-Schmidt
/// orthogonalization of each iterate with least-squares deflation of the
/// data between components. Stalled extractions are flagged in the returned
/// states and their columns completed from the orthogonal complement.
pub fn demix_bin(z: &CMat, opts: &DemixOpts) -> Result<BinDemix> {
    let n = z.nrows();
    if n == 0 || z.ncols() < n {
        return Err(Error::InvalidArgument(format!(
            "demixing needs at least as many frames as channels, got {}x{}",
            n,
            z.ncols()
        )));
    }

    let mut rng = match opts.init {
        InitStrategy::SeededRandom(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        InitStrategy::CanonicalBasis => None,
    };
    let mut current = z.clone();
    let mut columns: Vec<CVec> = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);

    for comp in 0..n {
        let u0 = match &mut rng {
            Some(rng) => {
                let v = CVec::from_fn(n, |_, _| {
                    C64::new(
                        rng.sample(rand_distr::StandardNormal),
                        rng.sample(rand_distr::StandardNormal),
                    )
                });
                v.clone() / C64::new(v.norm().max(1e-30), 0.0)
            }
            None => {
                let mut e = CVec::zeros(n);
                e[comp] = C64::new(1.0, 0.0);
                e
            }
        };
        let extraction = extract_component(&current, &u0, &columns, &opts.extract)?;
        states.push(extraction.state);
        if comp + 1 < n {
            let energy: f64 = extraction.y.iter().map(|v| v.norm_sqr()).sum();
            if energy > 0.0 {
                current = deflate_subtract(&current, &extraction.y)?;
            }
        }
        columns.push(extraction.u);
    }

    Ok(BinDemix {
        u: orthonormal_matrix(columns, n),
        states,
    })
}

/// Modified Gram-Schmidt over the collected columns; degenerate columns are
/// replaced from the orthogonal complement so the result is always unitary.
fn orthonormal_matrix(columns: Vec<CVec>, n: usize) -> CMat {
    let mut kept: Vec<CVec> = Vec::with_capacity(n);
    for col in columns {
        let v = gram_schmidt(&col, &kept);
        let norm = v.norm();
        if norm > 1e-8 {
            kept.push(v / C64::new(norm, 0.0));
        } else if let Some(fresh) = complement_vector(&kept, n) {
            kept.push(fresh);
        }
    }
    while kept.len() < n {
        match complement_vector(&kept, n) {
            Some(fresh) => kept.push(fresh),
            None => break,
        }
    }
    let mut u = CMat::zeros(n, n);
    for (idx, col) in kept.iter().enumerate() {
        u.set_column(idx, col);
    }
    u
}
