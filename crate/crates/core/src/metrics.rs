//! Separation quality metrics: least-squares decomposition of an estimate
//! onto filtered reference subspaces (SIR/SDR) and the Amari index for
//! matrix-level checks.

use nalgebra::{Cholesky, DMatrix, DVector};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::{C64, CMat};

const RIDGE: f64 = 1e-10;
const DB_CAP: f64 = 100.0;

/// Orthogonal split of an estimate into a target part (span of the matched
/// reference's delays), interference (remaining reference span) and
/// artifacts; three `K`-sample vectors summing exactly to the estimate.
#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
    pub filter_len: usize,
    pub matched_reference: usize,
}

/// Cross-correlations c_ij(tau) = sum_m r_i[m] r_j[m + tau] (computed via
/// FFT) from which the delayed-reference Gram blocks are assembled.
struct Correlations<'a> {
    references: &'a [Vec<f64>],
    /// c[i][j] holds lags -(L-1)..=(L-1) at offset L-1.
    ref_ref: Vec<Vec<Vec<f64>>>,
    /// ref-estimate correlations at lags 0..L.
    ref_est: Vec<Vec<f64>>,
    filter_len: usize,
}

fn correlations<'a>(references: &'a [Vec<f64>], estimate: &[f64], l: usize) -> Correlations<'a> {
    let k = estimate.len();
    let fft_len = (k + l).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_len);
    let ifft = planner.plan_fft_inverse(fft_len);

    let spectrum = |x: &[f64]| {
        let mut buf = vec![C64::default(); fft_len];
        for (b, &v) in buf.iter_mut().zip(x) {
            *b = C64::new(v, 0.0);
        }
        fft.process(&mut buf);
        buf
    };
    let ref_spectra: Vec<Vec<C64>> = references.iter().map(|r| spectrum(r)).collect();
    let est_spectrum = spectrum(estimate);

    // ifft(conj(F) * G)[t] = sum_m f[m] g[m + t] (circular; padding keeps
    // the used lags free of wraparound)
    let corr = |f: &[C64], g: &[C64]| -> Vec<f64> {
        let mut buf: Vec<C64> = f.iter().zip(g).map(|(a, b)| a.conj() * b).collect();
        ifft.process(&mut buf);
        buf.iter().map(|c| c.re / fft_len as f64).collect()
    };

    let n = references.len();
    let mut ref_ref = vec![vec![Vec::new(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let c = corr(&ref_spectra[i], &ref_spectra[j]);
            let mut lags = Vec::with_capacity(2 * l - 1);
            for tau in -(l as isize - 1)..l as isize {
                let idx = if tau >= 0 {
                    tau as usize
                } else {
                    fft_len - (-tau) as usize
                };
                lags.push(c[idx]);
            }
            ref_ref[i][j] = lags;
        }
    }
    let ref_est = ref_spectra
        .iter()
        .map(|rs| {
            let c = corr(rs, &est_spectrum);
            c[..l].to_vec()
        })
        .collect();

    Correlations {
        references,
        ref_ref,
        ref_est,
        filter_len: l,
    }
}

impl Correlations<'_> {
    /// Fills one `L x L` Gram block of truncated delayed references.
    ///
    /// A column delayed by `d` lives on the original `K` samples, so the
    /// full-overlap correlation c_ij(d1 - d2) over-counts min(d1, d2) tail
    /// products; the correction accumulates along each diagonal.
    fn fill_gram_block(&self, gram: &mut DMatrix<f64>, row0: usize, col0: usize, i: usize, j: usize) {
        let l = self.filter_len;
        let k = self.references[i].len();
        let ri = &self.references[i];
        let rj = &self.references[j];
        for s in -(l as isize - 1)..l as isize {
            let c = self.ref_ref[i][j][(s + l as isize - 1) as usize];
            let (mut d1, mut d2) = if s >= 0 { (s as usize, 0) } else { (0, (-s) as usize) };
            let mut tail = 0.0;
            while d1 < l && d2 < l {
                gram[(row0 + d1, col0 + d2)] = c - tail;
                tail += ri[k - 1 - d1] * rj[k - 1 - d2];
                d1 += 1;
                d2 += 1;
            }
        }
    }

    /// Solves for the projection coefficients of the estimate onto the
    /// delayed span of the given references.
    fn project(&self, refs: &[usize]) -> Result<Vec<f64>> {
        let l = self.filter_len;
        let dim = refs.len() * l;
        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for (bi, &i) in refs.iter().enumerate() {
            for d1 in 0..l {
                rhs[bi * l + d1] = self.ref_est[i][d1];
            }
            for (bj, &j) in refs.iter().enumerate() {
                self.fill_gram_block(&mut gram, bi * l, bj * l, i, j);
            }
        }
        let scale = gram.diagonal().iter().cloned().fold(1.0f64, f64::max);
        let mut ridge = RIDGE;
        for _ in 0..8 {
            let mut shifted = gram.clone();
            for d in 0..dim {
                shifted[(d, d)] += ridge;
            }
            if let Some(chol) = Cholesky::new(shifted) {
                return Ok(chol.solve(&rhs).iter().cloned().collect());
            }
            ridge = (ridge * 100.0).max(1e-12 * scale);
        }
        Err(Error::NumericalRank(
            "reference Gram matrix is not positive definite".into(),
        ))
    }
}

fn synthesize(references: &[Vec<f64>], refs: &[usize], coeffs: &[f64], l: usize, out_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_len];
    for (bi, &i) in refs.iter().enumerate() {
        let r = &references[i];
        for d in 0..l {
            let a = coeffs[bi * l + d];
            if a == 0.0 {
                continue;
            }
            for (m, &rv) in r.iter().take(out_len - d).enumerate() {
                out[m + d] += a * rv;
            }
        }
    }
    out
}

fn validate_inputs(estimate: &[f64], references: &[Vec<f64>], filter_len: usize) -> Result<()> {
    let k = estimate.len();
    if references.is_empty() {
        return Err(Error::InvalidArgument("no references given".into()));
    }
    if filter_len == 0 || filter_len > k / 4 {
        return Err(Error::InvalidArgument(format!(
            "filter_len must lie in [1, K/4] = [1, {}], got {filter_len}",
            k / 4
        )));
    }
    for (i, r) in references.iter().enumerate() {
        if r.len() != k {
            return Err(Error::InvalidArgument(format!(
                "reference {i} has {} samples, expected {k}",
                r.len()
            )));
        }
        if r.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument(format!("reference {i} is all zero")));
        }
    }
    Ok(())
}

/// Energy of the estimate captured by each single reference's delayed span;
/// the basis of estimate-to-reference matching.
pub fn projection_energies(
    estimate: &[f64],
    references: &[Vec<f64>],
    filter_len: usize,
) -> Result<Vec<f64>> {
    validate_inputs(estimate, references, filter_len)?;
    let corr = correlations(references, estimate, filter_len);
    (0..references.len())
        .map(|i| {
            let coeffs = corr.project(&[i])?;
            Ok(coeffs
                .iter()
                .zip(&corr.ref_est[i])
                .map(|(a, b)| a * b)
                .sum())
        })
        .collect()
}

/// Projects the estimate onto `filter_len`-tap filtered versions of the
/// references. The matched reference is the one whose delayed span captures
/// the most estimate energy.
pub fn bss_decompose(
    estimate: &[f64],
    references: &[Vec<f64>],
    filter_len: usize,
) -> Result<DecompositionResult> {
    validate_inputs(estimate, references, filter_len)?;
    let corr = correlations(references, estimate, filter_len);
    let mut matched = 0;
    let mut best_energy = f64::NEG_INFINITY;
    for i in 0..references.len() {
        let coeffs = corr.project(&[i])?;
        let energy: f64 = coeffs
            .iter()
            .zip(&corr.ref_est[i])
            .map(|(a, b)| a * b)
            .sum();
        if energy > best_energy {
            best_energy = energy;
            matched = i;
        }
    }
    decompose_matched(estimate, references, &corr, matched)
}

/// Same decomposition with the target reference fixed by the caller (used
/// to enforce a bijective assignment across several estimates).
pub fn bss_decompose_assigned(
    estimate: &[f64],
    references: &[Vec<f64>],
    filter_len: usize,
    target: usize,
) -> Result<DecompositionResult> {
    validate_inputs(estimate, references, filter_len)?;
    if target >= references.len() {
        return Err(Error::InvalidArgument(format!(
            "target reference {target} out of range"
        )));
    }
    let corr = correlations(references, estimate, filter_len);
    decompose_matched(estimate, references, &corr, target)
}

fn decompose_matched(
    estimate: &[f64],
    references: &[Vec<f64>],
    corr: &Correlations,
    matched: usize,
) -> Result<DecompositionResult> {
    let k = estimate.len();
    let l = corr.filter_len;
    let n = references.len();
    let all: Vec<usize> = (0..n).collect();
    let matched_coeffs = corr.project(&[matched])?;
    let all_coeffs = corr.project(&all)?;

    let s_target = synthesize(references, &[matched], &matched_coeffs, l, k);
    let p_all = synthesize(references, &all, &all_coeffs, l, k);

    let mut e_interf = vec![0.0; k];
    let mut e_artif = vec![0.0; k];
    for m in 0..k {
        e_interf[m] = p_all[m] - s_target[m];
        e_artif[m] = estimate[m] - p_all[m];
    }

    Ok(DecompositionResult {
        s_target,
        e_interf,
        e_artif,
        filter_len: l,
        matched_reference: matched,
    })
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        DB_CAP
    } else {
        (10.0 * (num / den).log10()).min(DB_CAP)
    }
}

/// Signal-to-interference ratio in dB, capped at +100.
pub fn sir_db(d: &DecompositionResult) -> Result<f64> {
    let target = energy(&d.s_target);
    if target <= 0.0 {
        return Err(Error::UndefinedMetric("target component has no energy".into()));
    }
    Ok(ratio_db(target, energy(&d.e_interf)))
}

/// Source-to-distortion ratio in dB, capped at +100.
pub fn sdr_db(d: &DecompositionResult) -> Result<f64> {
    let target = energy(&d.s_target);
    if target <= 0.0 {
        return Err(Error::UndefinedMetric("target component has no energy".into()));
    }
    let distortion: f64 = d
        .e_interf
        .iter()
        .zip(&d.e_artif)
        .map(|(i, a)| (i + a) * (i + a))
        .sum();
    Ok(ratio_db(target, distortion))
}

/// Normalized Amari error in [0, 1]; exactly zero iff the matrix is a
/// scaled permutation.
pub fn amari_index(p: &CMat) -> Result<f64> {
    let n = p.nrows();
    if n != p.ncols() || n < 2 {
        return Err(Error::InvalidArgument(
            "amari index needs a square matrix of size >= 2".into(),
        ));
    }
    let abs = |i: usize, j: usize| p[(i, j)].norm();
    for i in 0..n {
        if (0..n).all(|j| abs(i, j) == 0.0) {
            return Err(Error::InvalidArgument(format!("row {i} is all zero")));
        }
        if (0..n).all(|j| abs(j, i) == 0.0) {
            return Err(Error::InvalidArgument(format!("column {i} is all zero")));
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let row_max = (0..n).map(|j| abs(i, j)).fold(0.0, f64::max);
        let row_sum: f64 = (0..n).map(|j| abs(i, j)).sum();
        total += row_sum / row_max - 1.0;
        let col_max = (0..n).map(|j| abs(j, i)).fold(0.0, f64::max);
        let col_sum: f64 = (0..n).map(|j| abs(j, i)).sum();
        total += col_sum / col_max - 1.0;
    }
    Ok(total / (2.0 * n as f64 * (n as f64 - 1.0)))
}
