//! Per-bin second-order preprocessing: regularized covariance,
//! eigendecomposition and whitening.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::{C64, CMat};

/// Observations of one frequency bin across frames.
#[derive(Debug, Clone)]
pub struct BinData {
    /// `N x Q` complex observations.
    pub x: CMat,
    pub bin_index: usize,
}

impl BinData {
    pub fn new(x: CMat, bin_index: usize) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() < x.nrows() {
            return Err(Error::InvalidArgument(format!(
                "bin {bin_index}: need at least as many frames as channels, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(Self { x, bin_index })
    }
}

/// Whitening factors of one bin: eigenvectors `V`, eigenvalues, the
/// regularization constant actually applied and the whitened data
/// `Z = Lambda^(-1/2) V^H X`.
#[derive(Debug, Clone)]
pub struct WhiteningBundle {
    pub v: CMat,
    pub lambda: Vec<f64>,
    pub c: f64,
    pub z: CMat,
    pub whitener: CMat,
}

/// Sample covariance `R = X X^H / Q`, forced Hermitian.
pub fn covariance(bin: &BinData) -> CMat {
    let q = bin.x.ncols() as f64;
    let r = &bin.x * bin.x.adjoint() / C64::new(q, 0.0);
    hermitize(&r)
}

fn hermitize(r: &CMat) -> CMat {
    (r + r.adjoint()) * C64::new(0.5, 0.0)
}

/// Tikhonov shift `R + c I` with `c = m * trace(R)`.
pub fn regularize(r: &CMat, m: f64) -> Result<(CMat, f64)> {
    if m < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "regularization constant must be non-negative, got {m}"
        )));
    }
    let trace: f64 = (0..r.nrows()).map(|i| r[(i, i)].re).sum();
    let c = m * trace;
    let mut reg = r.clone();
    for i in 0..r.nrows() {
        reg[(i, i)] += C64::new(c, 0.0);
    }
    Ok((reg, c))
}

/// Whitens one bin: eigendecomposes the regularized covariance (eigenvalues
/// sorted descending, eigenvector phases fixed so the largest-magnitude
/// entry is real positive) and applies `Lambda^(-1/2) V^H`.
pub fn whiten_bin(bin: &BinData, m: f64) -> Result<WhiteningBundle> {
    let (reg, c) = regularize(&covariance(bin), m)?;
    let n = reg.nrows();
    let eig = SymmetricEigen::new(reg);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let max_lambda = lambda[0].max(0.0);
    if lambda.iter().any(|&l| l <= 1e-12 * max_lambda || l <= 0.0) {
        return Err(Error::NumericalRank(format!(
            "bin {}: covariance numerically singular (lambda_min = {:.3e}); increase the regularization constant",
            bin.bin_index,
            lambda[n - 1]
        )));
    }

    let mut v = CMat::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut vec = eig.eigenvectors.column(src).into_owned();
        // fix the phase so the largest-magnitude entry is real positive
        let (idx, _) = vec
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.norm_sqr().total_cmp(&b.norm_sqr()))
            .unwrap();
        let pivot = vec[idx];
        if pivot.norm() > 0.0 {
            let phase = pivot / C64::new(pivot.norm(), 0.0);
            vec *= phase.conj();
        }
        v.set_column(col, &vec);
    }

    let mut whitener = v.adjoint();
    for (row, &l) in lambda.iter().enumerate() {
        let s = C64::new(1.0 / l.sqrt(), 0.0);
        for col in 0..n {
            whitener[(row, col)] *= s;
        }
    }
    let z = &whitener * &bin.x;

    Ok(WhiteningBundle {
        v,
        lambda,
        c,
        z,
        whitener,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_complex_matrix(seed: u64, n: usize, q: usize) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / 2f64.sqrt();
        CMat::from_fn(n, q, |_, _| {
            let re: f64 = rng.sample(rand_distr::StandardNormal);
            let im: f64 = rng.sample(rand_distr::StandardNormal);
            C64::new(re * scale, im * scale)
        })
    }

    fn frobenius(a: &CMat) -> f64 {
        a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    fn identity(n: usize) -> CMat {
        CMat::identity(n, n)
    }

    #[test]
    fn covariance_of_white_data_approaches_identity() {
        let q = 20_000;
        let bin = BinData::new(random_complex_matrix(1, 3, q), 0).unwrap();
        let r = covariance(&bin);
        let err = frobenius(&(&r - identity(3)));
        assert!(err <= 5.0 / (q as f64).sqrt(), "err = {err}");
    }

    #[test]
    fn covariance_of_repeated_column_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = crate::CVec::from_fn(3, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let x = CMat::from_fn(3, 10, |i, _| v[i]);
        let r = covariance(&BinData::new(x, 0).unwrap());
        let expect = &v * v.adjoint();
        assert!(frobenius(&(&r - expect)) <= 1e-12);
    }

    #[test]
    fn covariance_of_zero_data_is_zero() {
        let r = covariance(&BinData::new(CMat::zeros(2, 8), 0).unwrap());
        assert!(frobenius(&r) == 0.0);
    }

    #[test]
    fn regularize_identity_case() {
        let (reg, c) = regularize(&identity(2), 0.0).unwrap();
        assert_eq!(c, 0.0);
        assert!(frobenius(&(&reg - identity(2))) == 0.0);

        let (reg, c) = regularize(&identity(2), 0.1).unwrap();
        assert!((c - 0.2).abs() < 1e-15);
        assert!(frobenius(&(&reg - identity(2) * C64::new(1.2, 0.0))) <= 1e-15);
        assert!(regularize(&identity(2), -0.1).is_err());
    }

    #[test]
    fn regularization_shrinks_condition_number() {
        let bin = BinData::new(random_complex_matrix(3, 3, 40), 0).unwrap();
        let r = covariance(&bin);
        let cond = |m: &CMat| {
            let e = SymmetricEigen::new(m.clone());
            let max = e.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
            let min = e.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
            max / min
        };
        let (reg, _) = regularize(&r, 0.05).unwrap();
        assert!(cond(&reg) <= cond(&r) + 1e-9);
    }

    #[test]
    fn whitened_data_has_identity_covariance() {
        // X = A W with known full-rank A and white W
        let w = random_complex_matrix(4, 3, 5000);
        let a = CMat::from_row_slice(
            3,
            3,
            &[
                C64::new(1.0, 0.2),
                C64::new(0.3, -0.4),
                C64::new(0.1, 0.0),
                C64::new(-0.2, 0.5),
                C64::new(0.9, 0.0),
                C64::new(0.4, 0.1),
                C64::new(0.05, -0.3),
                C64::new(0.2, 0.2),
                C64::new(1.1, -0.1),
            ],
        );
        let x = &a * &w;
        let bundle = whiten_bin(&BinData::new(x, 3).unwrap(), 0.0).unwrap();
        let q = bundle.z.ncols() as f64;
        let rz = &bundle.z * bundle.z.adjoint() / C64::new(q, 0.0);
        assert!(frobenius(&(&rz - identity(3))) <= 1e-6);
        // V unitary
        assert!(frobenius(&(&bundle.v * bundle.v.adjoint() - identity(3))) <= 1e-10);
        // whitener equals Lambda^(-1/2) V^H
        let direct = &bundle.whitener * &bundle.v;
        for i in 0..3 {
            assert!((direct[(i, i)].re - 1.0 / bundle.lambda[i].sqrt()).abs() <= 1e-10);
        }
    }

    #[test]
    fn already_white_data_stays_white() {
        let q = 50_000;
        let x = random_complex_matrix(5, 2, q);
        let bundle = whiten_bin(&BinData::new(x, 0).unwrap(), 0.0).unwrap();
        let rz = &bundle.z * bundle.z.adjoint() / C64::new(q as f64, 0.0);
        assert!(frobenius(&(&rz - identity(2))) <= 1e-8);
    }

    #[test]
    fn rank_deficient_bin_needs_regularization() {
        let base = random_complex_matrix(6, 1, 64);
        // duplicate the single channel -> rank-1 covariance
        let x = CMat::from_fn(2, 64, |_, q| base[(0, q)]);
        let bin = BinData::new(x, 7).unwrap();
        match whiten_bin(&bin, 0.0) {
            Err(Error::NumericalRank(_)) => {}
            other => panic!("expected NumericalRank, got {other:?}"),
        }
        let bundle = whiten_bin(&bin, 0.01).unwrap();
        assert!(bundle.c > 0.0);
        assert!(bundle.lambda.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn regularization_is_monotone_in_m() {
        let bin = BinData::new(random_complex_matrix(8, 3, 50), 0).unwrap();
        let r = covariance(&bin);
        let eigs = |m: f64| {
            let (reg, _) = regularize(&r, m).unwrap();
            let mut v: Vec<f64> = SymmetricEigen::new(reg).eigenvalues.iter().cloned().collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let small = eigs(0.01);
        let large = eigs(0.1);
        for (s, l) in small.iter().zip(&large) {
            assert!(l >= s);
        }
    }

    #[test]
    fn whitening_is_deterministic() {
        let x = random_complex_matrix(9, 3, 100);
        let a = whiten_bin(&BinData::new(x.clone(), 0).unwrap(), 1e-3).unwrap();
        let b = whiten_bin(&BinData::new(x, 0).unwrap(), 1e-3).unwrap();
        assert_eq!(a.v, b.v);
        assert_eq!(a.z, b.z);
        // phase fix: largest entry of each eigenvector is real positive
        for col in 0..3 {
            let v = a.v.column(col);
            let (idx, _) = v
                .iter()
                .enumerate()
                .max_by(|(_, p), (_, q)| p.norm_sqr().total_cmp(&q.norm_sqr()))
                .unwrap();
            assert!(v[idx].im.abs() <= 1e-12);
            assert!(v[idx].re > 0.0);
        }
    }
}
