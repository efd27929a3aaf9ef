//! Scaling and permutation alignment across frequency bins: least-squares
//! mixing estimate, minimal-distortion rescaling, activity profiles, seeded
//! k-means centroids and per-bin permutation search.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tf::WindowSpec;
use crate::{C64, CMat, CVec, RMat};

/// Profile flavour used to characterize one separated source over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Envelope,
    LogPower,
    Dominance,
}

/// Agreement measure between a profile row and a centroid row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Distance,
    Correlation,
}

/// Whether centroids are clustered once or re-estimated against the
/// current permutations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Procedure {
    OneShot,
    Iterative,
}

/// The six permutation solvers: profile x measure x procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PermMethod {
    Method1,
    Method2,
    Method3,
    Method4,
    Method5,
    Method6,
}

impl PermMethod {
    pub fn all() -> [PermMethod; 6] {
        [
            PermMethod::Method1,
            PermMethod::Method2,
            PermMethod::Method3,
            PermMethod::Method4,
            PermMethod::Method5,
            PermMethod::Method6,
        ]
    }

    pub fn profile(self) -> ProfileKind {
        match self {
            PermMethod::Method1 | PermMethod::Method3 => ProfileKind::Envelope,
            PermMethod::Method2 | PermMethod::Method4 => ProfileKind::LogPower,
            PermMethod::Method5 | PermMethod::Method6 => ProfileKind::Dominance,
        }
    }

    pub fn measure(self) -> Measure {
        match self {
            PermMethod::Method1 | PermMethod::Method3 => Measure::Distance,
            _ => Measure::Correlation,
        }
    }

    pub fn procedure(self) -> Procedure {
        match self {
            PermMethod::Method1 | PermMethod::Method2 | PermMethod::Method5 => Procedure::Iterative,
            _ => Procedure::OneShot,
        }
    }
}

/// Per-bin source relabeling: output slot `n` takes separated row
/// `perm[n]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(pub Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (slot, &row) in self.0.iter().enumerate() {
            inv[row] = slot;
        }
        Self(inv)
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &v)| i == v)
    }
}

/// Per-source activity profiles of one bin (`N x T_f`).
#[derive(Debug, Clone)]
pub struct ProfileMatrix {
    pub values: RMat,
    pub kind: ProfileKind,
}

/// Frequency-independent reference profiles (`N x T_f`).
#[derive(Debug, Clone)]
pub struct CentroidMatrix {
    pub m: RMat,
}

/// Per-bin demixing state: rotation `U`, scaling diagonal `D` and
/// permutation, plus the analysis window the bins were produced with.
#[derive(Debug, Clone)]
pub struct DemixingSet {
    pub u: Vec<CMat>,
    pub d: Vec<CVec>,
    pub gamma: Vec<Permutation>,
    pub window: WindowSpec,
}

/// Least-squares mixing estimate `H = X Y^H (Y Y^H)^+`.
#[derive(Debug, Clone)]
pub struct LsEstimate {
    pub h: CMat,
    pub rank_deficient: bool,
}

pub fn ls_mixing(x_bin: &CMat, y_bin: &CMat) -> LsEstimate {
    let gram = y_bin * y_bin.adjoint();
    let (pinv, rank_deficient) = hermitian_pinv(&gram);
    LsEstimate {
        h: x_bin * y_bin.adjoint() * pinv,
        rank_deficient,
    }
}

/// Pseudo-inverse of a Hermitian PSD matrix, flagging eigenvalues below the
/// relative tolerance.
fn hermitian_pinv(g: &CMat) -> (CMat, bool) {
    let n = g.nrows();
    let herm = (g + g.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(herm);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = (n as f64) * f64::EPSILON * max.max(f64::MIN_POSITIVE);
    let mut rank_deficient = false;
    let mut pinv = CMat::zeros(n, n);
    for k in 0..n {
        let l = eig.eigenvalues[k];
        if l > tol {
            let v = eig.eigenvectors.column(k);
            let scale = C64::new(1.0 / l, 0.0);
            for i in 0..n {
                for j in 0..n {
                    pinv[(i, j)] += v[i] * v[j].conj() * scale;
                }
            }
        } else {
            rank_deficient = true;
        }
    }
    (pinv, rank_deficient)
}

/// Minimal-distortion rescaling: each separated row is scaled to its
/// average image across the sensors, `D = diag(A H_ls)` with every entry
/// of `A` equal to `1/M`.
pub fn minimal_distortion_rescale(x_bin: &CMat, y_bin: &CMat) -> (CVec, CMat) {
    let m = x_bin.nrows();
    let n = y_bin.nrows();
    let ls = ls_mixing(x_bin, y_bin);
    let mut d = CVec::zeros(n);
    for src in 0..n {
        let mut acc = C64::default();
        for sensor in 0..m {
            acc += ls.h[(sensor, src)];
        }
        d[src] = acc / C64::new(m as f64, 0.0);
    }
    let mut rescaled = y_bin.clone();
    for src in 0..n {
        for q in 0..y_bin.ncols() {
            rescaled[(src, q)] *= d[src];
        }
    }
    (d, rescaled)
}

/// Averages a per-frame series into `t_f` 50%-overlapping blocks spanning
/// the whole signal.
fn aggregate_frames(series: &[f64], t_f: usize) -> Vec<f64> {
    let q = series.len();
    if t_f >= q {
        return series.to_vec();
    }
    let block = q as f64 / t_f as f64;
    (0..t_f)
        .map(|t| {
            let center = (t as f64 + 0.5) * block;
            let lo = ((center - block).floor().max(0.0)) as usize;
            let hi = (((center + block).ceil()) as usize).min(q);
            let span = &series[lo..hi.max(lo + 1)];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect()
}

/// Builds per-bin `N x T_f` profiles of the rescaled separated spectra.
pub fn build_profiles(y_bins: &[CMat], kind: ProfileKind, t_f: usize) -> Vec<ProfileMatrix> {
    const LOG_EPS: f64 = 1e-12;
    y_bins
        .iter()
        .map(|y| {
            let n = y.nrows();
            let q = y.ncols();
            let mut rows: Vec<Vec<f64>> = match kind {
                ProfileKind::Envelope => (0..n)
                    .map(|i| (0..q).map(|t| y[(i, t)].norm()).collect())
                    .collect(),
                ProfileKind::LogPower => (0..n)
                    .map(|i| {
                        (0..q)
                            .map(|t| (y[(i, t)].norm_sqr() + LOG_EPS).ln())
                            .collect()
                    })
                    .collect(),
                ProfileKind::Dominance => {
                    let mut rows = vec![vec![0.0; q]; n];
                    for t in 0..q {
                        let total: f64 = (0..n).map(|i| y[(i, t)].norm_sqr()).sum();
                        for (i, row) in rows.iter_mut().enumerate() {
                            row[t] = if total > 0.0 {
                                y[(i, t)].norm_sqr() / total
                            } else {
                                1.0 / n as f64
                            };
                        }
                    }
                    rows
                }
            };
            rows = rows
                .into_iter()
                .map(|r| aggregate_frames(&r, t_f))
                .collect();
            if kind == ProfileKind::LogPower {
                // centered log-power rows
                for row in &mut rows {
                    let mean = row.iter().sum::<f64>() / row.len() as f64;
                    for v in row.iter_mut() {
                        *v -= mean;
                    }
                }
            }
            let t_eff = rows[0].len();
            ProfileMatrix {
                values: RMat::from_fn(n, t_eff, |i, j| rows[i][j]),
                kind,
            }
        })
        .collect()
}

/// Seeded k-means (k-means++ init, Euclidean distance) over the stacked
/// `F*N x T_f` profile matrix; empty clusters are reseeded from the point
/// farthest from its centroid.
pub fn cluster_centroids(g: &RMat, n: usize, seed: u64) -> Result<CentroidMatrix> {
    let rows = g.nrows();
    let dims = g.ncols();
    if rows < n || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "k-means needs at least {n} rows, got {rows}"
        )));
    }
    let point = |r: usize| g.row(r);
    let dist2 = |r: usize, c: &[f64]| -> f64 {
        point(r)
            .iter()
            .zip(c)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(n);
    centroids.push(point(rng.random_range(0..rows)).iter().cloned().collect());
    while centroids.len() < n {
        let d2: Vec<f64> = (0..rows)
            .map(|r| {
                centroids
                    .iter()
                    .map(|c| dist2(r, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random_range(0.0..total);
            let mut chosen = rows - 1;
            for (r, &w) in d2.iter().enumerate() {
                if t < w {
                    chosen = r;
                    break;
                }
                t -= w;
            }
            chosen
        } else {
            rng.random_range(0..rows)
        };
        centroids.push(point(pick).iter().cloned().collect());
    }

    let mut assignment = vec![0usize; rows];
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..300 {
        let mut inertia = 0.0;
        for r in 0..rows {
            let (best, best_d) = centroids
                .iter()
                .enumerate()
                .map(|(k, c)| (k, dist2(r, c)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assignment[r] = best;
            inertia += best_d;
        }

        let mut counts = vec![0usize; n];
        let mut sums = vec![vec![0.0; dims]; n];
        for r in 0..rows {
            counts[assignment[r]] += 1;
            for (s, v) in sums[assignment[r]].iter_mut().zip(point(r).iter()) {
                *s += v;
            }
        }
        for k in 0..n {
            if counts[k] == 0 {
                // reseed from the point farthest from its centroid
                let far = (0..rows)
                    .max_by(|&a, &b| {
                        dist2(a, &centroids[assignment[a]])
                            .total_cmp(&dist2(b, &centroids[assignment[b]]))
                    })
                    .unwrap();
                centroids[k] = point(far).iter().cloned().collect();
            } else {
                for (c, s) in centroids[k].iter_mut().zip(&sums[k]) {
                    *c = s / counts[k] as f64;
                }
            }
        }

        if prev_inertia.is_finite() {
            let change = (prev_inertia - inertia).abs() / prev_inertia.max(f64::MIN_POSITIVE);
            if change < 1e-6 {
                break;
            }
        }
        prev_inertia = inertia;
    }

    Ok(CentroidMatrix {
        m: RMat::from_fn(n, dims, |i, j| centroids[i][j]),
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

fn row_distance2(a: &RMat, i: usize, b: &RMat, j: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(b.row(j).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..n).collect();
    permute_recursive(&mut idx, 0, &mut f);
}

fn permute_recursive(idx: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == idx.len() {
        f(idx);
        return;
    }
    for i in k..idx.len() {
        idx.swap(k, i);
        permute_recursive(idx, k + 1, f);
        idx.swap(k, i);
    }
}

/// Exhaustively searches the `N!` row assignments of one bin, minimizing
/// the Frobenius distance or maximizing the summed Pearson correlation to
/// the centroids. Hard-capped at `N <= 8`.
pub fn permute_bin(
    profiles: &RMat,
    centroids: &CentroidMatrix,
    measure: Measure,
) -> Result<Permutation> {
    let n = profiles.nrows();
    if n > 8 {
        return Err(Error::SizeLimit(format!(
            "exhaustive permutation search is capped at 8 sources, got {n}"
        )));
    }
    if centroids.m.nrows() != n || centroids.m.ncols() != profiles.ncols() {
        return Err(Error::InvalidArgument(
            "profile and centroid shapes differ".into(),
        ));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_permutation(n, |perm| {
        // slot k takes profile row perm[k]
        let score: f64 = (0..n)
            .map(|slot| match measure {
                Measure::Distance => -row_distance2(&centroids.m, slot, profiles, perm[slot]),
                Measure::Correlation => pearson(
                    centroids.m.row(slot).transpose().as_slice(),
                    profiles.row(perm[slot]).transpose().as_slice(),
                ),
            })
            .sum();
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, perm.to_vec()));
        }
    });
    Ok(Permutation(best.unwrap().1))
}

/// Alignment options; `t_f = None` profiles every STFT frame.
#[derive(Debug, Clone)]
pub struct AlignOpts {
    pub method: PermMethod,
    pub t_f: Option<usize>,
    pub seed: u64,
    pub max_rounds: usize,
}

impl Default for AlignOpts {
    fn default() -> Self {
        Self {
            method: PermMethod::Method5,
            t_f: None,
            seed: 0,
            max_rounds: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Alignment {
    pub gamma: Vec<Permutation>,
    pub centroids: CentroidMatrix,
}

/// Resolves the per-bin permutations of the rescaled separated spectra.
///
/// The one-shot procedure clusters the stacked profiles once and then
/// permutes each bin against the fixed centroids; the iterative procedure
/// re-estimates the centroids from the currently aligned profiles and
/// repeats until the assignments are stable or the round budget runs out.
pub fn align_all(y_bins: &[CMat], opts: &AlignOpts) -> Result<Alignment> {
    if y_bins.is_empty() {
        return Err(Error::InvalidArgument("no bins to align".into()));
    }
    let n = y_bins[0].nrows();
    let q = y_bins[0].ncols();
    let t_f = opts.t_f.unwrap_or(q).min(q);
    let kind = opts.method.profile();
    let measure = opts.method.measure();

    let profiles = build_profiles(y_bins, kind, t_f);
    let t_eff = profiles[0].values.ncols();
    let bins = profiles.len();

    let mut stacked = RMat::zeros(bins * n, t_eff);
    for (w, p) in profiles.iter().enumerate() {
        for i in 0..n {
            for j in 0..t_eff {
                stacked[(w * n + i, j)] = p.values[(i, j)];
            }
        }
    }
    let mut centroids = cluster_centroids(&stacked, n, opts.seed)?;

    // canonical centroid order: best match against the bin-averaged
    // profiles, so a single-bin input yields the identity permutation
    let mean = RMat::from_fn(n, t_eff, |i, j| {
        profiles.iter().map(|p| p.values[(i, j)]).sum::<f64>() / bins as f64
    });
    let order = permute_bin(&centroids.m, &CentroidMatrix { m: mean }, measure)?;
    centroids = CentroidMatrix {
        m: RMat::from_fn(n, t_eff, |i, j| centroids.m[(order.0[i], j)]),
    };

    let solve_all = |cents: &CentroidMatrix| -> Result<Vec<Permutation>> {
        profiles
            .iter()
            .map(|p| permute_bin(&p.values, cents, measure))
            .collect()
    };
    let mut gamma = solve_all(&centroids)?;

    if opts.method.procedure() == Procedure::Iterative {
        for _ in 0..opts.max_rounds {
            let updated = RMat::from_fn(n, t_eff, |slot, j| {
                profiles
                    .iter()
                    .zip(&gamma)
                    .map(|(p, g)| p.values[(g.0[slot], j)])
                    .sum::<f64>()
                    / bins as f64
            });
            centroids = CentroidMatrix { m: updated };
            let next = solve_all(&centroids)?;
            let stable = next == gamma;
            gamma = next;
            if stable {
                break;
            }
        }
    }

    Ok(Alignment { gamma, centroids })
}

/// Applies the stored scaling and permutation: output row `n` of bin `w`
/// is the `gamma_w[n]`-th separated row scaled by its diagonal entry.
pub fn apply_alignment(y_bins: &[CMat], d: &[CVec], gamma: &[Permutation]) -> Vec<CMat> {
    y_bins
        .iter()
        .zip(d.iter().zip(gamma))
        .map(|(y, (dw, g))| {
            let n = y.nrows();
            let q = y.ncols();
            CMat::from_fn(n, q, |slot, t| {
                let row = g.0[slot];
                dw[row] * y[(row, t)]
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(seed: u64, n: usize, q: usize) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMat::from_fn(n, q, |_, _| {
            C64::new(
                rng.sample(rand_distr::StandardNormal),
                rng.sample(rand_distr::StandardNormal),
            )
        })
    }

    fn frobenius(a: &CMat) -> f64 {
        a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn ls_mixing_recovers_exact_model() {
        let y = random_cmat(1, 2, 200);
        let h = CMat::from_row_slice(
            2,
            2,
            &[
                C64::new(1.0, 0.5),
                C64::new(-0.2, 0.1),
                C64::new(0.3, -0.7),
                C64::new(0.9, 0.0),
            ],
        );
        let x = &h * &y;
        let ls = ls_mixing(&x, &y);
        assert!(!ls.rank_deficient);
        assert!(frobenius(&(&ls.h - &h)) <= 1e-10);

        // identity separation
        let ls = ls_mixing(&y, &y);
        assert!(frobenius(&(&ls.h - CMat::identity(2, 2))) <= 1e-10);
    }

    #[test]
    fn ls_mixing_minimizes_the_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random_cmat(3, 2, 64);
        let x = random_cmat(4, 2, 64);
        let ls = ls_mixing(&x, &y);
        let base = frobenius(&(&x - &ls.h * &y));
        for _ in 0..20 {
            let e = CMat::from_fn(2, 2, |_, _| {
                C64::new(
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                )
            });
            let perturbed = &ls.h + e * C64::new(1e-3, 0.0);
            let worse = frobenius(&(&x - perturbed * &y));
            assert!(worse >= base - 1e-12);
        }
    }

    #[test]
    fn rescaled_rows_average_the_sensor_images() {
        // perfect separation: Y = S, X = H S
        let s = random_cmat(5, 2, 128);
        let h = CMat::from_row_slice(
            2,
            2,
            &[
                C64::new(0.8, 0.0),
                C64::new(0.2, 0.3),
                C64::new(-0.4, 0.1),
                C64::new(1.2, -0.2),
            ],
        );
        let x = &h * &s;
        let (d, rescaled) = minimal_distortion_rescale(&x, &s);
        for src in 0..2 {
            let avg = (h[(0, src)] + h[(1, src)]) / C64::new(2.0, 0.0);
            assert!((d[src] - avg).norm() <= 1e-10);
            for q in 0..s.ncols() {
                let expect = avg * s[(src, q)];
                assert!((rescaled[(src, q)] - expect).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn rescaling_cancels_arbitrary_row_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..30 {
            let x = random_cmat(100 + trial, 2, 96);
            let y = random_cmat(200 + trial, 2, 96);
            let (_, base) = minimal_distortion_rescale(&x, &y);
            let mut scaled = y.clone();
            for src in 0..2 {
                let alpha = C64::new(
                    rng.random_range(0.1..3.0),
                    rng.random_range(-2.0..2.0),
                );
                for q in 0..96 {
                    scaled[(src, q)] *= alpha;
                }
            }
            let (_, rescaled) = minimal_distortion_rescale(&x, &scaled);
            let err = frobenius(&(&rescaled - &base)) / frobenius(&base);
            assert!(err <= 1e-9, "trial {trial}: {err}");
        }
    }

    #[test]
    fn single_channel_rescale_returns_the_observation() {
        let y = random_cmat(7, 1, 64);
        let h = C64::new(0.6, -0.8);
        let x = &y * h;
        let (_, rescaled) = minimal_distortion_rescale(&x, &y);
        assert!(frobenius(&(&rescaled - &x)) <= 1e-10);
    }

    #[test]
    fn dominance_profile_of_single_active_source() {
        let q = 32;
        let mut y = CMat::zeros(2, q);
        for t in 0..q {
            y[(0, t)] = C64::new(0.5, 0.3);
        }
        let profiles = build_profiles(&[y], ProfileKind::Dominance, q);
        for t in 0..q {
            assert_eq!(profiles[0].values[(0, t)], 1.0);
            assert_eq!(profiles[0].values[(1, t)], 0.0);
        }
    }

    #[test]
    fn envelope_of_silence_is_zero_and_log_power_centers() {
        let q = 16;
        let mut y = CMat::zeros(2, q);
        for t in 0..q {
            y[(1, t)] = C64::new(2.0, 0.0); // constant modulus 2
        }
        let env = build_profiles(&[y.clone()], ProfileKind::Envelope, q);
        assert!(env[0].values.row(0).iter().all(|&v| v == 0.0));
        let lp = build_profiles(&[y], ProfileKind::LogPower, q);
        // constant log(4) row centers to zero
        assert!(lp[0].values.row(1).iter().all(|&v| v.abs() <= 1e-12));
    }

    #[test]
    fn dominance_rows_sum_to_one_per_frame() {
        let y = random_cmat(9, 3, 40);
        let profiles = build_profiles(&[y], ProfileKind::Dominance, 40);
        for t in 0..40 {
            let total: f64 = (0..3).map(|i| profiles[0].values[(i, t)]).sum();
            assert!((total - 1.0).abs() <= 1e-9);
        }
        // all-zero frame falls back to uniform
        let z = CMat::zeros(4, 8);
        let profiles = build_profiles(&[z], ProfileKind::Dominance, 8);
        assert!((profiles[0].values[(0, 0)] - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn kmeans_recovers_separated_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = 6;
        let n = 3;
        let means: Vec<Vec<f64>> = (0..n)
            .map(|k| (0..dims).map(|j| (k * dims + j) as f64 * 10.0).collect())
            .collect();
        let mut rows = Vec::new();
        for _ in 0..40 {
            for mean in &means {
                rows.push(
                    mean.iter()
                        .map(|m| m + rng.random_range(-1e-7..1e-7))
                        .collect::<Vec<f64>>(),
                );
            }
        }
        let g = RMat::from_fn(rows.len(), dims, |i, j| rows[i][j]);
        let centroids = cluster_centroids(&g, n, 3).unwrap();
        for mean in &means {
            let hit = (0..n).any(|k| {
                centroids
                    .m
                    .row(k)
                    .iter()
                    .zip(mean)
                    .all(|(a, b)| (a - b).abs() <= 1e-6)
            });
            assert!(hit, "no centroid near {mean:?}");
        }
    }

    #[test]
    fn kmeans_single_cluster_is_the_mean() {
        let g = RMat::from_row_slice(4, 2, &[0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 2.0, 2.0]);
        let centroids = cluster_centroids(&g, 1, 0).unwrap();
        assert!((centroids.m[(0, 0)] - 1.0).abs() <= 1e-12);
        assert!((centroids.m[(0, 1)] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn kmeans_is_deterministic_per_seed() {
        let g = {
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            RMat::from_fn(30, 5, |_, _| rng.random_range(-1.0..1.0))
        };
        let a = cluster_centroids(&g, 3, 9).unwrap();
        let b = cluster_centroids(&g, 3, 9).unwrap();
        assert_eq!(a.m, b.m);
    }

    #[test]
    fn permute_bin_identity_and_swap() {
        let m = RMat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let cents = CentroidMatrix { m: m.clone() };
        for measure in [Measure::Distance, Measure::Correlation] {
            let perm = permute_bin(&m, &cents, measure).unwrap();
            assert!(perm.is_identity());
        }
        let swapped = RMat::from_fn(2, 3, |i, j| m[(1 - i, j)]);
        for measure in [Measure::Distance, Measure::Correlation] {
            let perm = permute_bin(&swapped, &cents, measure).unwrap();
            assert_eq!(perm.0, vec![1, 0]);
        }
    }

    #[test]
    fn permute_bin_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..25 {
            let n = 3;
            let tf = 7;
            let f = RMat::from_fn(n, tf, |_, _| rng.random_range(-1.0..1.0));
            let m = RMat::from_fn(n, tf, |_, _| rng.random_range(-1.0..1.0));
            let cents = CentroidMatrix { m: m.clone() };
            for measure in [Measure::Distance, Measure::Correlation] {
                let got = permute_bin(&f, &cents, measure).unwrap();
                // brute force over the 6 permutations of {0,1,2}
                let mut best: Option<(f64, Vec<usize>)> = None;
                for perm in [
                    vec![0, 1, 2],
                    vec![0, 2, 1],
                    vec![1, 0, 2],
                    vec![1, 2, 0],
                    vec![2, 0, 1],
                    vec![2, 1, 0],
                ] {
                    let score: f64 = (0..n)
                        .map(|slot| match measure {
                            Measure::Distance => -row_distance2(&m, slot, &f, perm[slot]),
                            Measure::Correlation => pearson(
                                m.row(slot).transpose().as_slice(),
                                f.row(perm[slot]).transpose().as_slice(),
                            ),
                        })
                        .sum();
                    if best.as_ref().is_none_or(|(b, _)| score > *b) {
                        best = Some((score, perm));
                    }
                }
                let want = best.unwrap().1;
                assert_eq!(got.0, want, "trial {trial} measure {measure:?}");
            }
        }
    }

    #[test]
    fn permute_bin_is_exhaustively_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for n in 2..=4usize {
            let f = RMat::from_fn(n, 5, |_, _| rng.random_range(-1.0..1.0));
            let m = RMat::from_fn(n, 5, |_, _| rng.random_range(-1.0..1.0));
            let cents = CentroidMatrix { m: m.clone() };
            let got = permute_bin(&f, &cents, Measure::Distance).unwrap();
            let got_cost: f64 = (0..n)
                .map(|slot| row_distance2(&m, slot, &f, got.0[slot]))
                .sum();
            for_each_permutation(n, |perm| {
                let cost: f64 = (0..n)
                    .map(|slot| row_distance2(&m, slot, &f, perm[slot]))
                    .sum();
                assert!(got_cost <= cost + 1e-12);
            });
        }
    }

    #[test]
    fn oversized_bins_are_rejected() {
        let f = RMat::zeros(9, 4);
        let cents = CentroidMatrix { m: RMat::zeros(9, 4) };
        assert!(matches!(
            permute_bin(&f, &cents, Measure::Distance),
            Err(Error::SizeLimit(_))
        ));
    }

    /// Distinct smooth activity profiles per source.
    fn base_profiles(n: usize, t_f: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let center = (i as f64 + 0.5) * t_f as f64 / n as f64;
                let width = t_f as f64 / (2.5 * n as f64);
                (0..t_f)
                    .map(|t| {
                        let d = (t as f64 - center) / width;
                        0.1 + (-0.5 * d * d).exp()
                    })
                    .collect()
            })
            .collect()
    }

    /// Builds per-bin spectra whose envelopes follow planted row
    /// permutations of the base profiles.
    fn planted_bins(
        n: usize,
        bins: usize,
        t_f: usize,
        seed: u64,
    ) -> (Vec<CMat>, Vec<Permutation>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = base_profiles(n, t_f);
        let mut y_bins = Vec::with_capacity(bins);
        let mut planted = Vec::with_capacity(bins);
        for _ in 0..bins {
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut rng);
            // row r of this bin carries source rows[r]
            let y = CMat::from_fn(n, t_f, |r, t| {
                let level = base[rows[r]][t] * (1.0 + rng.random_range(-1e-3..1e-3));
                C64::from_polar(level, rng.random_range(0.0..std::f64::consts::TAU))
            });
            y_bins.push(y);
            // slot s must take the bin row holding source s
            let mut inv = vec![0usize; n];
            for (r, &src) in rows.iter().enumerate() {
                inv[src] = r;
            }
            planted.push(Permutation(inv));
        }
        (y_bins, planted)
    }

    /// Fraction of bins whose recovered permutation matches the planted
    /// one, allowing one global relabeling.
    fn recovery_rate(got: &[Permutation], planted: &[Permutation], n: usize) -> f64 {
        let mut best = 0usize;
        for_each_permutation(n, |relabel| {
            let hits = got
                .iter()
                .zip(planted)
                .filter(|(g, p)| (0..n).all(|slot| g.0[relabel[slot]] == p.0[slot]))
                .count();
            best = best.max(hits);
        });
        best as f64 / got.len() as f64
    }

    #[test]
    fn align_all_recovers_planted_permutations() {
        for n in [2usize, 3] {
            let (y_bins, planted) = planted_bins(n, 8, 48, 21 + n as u64);
            for method in PermMethod::all() {
                let alignment = align_all(
                    &y_bins,
                    &AlignOpts {
                        method,
                        t_f: None,
                        seed: 7,
                        max_rounds: 50,
                    },
                )
                .unwrap();
                let rate = recovery_rate(&alignment.gamma, &planted, n);
                assert!(
                    rate >= 0.95,
                    "method {method:?} n {n}: recovered {rate}"
                );
            }
        }
    }

    #[test]
    fn six_methods_agree_on_separable_instance() {
        let (y_bins, _) = planted_bins(2, 8, 48, 29);
        let reference = align_all(
            &y_bins,
            &AlignOpts {
                method: PermMethod::Method1,
                ..Default::default()
            },
        )
        .unwrap();
        for method in PermMethod::all() {
            let alignment = align_all(
                &y_bins,
                &AlignOpts {
                    method,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(alignment.gamma, reference.gamma, "method {method:?}");
        }
    }

    #[test]
    fn single_bin_aligns_to_identity() {
        let (y_bins, _) = planted_bins(2, 1, 32, 31);
        for method in PermMethod::all() {
            let alignment = align_all(
                &y_bins,
                &AlignOpts {
                    method,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(alignment.gamma[0].is_identity(), "method {method:?}");
            // centroids equal that bin's profiles
            let profiles = build_profiles(&y_bins, method.profile(), 32);
            let diff = (&alignment.centroids.m - &profiles[0].values)
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-9, "method {method:?}: centroid drift {diff}");
        }
    }

    #[test]
    fn one_shot_criterion_is_reproducible() {
        let (y_bins, _) = planted_bins(3, 6, 40, 33);
        let opts = AlignOpts {
            method: PermMethod::Method3,
            t_f: None,
            seed: 55,
            max_rounds: 50,
        };
        let a = align_all(&y_bins, &opts).unwrap();
        let b = align_all(&y_bins, &opts).unwrap();
        assert_eq!(a.gamma, b.gamma);
        assert_eq!(a.centroids.m, b.centroids.m);
    }

    #[test]
    fn apply_alignment_identity_and_inverse() {
        let y = random_cmat(41, 2, 24);
        let d = CVec::from_vec(vec![C64::new(1.0, 0.0); 2]);
        let id = Permutation::identity(2);
        let out = apply_alignment(&[y.clone()], &[d.clone()], &[id]);
        assert!(frobenius(&(&out[0] - &y)) == 0.0);

        let swap = Permutation(vec![1, 0]);
        let swapped = apply_alignment(&[y.clone()], &[d.clone()], &[swap.clone()]);
        let back = apply_alignment(&[swapped[0].clone()], &[d], &[swap.inverse()]);
        assert!(frobenius(&(&back[0] - &y)) == 0.0);
    }

    #[test]
    fn planted_alignment_matches_ground_truth_spectra() {
        let n = 2;
        let (y_bins, planted) = planted_bins(n, 8, 48, 37);
        let alignment = align_all(
            &y_bins,
            &AlignOpts {
                method: PermMethod::Method5,
                ..Default::default()
            },
        )
        .unwrap();
        let ones: Vec<CVec> = (0..y_bins.len())
            .map(|_| CVec::from_vec(vec![C64::new(1.0, 0.0); n]))
            .collect();
        let aligned = apply_alignment(&y_bins, &ones, &alignment.gamma);
        let truth = apply_alignment(&y_bins, &ones, &planted);
        // up to one global relabeling the aligned spectra match the truth
        let mut best = f64::INFINITY;
        for_each_permutation(n, |relabel| {
            let mut err = 0.0f64;
            for (a, t) in aligned.iter().zip(&truth) {
                for slot in 0..n {
                    for q in 0..a.ncols() {
                        err = err.max((a[(relabel[slot], q)] - t[(slot, q)]).norm());
                    }
                }
            }
            best = best.min(err);
        });
        let scale = truth
            .iter()
            .flat_map(|t| t.iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        assert!(best <= 1e-6 * scale, "max deviation {best}");
    }
}
