//! End-to-end separation pipeline: STFT, per-bin whitening and extraction,
//! minimal-distortion rescaling, permutation alignment and resynthesis,
//! plus the binary sidecar holding the per-bin demixing matrices.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::align::{self, AlignOpts, DemixingSet, Permutation};
use crate::config::{PipelineConfig, ProfileTf};
use crate::error::{Error, Result};
use crate::ica::{self, DemixOpts, ExtractOpts, InitStrategy};
use crate::metrics;
use crate::signal_io::{MultichannelWave, SeparationReport};
use crate::tf::{self, Spectrogram};
use crate::whiten::{self, BinData};
use crate::{C64, CMat, CVec};

/// Everything a separation run produces.
#[derive(Debug)]
pub struct SeparationOutcome {
    pub estimates: MultichannelWave,
    pub demixing: DemixingSet,
    /// Per-bin end-to-end demixing matrices (scaling and permutation
    /// applied): row `n` of `total_demix[w]` maps the observation bin to
    /// aligned source `n`.
    pub total_demix: Vec<CMat>,
    pub report: SeparationReport,
    /// Number of per-bin extractions that stalled before converging.
    pub stalled_extractions: usize,
}

struct BinOutcome {
    u: CMat,
    whitener: CMat,
    y: CMat,
    d: CVec,
    rescaled: CMat,
    stalled: usize,
}

fn process_bin(x: CMat, w: usize, cfg: &PipelineConfig) -> Result<BinOutcome> {
    let bin = BinData::new(x, w)?;
    let bundle = whiten::whiten_bin(&bin, cfg.reg_m)?;
    let opts = DemixOpts {
        extract: ExtractOpts {
            max_iter: cfg.max_iter,
            conv_tol: cfg.conv_tol,
        },
        init: InitStrategy::CanonicalBasis,
    };
    let demix = ica::demix_bin(&bundle.z, &opts).map_err(|e| {
        Error::InvalidArgument(format!("extraction failed at bin {w}: {e}"))
    })?;
    let y = demix.u.adjoint() * &bundle.z;
    let (d, rescaled) = align::minimal_distortion_rescale(&bin.x, &y);
    let stalled = demix.states.iter().filter(|s| !s.converged).count();
    Ok(BinOutcome {
        u: demix.u,
        whitener: bundle.whitener,
        y,
        d,
        rescaled,
        stalled,
    })
}

/// Runs the full pipeline on a mixture. `threads` bounds the per-bin
/// worker pool; `None` uses the rayon default.
pub fn separate(
    mix: &MultichannelWave,
    cfg: &PipelineConfig,
    threads: Option<usize>,
) -> Result<SeparationOutcome> {
    cfg.validate()?;
    let window = cfg.window_spec()?;
    let n = mix.channels();
    let total_start = Instant::now();
    let mut stages: BTreeMap<String, f64> = BTreeMap::new();

    let start = Instant::now();
    let sg = tf::stft(mix, &window)?;
    stages.insert("stft".into(), ms_since(start));

    let bins = sg.bins();
    let start = Instant::now();
    let run_bins = || -> Result<Vec<BinOutcome>> {
        (0..bins)
            .into_par_iter()
            .map(|w| process_bin(sg.bin(w), w, cfg))
            .collect()
    };
    let outcomes = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run_bins),
        None => run_bins(),
    }?;
    stages.insert("ica".into(), ms_since(start));

    let start = Instant::now();
    let rescaled: Vec<CMat> = outcomes.iter().map(|o| o.rescaled.clone()).collect();
    let t_f = match cfg.profile_tf {
        ProfileTf::All => None,
        ProfileTf::Frames(t) => Some(t),
    };
    let alignment = align::align_all(
        &rescaled,
        &AlignOpts {
            method: cfg.perm_method,
            t_f,
            seed: cfg.seed,
            max_rounds: 50,
        },
    )?;
    let y_bins: Vec<CMat> = outcomes.iter().map(|o| o.y.clone()).collect();
    let d_bins: Vec<CVec> = outcomes.iter().map(|o| o.d.clone()).collect();
    let mut aligned = align::apply_alignment(&y_bins, &d_bins, &alignment.gamma);

    // deterministic global labels: order sources by descending broadband energy
    let mut energies = vec![0.0f64; n];
    for bin in &aligned {
        for slot in 0..n {
            energies[slot] += bin.row(slot).iter().map(|c| c.norm_sqr()).sum::<f64>();
        }
    }
    let mut label_order: Vec<usize> = (0..n).collect();
    label_order.sort_by(|&a, &b| energies[b].total_cmp(&energies[a]));
    let gamma: Vec<Permutation> = alignment
        .gamma
        .iter()
        .map(|g| Permutation(label_order.iter().map(|&slot| g.0[slot]).collect()))
        .collect();
    for bin in &mut aligned {
        let reordered = CMat::from_fn(n, bin.ncols(), |slot, q| bin[(label_order[slot], q)]);
        *bin = reordered;
    }
    stages.insert("perm".into(), ms_since(start));

    let total_demix: Vec<CMat> = outcomes
        .iter()
        .zip(&gamma)
        .map(|(o, g)| {
            let base = o.u.adjoint() * &o.whitener;
            CMat::from_fn(n, n, |slot, col| {
                let row = g.0[slot];
                o.d[row] * base[(row, col)]
            })
        })
        .collect();

    let start = Instant::now();
    let mut out_sg = Spectrogram::zeros(n, window, mix.sample_rate_hz(), mix.len())?;
    for (w, bin) in aligned.iter().enumerate() {
        out_sg.set_bin(w, bin);
    }
    let estimates = tf::istft(&out_sg)?;
    stages.insert("istft".into(), ms_since(start));
    stages.insert("total".into(), ms_since(total_start));

    let stalled = outcomes.iter().map(|o| o.stalled).sum();
    let demixing = DemixingSet {
        u: outcomes.into_iter().map(|o| o.u).collect(),
        d: d_bins,
        gamma,
        window,
    };
    let report = SeparationReport {
        sources: n,
        sir_db: Vec::new(),
        sdr_db: Vec::new(),
        stages,
        config: cfg.clone(),
    };

    Ok(SeparationOutcome {
        estimates,
        demixing,
        total_demix,
        report,
        stalled_extractions: stalled,
    })
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

/// Greedy-bijective SIR/SDR evaluation of estimates against references.
/// Pairs are assigned in order of descending captured projection energy,
/// then each estimate is decomposed against its assigned reference.
pub fn evaluate_separation(
    estimates: &MultichannelWave,
    references: &MultichannelWave,
    filter_len: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if estimates.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: estimates {} samples, references {}",
            estimates.len(),
            references.len()
        )));
    }
    let n_est = estimates.channels();
    let refs: Vec<Vec<f64>> = references.channels_iter().map(|c| c.to_vec()).collect();

    let mut energy = vec![vec![0.0f64; refs.len()]; n_est];
    for (i, row) in energy.iter_mut().enumerate() {
        *row = metrics::projection_energies(estimates.channel(i), &refs, filter_len)?;
    }

    let mut assigned_ref = vec![usize::MAX; n_est];
    let mut ref_taken = vec![false; refs.len()];
    for _ in 0..n_est.min(refs.len()) {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (i, row) in energy.iter().enumerate() {
            if assigned_ref[i] != usize::MAX {
                continue;
            }
            for (j, &e) in row.iter().enumerate() {
                if !ref_taken[j] && e > best.0 {
                    best = (e, i, j);
                }
            }
        }
        assigned_ref[best.1] = best.2;
        ref_taken[best.2] = true;
    }

    let mut sir = Vec::with_capacity(n_est);
    let mut sdr = Vec::with_capacity(n_est);
    for i in 0..n_est {
        let d = metrics::bss_decompose_assigned(
            estimates.channel(i),
            &refs,
            filter_len,
            assigned_ref[i],
        )?;
        sir.push(metrics::sir_db(&d)?);
        sdr.push(metrics::sdr_db(&d)?);
    }
    Ok((sir, sdr))
}

const SIDECAR_MAGIC: &[u8; 8] = b"FDBSDMX1";

/// Writes the per-bin demixing matrices: magic, `T`, `N` (little-endian
/// u32), then `T/2 + 1` bins of row-major interleaved re/im doubles.
pub fn write_demixing(path: impl AsRef<Path>, fft_size: usize, mats: &[CMat]) -> Result<()> {
    let path = path.as_ref();
    let expected = fft_size / 2 + 1;
    if mats.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "expected {expected} bins for fft size {fft_size}, got {}",
            mats.len()
        )));
    }
    let n = mats[0].nrows();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let werr = |e| Error::io(path, e);
    out.write_all(SIDECAR_MAGIC).map_err(werr)?;
    out.write_all(&(fft_size as u32).to_le_bytes()).map_err(werr)?;
    out.write_all(&(n as u32).to_le_bytes()).map_err(werr)?;
    for mat in mats {
        for row in 0..n {
            for col in 0..n {
                let v = mat[(row, col)];
                out.write_all(&v.re.to_le_bytes()).map_err(werr)?;
                out.write_all(&v.im.to_le_bytes()).map_err(werr)?;
            }
        }
    }
    out.flush().map_err(werr)
}

/// Reads a demixing sidecar back; returns the FFT size and the per-bin
/// matrices.
pub fn read_demixing(path: impl AsRef<Path>) -> Result<(usize, Vec<CMat>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = std::io::BufReader::new(file);
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|e| Error::io(path, e))?;
    if &magic != SIDECAR_MAGIC {
        return Err(Error::malformed(path, "bad magic"));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
    let fft_size = u32::from_le_bytes(word) as usize;
    input.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
    let n = u32::from_le_bytes(word) as usize;
    let bins = fft_size / 2 + 1;
    let mut mats = Vec::with_capacity(bins);
    let mut buf = [0u8; 8];
    for _ in 0..bins {
        let mut mat = CMat::zeros(n, n);
        for row in 0..n {
            for col in 0..n {
                input.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
                let re = f64::from_le_bytes(buf);
                input.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
                let im = f64::from_le_bytes(buf);
                mat[(row, col)] = C64::new(re, im);
            }
        }
        mats.push(mat);
    }
    Ok((fft_size, mats))
}
