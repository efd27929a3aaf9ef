//! Short-time Fourier analysis and exact weighted overlap-add synthesis.

use std::f64::consts::PI;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::MultichannelWave;
use crate::{C64, CMat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Hamming,
    Rectangular,
}

/// Analysis window description: kind, length `T` and overlap ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub kind: WindowKind,
    pub length: usize,
    pub overlap: f64,
}

impl WindowSpec {
    pub fn new(kind: WindowKind, length: usize, overlap: f64) -> Result<Self> {
        if length < 4 || length % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "window length must be even and >= 4, got {length}"
            )));
        }
        if !(0.5..0.95).contains(&overlap) {
            return Err(Error::InvalidArgument(format!(
                "overlap ratio must lie in [0.5, 0.95), got {overlap}"
            )));
        }
        let spec = Self {
            kind,
            length,
            overlap,
        };
        if spec.shift() == 0 {
            return Err(Error::InvalidArgument("frame shift rounds to zero".into()));
        }
        Ok(spec)
    }

    /// Hop between consecutive frames: `round(T * (1 - overlap))`.
    pub fn shift(&self) -> usize {
        (self.length as f64 * (1.0 - self.overlap)).round() as usize
    }

    /// Number of analysis frames covering `k` samples (the tail frame is
    /// zero-padded).
    pub fn num_frames(&self, k: usize) -> Result<usize> {
        if k < self.length {
            return Err(Error::InvalidArgument(format!(
                "signal of {k} samples is shorter than the window ({})",
                self.length
            )));
        }
        Ok((k - self.length).div_ceil(self.shift()) + 1)
    }

    pub fn bins(&self) -> usize {
        self.length / 2 + 1
    }
}

/// Samples of the analysis window in its periodic form.
pub fn make_window(spec: &WindowSpec) -> Vec<f64> {
    let t = spec.length as f64;
    (0..spec.length)
        .map(|n| {
            let phase = 2.0 * PI * n as f64 / t;
            match spec.kind {
                WindowKind::Hann => 0.5 * (1.0 - phase.cos()),
                WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                WindowKind::Rectangular => 1.0,
            }
        })
        .collect()
}

/// Complex time-frequency tensor (channel x frame x bin) holding the
/// non-negative frequencies only, plus the framing metadata needed for exact
/// inversion.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    /// One `frames x bins` matrix per channel.
    pub data: Vec<CMat>,
    pub window: WindowSpec,
    pub sample_rate_hz: u32,
    pub original_len: usize,
}

impl Spectrogram {
    pub fn channels(&self) -> usize {
        self.data.len()
    }

    pub fn frames(&self) -> usize {
        self.data[0].nrows()
    }

    pub fn bins(&self) -> usize {
        self.data[0].ncols()
    }

    pub fn fft_size(&self) -> usize {
        self.window.length
    }

    /// Gathers one bin across channels as an `M x Q` matrix.
    pub fn bin(&self, w: usize) -> CMat {
        let m = self.channels();
        let q = self.frames();
        CMat::from_fn(m, q, |ch, fr| self.data[ch][(fr, w)])
    }

    /// Writes an `M x Q` matrix back into bin `w`.
    pub fn set_bin(&mut self, w: usize, values: &CMat) {
        for ch in 0..self.channels() {
            for fr in 0..self.frames() {
                self.data[ch][(fr, w)] = values[(ch, fr)];
            }
        }
    }

    /// Builds an all-zero spectrogram with `channels` channels and the frame
    /// grid implied by `window` over `original_len` samples.
    pub fn zeros(
        channels: usize,
        window: WindowSpec,
        sample_rate_hz: u32,
        original_len: usize,
    ) -> Result<Self> {
        let q = window.num_frames(original_len)?;
        let b = window.bins();
        Ok(Self {
            data: vec![CMat::zeros(q, b); channels],
            window,
            sample_rate_hz,
            original_len,
        })
    }
}

/// Short-time Fourier transform. Frame `q` covers samples
/// `[q*shift, q*shift + T)`; the tail is zero-padded to a whole frame and
/// only bins `0..=T/2` are stored.
pub fn stft(wave: &MultichannelWave, spec: &WindowSpec) -> Result<Spectrogram> {
    let t = spec.length;
    let shift = spec.shift();
    let k = wave.len();
    let q = spec.num_frames(k)?;
    let b = spec.bins();
    let window = make_window(spec);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(t);
    let mut buf = vec![C64::default(); t];
    let mut scratch = vec![C64::default(); fft.get_inplace_scratch_len()];

    let mut data = Vec::with_capacity(wave.channels());
    for ch in 0..wave.channels() {
        let x = wave.channel(ch);
        let mut mat = CMat::zeros(q, b);
        for fr in 0..q {
            let start = fr * shift;
            for n in 0..t {
                let s = if start + n < k { x[start + n] } else { 0.0 };
                buf[n] = C64::new(s * window[n], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for w in 0..b {
                mat[(fr, w)] = buf[w];
            }
        }
        data.push(mat);
    }

    Ok(Spectrogram {
        data,
        window: *spec,
        sample_rate_hz: wave.sample_rate_hz(),
        original_len: k,
    })
}

/// Inverse STFT by weighted overlap-add with per-sample normalization by the
/// summed squared window, exact wherever that sum is nonzero. The output is
/// truncated to the analyzed length.
pub fn istft(spec: &Spectrogram) -> Result<MultichannelWave> {
    let t = spec.fft_size();
    let shift = spec.window.shift();
    let q = spec.frames();
    let k = spec.original_len;
    let window = make_window(&spec.window);

    let padded = (q - 1) * shift + t;
    let mut win_power = vec![0.0f64; padded];
    for fr in 0..q {
        for n in 0..t {
            win_power[fr * shift + n] += window[n] * window[n];
        }
    }
    let max_power = win_power.iter().cloned().fold(0.0, f64::max);
    let tiny = 1e-12 * max_power;
    // The periodic Hann window zeroes its first sample, so the very first
    // output sample can be uncovered; anywhere else a zero power sum means
    // the window cannot be inverted.
    if let Some(j) = win_power[..k].iter().skip(1).position(|&p| p <= tiny) {
        return Err(Error::DegenerateWindow(format!(
            "window power sum vanishes at interior sample {}",
            j + 1
        )));
    }

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(t);
    let mut buf = vec![C64::default(); t];
    let mut scratch = vec![C64::default(); ifft.get_inplace_scratch_len()];

    let mut channels = Vec::with_capacity(spec.channels());
    for ch in 0..spec.channels() {
        let mat = &spec.data[ch];
        let mut acc = vec![0.0f64; padded];
        for fr in 0..q {
            let row: Vec<C64> = (0..spec.bins()).map(|w| mat[(fr, w)]).collect();
            let full = extend_half_spectrum(&row, t);
            buf.copy_from_slice(&full);
            ifft.process_with_scratch(&mut buf, &mut scratch);
            let start = fr * shift;
            for n in 0..t {
                acc[start + n] += buf[n].re / t as f64 * window[n];
            }
        }
        let mut out = vec![0.0f64; k];
        for j in 0..k {
            out[j] = if win_power[j] > tiny {
                acc[j] / win_power[j]
            } else {
                0.0
            };
        }
        channels.push(out);
    }

    MultichannelWave::new(channels, spec.sample_rate_hz)
}

fn extend_half_spectrum(half: &[C64], fft_size: usize) -> Vec<C64> {
    let mut full = vec![C64::default(); fft_size];
    full[..half.len()].copy_from_slice(half);
    for w in 1..fft_size / 2 {
        full[fft_size - w] = half[w].conj();
    }
    full
}

/// Extends `Q x (T/2+1)` half-spectrum rows to the full `Q x T` spectrum via
/// Hermitian symmetry: bin `T-w` = conj(bin `w`).
pub fn symmetric_extend(half_bins: &CMat) -> Result<CMat> {
    let b = half_bins.ncols();
    if b < 2 {
        return Err(Error::InvalidArgument(
            "half spectrum needs at least 2 bins".into(),
        ));
    }
    let t = (b - 1) * 2;
    let q = half_bins.nrows();
    let mut full = CMat::zeros(q, t);
    for fr in 0..q {
        for w in 0..b {
            full[(fr, w)] = half_bins[(fr, w)];
        }
        for w in 1..t / 2 {
            full[(fr, t - w)] = half_bins[(fr, w)].conj();
        }
    }
    Ok(full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_wave(seed: u64, channels: usize, len: usize) -> MultichannelWave {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..channels)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        MultichannelWave::new(samples, 16_000).unwrap()
    }

    fn spec(kind: WindowKind, t: usize, overlap: f64) -> WindowSpec {
        WindowSpec::new(kind, t, overlap).unwrap()
    }

    /// O(T^2) reference DFT.
    fn naive_dft(x: &[f64]) -> Vec<C64> {
        let t = x.len();
        (0..t)
            .map(|f| {
                let mut acc = C64::default();
                for (n, &xn) in x.iter().enumerate() {
                    let phase = -2.0 * PI * (f * n) as f64 / t as f64;
                    acc += C64::new(xn * phase.cos(), xn * phase.sin());
                }
                acc
            })
            .collect()
    }

    #[test]
    fn window_samples_match_closed_forms() {
        let hann = make_window(&spec(WindowKind::Hann, 8, 0.5));
        assert!((hann[0] - 0.0).abs() < 1e-15);
        assert!((hann[4] - 1.0).abs() < 1e-15);
        let hamming = make_window(&spec(WindowKind::Hamming, 8, 0.5));
        assert!((hamming[0] - 0.08).abs() < 1e-15);
        let rect = make_window(&spec(WindowKind::Rectangular, 8, 0.5));
        assert!(rect.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn odd_window_length_is_rejected() {
        assert!(WindowSpec::new(WindowKind::Hann, 9, 0.5).is_err());
        assert!(WindowSpec::new(WindowKind::Hann, 2, 0.5).is_err());
        assert!(WindowSpec::new(WindowKind::Hann, 8, 0.95).is_err());
        assert!(WindowSpec::new(WindowKind::Hann, 8, 0.4).is_err());
    }

    #[test]
    fn pure_tone_concentrates_in_its_bin() {
        let t = 64;
        let f = 5;
        let x: Vec<f64> = (0..t)
            .map(|n| (2.0 * PI * (f * n) as f64 / t as f64).cos())
            .collect();
        let wave = MultichannelWave::new(vec![x], 16_000).unwrap();
        let sg = stft(&wave, &spec(WindowKind::Rectangular, t, 0.5)).unwrap();
        assert_eq!(sg.frames(), 1);
        for w in 0..sg.bins() {
            let mag = sg.data[0][(0, w)].norm();
            if w == f {
                assert!((mag - t as f64 / 2.0).abs() < 1e-9 * t as f64);
            } else {
                assert!(mag <= 1e-9 * t as f64, "bin {w} has magnitude {mag}");
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_spectrogram() {
        let wave = MultichannelWave::new(vec![vec![0.0; 512]; 2], 16_000).unwrap();
        let sg = stft(&wave, &spec(WindowKind::Hann, 128, 0.5)).unwrap();
        for ch in &sg.data {
            assert!(ch.iter().all(|c| c.norm() == 0.0));
        }
    }

    #[test]
    fn frames_match_naive_dft() {
        let t = 64;
        let wave = random_wave(42, 1, 4 * t);
        let ws = spec(WindowKind::Hamming, t, 0.5);
        let sg = stft(&wave, &ws).unwrap();
        let window = make_window(&ws);
        let shift = ws.shift();
        for fr in 0..sg.frames() {
            let mut frame = vec![0.0; t];
            for n in 0..t {
                let idx = fr * shift + n;
                frame[n] = if idx < wave.len() {
                    wave.channel(0)[idx] * window[n]
                } else {
                    0.0
                };
            }
            let reference = naive_dft(&frame);
            let scale: f64 = reference.iter().map(|c| c.norm()).fold(1e-30, f64::max);
            for w in 0..sg.bins() {
                let err = (sg.data[0][(fr, w)] - reference[w]).norm();
                assert!(err <= 1e-10 * scale, "frame {fr} bin {w}: err {err}");
            }
        }
    }

    fn max_round_trip_error(kind: WindowKind, t: usize, overlap: f64, seed: u64) -> f64 {
        let wave = random_wave(seed, 1, 5 * t);
        let ws = spec(kind, t, overlap);
        let sg = stft(&wave, &ws).unwrap();
        let back = istft(&sg).unwrap();
        assert_eq!(back.len(), wave.len());
        // The periodic Hann window carries no information about sample 0,
        // which is outside the invertible domain; every other sample must
        // reconstruct exactly.
        let skip = usize::from(kind == WindowKind::Hann);
        wave.channel(0)
            .iter()
            .zip(back.channel(0))
            .skip(skip)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn round_trip_hann_1024_at_0_65() {
        assert!(max_round_trip_error(WindowKind::Hann, 1024, 0.65, 5) <= 1e-10);
    }

    #[test]
    fn round_trip_rectangular_half_overlap() {
        assert!(max_round_trip_error(WindowKind::Rectangular, 64, 0.5, 6) <= 1e-10);
    }

    #[test]
    fn zero_spectrogram_inverts_to_silence() {
        let ws = spec(WindowKind::Hamming, 64, 0.65);
        let sg = Spectrogram::zeros(2, ws, 16_000, 400).unwrap();
        let wave = istft(&sg).unwrap();
        assert!(wave.channels_iter().flatten().all(|&s| s == 0.0));
    }

    #[test]
    fn symmetric_extend_conjugates_mirror_bins() {
        // T = 8: half spectrum has 5 bins
        let mut half = CMat::zeros(1, 5);
        half[(0, 0)] = C64::new(1.0, 0.0);
        half[(0, 1)] = C64::new(0.0, 1.0);
        let full = symmetric_extend(&half).unwrap();
        assert_eq!(full.ncols(), 8);
        assert_eq!(full[(0, 7)], C64::new(0.0, -1.0));
        assert_eq!(full[(0, 1)], C64::new(0.0, 1.0));
    }

    #[test]
    fn extend_then_truncate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let half = CMat::from_fn(3, 9, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let full = symmetric_extend(&half).unwrap();
        for fr in 0..3 {
            for w in 0..9 {
                assert_eq!(full[(fr, w)], half[(fr, w)]);
            }
        }
    }

    #[test]
    fn extended_spectrum_of_real_frame_inverts_to_real() {
        let t = 32;
        let wave = random_wave(11, 1, t);
        let sg = stft(&wave, &spec(WindowKind::Hamming, t, 0.5)).unwrap();
        let full = symmetric_extend(&sg.data[0]).unwrap();
        // inverse DFT of the extended row must be real
        let mut planner = FftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(t);
        let mut buf: Vec<C64> = (0..t).map(|w| full[(0, w)]).collect();
        ifft.process(&mut buf);
        for c in &buf {
            assert!(c.im.abs() / t as f64 <= 1e-12);
        }
    }

    #[test]
    fn frame_energy_obeys_parseval() {
        let t = 128;
        let wave = random_wave(12, 1, 3 * t);
        let ws = spec(WindowKind::Hann, t, 0.5);
        let sg = stft(&wave, &ws).unwrap();
        let window = make_window(&ws);
        let shift = ws.shift();
        for fr in 0..sg.frames() {
            let mut time_energy = 0.0;
            for n in 0..t {
                let idx = fr * shift + n;
                if idx < wave.len() {
                    let v = wave.channel(0)[idx] * window[n];
                    time_energy += v * v;
                }
            }
            let full = extend_half_spectrum(
                &(0..sg.bins()).map(|w| sg.data[0][(fr, w)]).collect::<Vec<_>>(),
                t,
            );
            let freq_energy: f64 = full.iter().map(|c| c.norm_sqr()).sum::<f64>() / t as f64;
            assert!(
                (time_energy - freq_energy).abs() <= 1e-9 * time_energy.max(1e-12),
                "frame {fr}: {time_energy} vs {freq_energy}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn round_trip_is_identity_for_all_windows(
            seed in 0u64..1000,
            kind_idx in 0usize..3,
            overlap in 0.5f64..0.94,
            t_exp in 4usize..8,
        ) {
            let kind = [WindowKind::Hann, WindowKind::Hamming, WindowKind::Rectangular][kind_idx];
            let t = 1usize << t_exp;
            let err = max_round_trip_error(kind, t, overlap, seed);
            prop_assert!(err <= 1e-10, "err {err} for {kind:?} T={t} overlap={overlap}");
        }

        #[test]
        fn stft_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let t = 64;
            let x = random_wave(seed, 1, 3 * t);
            let y = random_wave(seed.wrapping_add(1), 1, 3 * t);
            let combo = MultichannelWave::new(
                vec![x.channel(0).iter().zip(y.channel(0)).map(|(p, q)| a * p + b * q).collect()],
                16_000,
            ).unwrap();
            let ws = spec(WindowKind::Hamming, t, 0.5);
            let sx = stft(&x, &ws).unwrap();
            let sy = stft(&y, &ws).unwrap();
            let sc = stft(&combo, &ws).unwrap();
            let scale: f64 = sc.data[0].iter().map(|c| c.norm()).fold(1e-30, f64::max);
            for fr in 0..sc.frames() {
                for w in 0..sc.bins() {
                    let expect = sx.data[0][(fr, w)] * C64::new(a, 0.0)
                        + sy.data[0][(fr, w)] * C64::new(b, 0.0);
                    prop_assert!((sc.data[0][(fr, w)] - expect).norm() <= 1e-12 * scale);
                }
            }
        }
    }
}
