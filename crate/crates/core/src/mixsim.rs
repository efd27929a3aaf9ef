//! Synthetic convolutive mixing: exponentially decaying random impulse
//! responses, FIR mixing of source waves, and speech-like test sources.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::MultichannelWave;
use crate::C64;

/// FIR mixing system: `taps[j][i][p]` filters source `i` into sensor `j`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FirMixingSystem {
    taps: Vec<f64>,
    sensors: usize,
    sources: usize,
    taps_per_filter: usize,
    pub sample_rate_hz: u32,
}

impl FirMixingSystem {
    pub fn new(
        sensors: usize,
        sources: usize,
        taps_per_filter: usize,
        sample_rate_hz: u32,
        taps: Vec<f64>,
    ) -> Result<Self> {
        if sensors == 0 || sources == 0 || taps_per_filter == 0 {
            return Err(Error::InvalidArgument(
                "mixing system dimensions must be positive".into(),
            ));
        }
        if taps.len() != sensors * sources * taps_per_filter {
            return Err(Error::InvalidArgument(format!(
                "expected {} taps, got {}",
                sensors * sources * taps_per_filter,
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("taps must be finite".into()));
        }
        Ok(Self {
            taps,
            sensors,
            sources,
            taps_per_filter,
            sample_rate_hz,
        })
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn taps_per_filter(&self) -> usize {
        self.taps_per_filter
    }

    pub fn tap(&self, sensor: usize, source: usize, lag: usize) -> f64 {
        self.taps[(sensor * self.sources + source) * self.taps_per_filter + lag]
    }

    pub fn filter(&self, sensor: usize, source: usize) -> &[f64] {
        let base = (sensor * self.sources + source) * self.taps_per_filter;
        &self.taps[base..base + self.taps_per_filter]
    }
}

/// Amplitude decay reaching -60 dB after `t60_ms` worth of samples.
fn decay_envelope(lag: usize, fs: u32, t60_ms: f64) -> f64 {
    let samples_to_t60 = f64::from(fs) * t60_ms / 1000.0;
    10f64.powf(-3.0 * lag as f64 / samples_to_t60)
}

/// Draws a random unit-energy impulse response per sensor/source pair:
/// i.i.d. standard normal taps shaped by [`decay_envelope`]. Deterministic
/// for a given seed.
pub fn gen_rir(
    seed: u64,
    sensors: usize,
    sources: usize,
    taps_per_filter: usize,
    t60_ms: f64,
    sample_rate_hz: u32,
) -> Result<FirMixingSystem> {
    if t60_ms <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "t60 must be positive, got {t60_ms} ms"
        )));
    }
    if taps_per_filter == 0 {
        return Err(Error::InvalidArgument("need at least one tap".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taps = Vec::with_capacity(sensors * sources * taps_per_filter);
    for _ in 0..sensors * sources {
        let start = taps.len();
        for lag in 0..taps_per_filter {
            let g: f64 = rng.sample(StandardNormal);
            taps.push(g * decay_envelope(lag, sample_rate_hz, t60_ms));
        }
        let energy: f64 = taps[start..].iter().map(|h| h * h).sum();
        let norm = energy.sqrt();
        if norm > 0.0 {
            for h in &mut taps[start..] {
                *h /= norm;
            }
        }
    }
    FirMixingSystem::new(sensors, sources, taps_per_filter, sample_rate_hz, taps)
}

/// Convolves `N` sources through the mixing system, producing `M` sensor
/// channels truncated to the source length (the convolution tail is
/// dropped so sources and mixtures stay sample-aligned).
pub fn convolve_mix(
    sources: &MultichannelWave,
    sys: &FirMixingSystem,
) -> Result<MultichannelWave> {
    if sources.channels() != sys.sources() {
        return Err(Error::InvalidArgument(format!(
            "mixing system expects {} sources, wave has {}",
            sys.sources(),
            sources.channels()
        )));
    }
    if sources.sample_rate_hz() != sys.sample_rate_hz {
        return Err(Error::InvalidArgument(format!(
            "sample rate mismatch: sources {} Hz, system {} Hz",
            sources.sample_rate_hz(),
            sys.sample_rate_hz
        )));
    }

    let k = sources.len();
    let l = sys.taps_per_filter();
    let fft_len = (k + l - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_len);
    let ifft = planner.plan_fft_inverse(fft_len);

    // Spectra of the sources are shared across sensors.
    let source_spectra: Vec<Vec<C64>> = (0..sys.sources())
        .map(|i| {
            let mut buf = vec![C64::default(); fft_len];
            for (n, &s) in sources.channel(i).iter().enumerate() {
                buf[n] = C64::new(s, 0.0);
            }
            fft.process(&mut buf);
            buf
        })
        .collect();

    let mut out = Vec::with_capacity(sys.sensors());
    for j in 0..sys.sensors() {
        let mut acc = vec![C64::default(); fft_len];
        for i in 0..sys.sources() {
            let mut h = vec![C64::default(); fft_len];
            for (p, &t) in sys.filter(j, i).iter().enumerate() {
                h[p] = C64::new(t, 0.0);
            }
            fft.process(&mut h);
            for (a, (hs, ss)) in acc.iter_mut().zip(h.iter().zip(&source_spectra[i])) {
                *a += hs * ss;
            }
        }
        ifft.process(&mut acc);
        out.push(acc[..k].iter().map(|c| c.re / fft_len as f64).collect());
    }

    MultichannelWave::new(out, sources.sample_rate_hz())
}

/// Generates `n` statistically independent speech-like sources: AR(2)
/// resonator noise gated by random syllabic on/off envelopes with smooth
/// edges. Super-Gaussian and temporally sparse, which is what the per-bin
/// contrast and the profile clustering both rely on.
pub fn gen_sources(seed: u64, n: usize, num_samples: usize, sample_rate_hz: u32) -> Result<MultichannelWave> {
    if n == 0 || num_samples == 0 {
        return Err(Error::InvalidArgument(
            "need at least one source and one sample".into(),
        ));
    }
    let fs = f64::from(sample_rate_hz);
    let mut channels = Vec::with_capacity(n);
    for src in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(src as u64 + 1)));

        // AR(2) resonance at a source-specific frequency.
        let freq = 300.0 + 650.0 * src as f64 + rng.random_range(0.0..200.0);
        let omega = 2.0 * std::f64::consts::PI * freq / fs;
        let radius = 0.96;
        let (a1, a2) = (2.0 * radius * omega.cos(), -radius * radius);
        let mut y1 = 0.0;
        let mut y2 = 0.0;
        let mut x = Vec::with_capacity(num_samples);
        for _ in 0..num_samples {
            let e: f64 = rng.sample(StandardNormal);
            let y = a1 * y1 + a2 * y2 + e;
            x.push(y);
            y2 = y1;
            y1 = y;
        }

        // Syllabic gate: random bursts with raised-cosine 20 ms ramps.
        let ramp = (0.02 * fs) as usize;
        let mut env = vec![0.0f64; num_samples];
        let mut pos = 0usize;
        let mut active = src % 2 == 0; // stagger the initial activity
        while pos < num_samples {
            let dur_ms = if active {
                rng.random_range(120.0..320.0)
            } else {
                rng.random_range(80.0..240.0)
            };
            let dur = ((dur_ms / 1000.0 * fs) as usize).max(ramp * 2);
            let end = (pos + dur).min(num_samples);
            if active {
                for j in pos..end {
                    let rel = j - pos;
                    let tail = end - 1 - j;
                    let mut g = 1.0;
                    if rel < ramp {
                        g = 0.5 * (1.0 - (std::f64::consts::PI * rel as f64 / ramp as f64).cos());
                    }
                    if tail < ramp {
                        let gt =
                            0.5 * (1.0 - (std::f64::consts::PI * tail as f64 / ramp as f64).cos());
                        g = g.min(gt);
                    }
                    env[j] = g;
                }
            }
            pos = end;
            active = !active;
        }

        let mut out: Vec<f64> = x.iter().zip(&env).map(|(s, e)| s * e).collect();
        let rms = (out.iter().map(|v| v * v).sum::<f64>() / num_samples as f64).sqrt();
        if rms > 0.0 {
            let gain = 0.1 / rms;
            for v in &mut out {
                *v *= gain;
            }
        }
        channels.push(out);
    }
    MultichannelWave::new(channels, sample_rate_hz)
}
