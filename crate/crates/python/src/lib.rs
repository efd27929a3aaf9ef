//! Python bindings: mixing simulation, separation and SIR/SDR evaluation
//! on plain nested lists of samples.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use fdbss::align::PermMethod;
use fdbss::config::{PipelineConfig, ProfileTf};
use fdbss::signal_io::MultichannelWave;
use fdbss::tf::WindowKind;

fn to_py_err(err: fdbss::Error) -> PyErr {
    match err {
        fdbss::Error::Io { .. } => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn wave_from_lists(channels: Vec<Vec<f64>>, sample_rate_hz: u32) -> PyResult<MultichannelWave> {
    MultichannelWave::new(channels, sample_rate_hz).map_err(to_py_err)
}

fn parse_window(kind: &str) -> PyResult<WindowKind> {
    match kind {
        "hann" => Ok(WindowKind::Hann),
        "hamming" => Ok(WindowKind::Hamming),
        "rectangular" => Ok(WindowKind::Rectangular),
        other => Err(PyValueError::new_err(format!(
            "unknown window kind {other:?}; expected hann, hamming or rectangular"
        ))),
    }
}

fn parse_method(name: &str) -> PyResult<PermMethod> {
    match name {
        "method1" => Ok(PermMethod::Method1),
        "method2" => Ok(PermMethod::Method2),
        "method3" => Ok(PermMethod::Method3),
        "method4" => Ok(PermMethod::Method4),
        "method5" => Ok(PermMethod::Method5),
        "method6" => Ok(PermMethod::Method6),
        other => Err(PyValueError::new_err(format!(
            "unknown permutation method {other:?}; expected method1..method6"
        ))),
    }
}

/// Generate statistically independent speech-like test sources.
#[pyfunction]
#[pyo3(signature = (seed, sources, samples, sample_rate_hz=16_000))]
fn synth_sources(
    seed: u64,
    sources: usize,
    samples: usize,
    sample_rate_hz: u32,
) -> PyResult<Vec<Vec<f64>>> {
    let wave =
        fdbss::mixsim::gen_sources(seed, sources, samples, sample_rate_hz).map_err(to_py_err)?;
    Ok(wave.into_samples())
}

/// Convolve sources through a random exponentially-decaying room.
#[pyfunction]
#[pyo3(signature = (sources, sample_rate_hz=16_000, mics=None, taps=256, t60_ms=160.0, seed=0))]
fn mix(
    sources: Vec<Vec<f64>>,
    sample_rate_hz: u32,
    mics: Option<usize>,
    taps: usize,
    t60_ms: f64,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let wave = wave_from_lists(sources, sample_rate_hz)?;
    let m = mics.unwrap_or(wave.channels());
    let sys = fdbss::mixsim::gen_rir(seed, m, wave.channels(), taps, t60_ms, sample_rate_hz)
        .map_err(to_py_err)?;
    let mixed = fdbss::mixsim::convolve_mix(&wave, &sys).map_err(to_py_err)?;
    Ok(mixed.into_samples())
}

/// Separate a multichannel mixture; returns the estimated sources.
#[pyfunction]
#[pyo3(signature = (
    mixture,
    sample_rate_hz=16_000,
    fft_size=1024,
    window="hamming",
    overlap=0.65,
    reg_m=1e-3,
    max_iter=100,
    conv_tol=1e-6,
    perm_method="method5",
    profile_tf=None,
    seed=0,
    threads=None,
))]
#[allow(clippy::too_many_arguments)]
fn separate(
    mixture: Vec<Vec<f64>>,
    sample_rate_hz: u32,
    fft_size: usize,
    window: &str,
    overlap: f64,
    reg_m: f64,
    max_iter: usize,
    conv_tol: f64,
    perm_method: &str,
    profile_tf: Option<usize>,
    seed: u64,
    threads: Option<usize>,
) -> PyResult<Vec<Vec<f64>>> {
    let wave = wave_from_lists(mixture, sample_rate_hz)?;
    let cfg = PipelineConfig {
        fft_size,
        window_kind: parse_window(window)?,
        overlap,
        reg_m,
        max_iter,
        conv_tol,
        perm_method: parse_method(perm_method)?,
        profile_tf: match profile_tf {
            Some(t) => ProfileTf::Frames(t),
            None => ProfileTf::All,
        },
        seed,
        filter_len_eval: 1024,
    };
    let outcome = fdbss::pipeline::separate(&wave, &cfg, threads).map_err(to_py_err)?;
    Ok(outcome.estimates.into_samples())
}

/// SIR/SDR of estimates against references, greedily matched one-to-one.
#[pyfunction]
#[pyo3(signature = (estimates, references, sample_rate_hz=16_000, filter_len=1024))]
fn evaluate(
    estimates: Vec<Vec<f64>>,
    references: Vec<Vec<f64>>,
    sample_rate_hz: u32,
    filter_len: usize,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let est = wave_from_lists(estimates, sample_rate_hz)?;
    let refs = wave_from_lists(references, sample_rate_hz)?;
    fdbss::pipeline::evaluate_separation(&est, &refs, filter_len).map_err(to_py_err)
}

/// Normalized kurtosis of a complex signal given as (re, im) pairs.
#[pyfunction]
fn kurtosis(samples: Vec<(f64, f64)>) -> PyResult<f64> {
    let y: Vec<fdbss::C64> = samples
        .into_iter()
        .map(|(re, im)| fdbss::C64::new(re, im))
        .collect();
    fdbss::ica::kurtosis(&y).map_err(to_py_err)
}

#[pymodule]
fn fdbss_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth_sources, m)?)?;
    m.add_function(wrap_pyfunction!(mix, m)?)?;
    m.add_function(wrap_pyfunction!(separate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(kurtosis, m)?)?;
    Ok(())
}
