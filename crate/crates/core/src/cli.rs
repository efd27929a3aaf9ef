//! Command-line entry points: `mix`, `separate`, `evaluate`, `bench`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::align::PermMethod;
use crate::config::{PipelineConfig, ProfileTf};
use crate::error::{Error, Result};
use crate::mixsim::{self, FirMixingSystem};
use crate::pipeline;
use crate::signal_io::{self, MultichannelWave, SeparationReport, WavEncoding};
use crate::tf::WindowKind;

#[derive(Parser, Debug)]
#[command(
    name = "fdbss",
    about = "Frequency-domain blind source separation of convolutive mixtures",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convolve source WAVs through a synthetic room into a mixture WAV.
    Mix(MixArgs),
    /// Separate a multichannel mixture into estimated sources.
    Separate(SeparateArgs),
    /// Score estimated sources against references (SIR/SDR).
    Evaluate(EvaluateArgs),
    /// Sweep one pipeline parameter on a synthetic scenario, emitting CSV.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct MixArgs {
    /// Source WAV files; multichannel files contribute all their channels.
    #[arg(long = "sources", required = true, num_args = 1..)]
    pub sources: Vec<PathBuf>,
    /// Number of sensors (defaults to the number of sources).
    #[arg(long)]
    pub mics: Option<usize>,
    /// Impulse response length in taps.
    #[arg(long, default_value_t = 256)]
    pub taps: usize,
    /// Reverberation time of the synthetic room in milliseconds.
    #[arg(long = "t60-ms", default_value_t = 160.0)]
    pub t60_ms: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct ConfigOverrides {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "fft-size")]
    pub fft_size: Option<usize>,
    #[arg(long, value_enum)]
    pub window: Option<WindowKindArg>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long = "reg-m")]
    pub reg_m: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long = "conv-tol")]
    pub conv_tol: Option<f64>,
    /// Permutation solver (method1..method6).
    #[arg(long = "method", value_enum)]
    pub perm_method: Option<PermMethod>,
    /// Profile length: "all" or a frame count.
    #[arg(long = "profile-tf")]
    pub profile_tf: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "filter-len")]
    pub filter_len: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum WindowKindArg {
    Hann,
    Hamming,
    Rectangular,
}

impl From<WindowKindArg> for WindowKind {
    fn from(w: WindowKindArg) -> Self {
        match w {
            WindowKindArg::Hann => WindowKind::Hann,
            WindowKindArg::Hamming => WindowKind::Hamming,
            WindowKindArg::Rectangular => WindowKind::Rectangular,
        }
    }
}

impl ConfigOverrides {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_json_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.fft_size {
            cfg.fft_size = v;
        }
        if let Some(v) = self.window {
            cfg.window_kind = v.into();
        }
        if let Some(v) = self.overlap {
            cfg.overlap = v;
        }
        if let Some(v) = self.reg_m {
            cfg.reg_m = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.conv_tol {
            cfg.conv_tol = v;
        }
        if let Some(v) = self.perm_method {
            cfg.perm_method = v;
        }
        if let Some(v) = &self.profile_tf {
            cfg.profile_tf = if v == "all" {
                ProfileTf::All
            } else {
                ProfileTf::Frames(v.parse().map_err(|_| {
                    Error::Config(format!("profile-tf must be \"all\" or a count, got {v}"))
                })?)
            };
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.filter_len {
            cfg.filter_len_eval = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct SeparateArgs {
    /// Multichannel mixture WAV.
    #[arg(long)]
    pub mixture: PathBuf,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
    /// Worker threads for the per-bin stages (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Optional reference WAV; when given the report includes SIR/SDR.
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Multichannel WAV of estimated sources.
    #[arg(long)]
    pub estimates: PathBuf,
    /// Multichannel WAV of reference sources.
    #[arg(long)]
    pub references: PathBuf,
    /// Decomposition filter length in taps.
    #[arg(long = "filter-len", default_value_t = 1024)]
    pub filter_len: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchAxis {
    PermMethod,
    Window,
    Overlap,
    FftSize,
    SignalLength,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Sweep axis.
    #[arg(long, value_enum)]
    pub axis: BenchAxis,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Scenario duration in seconds (signal_length sweeps override this).
    #[arg(long = "duration-s", default_value_t = 9.0)]
    pub duration_s: f64,
    /// Scenario impulse response length in taps.
    #[arg(long, default_value_t = 256)]
    pub taps: usize,
    #[arg(long = "t60-ms", default_value_t = 160.0)]
    pub t60_ms: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Sidecar describing how a mixture was produced.
#[derive(Debug, Serialize, Deserialize)]
pub struct MixSidecar {
    pub seed: u64,
    pub taps: usize,
    pub t60_ms: f64,
    pub taps_path: String,
    pub sources: usize,
    pub sensors: usize,
    pub sample_rate_hz: u32,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mix(args) => run_mix(&args),
        Command::Separate(args) => run_separate(&args),
        Command::Evaluate(args) => run_evaluate(&args),
        Command::Bench(args) => run_bench(&args),
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads one or more WAVs and stacks their channels as sources.
fn load_sources(paths: &[PathBuf]) -> Result<MultichannelWave> {
    let mut channels: Vec<Vec<f64>> = Vec::new();
    let mut rate = None;
    let mut len = None;
    for path in paths {
        let wave = signal_io::read_wav(path)?;
        match rate {
            None => rate = Some(wave.sample_rate_hz()),
            Some(r) if r != wave.sample_rate_hz() => {
                return Err(Error::InvalidArgument(format!(
                    "{}: sample rate {} differs from {r}; resampling is not supported",
                    path.display(),
                    wave.sample_rate_hz()
                )));
            }
            _ => {}
        }
        match len {
            None => len = Some(wave.len()),
            Some(k) if k != wave.len() => {
                return Err(Error::InvalidArgument(format!(
                    "{}: length {} differs from {k}",
                    path.display(),
                    wave.len()
                )));
            }
            _ => {}
        }
        channels.extend(wave.into_samples());
    }
    MultichannelWave::new(channels, rate.unwrap())
}

pub fn run_mix(args: &MixArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let sources = load_sources(&args.sources)?;
    let n = sources.channels();
    let m = args.mics.unwrap_or(n);
    let sys = mixsim::gen_rir(args.seed, m, n, args.taps, args.t60_ms, sources.sample_rate_hz())?;
    let mixture = mixsim::convolve_mix(&sources, &sys)?;

    let mixture_path = args.out.join("mixture.wav");
    signal_io::write_wav(&mixture_path, &mixture, WavEncoding::Float32)?;
    let taps_path = args.out.join("taps.json");
    write_json(&taps_path, &sys)?;
    let sidecar = MixSidecar {
        seed: args.seed,
        taps: args.taps,
        t60_ms: args.t60_ms,
        taps_path: "taps.json".into(),
        sources: n,
        sensors: m,
        sample_rate_hz: sources.sample_rate_hz(),
    };
    write_json(&args.out.join("mixture.json"), &sidecar)?;
    println!(
        "wrote {} ({m} sensors, {n} sources, {} taps, t60 {} ms)",
        mixture_path.display(),
        args.taps,
        args.t60_ms
    );
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_mix_sidecar(path: &Path) -> Result<MixSidecar> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))
}

pub fn read_taps(path: &Path) -> Result<FirMixingSystem> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))
}

pub fn run_separate(args: &SeparateArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let cfg = args.overrides.resolve()?;
    let mixture = signal_io::read_wav(&args.mixture)?;
    let mut outcome = pipeline::separate(&mixture, &cfg, args.threads)?;

    for n in 0..outcome.estimates.channels() {
        let wave = MultichannelWave::new(
            vec![outcome.estimates.channel(n).to_vec()],
            outcome.estimates.sample_rate_hz(),
        )?;
        signal_io::write_wav(
            args.out.join(format!("source_{}.wav", n + 1)),
            &wave,
            WavEncoding::Float32,
        )?;
    }
    pipeline::write_demixing(args.out.join("demixing.bin"), cfg.fft_size, &outcome.total_demix)?;

    if let Some(ref_path) = &args.references {
        let references = signal_io::read_wav(ref_path)?;
        let (sir, sdr) =
            pipeline::evaluate_separation(&outcome.estimates, &references, cfg.filter_len_eval)?;
        outcome.report.sir_db = sir;
        outcome.report.sdr_db = sdr;
    }
    signal_io::write_report(args.out.join("report.json"), &outcome.report)?;
    if outcome.stalled_extractions > 0 {
        eprintln!(
            "warning: {} per-bin extractions stalled before converging",
            outcome.stalled_extractions
        );
    }
    println!(
        "wrote {} estimated sources to {}",
        outcome.estimates.channels(),
        args.out.display()
    );
    Ok(())
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let estimates = signal_io::read_wav(&args.estimates)?;
    let references = signal_io::read_wav(&args.references)?;
    let start = Instant::now();
    let (sir, sdr) = pipeline::evaluate_separation(&estimates, &references, args.filter_len)?;
    let mut stages = std::collections::BTreeMap::new();
    stages.insert(
        "evaluate".to_string(),
        start.elapsed().as_secs_f64() * 1000.0,
    );
    let mut cfg = PipelineConfig::default();
    cfg.filter_len_eval = args.filter_len;
    let report = SeparationReport {
        sources: estimates.channels(),
        sir_db: sir.clone(),
        sdr_db: sdr.clone(),
        stages,
        config: cfg,
    };
    signal_io::write_report(args.out.join("report.json"), &report)?;
    for (i, (s, d)) in sir.iter().zip(&sdr).enumerate() {
        println!("source {}: SIR {s:.2} dB, SDR {d:.2} dB", i + 1);
    }
    Ok(())
}

pub const BENCH_CSV_HEADER: &str =
    "axis,value,source,sir_db,sdr_db,cpu_stft_ms,cpu_ica_ms,cpu_perm_ms,cpu_total_ms";

pub fn run_bench(args: &BenchArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let base = args.overrides.resolve()?;
    let fs_hz = 16_000u32;

    let sweep: Vec<String> = match args.axis {
        BenchAxis::PermMethod => ["method1", "method2", "method3", "method4", "method5", "method6"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        BenchAxis::Window => ["hann", "hamming", "rectangular"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        BenchAxis::Overlap => ["0.50", "0.65", "0.75"].iter().map(|s| s.to_string()).collect(),
        BenchAxis::FftSize => ["256", "512", "1024", "2048"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        BenchAxis::SignalLength => ["1", "3", "9"].iter().map(|s| s.to_string()).collect(),
    };
    let axis_name = match args.axis {
        BenchAxis::PermMethod => "perm_method",
        BenchAxis::Window => "window",
        BenchAxis::Overlap => "overlap",
        BenchAxis::FftSize => "fft_size",
        BenchAxis::SignalLength => "signal_length",
    };

    let scenario = |duration_s: f64| -> Result<(MultichannelWave, MultichannelWave)> {
        let samples = (duration_s * f64::from(fs_hz)) as usize;
        let sources = mixsim::gen_sources(base.seed, 2, samples, fs_hz)?;
        let sys = mixsim::gen_rir(base.seed ^ 0x5eed, 2, 2, args.taps, args.t60_ms, fs_hz)?;
        let mixture = mixsim::convolve_mix(&sources, &sys)?;
        Ok((sources, mixture))
    };
    let default_scenario = scenario(args.duration_s)?;

    let mut rows = vec![BENCH_CSV_HEADER.to_string()];
    for value in &sweep {
        let mut cfg = base.clone();
        let (sources, mixture);
        let (sources_ref, mixture_ref) = match args.axis {
            BenchAxis::PermMethod => {
                cfg.perm_method = match value.as_str() {
                    "method1" => PermMethod::Method1,
                    "method2" => PermMethod::Method2,
                    "method3" => PermMethod::Method3,
                    "method4" => PermMethod::Method4,
                    "method5" => PermMethod::Method5,
                    _ => PermMethod::Method6,
                };
                (&default_scenario.0, &default_scenario.1)
            }
            BenchAxis::Window => {
                cfg.window_kind = match value.as_str() {
                    "hann" => WindowKind::Hann,
                    "hamming" => WindowKind::Hamming,
                    _ => WindowKind::Rectangular,
                };
                (&default_scenario.0, &default_scenario.1)
            }
            BenchAxis::Overlap => {
                cfg.overlap = value.parse().unwrap();
                (&default_scenario.0, &default_scenario.1)
            }
            BenchAxis::FftSize => {
                cfg.fft_size = value.parse().unwrap();
                (&default_scenario.0, &default_scenario.1)
            }
            BenchAxis::SignalLength => {
                let d: f64 = value.parse().unwrap();
                (sources, mixture) = scenario(d)?;
                (&sources, &mixture)
            }
        };
        cfg.validate()?;
        let outcome = pipeline::separate(mixture_ref, &cfg, args.threads)?;
        let (sir, sdr) =
            pipeline::evaluate_separation(&outcome.estimates, sources_ref, cfg.filter_len_eval)?;
        let stages = &outcome.report.stages;
        let stage = |name: &str| stages.get(name).copied().unwrap_or(0.0);
        for (src, (s, d)) in sir.iter().zip(&sdr).enumerate() {
            rows.push(format!(
                "{axis_name},{value},{source},{s:.4},{d:.4},{stft:.3},{ica:.3},{perm:.3},{total:.3}",
                source = src + 1,
                stft = stage("stft"),
                ica = stage("ica"),
                perm = stage("perm"),
                total = stage("total"),
            ));
        }
    }

    let csv_path = args.out.join("bench.csv");
    fs::write(&csv_path, rows.join("\n") + "\n").map_err(|e| Error::io(&csv_path, e))?;
    println!("wrote {}", csv_path.display());
    Ok(())
}
