//! Resolved pipeline configuration, shared between the CLI, the report
//! snapshot and the Python bindings.

use serde::{Deserialize, Serialize};

use crate::align::PermMethod;
use crate::error::{Error, Result};
use crate::tf::{WindowKind, WindowSpec};

/// Profile length for the permutation stage: either every STFT frame or a
/// fixed number of overlapping blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileTf {
    #[serde(with = "all_frames")]
    All,
    Frames(usize),
}

mod all_frames {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str("all")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<(), D::Error> {
        let v = String::deserialize(d)?;
        if v == "all" {
            Ok(())
        } else {
            Err(serde::de::Error::custom("expected \"all\""))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub fft_size: usize,
    pub window_kind: WindowKind,
    pub overlap: f64,
    pub reg_m: f64,
    pub max_iter: usize,
    pub conv_tol: f64,
    pub perm_method: PermMethod,
    pub profile_tf: ProfileTf,
    pub seed: u64,
    pub filter_len_eval: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fft_size: 1024,
            window_kind: WindowKind::Hamming,
            overlap: 0.65,
            reg_m: 1e-3,
            max_iter: 100,
            conv_tol: 1e-6,
            perm_method: PermMethod::Method5,
            profile_tf: ProfileTf::All,
            seed: 0,
            filter_len_eval: 1024,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size % 2 != 0 || self.fft_size < 4 {
            return Err(Error::Config(format!(
                "fft_size must be even and >= 4, got {}",
                self.fft_size
            )));
        }
        if self.conv_tol <= 0.0 {
            return Err(Error::Config("conv_tol must be positive".into()));
        }
        if self.reg_m < 0.0 {
            return Err(Error::Config("reg_m must be non-negative".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if self.filter_len_eval == 0 {
            return Err(Error::Config("filter_len_eval must be positive".into()));
        }
        if let ProfileTf::Frames(0) = self.profile_tf {
            return Err(Error::Config("profile_tf must be positive".into()));
        }
        self.window_spec().map(|_| ())
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.window_kind, self.fft_size, self.overlap)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
