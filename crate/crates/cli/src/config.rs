use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use spectral_enkf::synthetic::SyntheticConfig;
use spectral_enkf::TransformKind;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TransformMatrix,
    CovarianceCompare,
    Assimilate,
}

impl FromStr for ExperimentKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transform_matrix" | "transform-matrix" => Ok(Self::TransformMatrix),
            "covariance_compare" | "covariance-compare" => Ok(Self::CovarianceCompare),
            "assimilate" => Ok(Self::Assimilate),
            other => Err(CliError::Config(format!("unknown experiment `{other}`"))),
        }
    }
}

/// Analysis method compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Classical,
    Fft,
    Wavelet,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Classical => "classical",
            MethodName::Fft => "fft",
            MethodName::Wavelet => "wavelet",
        }
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodName {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classical" | "enkf" => Ok(Self::Classical),
            "fft" | "sine" | "dst" => Ok(Self::Fft),
            "wavelet" => Ok(Self::Wavelet),
            other => Err(CliError::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

impl FromStr for OutputFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(CliError::Config(format!("unknown output format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformChoice {
    Identity,
    Sine,
    Wavelet,
}

impl TransformChoice {
    pub fn kind(self) -> TransformKind {
        match self {
            TransformChoice::Identity => TransformKind::Identity,
            TransformChoice::Sine => TransformKind::SineOrthonormal,
            TransformChoice::Wavelet => TransformKind::WaveletPeriodized,
        }
    }
}

impl FromStr for TransformChoice {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Self::Identity),
            "sine" | "dst" | "dst1" | "fft" => Ok(Self::Sine),
            "wavelet" | "coif2" => Ok(Self::Wavelet),
            other => Err(CliError::Config(format!("unknown transform `{other}`"))),
        }
    }
}

/// Full experiment description; mirrors the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// Grid size of both variables.
    pub n: usize,
    /// Size of the small ensemble.
    pub members: usize,
    /// Size of the reference ensemble; the small ensemble is its prefix.
    pub reference_members: usize,
    pub smooth_amplitude: f64,
    /// Highest sine frequency of the smooth field; `n/2` when absent.
    pub max_frequency: Option<usize>,
    pub methods: Vec<MethodName>,
    /// Wavelet octaves; `min(5, log2 n)` when absent.
    pub octaves: Option<usize>,
    pub wavelet: String,
    /// Transform exported by the `transform_matrix` experiment.
    pub transform: TransformChoice,
    pub recenter_perturbations: bool,
    pub out: PathBuf,
    pub formats: Vec<OutputFormat>,
    /// Rayon worker count; the global default when absent.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Assimilate,
            seed: 0,
            n: 128,
            members: 10,
            reference_members: 1000,
            smooth_amplitude: 0.2,
            max_frequency: None,
            methods: vec![MethodName::Classical, MethodName::Fft, MethodName::Wavelet],
            octaves: None,
            wavelet: "coif2".into(),
            transform: TransformChoice::Wavelet,
            recenter_perturbations: false,
            out: PathBuf::from("out"),
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn synthetic(&self) -> SyntheticConfig {
        let mut cfg = SyntheticConfig::with_size(self.n);
        cfg.members = self.members;
        cfg.seed = self.seed;
        cfg.smooth_amplitude = self.smooth_amplitude;
        if let Some(m) = self.max_frequency {
            cfg.max_frequency = m;
        }
        cfg
    }

    pub fn wants(&self, format: OutputFormat) -> bool {
        self.formats.contains(&format)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n < 2 {
            return Err(CliError::Config(format!(
                "grid size must be at least 2, got {}",
                self.n
            )));
        }
        if self.members < 2 {
            return Err(CliError::Config(format!(
                "ensemble size must be at least 2, got {}",
                self.members
            )));
        }
        if self.experiment == ExperimentKind::CovarianceCompare
            && self.reference_members < self.members
        {
            return Err(CliError::Config(
                "reference ensemble must be at least as large as the small ensemble".into(),
            ));
        }
        if self.experiment == ExperimentKind::Assimilate && self.methods.is_empty() {
            return Err(CliError::Config("at least one method is required".into()));
        }
        if self.wavelet != "coif2" && self.wavelet != "haar" {
            return Err(CliError::Config(format!(
                "unknown wavelet `{}`",
                self.wavelet
            )));
        }
        if self.out.as_os_str().is_empty() {
            return Err(CliError::Config("output directory is empty".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("worker count must be positive".into()));
        }
        Ok(())
    }
}
