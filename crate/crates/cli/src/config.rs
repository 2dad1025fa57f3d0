//! Pipeline configuration: one TOML file, environment overrides for backend
//! URLs, and command-line overrides on top of both.
//!
//! Secrets never live in the file. Every section rejects unknown keys, so an
//! `api_key` entry is a configuration error; the key is read from
//! `EXEMVAD_API_KEY` by the HTTP clients.

use std::path::{Path, PathBuf};

use exemvad_core::cropper::CropConfig;
use exemvad_core::eval::EvalConfig;
use exemvad_core::exemplar::{validate_threshold, DEFAULT_TH};
use exemvad_core::fuse::FusionConfig;
use exemvad_core::ingest::VideoMeta;
use exemvad_core::pairing::{PairingConfig, DEFAULT_DELTA};
use exemvad_core::textdist::DistanceKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DESCRIBE_URL_ENV: &str = "EXEMVAD_DESCRIBE_URL";
pub const EMBED_URL_ENV: &str = "EXEMVAD_EMBED_URL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads for data-parallel stages; 0 keeps the rayon default.
    pub workers: usize,
    pub paths: PathsConfig,
    pub pairing: PairingSection,
    pub crop: CropSection,
    pub backends: BackendsConfig,
    pub exemplar: ExemplarSection,
    pub fusion: FusionConfig,
    pub eval: EvalConfig,
    pub synth: SynthSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            workers: 0,
            paths: PathsConfig::default(),
            pairing: PairingSection::default(),
            crop: CropSection::default(),
            backends: BackendsConfig::default(),
            exemplar: ExemplarSection::default(),
            fusion: FusionConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthSection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Input videos, one directory per video. Unused when the data comes
    /// from the `synth` stage.
    pub data: Option<PathBuf>,
    pub stage_dir: PathBuf,
    /// Training video ids; empty means every `train*` directory.
    pub train: Vec<String>,
    /// Test video ids; empty means every `test*` directory.
    pub test: Vec<String>,
    /// Prebuilt model used by `score` instead of the `build` output.
    pub model: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingSection {
    /// Pairing threshold in pixels; unset means a quarter of the frame
    /// diagonal.
    pub h: Option<f64>,
    pub delta: u32,
    pub stride: u32,
}

impl Default for PairingSection {
    fn default() -> Self {
        Self {
            h: None,
            delta: DEFAULT_DELTA,
            stride: DEFAULT_DELTA,
        }
    }
}

impl PairingSection {
    pub fn resolve(&self, meta: &VideoMeta) -> PairingConfig {
        let mut cfg = PairingConfig::for_video(meta);
        if let Some(h) = self.h {
            cfg.h = h;
        }
        cfg.delta = self.delta;
        cfg.stride = self.stride;
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropSection {
    pub w_min: f64,
    pub h_min: f64,
    pub stroke: u32,
}

impl Default for CropSection {
    fn default() -> Self {
        let d = CropConfig::default();
        Self {
            w_min: d.w_min,
            h_min: d.h_min,
            stroke: d.stroke_px,
        }
    }
}

impl From<CropSection> for CropConfig {
    fn from(c: CropSection) -> Self {
        CropConfig {
            w_min: c.w_min,
            h_min: c.h_min,
            stroke_px: c.stroke,
        }
    }
}

/// Where a backend lives: the in-process mock or an HTTP service.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum BackendSpec {
    #[default]
    Mock,
    Http(String),
}

impl BackendSpec {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("mock") {
            Ok(BackendSpec::Mock)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(BackendSpec::Http(s.to_string()))
        } else {
            Err(CliError::Config(format!("backend must be \"mock\" or an http(s) URL, got {s:?}")))
        }
    }

    pub fn as_string(&self) -> String {
        match self {
            BackendSpec::Mock => "mock".into(),
            BackendSpec::Http(url) => url.clone(),
        }
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.as_string())
    }
}

impl<'de> Deserialize<'de> for BackendSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        BackendSpec::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub describe: BackendSpec,
    pub embed: BackendSpec,
    /// Maximum concurrent backend requests.
    pub in_flight: usize,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub embed_batch: usize,
    /// Description cache; unset disables caching.
    pub cache_dir: Option<PathBuf>,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            describe: BackendSpec::Mock,
            embed: BackendSpec::Mock,
            in_flight: 4,
            timeout_secs: 60,
            max_retries: 4,
            embed_batch: 32,
            cache_dir: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExemplarSection {
    pub th: f64,
    pub distance: DistanceKind,
}

impl Default for ExemplarSection {
    fn default() -> Self {
        Self {
            th: DEFAULT_TH,
            distance: DistanceKind::Cosine,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Generate the synthetic suite instead of reading `paths.data`.
    pub enabled: bool,
    pub train_videos: usize,
    pub test_videos: usize,
    pub frames: u64,
    /// Render every n-th frame. Must divide the anchor stride and delta.
    pub image_every: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            enabled: false,
            train_videos: 5,
            test_videos: 3,
            frames: 600,
            image_every: 30,
        }
    }
}

/// Command-line overrides, applied after the file and the environment.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub stage_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub backend_describe: Option<String>,
    pub backend_embed: Option<String>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` (or starts from defaults), then applies environment and
    /// command-line overrides and validates the result.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
        if let Some(url) = get(DESCRIBE_URL_ENV).filter(|v| !v.is_empty()) {
            self.backends.describe = BackendSpec::parse(&url)?;
        }
        if let Some(url) = get(EMBED_URL_ENV).filter(|v| !v.is_empty()) {
            self.backends.embed = BackendSpec::parse(&url)?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(d) = &o.stage_dir {
            self.paths.stage_dir = d.clone();
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(b) = &o.backend_describe {
            self.backends.describe = BackendSpec::parse(b)?;
        }
        if let Some(b) = &o.backend_embed {
            self.backends.embed = BackendSpec::parse(b)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        validate_threshold(self.exemplar.th).map_err(|e| CliError::Config(e.to_string()))?;
        if self.pairing.delta == 0 {
            return Err(CliError::Config("pairing.delta must be at least 1".into()));
        }
        if self.pairing.stride == 0 {
            return Err(CliError::Config("pairing.stride must be at least 1".into()));
        }
        if let Some(h) = self.pairing.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::Config(format!("pairing.h must be positive, got {h}")));
            }
        }
        if !(self.crop.w_min >= 0.0 && self.crop.h_min >= 0.0) {
            return Err(CliError::Config("crop.w_min and crop.h_min must be non-negative".into()));
        }
        if self.backends.in_flight == 0 {
            return Err(CliError::Config("backends.in_flight must be at least 1".into()));
        }
        if self.backends.embed_batch == 0 {
            return Err(CliError::Config("backends.embed_batch must be at least 1".into()));
        }
        self.fusion.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.eval.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.synth.image_every == 0 || self.pairing.stride as u64 % self.synth.image_every != 0 || self.pairing.delta as u64 % self.synth.image_every != 0 {
            return Err(CliError::Config(format!(
                "synth.image_every ({}) must divide pairing.stride ({}) and pairing.delta ({})",
                self.synth.image_every, self.pairing.stride, self.pairing.delta
            )));
        }
        if self.paths.stage_dir.as_os_str().is_empty() {
            return Err(CliError::Config("paths.stage_dir is not set (config or --stage-dir)".into()));
        }
        Ok(())
    }

    /// Hash of everything that can change an artifact. Paths, the input
    /// source switch, worker count and transport tuning are excluded, so the
    /// same inputs processed in a different directory or with a different
    /// thread count hash equally.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Semantic<'a> {
            seed: u64,
            train: &'a [String],
            test: &'a [String],
            pairing: &'a PairingSection,
            crop: &'a CropSection,
            describe: String,
            embed: String,
            exemplar: &'a ExemplarSection,
            fusion: &'a FusionConfig,
            eval: &'a EvalConfig,
            synth: SynthSection,
        }
        let view = Semantic {
            seed: self.seed,
            train: &self.paths.train,
            test: &self.paths.test,
            pairing: &self.pairing,
            crop: &self.crop,
            describe: self.backends.describe.as_string(),
            embed: self.backends.embed.as_string(),
            exemplar: &self.exemplar,
            fusion: &self.fusion,
            eval: &self.eval,
            synth: SynthSection {
                enabled: false,
                ..self.synth
            },
        };
        let bytes = serde_json::to_vec(&view).expect("config serializes");
        exemvad_core::digest::sha256_hex(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let mut cfg = PipelineConfig::default();
        cfg.paths.stage_dir = "out".into();
        let text = toml::to_string(&cfg).unwrap();
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
    }

    #[test]
    fn api_key_in_file_is_rejected() {
        let err = PipelineConfig::from_toml("[backends]\napi_key = \"sk-123\"\n").unwrap_err();
        assert!(matches!(err, CliError::Config(ref m) if m.contains("api_key")), "{err}");
    }

    #[test]
    fn env_then_flags_override_file() {
        let mut cfg = PipelineConfig::from_toml("[backends]\ndescribe = \"mock\"\n").unwrap();
        cfg.apply_env(|k| (k == DESCRIBE_URL_ENV).then(|| "http://env:1".to_string())).unwrap();
        assert_eq!(cfg.backends.describe, BackendSpec::Http("http://env:1".into()));
        cfg.apply_overrides(&Overrides {
            backend_describe: Some("mock".into()),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(cfg.backends.describe, BackendSpec::Mock);
    }

    #[test]
    fn threshold_outside_open_interval_is_invalid() {
        for th in [0.0, 2.0, -1.0, f64::NAN] {
            let mut cfg = PipelineConfig::default();
            cfg.paths.stage_dir = "out".into();
            cfg.exemplar.th = th;
            assert!(matches!(cfg.validate(), Err(CliError::Config(_))), "th = {th}");
        }
    }

    #[test]
    fn config_hash_ignores_paths_and_workers() {
        let mut a = PipelineConfig::default();
        a.paths.stage_dir = "a".into();
        let mut b = a.clone();
        b.paths.stage_dir = "b".into();
        b.workers = 7;
        assert_eq!(a.config_hash(), b.config_hash());
        b.exemplar.th = 0.5;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
