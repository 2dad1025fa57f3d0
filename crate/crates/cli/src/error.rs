//! Error classes of the pipeline driver and their process exit codes.

use std::io;
use std::path::PathBuf;

use exemvad_core::cropper::CropError;
use exemvad_core::describe::DescribeError;
use exemvad_core::eval::EvalError;
use exemvad_core::exemplar::ExemplarError;
use exemvad_core::fuse::FuseError;
use exemvad_core::ingest::IngestError;
use exemvad_core::pairing::PairingError;
use exemvad_core::score::ScoreError;
use exemvad_core::synth::SynthError;
use exemvad_core::textdist::TextDistError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage `{stage}` has not produced {}; run `{stage}` first", .path.display())]
    StageDependency { stage: String, path: PathBuf },
    #[error("input: {0}")]
    Input(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("model: {0}")]
    Model(String),
    #[error("eval: {0}")]
    Eval(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    /// Distinct nonzero exit code per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::StageDependency { .. } => 3,
            CliError::Input(_) => 4,
            CliError::Backend(_) => 5,
            CliError::Model(_) => 6,
            CliError::Eval(_) => 7,
            CliError::Io { .. } => 8,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PairingError> for CliError {
    fn from(e: PairingError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CropError> for CliError {
    fn from(e: CropError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DescribeError> for CliError {
    fn from(e: DescribeError) -> Self {
        match e {
            DescribeError::Parse { .. } => CliError::Input(e.to_string()),
            DescribeError::Io(source) => CliError::io("description cache", source),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<TextDistError> for CliError {
    fn from(e: TextDistError) -> Self {
        match e {
            TextDistError::Backend(_) | TextDistError::CountMismatch { .. } => CliError::Backend(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<ExemplarError> for CliError {
    fn from(e: ExemplarError) -> Self {
        match e {
            ExemplarError::InvalidThreshold(_) => CliError::Config(e.to_string()),
            ExemplarError::Distance(inner) => inner.into(),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Model(inner) => inner.into(),
            ScoreError::TextDist(inner) => inner.into(),
            ScoreError::Parse { .. } => CliError::Input(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<FuseError> for CliError {
    fn from(e: FuseError) -> Self {
        match e {
            FuseError::NoActiveAttributes | FuseError::UnknownAttribute(_) | FuseError::Config(_) => CliError::Config(e.to_string()),
            FuseError::Model(inner) => inner.into(),
            FuseError::TextDist(inner) => inner.into(),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Eval(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_and_nonzero() {
        let all = [
            CliError::Config(String::new()),
            CliError::StageDependency {
                stage: "pair".into(),
                path: "x".into(),
            },
            CliError::Input(String::new()),
            CliError::Backend(String::new()),
            CliError::Model(String::new()),
            CliError::Eval(String::new()),
            CliError::io("x", io::Error::other("boom")),
        ];
        let mut codes: Vec<i32> = all.iter().map(CliError::exit_code).collect();
        assert!(codes.iter().all(|&c| c != 0));
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), all.len());
    }

    #[test]
    fn invalid_threshold_is_a_config_error() {
        let e: CliError = ExemplarError::InvalidThreshold(0.0).into();
        assert_eq!(e.exit_code(), 2);
    }
}
