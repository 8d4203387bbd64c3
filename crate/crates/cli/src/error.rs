use std::path::Path;

use jointvip_core::balance::BalanceError;
use jointvip_core::dataset::DataError;
use jointvip_core::inference::InferenceError;
use jointvip_core::matchopt::MatchError;
use jointvip_core::pilot::PilotError;
use jointvip_core::scores::ScoreError;
use jointvip_core::viz::VizError;
use serde::Serialize;
use thiserror::Error;

/// Failure of a CLI stage. The variant fixes the exit code:
///
/// | code | meaning |
/// |------|---------|
/// | 2    | invalid configuration or command line |
/// | 3    | unreadable or invalid input data |
/// | 4    | numerical failure (fit, match or test impossible) |
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    code: i32,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    /// One-line JSON record for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&ErrorLine { error: self.kind(), code: self.exit_code(), message: self.to_string() })
            .expect("error line serializes")
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    /// Prefixes the message with a context label, keeping the category.
    pub fn context(self, label: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{label}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{label}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{label}: {m}")),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PilotError> for CliError {
    fn from(e: PilotError) -> Self {
        match e {
            PilotError::InvalidFraction(_) | PilotError::InvalidControlsPerTreated | PilotError::MissingExternal => {
                CliError::Config(e.to_string())
            }
            PilotError::Match(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Data(d) => d.into(),
            ScoreError::InvalidLambda(_) | ScoreError::InvalidFolds { .. } | ScoreError::InvalidBinCount(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<BalanceError> for CliError {
    fn from(e: BalanceError) -> Self {
        match e {
            BalanceError::Data(d) => d.into(),
            BalanceError::PilotHasTreated => CliError::Data(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::Data(d) => d.into(),
            MatchError::Balance(b) => b.into(),
            MatchError::ContinuousTierVariable(_) | MatchError::OverlappingTiers(_) | MatchError::InvalidCaliper(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::NonBinaryOutcome { .. } | InferenceError::MissingOutcome(_) | InferenceError::EmptyPairs => {
                CliError::Data(e.to_string())
            }
            InferenceError::InvalidAlpha(_) | InferenceError::InvalidStep(_) | InferenceError::InvalidGamma(_) => {
                CliError::Config(e.to_string())
            }
            InferenceError::NoDiscordantPairs => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<VizError> for CliError {
    fn from(e: VizError) -> Self {
        match e {
            VizError::InvalidLevels | VizError::CanvasTooSmall => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Numeric(format!("serialization failed: {e}"))
    }
}
