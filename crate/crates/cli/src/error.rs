use headpose::dataio::DataError;
use headpose::ffd::FfdError;
use headpose::localizer::LocalizerError;
use headpose::pipeline::EvalError;
use headpose::posenet::PoseError;
use headpose::ConfigError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("evaluation: {0}")]
    Eval(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Eval(_) => 4,
        }
    }

    /// Evaluation failures other than bad configuration or data exit with 4.
    pub fn from_eval(e: EvalError) -> Self {
        match e {
            EvalError::Config(c) => CliError::Config(c.0),
            EvalError::Data(d) => CliError::Data(d.to_string()),
            other => CliError::Eval(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::from_eval(e)
    }
}

impl From<LocalizerError> for CliError {
    fn from(e: LocalizerError) -> Self {
        match e {
            LocalizerError::Config(c) => c.into(),
            LocalizerError::MissingAnnotation(_) => CliError::Data(e.to_string()),
            LocalizerError::Checkpoint(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<FfdError> for CliError {
    fn from(e: FfdError) -> Self {
        match e {
            FfdError::Config(c) => c.into(),
            FfdError::MissingPairs => CliError::Data(e.to_string()),
            FfdError::Checkpoint(_) => CliError::Config(e.to_string()),
            FfdError::History(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<PoseError> for CliError {
    fn from(e: PoseError) -> Self {
        match e {
            PoseError::Config(c) => c.into(),
            PoseError::MissingAnnotation(_) | PoseError::History(_) => CliError::Data(e.to_string()),
            PoseError::Checkpoint(_) => CliError::Config(e.to_string()),
            PoseError::ShapeMismatch(_) | PoseError::FreezeViolated => CliError::Eval(e.to_string()),
        }
    }
}
