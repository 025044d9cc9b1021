use auxline::corpus::CorpusError;
use auxline::env::EnvError;
use auxline::eval::EvalError;
use auxline::grpo::GrpoError;
use auxline::perturb::PerturbError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
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

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            code: i32,
            message: String,
        }
        serde_json::to_string(&Line {
            error: self.kind(),
            code: self.exit_code(),
            message: self.to_string(),
        })
        .expect("error line serializes")
    }
}

pub fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        data(e)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::NoCueVerbs => CliError::Config(e.to_string()),
            e => data(e),
        }
    }
}

impl From<PerturbError> for CliError {
    fn from(e: PerturbError) -> Self {
        match e {
            PerturbError::NoNegatives => CliError::Config(e.to_string()),
            e => data(e),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        data(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Range { .. } => data(e),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<GrpoError> for CliError {
    fn from(e: GrpoError) -> Self {
        match e {
            GrpoError::NumericFailure { .. } => CliError::Numeric(e.to_string()),
            GrpoError::Config(_) | GrpoError::GroupTooSmall(_) => CliError::Config(e.to_string()),
            e => data(e),
        }
    }
}
