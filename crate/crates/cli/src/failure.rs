use attnfid::Error;
use thiserror::Error as ThisError;

/// Why a command stopped, grouped by exit status.
#[derive(Debug, ThisError)]
pub enum Failure {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Failure {
        Failure::Runtime(format!("{}: {err}", path.display()))
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Failure {
        let text = err.to_string();
        match err {
            Error::Config(_) => Failure::Config(text),
            Error::Schema { .. }
            | Error::Parse { .. }
            | Error::Integrity(_)
            | Error::State(_)
            | Error::Imputation(_)
            | Error::Balance(_)
            | Error::Input(_)
            | Error::Stratification(_)
            | Error::Lookup(_)
            | Error::Csv(_) => Failure::Data(text),
            Error::Tensor(_)
            | Error::Contract(_)
            | Error::Training(_)
            | Error::Metric(_)
            | Error::Size(_)
            | Error::Model(_)
            | Error::Io(_)
            | Error::Json(_) => Failure::Runtime(text),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(err: serde_json::Error) -> Failure {
        Failure::Runtime(err.to_string())
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;
