use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage, used to tag errors raised during an end-to-end run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Features,
    Labels,
    Training,
    Evaluation,
    Fusion,
    Output,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Labels => "labels",
            Stage::Training => "training",
            Stage::Evaluation => "evaluation",
            Stage::Fusion => "fusion",
            Stage::Output => "output",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error in {path}: missing required columns [{}]", missing.join(", "))]
    MissingColumns { path: PathBuf, missing: Vec<String> },

    #[error("{0} is empty")]
    EmptyInput(PathBuf),

    #[error("rejected record: field {field} is not finite ({value})")]
    NonFinite { field: &'static str, value: f64 },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("board {panel_id}/{figure_id}: {message}")]
    Structural {
        panel_id: u32,
        figure_id: u32,
        message: String,
    },

    #[error("training failed: {0}")]
    Train(String),

    #[error("non-finite training loss at round {round}")]
    NonFiniteLoss { round: usize },

    #[error("feature columns do not match the model: {0}")]
    ColumnMismatch(String),

    #[error("signal calibration did not converge: {0}")]
    Calibration(String),

    #[error("model format error at line {line}: {message}")]
    ModelFormat { line: usize, message: String },

    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Broad error category, used by front ends to choose an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Training,
    Io,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, stage: Stage) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::MissingColumns { .. }
            | Error::EmptyInput(_)
            | Error::NonFinite { .. }
            | Error::Data(_)
            | Error::Structural { .. }
            | Error::ColumnMismatch(_)
            | Error::ModelFormat { .. } => ErrorKind::Data,
            Error::Train(_) | Error::NonFiniteLoss { .. } | Error::Calibration(_) => {
                ErrorKind::Training
            }
            Error::Io { .. } => ErrorKind::Io,
            Error::Csv { source, .. } => match source.kind() {
                csv::ErrorKind::Io(_) => ErrorKind::Io,
                _ => ErrorKind::Data,
            },
            Error::Stage { source, .. } => source.kind(),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
