use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage, attached to errors surfaced by a full run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Impute,
    Normalize,
    Pca,
    Features,
    Cluster,
    Targets,
    Train,
    Score,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Load => "load",
            Stage::Impute => "impute",
            Stage::Normalize => "normalize",
            Stage::Pca => "pca",
            Stage::Features => "features",
            Stage::Cluster => "cluster",
            Stage::Targets => "targets",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Report => "report",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("cannot impute indicator `{indicator}` for group `{group}`: no present values")]
    Imputation { group: String, indicator: String },

    #[error("indicator `{0}` is constant (max == min), cannot normalize")]
    DegenerateColumn(String),

    #[error("all raw scores are equal, cannot scale to [1, 7]")]
    DegenerateScores,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, stage: Stage) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 1 for input/validation errors, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::NumericalFailure(_) | Error::DegenerateScores => 2,
            _ => 1,
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
