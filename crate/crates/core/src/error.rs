use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("cannot open {}: {source}", path.display())]
    Open {
        path: std::path::PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },

    #[error("unparseable timestamp {0:?}")]
    Timestamp(String),

    #[error("conflicting duplicate rev_id {0}")]
    DuplicateRevision(u64),

    #[error("{path}:{line}: {message}")]
    Rule {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("label {0} does not occur in the data")]
    LabelAbsent(String),

    #[error("kernel density estimate needs at least 2 distinct durations, got {0}; use a histogram instead")]
    TooFewDistinct(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("truth labels missing for rev_ids {0:?}")]
    MissingTruth(Vec<u64>),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Data(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Opens a file for reading, naming it in the error.
pub fn open_file(path: &std::path::Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| Error::Open {
        path: path.to_path_buf(),
        source,
    })
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
