use std::path::PathBuf;

use polyrbf::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: CoreError,
    },

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// 2 for bad input, 3 for I/O failures, 1 for anything else.
pub fn exit_code(err: &CliError) -> i32 {
    match err {
        CliError::Core(e) | CliError::InFile { source: e, .. } => core_code(e),
        CliError::Usage(_) => 2,
        CliError::Io { .. } => 3,
        CliError::Csv { source, .. } if source.is_io_error() => 3,
        CliError::Csv { .. } | CliError::Internal(_) => 1,
    }
}

fn core_code(e: &CoreError) -> i32 {
    if e.is_io() {
        return 3;
    }
    match e {
        CoreError::Stage { source, .. } => core_code(source),
        _ => 2,
    }
}

/// Attaches the file a core error came from.
pub trait WithPath<T> {
    fn in_file(self, path: &std::path::Path) -> Result<T>;
}

impl<T> WithPath<T> for std::result::Result<T, CoreError> {
    fn in_file(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|source| {
            if source.is_io() {
                CliError::Core(source)
            } else {
                CliError::InFile {
                    path: path.to_path_buf(),
                    source,
                }
            }
        })
    }
}

pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}
