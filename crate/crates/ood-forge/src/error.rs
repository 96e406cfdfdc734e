use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: header implies {expected} body bytes, found {found}")]
    Length { expected: u64, found: u64 },
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Core(#[from] ood_forge_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Attaches a file name to format and length errors.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Io { .. } | Error::InFile { .. } => self,
            other => Error::InFile {
                path: path.into(),
                source: Box::new(other),
            },
        }
    }

    /// Process exit status: 2 configuration, 3 data, 4 numerical, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use ood_forge_core::Error as Core;
        match self {
            Error::Io { .. } => 1,
            Error::Config(_) => 2,
            Error::Format(_) | Error::Length { .. } => 3,
            Error::InFile { source, .. } => source.exit_code(),
            Error::Core(e) if e.is_numerical() => 4,
            Error::Core(Core::InvalidParameter(_) | Core::InvalidFraction(_) | Core::Parse(_)) => 2,
            Error::Core(_) => 3,
        }
    }
}
