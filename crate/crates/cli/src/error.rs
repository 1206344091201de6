use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] rqmc_is::Error),

    /// A failure after some cells finished; their results were written.
    #[error("{source} ({written} result rows kept in {})", dir.display())]
    Partial {
        source: Box<CliError>,
        written: usize,
        dir: PathBuf,
    },
}

impl CliError {
    /// 2 for configuration problems, 3 for everything that fails at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(rqmc_is::Error::Config(_) | rqmc_is::Error::Parse { .. }) => 2,
            CliError::Partial { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
