//! Configuration, expression grammar, archives, CSV and the pipeline
//! behind the `orclf` command line.

pub mod archive;
pub mod config;
pub mod csvio;
pub mod expr;
pub mod pipeline;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("{0}")]
    Config(String),
    #[error("archive: {0}")]
    Archive(String),
    #[error("io: {0}")]
    Io(String),
    #[error("{0}")]
    Core(#[from] orclf_core::Error),
    #[error("synthesis failed: {0}")]
    Synthesis(String),
    #[error("property failure: {0}")]
    Property(String),
}

impl ToolError {
    /// 1 property failure, 2 usage or config, 3 synthesis.
    pub fn exit_code(&self) -> i32 {
        use orclf_core::Error as E;
        match self {
            Self::Property(_) => 1,
            Self::Config(_) | Self::Archive(_) | Self::Io(_) => 2,
            Self::Core(E::Config(_) | E::Domain(_) | E::Precondition(_)) => 2,
            Self::Core(_) | Self::Synthesis(_) => 3,
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path, e: std::io::Error) -> ToolError {
    ToolError::Io(format!("{}: {e}", path.display()))
}
