use std::io;

use patchdb_core::etl::Violation;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Core(#[from] patchdb_core::Error),
    #[error("frame {found} arrived where frame {expected} was expected")]
    OutOfOrderFrame { expected: u64, found: u64 },
    #[error("frame {found_video}/{frame_no} does not belong to video {video}")]
    ForeignFrame { video: String, found_video: String, frame_no: u64 },
    #[error("frame {0} is not stored")]
    MissingFrame(u64),
    #[error("base frame {video}/{frame_no} is not in store {store}")]
    MissingBaseFrame { store: String, video: String, frame_no: u64 },
    #[error("patch {0:#018x} is already in the collection")]
    DuplicatePatch(u64),
    #[error("corrupt store {path}: {msg}")]
    Corrupt { path: String, msg: String },
    #[error("{0}")]
    Config(String),
    #[error("plan failed validation:\n{}", render_violations(.0))]
    Validation(Vec<Violation>),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for problems found before any work runs; the CLI exits 1 on
    /// these and 2 on everything else.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Config(_))
    }

    pub(crate) fn corrupt(path: &std::path::Path, msg: impl Into<String>) -> Self {
        Error::Corrupt { path: path.display().to_string(), msg: msg.into() }
    }
}

fn render_violations(vs: &[Violation]) -> String {
    vs.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n")
}
