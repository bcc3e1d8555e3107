use std::path::PathBuf;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("pixel ({row}, {col}) outside {width}x{height} image")]
    PixelOutOfBounds {
        row: u32,
        col: u32,
        width: u32,
        height: u32,
    },
    /// `‖v‖² < F²`: the axis vector is shorter than the focal distance.
    #[error("inconsistent cone: |v|^2 = {axis_sq} is below focal^2 = {focal_sq}")]
    InconsistentCone { axis_sq: f64, focal_sq: f64 },
    #[error("invalid sampling range: near = {near}, far = {far}, count = {count}")]
    InvalidRange { near: f64, far: f64, count: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {what}: {detail}")]
    NonFinite { what: String, detail: String },
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
