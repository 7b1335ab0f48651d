use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("image {width}x{height} too small for pyramid depth {levels}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        levels: usize,
    },

    #[error("timestep {t} out of range (0..={t_max})")]
    TimestepOutOfRange { t: usize, t_max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bad flow file {path}: {reason}")]
    FloFormat { path: PathBuf, reason: String },

    #[error("no input frames found in {0}")]
    EmptyInput(PathBuf),

    #[error("frame {path} is {got}, expected {expected}")]
    FrameDimensionMismatch {
        path: PathBuf,
        expected: String,
        got: String,
    },

    #[error("bad config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("frame {index}: {source}")]
    AtFrame {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn at_frame(self, index: usize) -> Self {
        Error::AtFrame {
            index,
            source: Box::new(self),
        }
    }
}
