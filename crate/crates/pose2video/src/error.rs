use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed keypoint file, manifest, or config content.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Skeleton data inconsistent with the topology it is bound to.
    #[error("topology error: {0}")]
    Topology(String),

    /// Every keypoint of a skeleton is marked undetected.
    #[error("no confident keypoints in skeleton (frame {frame})")]
    NoPose { frame: usize },

    /// Frame and keypoint streams disagree in length or indexing.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Tensor shapes inconsistent with a network or loss contract.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid or inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Dataset contents violate a manifest or sampler precondition.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Checkpoint file malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Refusing to overwrite an existing output without --force.
    #[error("output path {0} already exists (use --force to overwrite)")]
    AlreadyExists(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
}

impl Error {
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// Stable one-word category used by the CLI's machine-parseable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Topology(_) => "topology",
            Error::NoPose { .. } => "no-pose",
            Error::Alignment(_) => "alignment",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::Dataset(_) => "dataset",
            Error::Checkpoint(_) => "checkpoint",
            Error::AlreadyExists(_) => "exists",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
