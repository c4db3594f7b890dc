use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SspdError {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid window {window} for a sequence of length {len}")]
    InvalidWindow { window: usize, len: usize },

    #[error("token {index} has zero norm")]
    DegenerateToken { index: usize },

    #[error("signal has zero power after mean removal")]
    ZeroPower,

    #[error("no spectral bins fall inside [{lo}, {hi}] Hz")]
    EmptyBand { lo: f64, hi: f64 },

    #[error("correlation undefined: input has zero variance")]
    DegenerateCorrelation,

    #[error("found {found} peaks, need at least 2")]
    InsufficientPeaks { found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid bounding box {bbox:?} for {width}x{height} frames")]
    InvalidBbox {
        bbox: (i64, i64, i64, i64),
        width: usize,
        height: usize,
    },

    #[error("invalid scale: window {window} must be smaller than sequence length {len}")]
    InvalidScale { window: usize, len: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("clip too short: need {needed} frames, have {available}")]
    ClipTooShort { needed: usize, available: usize },

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("{0}")]
    Usage(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SspdError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Self::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Short machine-readable tag used by the CLI's one-line error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidSignal(_) => "invalid-signal",
            Self::InvalidWindow { .. } => "invalid-window",
            Self::DegenerateToken { .. } => "degenerate-token",
            Self::ZeroPower => "zero-power",
            Self::EmptyBand { .. } => "empty-band",
            Self::DegenerateCorrelation => "degenerate-correlation",
            Self::InsufficientPeaks { .. } => "insufficient-peaks",
            Self::LengthMismatch { .. } => "length-mismatch",
            Self::Shape(_) => "shape",
            Self::InvalidBbox { .. } => "invalid-bbox",
            Self::InvalidScale { .. } => "invalid-scale",
            Self::Divergence(_) => "divergence",
            Self::Config(_) => "config",
            Self::ClipTooShort { .. } => "clip-too-short",
            Self::Parse { .. } => "parse",
            Self::Usage(_) => "usage",
            Self::Checkpoint(_) => "checkpoint",
            Self::Io { .. } => "io",
            Self::Tensor(_) => "tensor",
            Self::Image(_) => "image",
            Self::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, SspdError>;
