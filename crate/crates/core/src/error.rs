use std::path::PathBuf;

use thiserror::Error;

use crate::color::Channel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("expected a {expected:?} plane, got {actual:?}")]
    WrongChannel { expected: Channel, actual: Channel },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("image {image_w}x{image_h} is smaller than the {window_w}x{window_h} window")]
    ImageSmallerThanWindow {
        image_w: usize,
        image_h: usize,
        window_w: usize,
        window_h: usize,
    },

    #[error("window at ({x}, {y}) size {w}x{h} exceeds the {width}x{height} vote field")]
    WindowOutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },

    #[error("pixel ({x}, {y}) has zero vote coverage")]
    ZeroCoverage { x: usize, y: usize },

    #[error("misaligned evaluation inputs: {0}")]
    Misaligned(String),

    #[error("rle counts sum to {sum}, expected {expected}")]
    RleSumMismatch { sum: u64, expected: u64 },

    #[error("rle has an interior zero run at position {0}")]
    RleZeroRun(usize),

    #[error("annotation {id}: {source}")]
    Annotation {
        id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest schema violation: {0}")]
    Schema(String),

    #[error("annotation {annotation} references missing image {image}")]
    DanglingReference { annotation: u64, image: u64 },

    #[error("unsupported segmentation format in annotation {id}: {format}")]
    UnsupportedSegmentation { id: u64, format: String },

    #[error("duplicate image reference {0}")]
    DuplicateImage(String),

    #[error("detector process failed with {status}: {stderr}")]
    DetectorFailed { status: String, stderr: String },

    #[error("detector process timed out after {0:.1} s")]
    DetectorTimeout(f64),

    #[error("malformed detector response: {0}")]
    MalformedResponse(String),

    #[error("could not decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("could not encode {path}: {message}")]
    Encode { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
