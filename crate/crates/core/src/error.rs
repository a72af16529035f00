use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid mass function: {0}")]
    InvalidMass(String),
    #[error("negative probability {value} at index {index}")]
    NegativeProbability { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, outside tolerance")]
    SumOutOfTolerance { sum: f64 },
    #[error("mass functions are defined on different frames")]
    FrameMismatch,
    #[error("total conflict between sources (kappa = {kappa})")]
    TotalConflict { kappa: f64 },
    #[error("empty list of mass functions")]
    EmptyList,
    #[error("too few samples: {samples} < {clusters} clusters")]
    TooFewSamples { samples: usize, clusters: usize },
    #[error("non-finite input value")]
    NonfiniteInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("empty image")]
    EmptyImage,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss undefined: prediction and target sums are both zero")]
    EmptySum,
    #[error("at least {min} outputs required, got {got}")]
    TooFewOutputs { min: usize, got: usize },
    #[error("no labeled data available for training")]
    NoLabeledData,
    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Divergence { iteration: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown label {0}")]
    UnknownLabel(u8),
    #[error("regions do not fit in the image: {0}")]
    RegionsDontFit(String),
    #[error("crop {crop_h}x{crop_w} larger than image {height}x{width}")]
    CropLargerThanImage {
        crop_h: usize,
        crop_w: usize,
        height: usize,
        width: usize,
    },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("header parse error: {0}")]
    HeaderParse(String),
    #[error("shape overflow: {0:?}")]
    ShapeOverflow(Vec<usize>),
    #[error("model format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by arithmetic (conflict, divergence, non-finite values)
    /// rather than by malformed input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::TotalConflict { .. } | Error::Divergence { .. } | Error::NonfiniteInput
        )
    }
}
