use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("empty histogram")]
    EmptyHistogram,
    #[error("no satellite mappings")]
    NoSatelliteMappings,
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid mapping: {0}")]
    InvalidMapping(String),
    #[error("line {line}: {msg}")]
    MappingParse { line: usize, msg: String },
    #[error("partition ratio {0} outside (0, 1)")]
    InvalidRatio(f64),
    #[error("grid {height}x{width} too small to partition")]
    GridTooSmall { height: usize, width: usize },
    #[error("center too small")]
    CenterTooSmall,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty region")]
    EmptyRegion,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("batch too small for correlation")]
    BatchTooSmall,
    #[error("rows are not probability vectors")]
    NotProbabilities,
    #[error("non-square matrix {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("diverged")]
    Diverged,
    #[error("diverged at step {step}")]
    DivergedAt { step: usize },
    #[error("class {class} missing {view} view")]
    MissingView { class: String, view: &'static str },
    #[error("manifest line {line}: {msg}")]
    ManifestParse { line: usize, msg: String },
    #[error("no ground truth in gallery")]
    NoGroundTruth,
    #[error("no queries")]
    NoQueries,
    #[error("gallery holds {found} descriptors but the direction needs {expected}")]
    WrongGalleryView {
        expected: &'static str,
        found: &'static str,
    },
    #[error("K must be at least 1")]
    InvalidK,
    #[error("batch size {batch} exceeds dataset size {available}")]
    BatchTooLarge { batch: usize, available: usize },
    #[error("invalid config: {0}")]
    Config(String),
}
