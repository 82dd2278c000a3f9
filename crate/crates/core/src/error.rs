use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("clip too short: {len} samples, need at least {need}")]
    TooShort { len: usize, need: usize },

    #[error("crossfade longer than segment: V = {v}, segment length {len}")]
    CrossfadeTooLong { v: usize, len: usize },

    #[error("fully silent recording: {0}")]
    FullySilent(String),

    #[error("degenerate amplitude range (max = min = {0})")]
    DegenerateRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sample rate {0} Hz outside the supported envelope [{1}, {2}] Hz")]
    RateOutOfRange(u32, u32, u32),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("cannot augment empty class {0}")]
    EmptyClass(String),

    #[error("class {0} too small to stratify ({1} units)")]
    ClassTooSmall(String, usize),

    #[error("degenerate representation: zero norm after centering")]
    DegenerateRepresentation,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("missing gender for recording {0}")]
    MissingGender(String),

    #[error("manifest row {row}: {msg}")]
    Manifest { row: usize, msg: String },

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("unsupported WAV format: {0}")]
    UnsupportedWav(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
