use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape {shape:?} does not match layout {layout:?}")]
    LayoutMismatch { shape: Vec<usize>, layout: String },

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("tensor has {actual} elements but shape {shape:?} needs {expected}")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),

    #[error("unknown axis '{0}'")]
    UnknownAxis(char),

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("invalid quantization range [{lo}, {hi})")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("unsupported precision {0} (expected 1..=8 bits)")]
    UnsupportedPrecision(u8),

    #[error("element {value} at index {index} does not fit in {bits} bits")]
    CodeOutOfRange { index: usize, value: i64, bits: u8 },

    #[error("bipolar encoding requires 1-bit data, got {0} bits")]
    BipolarPrecision(u8),

    #[error("unsupported word width {0} (expected 8, 16, 32 or 64)")]
    UnsupportedWordWidth(u32),

    #[error("axis index {index} out of range for rank {rank}")]
    AxisOutOfRange { index: usize, rank: usize },

    #[error("non-zero padding bits in packed word {word}")]
    NonZeroPadding { word: usize },

    #[error("tile extents {tile:?} do not divide shape {shape:?}")]
    TileMismatch { tile: Vec<usize>, shape: Vec<usize> },

    #[error("operands disagree: {0}")]
    OperandMismatch(String),

    #[error("unsupported packed layout {0} for this kernel")]
    UnsupportedLayout(String),

    #[error("invalid dot spec: {0}")]
    InvalidDotSpec(String),

    #[error("invalid accumulation plan: {0}")]
    InvalidAccumPlan(String),

    #[error("popcount term {term} exceeds the declared maximum {max}")]
    TermTooLarge { term: u32, max: u32 },

    #[error("accumulator overflow: {0}")]
    AccumulatorOverflow(String),

    #[error("invalid tile config: {0}")]
    InvalidTileConfig(String),

    #[error("invalid convolution geometry: {0}")]
    InvalidGeometry(String),

    #[error("bipolar convolution cannot use zero padding (pad = {0})")]
    BipolarPadding(usize),

    #[error("empty search space: {0}")]
    EmptySpace(String),

    #[error("search budget and stride must be at least 1")]
    InvalidBudget,

    #[error("all {} trials failed the correctness check", .0.len())]
    AllTrialsFailed(Vec<String>),

    #[error("line {line}: {message}")]
    StoreParse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
