use thiserror::Error;

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Kernel(#[from] bitserial::Error),

    #[error("unknown layer {0}; layers 2 to 12 are available")]
    UnknownLayer(u8),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("request needs about {bytes} bytes, limit is {limit}")]
    TooLarge { bytes: u64, limit: u64 },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("csv line {line}: {message}")]
    CsvParse { line: usize, message: String },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
