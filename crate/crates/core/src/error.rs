use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("dimension mismatch: similarity matrix is {matrix}x{matrix}, dataset has {items} items")]
    DimensionMismatch { matrix: usize, items: usize },

    #[error("rating ({user}, {item}) is not in the dataset")]
    NotObserved { user: usize, item: usize },

    #[error("duplicate rating for user {user}, item {item}")]
    DuplicateRating { user: u64, item: u64 },

    #[error("rating {value} outside scale [{min}, {max}]")]
    RatingOutOfScale { value: f64, min: f64, max: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("non-finite similarity at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("sampler diverged at iteration {iteration}: |s| = {magnitude:e}")]
    Divergence { iteration: usize, magnitude: f64 },

    #[error("fold {fold}, seed {seed}: {source}")]
    Cell {
        fold: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
