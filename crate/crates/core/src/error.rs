use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("no valid alignment: target needs {needed} frames but only {frames} are available")]
    NoValidAlignment { needed: usize, frames: usize },

    #[error("blank label {0} appears in target")]
    BlankInTarget(usize),

    #[error("label {label} out of range for {labels} labels")]
    LabelOutOfRange { label: usize, labels: usize },

    #[error("path enumeration over {labels}^{frames} sequences exceeds the guard of {guard}")]
    SearchSpace { labels: usize, frames: usize, guard: u64 },

    #[error("invalid lattice: {0}")]
    Lattice(String),

    #[error("unit {0:?} is not in the inventory")]
    UnknownUnit(String),

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint at byte {offset}: {detail}")]
    Checkpoint { offset: usize, detail: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
