use thiserror::Error;

/// Everything that can go wrong across the crate, from malformed candidate
/// sets to truncated data files to diverging optimizations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("candidate set must contain at least one label")]
    EmptySet,
    #[error("candidate set must exclude at least one of the {k} labels")]
    FullSet { k: usize },
    #[error("label {index} out of range for {k} classes")]
    OutOfRange { index: usize, k: usize },
    #[error("need at least 2 classes, got k = {k}")]
    KTooSmall { k: usize },
    #[error("k = {k} exceeds the enumeration limit of {max}")]
    KTooLarge { k: usize, max: usize },
    #[error("row {row} of T assigns probability 1 to every other label; rejection sampling cannot terminate")]
    DegenerateMatrix { row: usize },
    #[error("row {row} of T sums to zero and cannot be normalized")]
    ZeroRow { row: usize },
    #[error("{context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("confidence mass over the candidates of example {example} is zero")]
    ZeroConfidence { example: usize },
    #[error("gradient norm {grad_norm:.3e} still above {tol:.1e} after {steps} steps")]
    NonConvergence {
        grad_norm: f64,
        tol: f64,
        steps: usize,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: label {label} out of range for k = {k}")]
    LabelOutOfRange {
        path: String,
        line: usize,
        label: usize,
        k: usize,
    },
    #[error("{path}:{line}: expected {expected} columns, got {got}")]
    RaggedRows {
        path: String,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}:{line}: empty candidate set")]
    EmptyCandidates { path: String, line: usize },
    #[error("{path}:{line}: candidate set contains all {k} labels")]
    FullCandidates { path: String, line: usize, k: usize },
    #[error("{path}:{line}: bad candidate index {index} for k = {k}")]
    BadIndex {
        path: String,
        line: usize,
        index: usize,
        k: usize,
    },
    #[error("{path}: bad magic 0x{got:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        got: u32,
        expected: u32,
    },
    #[error("{images_path}: {images} images but {labels} labels in {labels_path}")]
    CountMismatch {
        images_path: String,
        labels_path: String,
        images: usize,
        labels: usize,
    },
    #[error("{path}: file ends before the declared payload")]
    Truncated { path: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery itself (divergence,
    /// vanished confidence mass) as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroConfidence { .. }
                | Error::NonConvergence { .. }
                | Error::NonFiniteLoss { .. }
                | Error::ShapeMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
