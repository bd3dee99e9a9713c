use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported qubit count {0} (expected 1..=6)")]
    QubitCount(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("trace {0} differs from 1")]
    Trace(f64),

    #[error("non-physical state: minimal eigenvalue {0:e}")]
    NotPositive(f64),

    #[error("identity coefficient must be 1, found {0}")]
    IdentityEntry(f64),

    #[error("negative outcome probability {0:e}")]
    NegativeProbability(f64),

    #[error("empty qubit subset")]
    EmptySubset,

    #[error("subset {mask:#b} does not fit in {n} qubits")]
    SubsetRange { mask: u32, n: usize },

    #[error("subsets overlap")]
    OverlappingSubsets,

    #[error("unknown state kind `{0}`")]
    UnknownState(String),

    #[error("not a unitary matrix (deviation {0:e})")]
    NotUnitary(f64),

    #[error("need at least {needed} settings, dataset has {found}")]
    TooFewSettings { needed: usize, found: usize },

    #[error("moment of order {0} has no closed form here")]
    UnsupportedOrder(u32),

    #[error("missing moment for subset {0}")]
    MissingMoment(String),

    #[error("mixed estimator kinds in moment table")]
    MixedEstimators,

    #[error("purity {0} outside the physical range")]
    PurityRange(f64),

    #[error("no biseparable bound for {0} qubits")]
    UnsupportedBound(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format version {0}")]
    Version(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
