use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

/// Where a near-zero norm was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormSite {
    /// A bare vector handed to a kernel.
    Vector,
    /// Class center row of the bank.
    Class(usize),
    /// Sample row of a batch.
    Sample(usize),
}

impl core::fmt::Display for NormSite {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            NormSite::Vector => f.write_str("vector"),
            NormSite::Class(c) => write!(f, "class {c}"),
            NormSite::Sample(k) => write!(f, "sample {k}"),
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate norm at {0}")]
    DegenerateNorm(NormSite),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(&'static str),

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("input is not a probability distribution")]
    SimplexViolation,

    #[error("snapshot epoch {requested} does not follow stored epoch {last}")]
    NonMonotonicEpoch { last: u64, requested: u64 },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(&'static str),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("class {0} has too few samples")]
    EmptyClass(usize),

    #[error("classes never updated: {0:?}")]
    UnseenClass(Vec<usize>),

    #[error("power iteration did not converge in {0} iterations")]
    ConvergenceFailure(usize),

    #[error("parameters left the finite range at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("training failed at epoch {epoch}, batch {batch}: {cause}")]
    Training {
        epoch: usize,
        batch: usize,
        cause: Box<Error>,
    },
}

impl Error {
    /// True for failures caused by numerics during training rather than bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::DegenerateNorm(_) => true,
            Error::Training { cause, .. } => cause.is_numeric(),
            _ => false,
        }
    }
}
