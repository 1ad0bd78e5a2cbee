use thiserror::Error;

/// Mode indices carried by errors are zero-based; `Display` prints them one-based
/// to match the `M<n>`/`F<n>` labels used on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("tensor must have at least 2 modes (got {0})")]
    BadDims(usize),
    #[error("at most {max} modes are supported (got {got})")]
    TooManyModes { got: usize, max: usize },
    #[error("length and core vectors differ in size ({lengths} vs {core})")]
    LengthMismatch { lengths: usize, core: usize },
    #[error("mode {} has a zero length", .mode + 1)]
    ZeroLength { mode: usize },
    #[error("core length K_{} exceeds tensor length L_{}", .mode + 1, .mode + 1)]
    KTooLarge { mode: usize },
    #[error("integer overflow in exact size arithmetic")]
    Overflow,

    #[error("tree has {got} leaves, expected {expected}")]
    LeafCount { got: usize, expected: usize },
    #[error("leaf F{} appears more than once", .mode + 1)]
    DuplicateLeaf { mode: usize },
    #[error("path to leaf F{}: {reason}", .leaf + 1)]
    PathViolation { leaf: usize, reason: PathFault },
    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("enumeration refused for N = {n} (limit {limit})")]
    TooLarge { n: usize, limit: usize },
    #[error("search space of {size} assignments exceeds the guard {limit}")]
    SearchTooLarge { size: u128, limit: u128 },

    #[error("no valid processor grid for P = {procs}")]
    NoValidGrid { procs: u64 },
    #[error("invalid grid {grid:?}: {reason}")]
    InvalidGrid { grid: Vec<u64>, reason: String },
    #[error("no grid assigned to node {0}")]
    MissingAssignment(usize),

    #[error("bad mode {} for a tensor with {order} modes", .mode + 1)]
    BadMode { mode: usize, order: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("Gauss-Seidel sweeps require a chain tree")]
    GaussSeidelNeedsChain,
    #[error("cannot normalise the error of an all-zero tensor")]
    ZeroTensor,
    #[error("trace limited to |T| <= {max_card} and P <= {max_procs}")]
    TraceTooLarge { max_card: u64, max_procs: u64 },

    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("{0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathFault {
    /// A mode occurs twice on the path (or the leaf's own mode occurs).
    Repeated(usize),
    Missing(usize),
    /// Non-root, non-leaf node count on the path differs from N-1.
    Length(usize),
}

impl std::fmt::Display for PathFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PathFault::Repeated(m) => write!(f, "mode {} repeated or forbidden", m + 1),
            PathFault::Missing(m) => write!(f, "mode {} missing", m + 1),
            PathFault::Length(l) => write!(f, "{l} internal nodes on path"),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
