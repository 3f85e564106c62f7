//! Error types shared across the toolkit.

use thiserror::Error;

/// Numeric-core failures (shapes, non-finite values, tape misuse).
#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("loss must be a 1x1 scalar, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("NaN gradient for parameter `{0}`")]
    NanGradient(String),
}

/// Graph construction and edit failures.
#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node index {index} out of range for {num_nodes} nodes")]
    NodeOutOfRange { index: usize, num_nodes: usize },
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("feature matrix has {rows} rows for {num_nodes} nodes")]
    FeatureRowMismatch { rows: usize, num_nodes: usize },
    #[error("feature vector length {got} does not match feature dim {want}")]
    FeatureDimMismatch { got: usize, want: usize },
    #[error("actionable edge ({0}, {1}) is not an edge of the graph")]
    ActionableEdgeMissing(usize, usize),
    #[error("edit rejected: {0}")]
    EditRejected(String),
    #[error("mapping is not a bijection over node indices")]
    NotABijection,
}

/// Policy-model failures.
#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("size mismatch: model is locked to {expected} nodes, observation has {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("feature dim mismatch: model expects {expected}, observation has {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error("observation has no actionable nodes")]
    NoActionableNodes,
    #[error("all action slots are masked")]
    AllMasked,
    #[error("action {0} does not address a valid slot of this observation")]
    InvalidAction(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Environment failures.
#[derive(Debug, Error)]
pub enum EnvError {
    #[error("could not generate a connected graph after {attempts} attempts (n={n}, p={p})")]
    Generation { n: usize, p: f64, attempts: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("blue action is masked or out of range: {0}")]
    MaskedAction(String),
    #[error("episode already terminated")]
    Terminated,
}
