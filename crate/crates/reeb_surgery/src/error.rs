use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid jet point: |q|-1 = {norm_defect:e}, p.q = {orthogonality:e}")]
    InvalidJetPoint { norm_defect: f64, orthogonality: f64 },

    #[error("invalid handle parameters: {0}")]
    InvalidParams(String),

    #[error("point is off the surface (residual {residual:e})")]
    OffSurface { residual: f64 },

    #[error("point is not on W (x.y = {xy:e})")]
    NotOnW { xy: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("outside the admissible domain: {0}")]
    Domain(String),

    #[error("exit time bracketing failed below t_max = {t_max}")]
    UnboundedFlow { t_max: f64 },

    #[error("state outside chart: |state| = {norm} exceeds radius {radius}")]
    OutOfChart { norm: f64, radius: f64 },

    #[error("atlas schema: {0}")]
    Schema(String),

    #[error("atlas composability: {0}")]
    Composability(String),

    #[error("atlas action gap: {0}")]
    ActionGap(String),

    #[error("atlas transversality: {0}")]
    Transversality(String),

    #[error("precondition: {0}")]
    Precondition(String),

    #[error("chord not found for word {word} (best residual {residual:e})")]
    NotFound { word: String, residual: f64 },

    #[error("orbit iteration diverged for {word}: {trace}")]
    Divergence { word: String, trace: String },

    #[error("no passing epsilon in scanned range [{lo}, {hi}]")]
    ThresholdNotFound { lo: f64, hi: f64 },

    #[error("numerical: {0}")]
    Numerical(String),

    #[error("degenerate symplectic path endpoint (det(Phi(1) - I) = {det:e})")]
    Degenerate { det: f64 },

    #[error("unclassifiable tail (relative residual {residual:e})")]
    Unclassifiable { residual: f64 },

    #[error("inconclusive arc count: {0}")]
    Inconclusive(String),

    #[error("no valid radii: {0}")]
    NoValidRadii(String),

    #[error("quadrature did not converge: {0}")]
    Refinement(String),

    #[error("kernel estimate unstable under refinement: {0}")]
    Resolution(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable tag, used as the prefix of CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension",
            Error::InvalidJetPoint { .. } => "jet",
            Error::InvalidParams(_) => "params",
            Error::OffSurface { .. } => "off-surface",
            Error::NotOnW { .. } => "not-on-w",
            Error::NoConvergence { .. } => "no-convergence",
            Error::Domain(_) => "domain",
            Error::UnboundedFlow { .. } => "unbounded-flow",
            Error::OutOfChart { .. } => "out-of-chart",
            Error::Schema(_) => "schema",
            Error::Composability(_) => "composability",
            Error::ActionGap(_) => "action-gap",
            Error::Transversality(_) => "transversality",
            Error::Precondition(_) => "precondition",
            Error::NotFound { .. } => "not-found",
            Error::Divergence { .. } => "divergence",
            Error::ThresholdNotFound { .. } => "threshold",
            Error::Numerical(_) => "numerical",
            Error::Degenerate { .. } => "degenerate",
            Error::Unclassifiable { .. } => "unclassifiable",
            Error::Inconclusive(_) => "inconclusive",
            Error::NoValidRadii(_) => "no-valid-radii",
            Error::Refinement(_) => "refinement",
            Error::Resolution(_) => "resolution",
            Error::Io(_) => "io",
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
        Error::Schema(e.to_string())
    }
}
