use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(
        "reduced Laplacian is numerically singular (disconnected graph or degenerate susceptances)"
    )]
    SingularReducedLaplacian,
    #[error("rank deficiency in {matrix}: rank {rank}, expected {expected}")]
    RankDeficiency {
        matrix: &'static str,
        rank: usize,
        expected: usize,
    },
    #[error("infeasible operating point: |nu| = {value} >= 1 on line {line}")]
    InfeasibleStart { line: usize, value: f64 },
    #[error("line {0} has zero stochastic variance")]
    ZeroVarianceLine(usize),
    #[error("no line depends on the stochastic injections")]
    NoStochasticLines,
    #[error("closed form requires uniform mean-reversion rates")]
    NonUniformGamma,
    #[error("closed form requires uniform thermal constants")]
    NonUniformTau,
    #[error("thermal constant must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("volatility must be positive, got {value} at x = {x}")]
    NonPositiveVolatility { x: f64, value: f64 },
    #[error("tau*theta' + theta <= 0 at sample {0}")]
    NegativeRadicand(usize),
    #[error("f = tau*theta' + theta collapsed to {0:e}")]
    DegenerateF(f64),
    #[error("trajectory left the bounding box at t = {t}")]
    BlowUp { t: f64 },
    #[error("no shooting parameters reach theta(T) = 1 inside the search box")]
    NoBoundaryHit,
    #[error("capacity bound collapsed on line {line} (bound {bound})")]
    BoundCollapse { line: usize, bound: f64 },
    #[error("slice is empty")]
    EmptySlice,
    #[error("no overload observed at epsilon = {epsilon}; increase epsilon or replicates")]
    InsufficientHits { epsilon: f64 },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("role error: {0}")]
    Role(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line} carries zero base flow; its rating is undefined")]
    ZeroBaseFlow { line: usize },
}

impl Error {
    /// Errors that come from numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. } | Error::NoBoundaryHit | Error::DegenerateF(_)
        )
    }

    /// Errors that signal an empty or infeasible result.
    pub fn is_empty_result(&self) -> bool {
        matches!(self, Error::EmptySlice | Error::BoundCollapse { .. })
    }
}
