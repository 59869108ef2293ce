use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("subsystem index {index} out of range for {count} subsystems")]
    InvalidSubsystem { index: usize, count: usize },

    #[error("state has zero norm")]
    ZeroNorm,

    #[error("degenerate sandwich on subsystem {subsystem}: norm product {denominator:e}")]
    DegenerateSandwich { subsystem: usize, denominator: f64 },

    #[error("operator is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("positivity violated at t = {t}: minimum eigenvalue {min_eigenvalue:e}")]
    PositivityViolation { t: f64, min_eigenvalue: f64 },

    #[error("mean of jump operator {0} vanishes on the current state")]
    VanishingJumpMean(usize),

    #[error("all jump weights vanish")]
    NoJumpWeight,

    #[error("non-finite value encountered at t = {0}")]
    NonFinite(f64),

    #[error("state norm collapsed at t = {0}")]
    NormCollapse(f64),

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("time grids of the trajectories differ")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("not a product state: {0}")]
    NotProduct(String),

    #[error("closed form not applicable: {0}")]
    NotApplicable(String),

    #[error("config: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("scenario {scenario}, {mode} run: {source}")]
    Run { scenario: String, mode: String, source: Box<Error> },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
