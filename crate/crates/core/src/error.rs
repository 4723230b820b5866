use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuctionError {
    #[error("payment quadrature did not converge at bid {bid} (error estimate {error:e})")]
    QuadratureFailure { bid: f64, error: f64 },
    #[error("truthfulness grid needs at least 2 points, got {0}")]
    InvalidGrid(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MirrorError {
    #[error("Bregman divergence undefined for reference point {x} and argument {y}")]
    Domain { y: f64, x: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy cannot step: {0}")]
    StateExhausted(&'static str),
    #[error("{0} requires a budget rate rho")]
    MissingRho(&'static str),
    #[error("invalid policy parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Auction(#[from] AuctionError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("exact enumeration supports at most {max} queries, got {got}")]
    TooLarge { got: usize, max: usize },
    #[error("query {0} is not a second-price auction")]
    UnsupportedAuction(usize),
    #[error("LP optimality gap {gap:e} exceeds tolerance")]
    NumericalFailure { gap: f64 },
    #[error(transparent)]
    Auction(#[from] AuctionError),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("failed to build thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}
