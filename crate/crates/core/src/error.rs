use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Hörmander condition fails at {point:?}: span has rank {rank} < {dim}")]
    Hormander { point: Vec<f64>, rank: usize, dim: usize },
    #[error("invalid vertical index ({m}, {n}) for h = {h}")]
    InvalidIndex { m: usize, n: usize, h: usize },
    #[error("frame words are supported up to length {max}, got {len}")]
    UnsupportedOrder { len: usize, max: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("model `{0}` is not compact")]
    NotCompact(String),
    #[error("iteration limit reached (residual {residual:.3e})")]
    IterationLimit { residual: f64 },
    #[error("insufficient sampling: {0}")]
    InsufficientSampling(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("left the chart at t = {t}; last valid state {state:?}")]
    Boundary { t: f64, state: Vec<f64> },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
