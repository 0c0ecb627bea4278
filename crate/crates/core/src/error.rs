use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("index out of bounds in {op}: {detail}")]
    Bounds { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("network configuration error at {stage} layer {layer}: {detail}")]
    Network {
        stage: &'static str,
        layer: usize,
        detail: String,
    },

    #[error("weight layout error: expected {expected} weights, got {actual}")]
    Layout { expected: usize, actual: usize },

    #[error("forward trace was produced with a different weight vector")]
    StaleTrace,

    #[error("simulation diverged at t = {time:.6}: {detail}")]
    Divergence { time: f64, detail: String },

    #[error("empty RMSE window [{start}, {end}]")]
    EmptyWindow { start: f64, end: f64 },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
