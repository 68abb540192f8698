use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch at layer {layer} ({kind}): {detail}")]
    LayerShape {
        layer: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("network must contain at least one layer")]
    EmptyNetwork,
    #[error("forward cache does not belong to this network state ({0})")]
    StaleCache(String),
    #[error("non-finite gradient in parameter tensor {tensor} at entry {index}; step refused")]
    NonFiniteGradient { tensor: usize, index: usize },
    #[error("gradient layout does not match parameters: {0}")]
    GradientLayout(String),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("empty sample set")]
    EmptySamples,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
