use thiserror::Error;

use crate::transport::PartyId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("transport error with party {peer}: {message}")]
    Transport { peer: PartyId, message: String },

    #[error("framing error: {0}")]
    Framing(String),

    #[error("share consistency error: {0}")]
    Consistency(String),

    #[error("unsupported multiplier {0}: must lie in (0, 1)")]
    UnsupportedMultiplier(f64),

    #[error("model format error: {0}")]
    Format(String),

    #[error("model topology error: {0}")]
    Topology(String),

    #[error("headroom error: model needs {required} ring bits, session has {available}")]
    Headroom { required: u32, available: u32 },

    #[error("bias scale error in layer {layer}: bias scale {found:e} != input scale * weight scale {expected:e}")]
    BiasScale {
        layer: usize,
        found: f64,
        expected: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Transport { .. } => "transport",
            Error::Framing(_) => "framing",
            Error::Consistency(_) => "consistency",
            Error::UnsupportedMultiplier(_) => "unsupported_multiplier",
            Error::Format(_) => "format",
            Error::Topology(_) => "topology",
            Error::Headroom { .. } => "headroom",
            Error::BiasScale { .. } => "bias_scale",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn transport(peer: PartyId, msg: impl Into<String>) -> Self {
        Error::Transport {
            peer,
            message: msg.into(),
        }
    }
}
