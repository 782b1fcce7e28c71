//! The enhancement network: encoder blocks with frequency recurrence, a
//! time-recurrent bottleneck, attention-gated skips, a mirrored decoder and
//! a bounded complex mask head.

mod config;
mod frcrn;
mod streaming;

pub use config::ModelConfig;
pub use frcrn::{Forward, Frcrn, LayerShape, MaskEstimate, ParamBreakdown};
pub use streaming::StreamingEnhancer;
