//! The multi-scale search space: transition, parallel, fusion and attention
//! modules, and the seven candidate attention operations.
//!
//! Every operator instance owns its parameters; nothing is shared across
//! scales, sites, columns or cells.

mod attention;
mod layers;
mod modules;

pub use attention::{
    AttentionModule, AttentionOp, AttentionOpKind, ChannelMlp, ScaleAttention, SiteOps, SiteWeights, REDUCTION,
};
pub use layers::{Conv, ConvSpec, ParamBuilder, ResBlock};
pub use modules::{DownPath, Fusion, Parallel, Transition};

pub(crate) use modules::fuse_to_full;
