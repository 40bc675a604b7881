//! The two-branch graph network, its attention blocks and the checkpoint
//! container.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointHeader, MAGIC,
};
pub use forward::{
    bind_params, build_laplacians, classify, forward, fuse, predict_proba, sa_gcn_forward, sagb,
    se_gcn_forward, segb, ForwardOptions, ForwardVars, Laplacians,
};
pub use params::{AttnBlock, FusionMode, LayerDims, ModelParams, ParamTree, Variant};
