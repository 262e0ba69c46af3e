mod config;
mod network;
mod params;

pub use config::ModelConfig;
pub use network::{
    cem, decode, diff, embed_segment, encode, fuse, reconstruct, sce_block, sce_cnn, sem, Prnet,
};
pub use params::{param_shapes, BlockParams, EmbedParams, PrnetParams};
