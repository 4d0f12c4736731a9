//! The captioning network and its AdaAVA fusion block.

pub mod checkpoint;
pub mod config;
pub mod fusion;
pub mod network;
pub mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{FusionMode, ModelConfig};
pub use fusion::{
    adaava_fuse, adaava_fuse_graph, confidence, confidence_graph, threshold_mask, AdaAVATrace,
};
pub use network::{
    audio_encode, cross_attend, decode, decoder_block, decoder_self_attend, embed_prefix, encode,
    fusion_sublayer, visual_project, BatchItem, DecodeSession, Encoded, ModalityInput, Model, LN_EPS,
};
pub use params::{parameter_layout, Bound, Init, ParamStore};
