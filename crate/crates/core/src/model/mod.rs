//! A miniature windowed-attention segmentation network.
//!
//! Encoder: `2³` patch embedding, then blocks of layer norm, (shifted)
//! window attention with separate Q/K/V/O projections, residual, layer norm,
//! ReLU MLP, residual. Shifted blocks roll the token grid by half a window
//! and do not mask wrapped-around tokens.
//!
//! Decoder: a per-token layer fusing the encoder output with the embedding
//! skip, nearest-neighbour upsampling to voxels, the raw voxel intensity
//! appended as an extra channel, and two per-voxel layers ending in a
//! sigmoid.

mod checkpoint;
mod config;
mod data;
mod infer;
mod network;
mod window;

pub use checkpoint::{read_model, write_model, ModelManifest};
pub use config::{ToyModelConfig, EMBED_PATCH};
pub use data::{generate_dataset, Sample, SynthTask, TaskId};
pub use infer::sliding_window_infer;
pub use network::{
    adapted_forward, attach_adapters, build_model, window_attention, AttachmentRegistry, Decoder, NormParams,
    RegistryEntry, Role, SwinBlock, ToyModel,
};
pub use window::WindowLayout;
