//! Low-rank adapters for frozen linear layers.
//!
//! Every variant wraps a pretrained `y = Wx + b`:
//!
//! | variant     | output                                                       |
//! |-------------|--------------------------------------------------------------|
//! | `LoRA`      | `Wx + b + s·A_up·ReLU(A_down·x)`                             |
//! | `SeqLoRA`   | `h + s·B_up·ReLU(B_down·h)`, `h = Wx + b`                    |
//! | `CPS`       | both branches above, scales `s_a`, `s_b`                     |
//! | `PiSSA`     | `(W_res + W_up·W_down)x + b`                                 |
//! | `HyPS`      | `h + s·B_up·ReLU(B_down·h)`, `h = (W_res + W_up·W_down)x + b` |
//!
//! `W_up·W_down` is the rank-`r` principal part of `W` taken from its SVD and
//! `W_res` the remaining tail, so every variant reproduces the base layer
//! exactly (up to SVD round-off) at initialization.

mod checkpoint;
pub(crate) mod layer;
mod params;

pub use checkpoint::{
    read_adapter_checkpoint, read_container, write_adapter_checkpoint, write_container, AdapterManifest,
    Container, LayerEntry, CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use layer::{
    collapse_pissa, init_adapted, pissa_split, AdaptedLinear, AdapterSpec, LinearLayer, LoraBranch, PissaSplit,
    SeqLoraBranch, Variant,
};
pub use params::{layer_trainable_params, trainable_params};
