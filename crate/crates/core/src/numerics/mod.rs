//! Dense linear algebra, projection MLPs with exact backpropagation, and AdamW.

mod adamw;
mod checkpoint;
mod cosine;
mod matrix;
mod net;

pub use adamw::{AdamWConfig, AdamWState, ParamBlock};
pub use checkpoint::{read_nets, write_nets, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cosine::{cosine_distance, cosine_similarity, cosine_similarity_grad};
pub use matrix::{dot, norm, Matrix};
pub use net::{Activation, Layer, LayerGrads, NetGrads, NetSpec, ProjectionNet, Tape};
