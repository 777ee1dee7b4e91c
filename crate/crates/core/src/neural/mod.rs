//! Small fully connected networks with hand-written reverse-mode gradients.

mod adam;
pub mod checkpoint;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use mlp::{batch_from_rows, soft_update, Dense, ForwardCache, InitScheme, Mlp, MlpGrads, OutputActivation};
