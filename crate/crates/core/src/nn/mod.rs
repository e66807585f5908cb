//! Network building blocks shared by every field: parameters, encodings,
//! residual MLPs, the optimizer and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod encoding;
pub mod mlp;
pub mod params;

pub use adam::{Adam, DEFAULT_LR};
pub use checkpoint::Checkpoint;
pub use encoding::{encoded_dim, positional_encode, positional_encode_var, PointEncoding};
pub use mlp::{ResidualMlp, ResidualMlpConfig};
pub use params::{Bound, ParamStore};
