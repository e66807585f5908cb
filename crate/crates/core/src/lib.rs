pub mod autodiff;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod nn;
pub mod render;
pub mod scene;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};
pub use eval::{MetricsReport, Protocol, RunConfig, ViewProtocol};
pub use model::{EncodedVideo, Model, ModelConfig};
pub use nn::{Checkpoint, ParamStore};
pub use render::{render_view, ImageOptions, RenderedImage};
pub use scene::{CameraModel, MonocularSequence, Recipe};
pub use training::{LossReport, LossWeights, TrainConfig};
pub use trajectory::SolverConfig;
