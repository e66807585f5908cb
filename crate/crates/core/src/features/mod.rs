//! Video and image encoders, pyramid sampling, feature aggregation and edits.

pub mod aggregate;
pub mod edit;
pub mod encoder;
pub mod sampling;
pub mod static_source;

pub use aggregate::{point_feature, FeatureProjections, WindowSample, WINDOW};
pub use edit::{background_source, Affine, EditOp, ForegroundEdit};
pub use encoder::{stack_frames, EncoderConfig, ImageEncoder, Pyramid, TemporalHead, VideoEncoder, VideoFeaturePack, LEVELS};
pub use sampling::{project_points, sample_frame_feature};
pub use static_source::{choose_source_frame, draw_source_frame};
