//! Procedural dynamic scenes with analytic cameras, depth, flow and masks.

pub mod camera;
pub mod dataset;
pub mod spec;
pub mod trace;

pub use camera::{CameraModel, Intrinsics};
pub use dataset::{read_dataset, synthesize, write_dataset, MonocularSequence};
pub use spec::{Background, CameraRig, Mover, MoverPath, Recipe, SceneSpec, Shape, WallPattern};
pub use trace::{analytic_flow, trace_frame, trace_ray, FrameRecord, Hit, Surface};
