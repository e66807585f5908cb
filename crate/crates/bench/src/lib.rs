//! Shared fixtures for the benchmarks.

use trajfield_core::scene::{synthesize, CameraRig};
use trajfield_core::{Model, ModelConfig, MonocularSequence, Recipe};

/// The default toy scene at `size x size` pixels with `frames` frames.
pub fn toy_sequence(size: usize, frames: usize) -> MonocularSequence {
    let rig = CameraRig { width: size, height: size, focal: size as f64, ..CameraRig::default() };
    synthesize(&Recipe::Sphere.scene(), &rig, frames).expect("toy scene")
}

pub fn toy_model() -> Model {
    Model::new(ModelConfig::toy()).expect("toy model")
}
