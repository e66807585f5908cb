//! Volume rendering of the dynamic, static and blended fields.

pub mod batch;
pub mod fields;
pub mod image;
pub mod output;
pub mod quadrature;
pub mod ray;

pub use batch::{render_batch, render_dynamic, render_edited, render_flow, warp_samples, BatchRender, EditedRender, RayBatch, RenderedFlow};
pub use image::{render_view, ImageOptions, RenderedImage};
pub use fields::{DynamicField, DynamicSamples, StaticField, StaticSamples};
pub use quadrature::{accumulate, full_render, quadrature_reference, quadrature_render, weights, Composite};
pub use ray::{intervals, stratified_depths, Ray};
