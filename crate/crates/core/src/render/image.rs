use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::{render_batch, render_edited, RayBatch};
use super::quadrature::accumulate;
use super::ray::Ray;
use crate::autodiff::Graph;
use crate::features::{draw_source_frame, Affine};
use crate::model::{anchor_frame, EncodedVideo, Model};
use crate::nn::{Bound, ParamStore};
use crate::scene::CameraModel;
use crate::trajectory::SolverConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageOptions {
    pub samples: usize,
    pub solver: SolverConfig,
    /// Rays per graph.
    pub chunk: usize,
    /// Seeds the per-ray static-source draws.
    pub seed: u64,
}

impl Default for ImageOptions {
    fn default() -> Self {
        Self { samples: 128, solver: SolverConfig::TRAIN, chunk: 256, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB in `[0, 1]`.
    pub rgb: Vec<f64>,
    /// Static field rendered alone.
    pub static_rgb: Vec<f64>,
    pub depth: Vec<f64>,
    /// `Σ_j w_j b_j` per pixel.
    pub foreground_weight: Vec<f64>,
    /// Interleaved forward flow in pixels, NaN without a next frame.
    pub flow_fw: Vec<f32>,
    pub flow_bw: Vec<f32>,
}

impl RenderedImage {
    /// Pixels whose blended foreground weight exceeds one half.
    pub fn foreground_mask(&self) -> Vec<bool> {
        self.foreground_weight.iter().map(|&w| w > 0.5).collect()
    }
}

/// Renders `camera` at time `time` with the video's frozen features.
///
/// `edit` lists foreground query maps; `None` renders unedited and also
/// produces rendered flow.
pub fn render_view(
    model: &Model,
    store: &ParamStore,
    video: &EncodedVideo,
    camera: &CameraModel,
    time: f64,
    opts: &ImageOptions,
    edit: Option<&[Affine]>,
) -> RenderedImage {
    let (w, h) = (camera.width, camera.height);
    let anchor = anchor_frame(&video.times, time);
    let k = video.times.len();
    let kb = video.background_cameras.len();
    let own = video.has_own_background();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let rays: Vec<Ray> = (0..h)
        .flat_map(|row| (0..w).map(move |col| (col, row)))
        .map(|(col, row)| Ray::through_pixel(camera, col, row, video.near, video.far, anchor, time))
        .collect();
    let sources: Vec<usize> = rays
        .iter()
        .map(|_| if own && k >= 2 { draw_source_frame(k, anchor, &mut rng) } else { rng.gen_range(0..kb) })
        .collect();
    let n = rays.len();
    let mut out = RenderedImage {
        width: w,
        height: h,
        rgb: Vec::with_capacity(n * 3),
        static_rgb: Vec::with_capacity(n * 3),
        depth: Vec::with_capacity(n),
        foreground_weight: Vec::with_capacity(n),
        flow_fw: Vec::with_capacity(n * 2),
        flow_bw: Vec::with_capacity(n * 2),
    };
    let edit = edit.filter(|e| !(e.len() == 1 && e[0].is_identity()));
    for start in (0..n).step_by(opts.chunk.max(1)) {
        let end = (start + opts.chunk.max(1)).min(n);
        let batch = RayBatch::new(rays[start..end].to_vec(), opts.samples, None);
        let g = Graph::new();
        let p = Bound::frozen(&g, store);
        let ctx = video.bind(&g);
        let vel = model.velocity(&p, &ctx);
        let src = &sources[start..end];
        match edit {
            Some(inst) => {
                let r = render_edited(model, &p, &ctx, &vel, &batch, src, opts.solver, inst);
                out.rgb.extend_from_slice(g.value(r.full.color).data());
                out.static_rgb.extend_from_slice(g.value(r.static_.color).data());
                out.depth.extend_from_slice(g.value(r.full.depth).data());
                out.foreground_weight.extend_from_slice(g.value(r.foreground).data());
                let nan = std::iter::repeat(f32::NAN).take(2 * batch.len());
                out.flow_fw.extend(nan.clone());
                out.flow_bw.extend(nan);
            }
            None => {
                let r = render_batch(model, &p, &ctx, &vel, &batch, src, opts.solver);
                out.rgb.extend_from_slice(g.value(r.full.color).data());
                out.static_rgb.extend_from_slice(g.value(r.static_.color).data());
                out.depth.extend_from_slice(g.value(r.full.depth).data());
                let fg = accumulate(&g, r.full.weights, r.blend);
                out.foreground_weight.extend_from_slice(g.value(fg).data());
                for (flow, dst) in [(&r.flow_fw, &mut out.flow_fw), (&r.flow_bw, &mut out.flow_bw)] {
                    let v = g.value(flow.flow);
                    for (i, ok) in flow.valid.iter().enumerate() {
                        let row = v.row_slice(i);
                        if *ok {
                            dst.extend([row[0] as f32, row[1] as f32]);
                        } else {
                            dst.extend([f32::NAN; 2]);
                        }
                    }
                }
            }
        }
    }
    out
}
