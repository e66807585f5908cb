use rand::RngCore;

use super::fields::DynamicSamples;
use super::quadrature::{accumulate, full_render, quadrature_render, Composite};
use super::ray::{intervals, stratified_depths, Ray};
use crate::autodiff::{Graph, Tensor, Var};
use crate::features::Affine;
use crate::model::{DynamicEval, DynamicQuery, Model, VideoContext};
use crate::nn::Bound;
use crate::trajectory::{BoundVelocity, SolverConfig};

/// Rays with their stratified sample depths.
#[derive(Clone, Debug)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub samples: usize,
    /// `[R, M]`
    pub depths: Tensor,
    /// `[R, M]`
    pub delta: Tensor,
}

impl RayBatch {
    /// Jittered depths when `rng` is given, bin centers otherwise.
    pub fn new(rays: Vec<Ray>, samples: usize, mut rng: Option<&mut dyn RngCore>) -> Self {
        let r = rays.len();
        let mut depths = Vec::with_capacity(r * samples);
        let mut delta = Vec::with_capacity(r * samples);
        for ray in &rays {
            let u = match rng {
                Some(ref mut r) => stratified_depths(ray, samples, Some(&mut **r)),
                None => stratified_depths(ray, samples, None),
            };
            delta.extend(intervals(&u, ray.far));
            depths.extend(u);
        }
        Self { rays, samples, depths: Tensor::matrix(r, samples, depths), delta: Tensor::matrix(r, samples, delta) }
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    /// Sample positions `[R*M, 3]`.
    pub fn points(&self) -> Tensor {
        let m = self.samples;
        let mut out = Vec::with_capacity(self.len() * m * 3);
        for (i, ray) in self.rays.iter().enumerate() {
            for &u in self.depths.row_slice(i) {
                out.extend_from_slice(ray.at(u).coords.as_slice());
            }
        }
        Tensor::matrix(self.len() * m, 3, out)
    }

    /// Per-sample view directions `[R*M, 3]`.
    pub fn directions(&self) -> Tensor {
        let m = self.samples;
        let data = self.rays.iter().flat_map(|r| std::iter::repeat(r.dir.into_inner()).take(m)).flat_map(|d| [d.x, d.y, d.z]);
        Tensor::matrix(self.len() * m, 3, data.collect())
    }

    pub fn per_sample<T: Copy>(&self, f: impl Fn(&Ray) -> T) -> Vec<T> {
        self.rays.iter().flat_map(|r| std::iter::repeat(f(r)).take(self.samples)).collect()
    }

    /// Rays `idx` with their depths and intervals.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            rays: idx.iter().map(|&i| self.rays[i].clone()).collect(),
            samples: self.samples,
            depths: self.depths.gather_rows(idx),
            delta: self.delta.gather_rows(idx),
        }
    }

    /// Row indices into `[R*M, ..]` sample tensors for rays `idx`.
    pub fn sample_rows(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().flat_map(|&i| i * self.samples..(i + 1) * self.samples).collect()
    }
}

/// Rendered flow toward one neighbor frame.
#[derive(Clone, Debug)]
pub struct RenderedFlow {
    /// `[R, 2]` pixel displacement; zero where `valid` is false.
    pub flow: Var,
    /// The neighbor frame exists for the ray.
    pub valid: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct BatchRender {
    pub full: Composite,
    pub dynamic: Composite,
    pub static_: Composite,
    /// `[R*M, 1]`
    pub blend: Var,
    pub eval: DynamicEval,
    pub flow_bw: RenderedFlow,
    pub flow_fw: RenderedFlow,
}

/// `Σ_j w_j (Π(x_j + ΔΦ_j) − pixel)` for the trajectory slot `slot`.
///
/// `coords` are projections into the neighbor camera, so the flow includes
/// camera motion. Samples behind that camera contribute nothing.
pub fn render_flow(g: &Graph, weights: Var, batch: &RayBatch, eval: &DynamicEval, slot: usize) -> RenderedFlow {
    let s = &eval.slots[slot];
    let pix: Vec<f64> = batch.rays.iter().flat_map(|r| std::iter::repeat([r.pixel.x, r.pixel.y]).take(batch.samples)).flatten().collect();
    let n = pix.len() / 2;
    let keep: Vec<f64> = s.exists.iter().zip(&s.front).map(|(e, f)| (*e && *f) as u8 as f64).collect();
    let disp = g.sub(s.coords, g.constant(Tensor::matrix(n, 2, pix)));
    let disp = g.mul(disp, g.constant(Tensor::new(vec![n, 1], keep)));
    let valid = (0..batch.len()).map(|i| s.exists[i * batch.samples]).collect();
    RenderedFlow { flow: accumulate(g, weights, disp), valid }
}

/// Warped sample positions `x_j + ΔΦ_j` of a slot; these are exactly the
/// trajectory positions at the neighbor time.
pub fn warp_samples(eval: &DynamicEval, slot: usize) -> Var {
    eval.slots[slot].position
}

/// Dynamic quadrature alone.
pub fn render_dynamic(g: &Graph, out: &DynamicSamples, batch: &RayBatch) -> Composite {
    quadrature_render(g, out.sigma, out.rgb, &batch.depths, &batch.delta)
}

/// Full forward pass over a ray batch.
///
/// `sources[r]` is the static-source frame of ray `r`.
pub fn render_batch(
    model: &Model,
    p: &Bound,
    ctx: &VideoContext,
    vel: &BoundVelocity,
    batch: &RayBatch,
    sources: &[usize],
    solver: SolverConfig,
) -> BatchRender {
    let g = p.graph;
    assert_eq!(sources.len(), batch.len());
    let x = g.constant(batch.points());
    let dirs = g.constant(batch.directions());
    let t = batch.per_sample(|r| r.time);
    let anchor = batch.per_sample(|r| r.frame);
    let eval = model.eval_dynamic(p, ctx, vel, DynamicQuery { x, t: &t, anchor: &anchor, dirs }, solver);
    let src = batch.per_sample_indexed(sources);
    let (st, _) = model.eval_static(p, ctx, x, dirs, &src);
    let dynamic = render_dynamic(g, &eval.out, batch);
    let static_ = quadrature_render(g, st.sigma, st.rgb, &batch.depths, &batch.delta);
    let full = full_render(g, eval.out.sigma, eval.out.rgb, eval.out.blend, st.sigma, st.rgb, &batch.depths, &batch.delta);
    let flow_bw = render_flow(g, dynamic.weights, batch, &eval, 0);
    let flow_fw = render_flow(g, dynamic.weights, batch, &eval, 2);
    BatchRender { full, dynamic, static_, blend: eval.out.blend, eval, flow_bw, flow_fw }
}

impl RayBatch {
    fn per_sample_indexed(&self, per_ray: &[usize]) -> Vec<usize> {
        per_ray.iter().flat_map(|&v| std::iter::repeat(v).take(self.samples)).collect()
    }
}

/// Composited output of an edited render.
#[derive(Clone, Debug)]
pub struct EditedRender {
    pub full: Composite,
    pub static_: Composite,
    /// `[R, 1]`, `Σ_j w_j b_j`.
    pub foreground: Var,
}

/// Renders with the foreground queried through `instances`.
///
/// Copies combine as `σ = Σσ_k`, `bσ = Σ b_k σ_k` and `bσc = Σ b_k σ_k c_k`;
/// a single identity instance is the unedited render.
pub fn render_edited(
    model: &Model,
    p: &Bound,
    ctx: &VideoContext,
    vel: &BoundVelocity,
    batch: &RayBatch,
    sources: &[usize],
    solver: SolverConfig,
    instances: &[Affine],
) -> EditedRender {
    let g = p.graph;
    let x_t = batch.points();
    let d_t = batch.directions();
    let x = g.constant(x_t.clone());
    let dirs = g.constant(d_t.clone());
    let t = batch.per_sample(|r| r.time);
    let anchor = batch.per_sample(|r| r.frame);
    let src = batch.per_sample_indexed(sources);
    let (st, _) = model.eval_static(p, ctx, x, dirs, &src);
    let mut parts: Vec<DynamicSamples> = Vec::with_capacity(instances.len());
    for inst in instances {
        let (xq, dq) = if inst.is_identity() {
            (x, dirs)
        } else {
            (g.constant(map_rows(&x_t, |v| inst.apply(&v))), g.constant(map_rows(&d_t, |v| (inst.m * v).normalize())))
        };
        let e = model.eval_dynamic(p, ctx, vel, DynamicQuery { x: xq, t: &t, anchor: &anchor, dirs: dq }, solver);
        parts.push(e.out);
    }
    let dy = if parts.len() == 1 { parts[0] } else { combine_instances(g, &parts) };
    let full = full_render(g, dy.sigma, dy.rgb, dy.blend, st.sigma, st.rgb, &batch.depths, &batch.delta);
    let foreground = accumulate(g, full.weights, dy.blend);
    let static_ = quadrature_render(g, st.sigma, st.rgb, &batch.depths, &batch.delta);
    EditedRender { full, static_, foreground }
}

fn safe(g: &Graph, v: Var) -> Var {
    g.add_scalar(g.relu(g.add_scalar(v, -1e-30)), 1e-30)
}

fn combine_instances(g: &Graph, parts: &[DynamicSamples]) -> DynamicSamples {
    let mut sigma = parts[0].sigma;
    let mut bs = g.mul(parts[0].blend, parts[0].sigma);
    let mut bsc = g.mul(bs, parts[0].rgb);
    for q in &parts[1..] {
        let b = g.mul(q.blend, q.sigma);
        sigma = g.add(sigma, q.sigma);
        bsc = g.add(bsc, g.mul(b, q.rgb));
        bs = g.add(bs, b);
    }
    DynamicSamples { sigma, blend: g.div(bs, safe(g, sigma)), rgb: g.div(bsc, safe(g, bs)) }
}

fn map_rows(t: &Tensor, f: impl Fn(nalgebra::Vector3<f64>) -> nalgebra::Vector3<f64>) -> Tensor {
    let mut out = t.clone();
    for row in out.data_mut().chunks_exact_mut(3) {
        let v = f(nalgebra::Vector3::new(row[0], row[1], row[2]));
        row.copy_from_slice(v.as_slice());
    }
    out
}
