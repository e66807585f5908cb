//! All networks of the field, bound together over one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::{
    project_points, sample_frame_feature, stack_frames, EncoderConfig, FeatureProjections, ImageEncoder, Pyramid,
    TemporalHead, VideoEncoder, WindowSample, LEVELS, WINDOW,
};
use crate::nn::{Bound, ParamStore, PointEncoding};
use crate::render::{DynamicField, DynamicSamples, StaticField, StaticSamples};
use crate::scene::{CameraModel, MonocularSequence};
use crate::trajectory::{integrate, BoundVelocity, SolverConfig, VelocityField};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Conv widths of the static image encoder `E_st`.
    pub static_channels: [usize; LEVELS],
    pub encoding: PointEncoding,
    pub dynamic_latent: usize,
    pub dynamic_blocks: usize,
    pub static_latent: usize,
    pub static_blocks: usize,
    pub velocity_latent: usize,
    pub velocity_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            static_channels: [8, 16, 32],
            encoding: PointEncoding::default(),
            dynamic_latent: 128,
            dynamic_blocks: 3,
            static_latent: 128,
            static_blocks: 3,
            velocity_latent: 128,
            velocity_blocks: 3,
        }
    }
}

impl ModelConfig {
    /// Narrow networks sized for CPU training on the toy scenes.
    pub fn toy() -> Self {
        Self {
            dynamic_latent: 64,
            dynamic_blocks: 2,
            static_latent: 64,
            static_blocks: 2,
            velocity_latent: 64,
            velocity_blocks: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let widths = [
            e.global_dim,
            e.temporal_latent,
            e.temporal_blocks,
            e.feature_dim,
            self.dynamic_latent,
            self.dynamic_blocks,
            self.static_latent,
            self.static_blocks,
            self.velocity_latent,
            self.velocity_blocks,
        ];
        if widths.contains(&0) || e.channels.contains(&0) || self.static_channels.contains(&0) {
            return Err(Error::Config(format!("model widths must be >= 1: {self:?}")));
        }
        if !(self.encoding.scale > 0.0) {
            return Err(Error::Config("point encoding scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub e_dy: VideoEncoder,
    pub w_temp: TemporalHead,
    pub e_st: ImageEncoder,
    pub proj: FeatureProjections,
    pub w_dy: DynamicField,
    pub w_st: StaticField,
    pub w_vel: VelocityField,
}

/// Bound per-video inputs of the fields.
#[derive(Clone, Debug)]
pub struct VideoContext {
    /// `F_temp`, `[1, D]`.
    pub f_temp: Var,
    pub dynamic: Pyramid,
    pub cameras: Vec<CameraModel>,
    pub times: Vec<f64>,
    /// Static-source pyramid and cameras; another video's after `swap-bg`.
    pub background: Pyramid,
    pub background_cameras: Vec<CameraModel>,
}

/// Encoder outputs as plain values, rebindable into fresh graphs.
#[derive(Clone, Debug)]
pub struct EncodedVideo {
    pub f_temp: Tensor,
    pub dynamic: Vec<Tensor>,
    pub cameras: Vec<CameraModel>,
    pub times: Vec<f64>,
    pub background: Vec<Tensor>,
    pub background_cameras: Vec<CameraModel>,
    pub near: f64,
    pub far: f64,
    pub width: usize,
    pub height: usize,
}

impl EncodedVideo {
    pub fn bind(&self, g: &Graph) -> VideoContext {
        let lift = |ls: &[Tensor]| Pyramid { levels: ls.iter().map(|t| g.constant(t.clone())).collect() };
        VideoContext {
            f_temp: g.constant(self.f_temp.clone()),
            dynamic: lift(&self.dynamic),
            cameras: self.cameras.clone(),
            times: self.times.clone(),
            background: lift(&self.background),
            background_cameras: self.background_cameras.clone(),
        }
    }

    /// Uses `other`'s static pyramid and cameras for the static field.
    pub fn with_background(mut self, other: &EncodedVideo) -> Self {
        self.background = other.background.clone();
        self.background_cameras = other.background_cameras.clone();
        self
    }

    pub fn has_own_background(&self) -> bool {
        self.background_cameras == self.cameras
    }
}

/// One trajectory slot of a dynamic query.
#[derive(Clone, Debug)]
pub struct SlotTrace {
    /// `Φ(x, t_slot)`, `[P, 3]`.
    pub position: Var,
    /// Projection of `position` into the slot's camera, `[P, 2]`.
    pub coords: Var,
    pub frames: Vec<usize>,
    /// The slot frame exists for this point.
    pub exists: Vec<bool>,
    pub front: Vec<bool>,
}

/// Dynamic-field outputs together with the trajectory window used to
/// featurize them; slots are ordered previous, anchor, next.
#[derive(Clone, Debug)]
pub struct DynamicEval {
    pub out: DynamicSamples,
    pub slots: Vec<SlotTrace>,
    pub slot_mask: Vec<[bool; WINDOW]>,
}

/// Batch of dynamic query points.
#[derive(Clone, Copy, Debug)]
pub struct DynamicQuery<'a> {
    /// `[P, 3]`
    pub x: Var,
    pub t: &'a [f64],
    /// Frame whose window featurizes each point.
    pub anchor: &'a [usize],
    /// `[P, 3]` unit view directions.
    pub dirs: Var,
}

/// Index of the frame whose timestamp is closest to `t` (earlier on ties).
pub fn anchor_frame(times: &[f64], t: f64) -> usize {
    let mut best = 0;
    for (i, &ti) in times.iter().enumerate() {
        if (ti - t).abs() < (times[best] - t).abs() {
            best = i;
        }
    }
    best
}

fn frames_tensor(seq: &MonocularSequence) -> Tensor {
    stack_frames(seq.frames.iter().map(|f| f.rgb.as_slice()), seq.height(), seq.width())
}

impl Model {
    pub const STATIC_ENCODER: &'static str = "e_st";

    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let e_dy = VideoEncoder::new(&cfg.encoder);
        let e_st = ImageEncoder::new(Self::STATIC_ENCODER, cfg.static_channels);
        let d = cfg.encoder.feature_dim;
        let proj = FeatureProjections {
            dynamic_channels: e_dy.frames.output_channels(),
            static_channels: e_st.output_channels(),
            feature_dim: d,
        };
        Ok(Self {
            w_temp: TemporalHead::new(&cfg.encoder),
            w_dy: DynamicField::new(cfg.encoding, cfg.dynamic_latent, cfg.dynamic_blocks, d),
            w_st: StaticField::new(cfg.encoding, cfg.static_latent, cfg.static_blocks, d),
            w_vel: VelocityField::new(cfg.encoding, cfg.velocity_latent, cfg.velocity_blocks, d),
            e_dy,
            e_st,
            proj,
            cfg,
        })
    }

    /// Fresh parameters, deterministic in `seed`.
    pub fn init(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        self.e_dy.init(&mut s, &mut rng);
        self.w_temp.init(&mut s, &mut rng);
        self.e_st.init(&mut s, &mut rng);
        self.proj.init(&mut s, &mut rng);
        self.w_dy.init(&mut s, &mut rng);
        self.w_st.init(&mut s, &mut rng);
        self.w_vel.init(&mut s, &mut rng);
        s
    }

    /// Runs both encoders on `seq` inside `p`'s graph.
    pub fn encode(&self, p: &Bound, seq: &MonocularSequence) -> VideoContext {
        let g = p.graph;
        let images = g.constant(frames_tensor(seq));
        let pack = self.e_dy.encode(p, images, &seq.times);
        let f_temp = self.w_temp.temporal_feature(p, &pack);
        let background = self.e_st.pyramid(p, images);
        VideoContext {
            f_temp,
            dynamic: pack.pyramid,
            cameras: seq.cameras.clone(),
            times: seq.times.clone(),
            background,
            background_cameras: seq.cameras.clone(),
        }
    }

    /// Encoder outputs for inference.
    pub fn encode_frozen(&self, store: &ParamStore, seq: &MonocularSequence) -> EncodedVideo {
        let g = Graph::new();
        let p = Bound::frozen(&g, store);
        let ctx = self.encode(&p, seq);
        let grab = |py: &Pyramid| py.levels.iter().map(|&l| g.value(l).clone()).collect();
        let out = EncodedVideo {
            f_temp: g.value(ctx.f_temp).clone(),
            dynamic: grab(&ctx.dynamic),
            cameras: ctx.cameras.clone(),
            times: ctx.times.clone(),
            background: grab(&ctx.background),
            background_cameras: ctx.background_cameras.clone(),
            near: seq.near,
            far: seq.far,
            width: seq.width(),
            height: seq.height(),
        };
        out
    }

    pub fn velocity<'a, 'g>(&'a self, p: &'a Bound<'g>, ctx: &VideoContext) -> BoundVelocity<'a, 'g> {
        self.w_vel.bind(p, ctx.f_temp)
    }

    /// Evaluates `W_dy` with features gathered along each point's trajectory
    /// at the previous, anchor and next frame.
    pub fn eval_dynamic(
        &self,
        p: &Bound,
        ctx: &VideoContext,
        vel: &BoundVelocity,
        q: DynamicQuery,
        solver: SolverConfig,
    ) -> DynamicEval {
        let g = p.graph;
        let n = q.t.len();
        assert_eq!(q.anchor.len(), n);
        let k = ctx.times.len() as isize;
        let mut slots = Vec::with_capacity(WINDOW);
        let mut feats = Vec::with_capacity(WINDOW);
        let mut slot_mask = vec![[false; WINDOW]; n];
        for (s, offset) in [-1isize, 0, 1].into_iter().enumerate() {
            let mut frames = Vec::with_capacity(n);
            let mut exists = Vec::with_capacity(n);
            let mut target = Vec::with_capacity(n);
            for i in 0..n {
                let f = q.anchor[i] as isize + offset;
                let ok = (0..k).contains(&f);
                let f = if ok { f as usize } else { q.anchor[i] };
                frames.push(f);
                exists.push(ok);
                target.push(if ok { ctx.times[f] } else { q.t[i] });
            }
            let position = integrate(g, vel, q.x, q.t, &target, solver);
            let (coords, front) = project_points(g, &ctx.cameras, &frames, position);
            let usable: Vec<bool> = exists.iter().zip(&front).map(|(a, b)| *a && *b).collect();
            let (feat, valid) = sample_frame_feature(g, &ctx.dynamic, &frames, coords, &usable);
            for (m, v) in slot_mask.iter_mut().zip(&valid) {
                m[s] = *v;
            }
            feats.push(feat);
            slots.push(SlotTrace { position, coords, frames, exists, front });
        }
        let channels = g.shape(feats[0])[1];
        let window = WindowSample { stacked: g.concat(&feats, 1), slot_mask: slot_mask.clone(), channels };
        let terms = self.w_dy.terms_fused(p, &self.proj, ctx.f_temp, &window);
        let t = g.constant(Tensor::new(vec![n, 1], q.t.to_vec()));
        let out = self.w_dy.query(p, q.x, t, q.dirs, &terms);
        DynamicEval { out, slots, slot_mask }
    }

    /// Evaluates `W_st` with features from `sources[p]` of the background video.
    /// Returns the samples and whether each point's feature was usable.
    pub fn eval_static(&self, p: &Bound, ctx: &VideoContext, x: Var, dirs: Var, sources: &[usize]) -> (StaticSamples, Vec<bool>) {
        let g = p.graph;
        let (coords, front) = project_points(g, &ctx.background_cameras, sources, x);
        let (sample, valid) = sample_frame_feature(g, &ctx.background, sources, coords, &front);
        let terms = self.w_st.terms_fused(p, &self.proj, sample, &valid);
        (self.w_st.query(p, x, dirs, &terms), valid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synthesize, CameraRig, Recipe};

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::toy();
        c.encoder.feature_dim = 16;
        c.encoder.channels = [4, 4, 4];
        c.static_channels = [4, 4, 4];
        c.dynamic_latent = 8;
        c.static_latent = 8;
        c.velocity_latent = 8;
        c
    }

    fn sequence() -> MonocularSequence {
        let rig = CameraRig { width: 16, height: 16, focal: 16.0, ..CameraRig::default() };
        synthesize(&Recipe::Sphere.scene(), &rig, 4).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let m = Model::new(tiny()).unwrap();
        let (a, b, c) = (m.init(3), m.init(3), m.init(4));
        assert_eq!(a.num_values(), b.num_values());
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x == y));
        assert!(a.iter().zip(c.iter()).any(|(x, y)| x.1 != y.1));
        for prefix in ["e_dy.", "w_temp.", "e_st.", "fc_1.", "fc_2.", "fc_3.", "w_dy.", "w_st.", "w_vel."] {
            assert!(a.names().any(|n| n.starts_with(prefix)), "{prefix}");
        }
    }

    #[test]
    fn anchor_is_nearest_frame() {
        let times = [0.0, 0.25, 0.5, 0.75, 1.0];
        assert_eq!(anchor_frame(&times, 0.3), 1);
        assert_eq!(anchor_frame(&times, 0.5), 2);
        assert_eq!(anchor_frame(&times, 0.9), 4);
        assert_eq!(anchor_frame(&times[..2], 0.9), 1);
    }

    #[test]
    fn end_frames_miss_one_slot() {
        let m = Model::new(tiny()).unwrap();
        let s = m.init(1);
        let seq = sequence();
        let g = Graph::new();
        let p = Bound::frozen(&g, &s);
        let ctx = m.encode(&p, &seq);
        let vel = m.velocity(&p, &ctx);
        let x = g.constant(Tensor::matrix(3, 3, vec![0.0, 0.0, 2.5, 0.1, 0.0, 2.5, 0.0, 0.1, 2.5]));
        let dirs = g.constant(Tensor::matrix(3, 3, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]));
        let t = [seq.times[0], seq.times[2], seq.times[3]];
        let q = DynamicQuery { x, t: &t, anchor: &[0, 2, 3], dirs };
        let e = m.eval_dynamic(&p, &ctx, &vel, q, SolverConfig::TRAIN);
        assert_eq!(e.slot_mask, vec![[false, true, true], [true, true, true], [true, true, false]]);
        assert_eq!(e.slots[0].exists, vec![false, true, true]);
        assert_eq!(e.slots[2].exists, vec![true, true, false]);
        // The anchor slot is evaluated at the query time, so it is the query point.
        assert_eq!(*g.value(e.slots[1].position), *g.value(x));
    }

    #[test]
    fn frozen_encoding_matches_live() {
        let m = Model::new(tiny()).unwrap();
        let s = m.init(2);
        let seq = sequence();
        let enc = m.encode_frozen(&s, &seq);
        let g = Graph::new();
        let p = Bound::frozen(&g, &s);
        let live = m.encode(&p, &seq);
        assert_eq!(*g.value(live.f_temp), enc.f_temp);
        assert!(enc.has_own_background());
        let bound = enc.bind(&g);
        assert_eq!(*g.value(bound.dynamic.levels[2]), *g.value(live.dynamic.levels[2]));
    }
}
