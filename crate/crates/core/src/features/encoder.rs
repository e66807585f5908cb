use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::nn::{positional_encode_var, Bound, ParamStore, ResidualMlp, ResidualMlpConfig};

/// Number of pyramid levels.
pub const LEVELS: usize = 3;

/// Three-level convolutional image encoder.
///
/// Level 0 is the input RGB concatenated with a stride-1 conv; levels 1 and 2
/// are stride-2 convs of the previous level. All convs are 3x3 with ReLU.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    pub name: String,
    pub channels: [usize; LEVELS],
}

/// Per-frame feature maps; `levels[l]` is `[K, H >> l, W >> l, C_l]`.
#[derive(Clone, Debug)]
pub struct Pyramid {
    pub levels: Vec<Var>,
}

impl Pyramid {
    pub fn level_channels(&self, g: &Graph) -> Vec<usize> {
        self.levels.iter().map(|&l| g.shape(l)[3]).collect()
    }

    pub fn channels(&self, g: &Graph) -> usize {
        self.level_channels(g).iter().sum()
    }

    /// `(K, H, W)` of the finest level.
    pub fn extent(&self, g: &Graph) -> (usize, usize, usize) {
        let s = g.shape(self.levels[0]);
        (s[0], s[1], s[2])
    }
}

impl ImageEncoder {
    pub fn new(name: impl Into<String>, channels: [usize; LEVELS]) -> Self {
        Self { name: name.into(), channels }
    }

    fn conv_name(&self, l: usize) -> String {
        format!("{}.conv{l}", self.name)
    }

    /// Channel count of each level's output.
    pub fn level_channels(&self) -> [usize; LEVELS] {
        [3 + self.channels[0], self.channels[1], self.channels[2]]
    }

    pub fn output_channels(&self) -> usize {
        self.level_channels().iter().sum()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let inputs = [3, 3 + self.channels[0], self.channels[1]];
        for l in 0..LEVELS {
            store.init_linear(&self.conv_name(l), 9 * inputs[l], self.channels[l], rng);
        }
    }

    fn conv(&self, p: &Bound, l: usize, x: Var, stride: usize) -> Var {
        let g = p.graph;
        let name = self.conv_name(l);
        let y = g.conv3x3(x, p.var(&format!("{name}.w")), stride);
        g.relu(g.add(y, p.var(&format!("{name}.b"))))
    }

    /// Encodes `images: [K, H, W, 3]`.
    pub fn pyramid(&self, p: &Bound, images: Var) -> Pyramid {
        let g = p.graph;
        let l0 = g.concat(&[images, self.conv(p, 0, images, 1)], 3);
        let l1 = self.conv(p, 1, l0, 2);
        let l2 = self.conv(p, 2, l1, 2);
        Pyramid { levels: vec![l0, l1, l2] }
    }
}

/// Shape hyperparameters of the feature networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub channels: [usize; LEVELS],
    pub global_dim: usize,
    pub temporal_latent: usize,
    pub temporal_blocks: usize,
    /// Width of `F_temp`, `F_sp` and `F_st`.
    pub feature_dim: usize,
    pub time_freq: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { channels: [8, 16, 32], global_dim: 32, temporal_latent: 64, temporal_blocks: 1, feature_dim: 256, time_freq: 4 }
    }
}

/// `E_dy`: per-frame pyramids plus a global video latent.
#[derive(Clone, Debug)]
pub struct VideoEncoder {
    pub frames: ImageEncoder,
    pub global_dim: usize,
    pub time_freq: usize,
}

/// Encoded video: pyramids for every frame and the global latent `[1, G]`.
#[derive(Clone, Debug)]
pub struct VideoFeaturePack {
    pub pyramid: Pyramid,
    pub global: Var,
}

impl VideoEncoder {
    pub const NAME: &'static str = "e_dy";

    pub fn new(cfg: &EncoderConfig) -> Self {
        Self { frames: ImageEncoder::new(Self::NAME, cfg.channels), global_dim: cfg.global_dim, time_freq: cfg.time_freq }
    }

    fn global_name() -> String {
        format!("{}.global", Self::NAME)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.frames.init(store, rng);
        let input = self.frames.channels[LEVELS - 1] + 2 * self.time_freq;
        store.init_linear(&Self::global_name(), input, self.global_dim, rng);
    }

    /// Encodes `images: [K, H, W, 3]` taken at `times`.
    ///
    /// The global latent averages `relu(Lin([pool(level 2)_k, PE(t_k)]))` over
    /// frames, so it depends on which image sits at which time.
    pub fn encode(&self, p: &Bound, images: Var, times: &[f64]) -> VideoFeaturePack {
        let g = p.graph;
        let pyramid = self.frames.pyramid(p, images);
        let top = *pyramid.levels.last().unwrap();
        let s = g.shape(top);
        let (k, hw, c) = (s[0], s[1] * s[2], s[3]);
        assert_eq!(k, times.len(), "one timestamp per frame");
        let pooled = g.reshape(g.sum_axis(g.reshape(top, &[k, hw, c]), 1), &[k, c]);
        let pooled = g.scale(pooled, 1.0 / hw as f64);
        let t = g.constant(Tensor::new(vec![k, 1], times.to_vec()));
        let per_frame = g.relu(p.linear(&Self::global_name(), g.concat(&[pooled, positional_encode_var(g, t, self.time_freq)], 1)));
        let global = g.scale(g.sum_axis(per_frame, 0), 1.0 / k as f64);
        VideoFeaturePack { pyramid, global }
    }
}

/// `W_temp`: maps the global video latent to `F_temp`.
#[derive(Clone, Debug)]
pub struct TemporalHead {
    pub mlp: ResidualMlp,
}

impl TemporalHead {
    pub const NAME: &'static str = "w_temp";

    pub fn new(cfg: &EncoderConfig) -> Self {
        let mlp_cfg = ResidualMlpConfig {
            input_dim: cfg.global_dim,
            latent_dim: cfg.temporal_latent,
            output_dim: cfg.feature_dim,
            n_blocks: cfg.temporal_blocks,
            conditioning_dim: 0,
        };
        Self { mlp: ResidualMlp::new(Self::NAME, mlp_cfg) }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.mlp.init(store, rng);
    }

    /// `F_temp = W_temp(E_dy(V))`, shape `[1, feature_dim]`.
    pub fn temporal_feature(&self, p: &Bound, pack: &VideoFeaturePack) -> Var {
        self.mlp.forward(p, pack.global, None)
    }
}

/// Stacks RGB frames (`H*W*3` row-major each) into a `[K, H, W, 3]` tensor.
pub fn stack_frames<'a>(frames: impl IntoIterator<Item = &'a [f64]>, h: usize, w: usize) -> Tensor {
    let mut data = Vec::new();
    let mut k = 0;
    for f in frames {
        assert_eq!(f.len(), h * w * 3, "frame size");
        data.extend_from_slice(f);
        k += 1;
    }
    Tensor::new(vec![k, h, w, 3], data)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn video(k: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[k, 16, 16, 3], |_| rng.gen_range(0.0..1.0))
    }

    fn setup() -> (VideoEncoder, TemporalHead, ParamStore) {
        let cfg = EncoderConfig { channels: [4, 6, 8], global_dim: 8, temporal_latent: 8, ..EncoderConfig::default() };
        let (e, w) = (VideoEncoder::new(&cfg), TemporalHead::new(&cfg));
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        e.init(&mut s, &mut rng);
        w.init(&mut s, &mut rng);
        (e, w, s)
    }

    #[test]
    fn pyramid_shapes_follow_halving() {
        let enc = ImageEncoder::new("e", [8, 16, 32]);
        let mut s = ParamStore::new();
        enc.init(&mut s, &mut ChaCha8Rng::seed_from_u64(1));
        let g = Graph::new();
        let p = Bound::frozen(&g, &s);
        let img = g.constant(Tensor::zeros(&[2, 64, 64, 3]));
        let pyr = enc.pyramid(&p, img);
        let shapes: Vec<Vec<usize>> = pyr.levels.iter().map(|&l| g.shape(l)).collect();
        assert_eq!(shapes, vec![vec![2, 64, 64, 11], vec![2, 32, 32, 16], vec![2, 16, 16, 32]]);
        assert_eq!(pyr.channels(&g), enc.output_channels());
    }

    #[test]
    fn encoding_is_deterministic() {
        let (e, w, s) = setup();
        let run = || {
            let g = Graph::new();
            let p = Bound::frozen(&g, &s);
            let pack = e.encode(&p, g.constant(video(3, 9)), &[0.0, 0.5, 1.0]);
            let f = w.temporal_feature(&p, &pack);
            let out = g.value(f).data().to_vec();
            out
        };
        let a = run();
        assert_eq!(a.len(), 256);
        assert_eq!(a, run());
    }

    #[test]
    fn frame_order_changes_global_latent() {
        let (e, _, s) = setup();
        let v = video(3, 10);
        let mut permuted = Tensor::zeros(v.shape());
        let n = 16 * 16 * 3;
        for (dst, src) in [(0, 2), (1, 0), (2, 1)] {
            permuted.data_mut()[dst * n..(dst + 1) * n].copy_from_slice(&v.data()[src * n..(src + 1) * n]);
        }
        let latent = |t: &Tensor| {
            let g = Graph::new();
            let p = Bound::frozen(&g, &s);
            let pack = e.encode(&p, g.constant(t.clone()), &[0.0, 0.5, 1.0]);
            let out = g.value(pack.global).data().to_vec();
            out
        };
        let (a, b) = (latent(&v), latent(&permuted));
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-6, "permutation left the latent unchanged");
    }

    #[test]
    fn zero_temporal_head_gives_zero_feature() {
        let (e, w, mut s) = setup();
        s.zero_matching(TemporalHead::NAME);
        let g = Graph::new();
        let p = Bound::frozen(&g, &s);
        let pack = e.encode(&p, g.constant(video(2, 1)), &[0.0, 1.0]);
        let f = w.temporal_feature(&p, &pack);
        assert!(g.value(f).data().iter().all(|&v| v == 0.0));
    }
}
