use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::features::{FeatureProjections, WindowSample};
use crate::nn::{Bound, ParamStore, PointEncoding, ResidualMlp, ResidualMlpConfig};

/// Per-sample outputs of the dynamic field.
#[derive(Clone, Copy, Debug)]
pub struct DynamicSamples {
    /// `[P, 1]`, softplus.
    pub sigma: Var,
    /// `[P, 1]`, sigmoid.
    pub blend: Var,
    /// `[P, 3]`, sigmoid.
    pub rgb: Var,
}

/// Per-sample outputs of the static field.
#[derive(Clone, Copy, Debug)]
pub struct StaticSamples {
    pub sigma: Var,
    pub rgb: Var,
}

fn color_head(p: &Bound, name: &str, h: Var, d: Var) -> Var {
    let g = p.graph;
    g.sigmoid(p.linear(name, g.concat(&[g.relu(h), d], 1)))
}

/// `W_dy`: `(x, t)` conditioned on `F_dy = [F_temp, F_sp]` to `(σ_dy, b)`,
/// with a view-dependent color head.
#[derive(Clone, Debug)]
pub struct DynamicField {
    pub mlp: ResidualMlp,
    pub encoding: PointEncoding,
    pub feature_dim: usize,
}

impl DynamicField {
    pub const NAME: &'static str = "w_dy";
    pub const RGB: &'static str = "w_dy.rgb";

    pub fn new(encoding: PointEncoding, latent_dim: usize, n_blocks: usize, feature_dim: usize) -> Self {
        let cfg = ResidualMlpConfig {
            input_dim: encoding.xt_dim(),
            latent_dim,
            output_dim: 2,
            n_blocks,
            conditioning_dim: 2 * feature_dim,
        };
        Self { mlp: ResidualMlp::new(Self::NAME, cfg), encoding, feature_dim }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.mlp.init(store, rng);
        store.init_linear(Self::RGB, self.mlp.cfg.latent_dim + 3, 3, rng);
    }

    /// Conditioning terms from an explicit `F_dy: [P, 2D]`.
    pub fn terms_explicit(&self, p: &Bound, f_dy: Var) -> Vec<Var> {
        self.mlp.cond_terms(p, f_dy)
    }

    /// Conditioning terms computed from the temporal feature and the window
    /// samples directly; equal to [`terms_explicit`](Self::terms_explicit) on
    /// `point_feature(F_temp, spatial_feature(window))`.
    pub fn terms_fused(&self, p: &Bound, proj: &FeatureProjections, f_temp: Var, window: &WindowSample) -> Vec<Var> {
        let g = p.graph;
        let d = self.feature_dim;
        let temporal: Vec<usize> = (0..d).collect();
        let spatial: Vec<usize> = (d..2 * d).collect();
        (0..self.mlp.cfg.n_blocks)
            .map(|b| {
                let name = self.mlp.cond_param(b);
                let w = p.var(&format!("{name}.w"));
                let bias = p.var(&format!("{name}.b"));
                let t = g.add(g.matmul(f_temp, g.gather_rows(w, &temporal)), bias);
                g.add(proj.spatial_term(p, window, g.gather_rows(w, &spatial)), t)
            })
            .collect()
    }

    /// `x: [P, 3]`, `t: [P, 1]`, `d: [P, 3]`.
    pub fn query(&self, p: &Bound, x: Var, t: Var, d: Var, terms: &[Var]) -> DynamicSamples {
        let g = p.graph;
        let h = self.mlp.trunk(p, self.encoding.encode_xt(g, x, t), terms);
        let out = self.mlp.head(p, h);
        DynamicSamples {
            sigma: g.softplus(g.slice_cols(out, 0, 1)),
            blend: g.sigmoid(g.slice_cols(out, 1, 2)),
            rgb: color_head(p, Self::RGB, h, d),
        }
    }
}

/// `W_st`: `(x, d)` conditioned on `F_st` to `(c_st, σ_st)`.
#[derive(Clone, Debug)]
pub struct StaticField {
    pub mlp: ResidualMlp,
    pub encoding: PointEncoding,
}

impl StaticField {
    pub const NAME: &'static str = "w_st";
    pub const RGB: &'static str = "w_st.rgb";

    pub fn new(encoding: PointEncoding, latent_dim: usize, n_blocks: usize, feature_dim: usize) -> Self {
        let cfg = ResidualMlpConfig {
            input_dim: encoding.x_dim(),
            latent_dim,
            output_dim: 1,
            n_blocks,
            conditioning_dim: feature_dim,
        };
        Self { mlp: ResidualMlp::new(Self::NAME, cfg), encoding }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.mlp.init(store, rng);
        store.init_linear(Self::RGB, self.mlp.cfg.latent_dim + 3, 3, rng);
    }

    pub fn terms_explicit(&self, p: &Bound, f_st: Var) -> Vec<Var> {
        self.mlp.cond_terms(p, f_st)
    }

    /// Terms from the raw static-pyramid `sample: [P, C_st]`.
    pub fn terms_fused(&self, p: &Bound, proj: &FeatureProjections, sample: Var, valid: &[bool]) -> Vec<Var> {
        let g = p.graph;
        (0..self.mlp.cfg.n_blocks)
            .map(|b| {
                let name = self.mlp.cond_param(b);
                let w = p.var(&format!("{name}.w"));
                g.add(proj.static_term(p, sample, valid, w), p.var(&format!("{name}.b")))
            })
            .collect()
    }

    pub fn query(&self, p: &Bound, x: Var, d: Var, terms: &[Var]) -> StaticSamples {
        let g = p.graph;
        let h = self.mlp.trunk(p, self.encoding.encode_x(g, x), terms);
        StaticSamples { sigma: g.softplus(self.mlp.head(p, h)), rgb: color_head(p, Self::RGB, h, d) }
    }
}

/// Unit view directions repeated per sample: `[R*M, 3]`.
pub fn sample_directions(g: &Graph, dirs: &[[f64; 3]], m: usize) -> Var {
    let data: Vec<f64> = dirs.iter().flat_map(|d| std::iter::repeat(*d).take(m).flatten()).collect();
    g.constant(crate::autodiff::Tensor::matrix(dirs.len() * m, 3, data))
}
