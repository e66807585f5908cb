use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::nn::{Bound, ParamStore};

/// Frames in the spatial-feature window: previous, anchor, next.
pub const WINDOW: usize = 3;

/// Pyramid samples for the window slots of a batch of points.
#[derive(Clone, Debug)]
pub struct WindowSample {
    /// `[P, WINDOW * C]`, slot-major; missing or out-of-view slots are zero.
    pub stacked: Var,
    /// Per point and slot: the slot exists and its sample is in view.
    pub slot_mask: Vec<[bool; WINDOW]>,
    pub channels: usize,
}

impl WindowSample {
    pub fn len(&self) -> usize {
        self.slot_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot_mask.is_empty()
    }

    /// Points with no usable slot.
    pub fn low_confidence(&self) -> Vec<bool> {
        self.slot_mask.iter().map(|m| !m.iter().any(|&v| v)).collect()
    }

    fn slot_column(&self, g: &Graph, s: usize) -> Var {
        let v: Vec<f64> = self.slot_mask.iter().map(|m| m[s] as u8 as f64).collect();
        g.constant(Tensor::new(vec![v.len(), 1], v))
    }

    fn any_column(&self, g: &Graph) -> Var {
        let v: Vec<f64> = self.low_confidence().iter().map(|&l| if l { 0.0 } else { 1.0 }).collect();
        g.constant(Tensor::new(vec![v.len(), 1], v))
    }

    fn mask_matrix(&self, g: &Graph) -> Var {
        let v: Vec<f64> = self.slot_mask.iter().flat_map(|m| m.map(|b| b as u8 as f64)).collect();
        g.constant(Tensor::matrix(self.len(), WINDOW, v))
    }
}

/// The linear maps `fc_1`, `fc_2`, `fc_3` that turn pyramid samples into
/// `F_sp` and `F_st`.
#[derive(Clone, Debug)]
pub struct FeatureProjections {
    pub dynamic_channels: usize,
    pub static_channels: usize,
    pub feature_dim: usize,
}

impl FeatureProjections {
    pub const FC1: &'static str = "fc_1";
    pub const FC2: &'static str = "fc_2";
    pub const FC3: &'static str = "fc_3";

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.init_linear(Self::FC1, self.dynamic_channels, self.feature_dim, rng);
        store.init_linear(Self::FC2, WINDOW * self.feature_dim, self.feature_dim, rng);
        store.init_linear(Self::FC3, self.static_channels, self.feature_dim, rng);
    }

    fn w(p: &Bound, name: &str) -> Var {
        p.var(&format!("{name}.w"))
    }

    fn b(p: &Bound, name: &str) -> Var {
        p.var(&format!("{name}.b"))
    }

    /// `F_sp`: `fc_2` over the concatenated per-slot `F_sp^i = fc_1(sample)`,
    /// with missing slots zero-filled. Points with no usable slot get zeros.
    pub fn spatial_feature(&self, p: &Bound, w: &WindowSample) -> Var {
        let g = p.graph;
        let c = w.channels;
        let slots: Vec<Var> = (0..WINDOW)
            .map(|s| {
                let f = p.linear(Self::FC1, g.slice_cols(w.stacked, s * c, (s + 1) * c));
                g.mul(f, w.slot_column(g, s))
            })
            .collect();
        let f = p.linear(Self::FC2, g.concat(&slots, 1));
        g.mul(f, w.any_column(g))
    }

    /// `F_sp @ w_sp` without materializing `F_sp`; `w_sp` is `[feature_dim, L]`.
    ///
    /// Exact rewrite of [`spatial_feature`](Self::spatial_feature) followed by
    /// the product, using that `fc_1` and `fc_2` are linear.
    pub fn spatial_term(&self, p: &Bound, w: &WindowSample, w_sp: Var) -> Var {
        let g = p.graph;
        let d = self.feature_dim;
        let w1 = Self::w(p, Self::FC1);
        let b1 = Self::b(p, Self::FC1);
        let w2 = Self::w(p, Self::FC2);
        let mut gs = Vec::with_capacity(WINDOW);
        let mut betas = Vec::with_capacity(WINDOW);
        for s in 0..WINDOW {
            let rows: Vec<usize> = (s * d..(s + 1) * d).collect();
            let a = g.matmul(g.gather_rows(w2, &rows), w_sp);
            gs.push(g.matmul(w1, a));
            betas.push(g.matmul(b1, a));
        }
        let gmat = g.concat(&gs, 0);
        let beta = g.concat(&betas, 0);
        let beta2 = g.matmul(Self::b(p, Self::FC2), w_sp);
        let t = g.add(g.matmul(w.stacked, gmat), g.matmul(w.mask_matrix(g), beta));
        g.add(t, g.matmul(w.any_column(g), beta2))
    }

    /// `F_st = fc_3(sample)`, zero where the sample is unusable.
    pub fn static_feature(&self, p: &Bound, sample: Var, valid: &[bool]) -> Var {
        let g = p.graph;
        let f = p.linear(Self::FC3, sample);
        g.mul(f, bool_column(g, valid))
    }

    /// `F_st @ w_st` without materializing `F_st`.
    pub fn static_term(&self, p: &Bound, sample: Var, valid: &[bool], w_st: Var) -> Var {
        let g = p.graph;
        let gmat = g.matmul(Self::w(p, Self::FC3), w_st);
        let beta = g.matmul(Self::b(p, Self::FC3), w_st);
        g.add(g.matmul(sample, gmat), g.matmul(bool_column(g, valid), beta))
    }
}

pub(crate) fn bool_column(g: &Graph, flags: &[bool]) -> Var {
    let v: Vec<f64> = flags.iter().map(|&b| b as u8 as f64).collect();
    g.constant(Tensor::new(vec![v.len(), 1], v))
}

/// `F_dy = [F_temp, F_sp]` per point; `f_temp` is `[1, D]`, `f_sp` is `[P, D]`.
pub fn point_feature(g: &Graph, f_temp: Var, f_sp: Var) -> Var {
    let rows = g.shape(f_sp)[0];
    let ones = g.constant(Tensor::ones(&[rows, 1]));
    g.concat(&[g.matmul(ones, f_temp), f_sp], 1)
}
