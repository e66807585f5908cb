use rand::Rng;

use super::solver::VelocityFn;
use crate::autodiff::{Graph, Var};
use crate::nn::{Bound, ParamStore, PointEncoding, ResidualMlp, ResidualMlpConfig};

/// `W_vel`: encoded `(x, t)` in, 3D velocity out, modulated by `F_temp`.
#[derive(Clone, Debug)]
pub struct VelocityField {
    pub mlp: ResidualMlp,
    pub encoding: PointEncoding,
}

impl VelocityField {
    pub const NAME: &'static str = "w_vel";

    pub fn new(encoding: PointEncoding, latent_dim: usize, n_blocks: usize, temporal_dim: usize) -> Self {
        let cfg = ResidualMlpConfig {
            input_dim: encoding.xt_dim(),
            latent_dim,
            output_dim: 3,
            n_blocks,
            conditioning_dim: temporal_dim,
        };
        Self { mlp: ResidualMlp::new(Self::NAME, cfg), encoding }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.mlp.init(store, rng);
    }

    /// Fixes the conditioning for one video; `f_temp` is `[1, temporal_dim]`.
    pub fn bind<'a, 'g>(&'a self, p: &'a Bound<'g>, f_temp: Var) -> BoundVelocity<'a, 'g> {
        BoundVelocity { field: self, p, terms: self.mlp.cond_terms(p, f_temp) }
    }
}

pub struct BoundVelocity<'a, 'g> {
    field: &'a VelocityField,
    p: &'a Bound<'g>,
    terms: Vec<Var>,
}

impl VelocityFn for BoundVelocity<'_, '_> {
    fn eval(&self, g: &Graph, x: Var, t: Var) -> Var {
        let input = self.field.encoding.encode_xt(g, x, t);
        let h = self.field.mlp.trunk(self.p, input, &self.terms);
        self.field.mlp.head(self.p, h)
    }
}
