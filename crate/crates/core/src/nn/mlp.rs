use rand::Rng;

use super::params::{Bound, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Shape of a [`ResidualMlp`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResidualMlpConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub output_dim: usize,
    pub n_blocks: usize,
    /// Width of the conditioning vector; 0 disables conditioning.
    pub conditioning_dim: usize,
}

impl ResidualMlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.input_dim == 0 || self.latent_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!("residual MLP dims must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// Fully-connected residual network with per-block conditioning.
///
/// ```text
/// h = in(x)
/// for each block:  h += cond_b(z);  h += fc1_b(relu(fc0_b(relu(h))))
/// y = out(relu(h))
/// ```
#[derive(Clone, Debug)]
pub struct ResidualMlp {
    pub name: String,
    pub cfg: ResidualMlpConfig,
}

impl ResidualMlp {
    pub fn new(name: impl Into<String>, cfg: ResidualMlpConfig) -> Self {
        cfg.validate().expect("invalid residual MLP config");
        Self { name: name.into(), cfg }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let c = self.cfg;
        store.init_linear(&format!("{}.in", self.name), c.input_dim, c.latent_dim, rng);
        for b in 0..c.n_blocks {
            store.init_linear(&self.block_param(b, "fc0"), c.latent_dim, c.latent_dim, rng);
            store.init_linear(&self.block_param(b, "fc1"), c.latent_dim, c.latent_dim, rng);
            if c.conditioning_dim > 0 {
                store.init_linear(&self.cond_param(b), c.conditioning_dim, c.latent_dim, rng);
            }
        }
        store.init_linear(&format!("{}.out", self.name), c.latent_dim, c.output_dim, rng);
    }

    pub fn block_param(&self, block: usize, layer: &str) -> String {
        format!("{}.blk{block}.{layer}", self.name)
    }

    /// Name of the linear map injecting the conditioning vector into `block`.
    pub fn cond_param(&self, block: usize) -> String {
        self.block_param(block, "cond")
    }

    /// Per-block additive conditioning terms `z @ W_b + b_b`.
    pub fn cond_terms(&self, p: &Bound, z: Var) -> Vec<Var> {
        assert!(self.cfg.conditioning_dim > 0, "{} is unconditioned", self.name);
        assert_eq!(p.graph.shape(z)[1], self.cfg.conditioning_dim, "{}: conditioning width", self.name);
        (0..self.cfg.n_blocks).map(|b| p.linear(&self.cond_param(b), z)).collect()
    }

    /// Latent state after the last block, before the output activation.
    ///
    /// `terms` holds one additive conditioning term per block (broadcastable to
    /// `[P, latent]`), or is empty for an unconditioned pass.
    pub fn trunk(&self, p: &Bound, x: Var, terms: &[Var]) -> Var {
        let g = p.graph;
        assert_eq!(g.shape(x)[1], self.cfg.input_dim, "{}: input width", self.name);
        assert!(terms.is_empty() || terms.len() == self.cfg.n_blocks);
        let mut h = p.linear(&format!("{}.in", self.name), x);
        for b in 0..self.cfg.n_blocks {
            if let Some(&t) = terms.get(b) {
                h = g.add(h, t);
            }
            let net = p.linear(&self.block_param(b, "fc0"), g.relu(h));
            let dx = p.linear(&self.block_param(b, "fc1"), g.relu(net));
            h = g.add(h, dx);
        }
        h
    }

    pub fn head(&self, p: &Bound, h: Var) -> Var {
        p.linear(&format!("{}.out", self.name), p.graph.relu(h))
    }

    /// Full evaluation. `cond` is ignored when the network is unconditioned.
    pub fn forward(&self, p: &Bound, x: Var, cond: Option<Var>) -> Var {
        let terms = match (cond, self.cfg.conditioning_dim) {
            (Some(z), d) if d > 0 => self.cond_terms(p, z),
            _ => Vec::new(),
        };
        let h = self.trunk(p, x, &terms);
        self.head(p, h)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{gradcheck, Graph, Tensor};

    fn cfg(cond: usize) -> ResidualMlpConfig {
        ResidualMlpConfig { input_dim: 4, latent_dim: 6, output_dim: 3, n_blocks: 3, conditioning_dim: cond }
    }

    fn eval(net: &ResidualMlp, store: &ParamStore, x: &[f64], z: Option<&[f64]>) -> Vec<f64> {
        let g = Graph::new();
        let p = Bound::frozen(&g, store);
        let xv = g.constant(Tensor::row(x));
        let zv = z.map(|z| g.constant(Tensor::row(z)));
        let y = net.forward(&p, xv, zv);
        let out = g.value(y).data().to_vec();
        out
    }

    // Plain loops over the stored weights, independent of the graph code.
    fn straight_line(net: &ResidualMlp, s: &ParamStore, x: &[f64], z: &[f64]) -> Vec<f64> {
        let lin = |name: &str, v: &[f64]| -> Vec<f64> {
            let w = s.get(&format!("{name}.w")).unwrap();
            let b = s.get(&format!("{name}.b")).unwrap();
            let (fi, fo) = (w.shape()[0], w.shape()[1]);
            (0..fo)
                .map(|o| b.data()[o] + (0..fi).map(|i| v[i] * w.data()[i * fo + o]).sum::<f64>())
                .collect()
        };
        let relu = |v: &[f64]| v.iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
        let mut h = lin(&format!("{}.in", net.name), x);
        for b in 0..net.cfg.n_blocks {
            if net.cfg.conditioning_dim > 0 {
                let t = lin(&net.cond_param(b), z);
                h.iter_mut().zip(&t).for_each(|(a, b)| *a += b);
            }
            let n = lin(&net.block_param(b, "fc0"), &relu(&h));
            let d = lin(&net.block_param(b, "fc1"), &relu(&n));
            h.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
        lin(&format!("{}.out", net.name), &relu(&h))
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = ResidualMlp::new("m", cfg(2));
        let mut s = ParamStore::new();
        net.init(&mut s, &mut ChaCha8Rng::seed_from_u64(1));
        s.zero_matching("m");
        assert_eq!(eval(&net, &s, &[1., 2., 3., 4.], Some(&[5., 6.])), vec![0.0; 3]);
    }

    #[test]
    fn unconditioned_ignores_conditioning() {
        let net = ResidualMlp::new("m", cfg(0));
        let mut s = ParamStore::new();
        net.init(&mut s, &mut ChaCha8Rng::seed_from_u64(2));
        let a = eval(&net, &s, &[0.1, 0.2, 0.3, 0.4], None);
        let b = eval(&net, &s, &[0.1, 0.2, 0.3, 0.4], Some(&[9.0, -9.0]));
        assert_eq!(a, b);
    }

    #[test]
    fn matches_straight_line_evaluation() {
        let net = ResidualMlp::new("m", cfg(2));
        let mut s = ParamStore::new();
        net.init(&mut s, &mut ChaCha8Rng::seed_from_u64(3));
        let x = [0.3, -1.2, 0.7, 2.0];
        let z = [0.5, -0.25];
        let got = eval(&net, &s, &x, Some(&z));
        let want = straight_line(&net, &s, &x, &z);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = ResidualMlp::new("m", cfg(2));
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        net.init(&mut s, &mut rng);
        let names: Vec<String> = s.names().cloned().collect();
        let mut inputs: Vec<Tensor> = names.iter().map(|n| s.get(n).unwrap().clone()).collect();
        inputs.push(Tensor::from_fn(&[5, 4], |_| rng.gen_range(-1.0..1.0)));
        inputs.push(Tensor::from_fn(&[5, 2], |_| rng.gen_range(-1.0..1.0)));
        let report = gradcheck::check(
            &inputs,
            |g, vars| {
                let p = Bound::from_vars(g, names.iter().cloned().zip(vars.iter().copied()));
                let y = net.forward(&p, vars[names.len()], Some(vars[names.len() + 1]));
                let sq = g.square(y);
                g.sum(sq)
            },
            1e-5,
            64,
        );
        assert!(report.passes(1e-4), "{report:?}");
    }
}
