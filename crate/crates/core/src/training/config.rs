use crate::error::{Error, Result};
use crate::nn::DEFAULT_LR;
use crate::trajectory::SolverConfig;

/// Loss terms in report order.
pub const TERMS: [&str; 10] = ["full", "opt", "corr", "st", "db", "mf", "depth", "sparse", "smooth", "blend_bg"];

/// Weights of the objective; a zero weight disables its term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub full: f64,
    pub opt: f64,
    pub corr: f64,
    pub st: f64,
    pub db: f64,
    pub mf: f64,
    pub depth: f64,
    pub sparse: f64,
    pub smooth: f64,
    /// `b²` on background rays.
    pub blend_bg: f64,
    /// Half-width of the blending band around the surface, in ray-depth units.
    pub eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            full: 1.0,
            opt: 0.02,
            corr: 4.0,
            st: 1.0,
            db: 0.01,
            mf: 1.0,
            depth: 0.05,
            sparse: 0.001,
            smooth: 0.01,
            blend_bg: 0.01,
            eps: 0.03,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; TERMS.len()] {
        [self.full, self.opt, self.corr, self.st, self.db, self.mf, self.depth, self.sparse, self.smooth, self.blend_bg]
    }

    pub fn set(&mut self, term: &str, value: f64) -> Result<()> {
        let slot = match term {
            "full" => &mut self.full,
            "opt" => &mut self.opt,
            "corr" => &mut self.corr,
            "st" => &mut self.st,
            "db" => &mut self.db,
            "mf" => &mut self.mf,
            "depth" => &mut self.depth,
            "sparse" => &mut self.sparse,
            "smooth" => &mut self.smooth,
            "blend_bg" => &mut self.blend_bg,
            "eps" => &mut self.eps,
            _ => return Err(Error::Config(format!("unknown loss weight `{term}`"))),
        };
        *slot = value;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("blending band eps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub rays_per_batch: usize,
    /// Quadrature samples per ray.
    pub samples: usize,
    pub lr: f64,
    pub steps: usize,
    pub solver: SolverConfig,
    pub seed: u64,
    /// Share of each batch drawn from foreground-mask pixels.
    pub foreground_fraction: f64,
    /// Points per step for the trajectory blending term.
    pub mf_points: usize,
    /// Parameter-name prefixes held fixed.
    pub freeze: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rays_per_batch: 1024,
            samples: 64,
            lr: DEFAULT_LR,
            steps: 20_000,
            solver: SolverConfig::TRAIN,
            seed: 0,
            foreground_fraction: 0.25,
            mf_points: 128,
            freeze: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_batch == 0 || self.samples == 0 {
            return Err(Error::Config("rays_per_batch and samples must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) {
            return Err(Error::Config("foreground_fraction must lie in [0, 1]".into()));
        }
        self.solver.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_defaults() {
        let w = LossWeights::default();
        assert_eq!((w.full, w.opt, w.corr, w.db, w.mf, w.eps), (1.0, 0.02, 4.0, 0.01, 1.0, 0.03));
        let c = TrainConfig::default();
        assert_eq!(c.rays_per_batch, 1024);
        assert_eq!(c.lr, 5e-4);
        assert_eq!(c.solver, SolverConfig::euler(2));
    }

    #[test]
    fn rejects_bad_values() {
        let mut w = LossWeights::default();
        assert!(w.set("nope", 1.0).is_err());
        w.set("corr", -1.0).unwrap();
        assert!(w.validate().is_err());
        let c = TrainConfig { rays_per_batch: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }
}
