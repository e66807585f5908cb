use std::collections::BTreeSet;
use std::fmt::Write;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::render::ImageOptions;
use crate::scene::{CameraRig, Recipe};
use crate::training::{LossWeights, TrainConfig, TERMS};
use crate::trajectory::SolverConfig;

/// Every accepted key with its documentation. Loss weights are `weight.<term>`.
pub const KEYS: &[(&str, &str)] = &[
    ("scene", "synthetic scene recipe: sphere | cuboid | orbit | pair"),
    ("width", "image width in pixels"),
    ("height", "image height in pixels"),
    ("focal", "focal length in pixels"),
    ("frames", "video length K"),
    ("model", "network size: toy | full"),
    ("solver", "trajectory integrator: euler | rk4"),
    ("solver_steps", "integrator steps N over the unit interval"),
    ("steps", "optimizer steps"),
    ("seed", "seed for initialization, ray sampling and rendering"),
    ("lr", "Adam learning rate"),
    ("rays", "rays per batch"),
    ("samples", "depth samples per training ray"),
    ("render_samples", "depth samples per rendered ray"),
    ("foreground_fraction", "share of each batch drawn from foreground pixels"),
    ("mf_points", "points per batch for the blending-consistency term"),
    ("freeze", "comma-separated parameter prefixes held fixed (empty for none)"),
    ("weight.eps", "half-width of the blending band around the surface"),
    ("init", "checkpoint to continue from (empty for fresh parameters)"),
    ("data", "dataset directories, comma-separated"),
    ("out", "run output directory"),
];

/// Plain-text `key = value` configuration of a run. `#` starts a comment.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scene: Recipe,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub frames: usize,
    pub model: String,
    pub solver: SolverConfig,
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub rays: usize,
    pub samples: usize,
    pub render_samples: usize,
    pub foreground_fraction: f64,
    pub mf_points: usize,
    pub freeze: Vec<String>,
    pub weights: LossWeights,
    pub init: Option<PathBuf>,
    pub data: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let rig = CameraRig::default();
        let t = TrainConfig::default();
        Self {
            scene: Recipe::Sphere,
            width: rig.width,
            height: rig.height,
            focal: rig.focal,
            frames: 12,
            model: "toy".into(),
            solver: t.solver,
            steps: t.steps,
            seed: t.seed,
            lr: t.lr,
            rays: t.rays_per_batch,
            samples: t.samples,
            render_samples: ImageOptions::default().samples,
            foreground_fraction: t.foreground_fraction,
            mf_points: t.mf_points,
            freeze: t.freeze,
            weights: LossWeights::default(),
            init: None,
            data: Vec::new(),
            out: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "scene" => self.scene = Recipe::parse(v)?,
            "width" => self.width = num(key, v)?,
            "height" => self.height = num(key, v)?,
            "focal" => self.focal = num(key, v)?,
            "frames" => self.frames = num(key, v)?,
            "model" => self.model = v.to_string(),
            "solver" => self.solver = SolverConfig::parse(v, self.solver.steps)?,
            "solver_steps" => self.solver.steps = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "rays" => self.rays = num(key, v)?,
            "samples" => self.samples = num(key, v)?,
            "render_samples" => self.render_samples = num(key, v)?,
            "foreground_fraction" => self.foreground_fraction = num(key, v)?,
            "mf_points" => self.mf_points = num(key, v)?,
            "freeze" => self.freeze = list(v),
            "init" => self.init = path(v),
            "data" => self.data = list(v).into_iter().map(PathBuf::from).collect(),
            "out" => self.out = path(v),
            _ => match key.strip_prefix("weight.") {
                Some(term) => self.weights.set(term, num(key, v)?)?,
                None => return Err(Error::Config(format!("unknown key `{key}`"))),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config(format!("frames must be >= 2, got {}", self.frames)));
        }
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) {
            return Err(Error::Config("image size and focal length must be positive".into()));
        }
        if self.render_samples == 0 {
            return Err(Error::Config("render_samples must be positive".into()));
        }
        self.model_config()?;
        self.solver.validate()?;
        self.train_config().validate()?;
        self.weights.validate()
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        match self.model.as_str() {
            "toy" => Ok(ModelConfig::toy()),
            "full" => Ok(ModelConfig::default()),
            other => Err(Error::Config(format!("unknown model size `{other}`"))),
        }
    }

    pub fn rig(&self) -> CameraRig {
        CameraRig { width: self.width, height: self.height, focal: self.focal, ..CameraRig::default() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rays_per_batch: self.rays,
            samples: self.samples,
            lr: self.lr,
            steps: self.steps,
            solver: self.solver,
            seed: self.seed,
            foreground_fraction: self.foreground_fraction,
            mf_points: self.mf_points,
            freeze: self.freeze.clone(),
        }
    }

    pub fn image_options(&self) -> ImageOptions {
        ImageOptions { samples: self.render_samples, solver: self.solver, seed: self.seed, ..ImageOptions::default() }
    }

    /// Canonical text holding every key; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let paths = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("scene", self.scene.name().into());
        put("width", self.width.to_string());
        put("height", self.height.to_string());
        put("focal", format!("{:?}", self.focal));
        put("frames", self.frames.to_string());
        put("model", self.model.clone());
        put("solver", self.solver.kind_name().into());
        put("solver_steps", self.solver.steps.to_string());
        put("steps", self.steps.to_string());
        put("seed", self.seed.to_string());
        put("lr", format!("{:?}", self.lr));
        put("rays", self.rays.to_string());
        put("samples", self.samples.to_string());
        put("render_samples", self.render_samples.to_string());
        put("foreground_fraction", format!("{:?}", self.foreground_fraction));
        put("mf_points", self.mf_points.to_string());
        put("freeze", self.freeze.join(","));
        for (term, w) in TERMS.iter().zip(self.weights.as_array()) {
            put(&format!("weight.{term}"), format!("{w:?}"));
        }
        put("weight.eps", format!("{:?}", self.weights.eps));
        put("init", opt(&self.init));
        put("data", paths(&self.data));
        put("out", opt(&self.out));
        s
    }

    /// The default configuration with one comment line per key.
    pub fn documented() -> String {
        let defaults = Self::default().to_text();
        let mut s = String::new();
        for line in defaults.lines() {
            let key = line.split('=').next().unwrap_or("").trim();
            let doc = match key.strip_prefix("weight.") {
                Some(term) if term != "eps" => format!("weight of the `{term}` loss term (0 disables it)"),
                _ => KEYS.iter().find(|(k, _)| *k == key).map(|(_, d)| d.to_string()).unwrap_or_default(),
            };
            writeln!(s, "# {doc}\n{line}").unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        let d = RunConfig::default();
        assert_eq!((d.width, d.height, d.frames), (64, 64, 12));
        assert_eq!(d.solver, SolverConfig::TRAIN);
    }

    #[test]
    fn round_trips_through_text() {
        let text = "scene = pair\nframes = 8 # short\nsolver = rk4\nsolver_steps = 4\nweight.corr = 2.5\nfreeze = e_st, w_st\ndata = a,b\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.scene, Recipe::Pair);
        assert_eq!(cfg.solver, SolverConfig::rk4(4));
        assert_eq!(cfg.weights.corr, 2.5);
        assert_eq!(cfg.freeze, vec!["e_st", "w_st"]);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&RunConfig::documented()).unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_unknown_duplicate_and_invalid() {
        assert!(RunConfig::parse("colour = red").is_err());
        assert!(RunConfig::parse("weight.lpips = 1").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("frames = 1").is_err());
        assert!(RunConfig::parse("steps = many").is_err());
        assert!(RunConfig::parse("just a line").is_err());
    }

    #[test]
    fn every_key_is_documented() {
        let doc = RunConfig::documented();
        for line in RunConfig::default().to_text().lines() {
            let key = line.split('=').next().unwrap().trim();
            assert!(key.starts_with("weight.") || KEYS.iter().any(|(k, _)| *k == key), "{key}");
        }
        assert!(doc.lines().filter(|l| l.starts_with("# ")).all(|l| l.len() > 3));
    }
}
