use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LossWeights, TrainConfig, TERMS};
use super::losses::*;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::draw_source_frame;
use crate::model::{DynamicQuery, Model};
use crate::nn::{Adam, Bound, Checkpoint, ParamStore};
use crate::render::{quadrature_render, render_batch, Ray, RayBatch};
use crate::scene::MonocularSequence;
use crate::trajectory::{integrate, VelocityFn};

/// Per-term loss values of one step and their weighted total.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub values: [f64; TERMS.len()],
    pub total: f64,
    /// The current-time component of the correspondence term, unweighted.
    pub corr_curr: f64,
    pub seconds: f64,
}

impl LossReport {
    pub fn get(&self, term: &str) -> f64 {
        self.values[TERMS.iter().position(|&t| t == term).unwrap_or_else(|| panic!("unknown loss term `{term}`"))]
    }

    /// One metrics-log line.
    pub fn log_line(&self) -> String {
        let mut s = format!("step={}", self.step);
        for (name, v) in TERMS.iter().zip(&self.values) {
            s.push_str(&format!(" {name}={v:.6e}"));
        }
        s.push_str(&format!(" corr_curr={:.6e} total={:.6e} time={:.3}", self.corr_curr, self.total, self.seconds));
        s
    }
}

/// Pixels of a video split by the foreground mask; entries are `(frame, pixel)`.
#[derive(Clone, Debug)]
struct PixelPools {
    foreground: Vec<(usize, usize)>,
}

impl PixelPools {
    fn new(seq: &MonocularSequence) -> Self {
        let mut foreground = Vec::new();
        for (f, fr) in seq.frames.iter().enumerate() {
            for (i, &m) in fr.mask.iter().enumerate() {
                if m && fr.depth[i].is_finite() {
                    foreground.push((f, i));
                }
            }
        }
        Self { foreground }
    }
}

/// Optimizer state and RNG stream of a training run.
pub struct Trainer<'m> {
    pub model: &'m Model,
    pub store: ParamStore,
    pub adam: Adam,
    pub cfg: TrainConfig,
    pub weights: LossWeights,
    pub step: usize,
    rng: ChaCha8Rng,
}

fn pick<T: Copy>(rng: &mut impl Rng, v: &[T]) -> T {
    v[rng.gen_range(0..v.len())]
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m Model, store: ParamStore, cfg: TrainConfig, weights: LossWeights) -> Result<Self> {
        cfg.validate()?;
        weights.validate()?;
        Ok(Self { model, store, adam: Adam::new(cfg.lr), rng: ChaCha8Rng::seed_from_u64(cfg.seed), cfg, weights, step: 0 })
    }

    /// Continues from a checkpoint, keeping its optimizer state.
    pub fn resume(model: &'m Model, ckpt: Checkpoint, cfg: TrainConfig, weights: LossWeights) -> Result<Self> {
        ckpt.check_architecture(&model.init(0))?;
        let mut t = Self::new(model, ckpt.params, cfg, weights)?;
        t.adam = ckpt.optimizer;
        t.step = t.adam.step as usize;
        Ok(t)
    }

    pub fn checkpoint(&self, meta: impl Into<String>) -> Checkpoint {
        Checkpoint { meta: meta.into(), params: self.store.clone(), optimizer: self.adam.clone() }
    }

    fn trainable(&self) -> impl Fn(&str) -> bool + '_ {
        move |name: &str| !self.cfg.freeze.iter().any(|f| name.starts_with(f.as_str()))
    }

    /// Runs `steps` optimizer steps over `data`, calling `on_step` after each.
    ///
    /// On divergence the parameters stay at the last finite step.
    pub fn run(&mut self, data: &[MonocularSequence], steps: usize, mut on_step: impl FnMut(&LossReport)) -> Result<Vec<LossReport>> {
        if data.is_empty() {
            return Err(Error::Config("training needs at least one video".into()));
        }
        let pools: Vec<PixelPools> = data.iter().map(PixelPools::new).collect();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let r = self.step_with(data, &pools)?;
            on_step(&r);
            out.push(r);
        }
        Ok(out)
    }

    /// One optimizer step.
    pub fn step(&mut self, data: &[MonocularSequence]) -> Result<LossReport> {
        let pools: Vec<PixelPools> = data.iter().map(PixelPools::new).collect();
        self.step_with(data, &pools)
    }

    /// Weighted total and gradients of the next batch, leaving the RNG and
    /// parameters untouched.
    pub fn probe(&mut self, data: &[MonocularSequence]) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let pools: Vec<PixelPools> = data.iter().map(PixelPools::new).collect();
        let rng = self.rng.clone();
        let out = self.evaluate(data, &pools);
        self.rng = rng;
        out.map(|(_, total, _, grads)| (total, grads))
    }

    fn step_with(&mut self, data: &[MonocularSequence], pools: &[PixelPools]) -> Result<LossReport> {
        let start = Instant::now();
        let step = self.step;
        let (values, total, corr_curr, grads) = self.evaluate(data, pools)?;
        self.adam.step(&mut self.store, &grads).map_err(|e| Error::Diverged { step, detail: e.to_string() })?;
        self.step += 1;
        Ok(LossReport { step, values, total, corr_curr, seconds: start.elapsed().as_secs_f64() })
    }

    /// Loss terms, weighted total, current-time correspondence component and
    /// parameter gradients of the next batch.
    fn evaluate(
        &mut self,
        data: &[MonocularSequence],
        pools: &[PixelPools],
    ) -> Result<([f64; TERMS.len()], f64, f64, BTreeMap<String, Tensor>)> {
        let vi = if data.len() == 1 { 0 } else { self.rng.gen_range(0..data.len()) };
        let g = Graph::new();
        let p = Bound::new(&g, &self.store, self.trainable());
        let (terms, total, curr) = self.losses(&g, &p, &data[vi], &pools[vi]);
        let values: [f64; TERMS.len()] = terms.map(|t| g.value(t).item());
        let total_value = g.value(total).item();
        let step = self.step;
        let diverged = |detail: String| Error::Diverged { step, detail };
        if !values.iter().all(|v| v.is_finite()) || !total_value.is_finite() {
            return Err(diverged(format!("non-finite loss terms {values:?}")));
        }
        let curr_value = g.value(curr).item();
        let grads = g.backward(total).map_err(|e| diverged(e.to_string()))?;
        Ok((values, total_value, curr_value, p.collect_grads(&grads)))
    }

    /// Builds every loss term for one batch of `seq`. Returns the terms in
    /// [`TERMS`] order and the weighted total.
    fn losses(&mut self, g: &Graph, p: &Bound, seq: &MonocularSequence, pools: &PixelPools) -> ([Var; TERMS.len()], Var, Var) {
        let model = self.model;
        let cfg = &self.cfg;
        let w = self.weights;
        let rng = &mut self.rng;
        let (width, k) = (seq.width(), seq.len());
        let ctx = model.encode(p, seq);
        let vel = model.velocity(p, &ctx);

        let n_fg = if pools.foreground.is_empty() {
            0
        } else {
            (cfg.rays_per_batch as f64 * cfg.foreground_fraction).round() as usize
        };
        let mut picks = Vec::with_capacity(cfg.rays_per_batch);
        for i in 0..cfg.rays_per_batch {
            if i < n_fg {
                picks.push(pick(rng, &pools.foreground));
            } else {
                picks.push((rng.gen_range(0..k), rng.gen_range(0..width * seq.height())));
            }
        }
        let rays: Vec<Ray> = picks
            .iter()
            .map(|&(f, px)| Ray::through_pixel(&seq.cameras[f], px % width, px / width, seq.near, seq.far, f, seq.times[f]))
            .collect();
        let batch = RayBatch::new(rays, cfg.samples, Some(&mut *rng as &mut dyn rand::RngCore));
        let sources: Vec<usize> = picks.iter().map(|&(f, _)| if k >= 2 { draw_source_frame(k, f, rng) } else { f }).collect();
        let out = render_batch(model, p, &ctx, &vel, &batch, &sources, cfg.solver);

        let r = picks.len();
        let gt_rgb = Tensor::matrix(r, 3, picks.iter().flat_map(|&(f, px)| seq.frames[f].rgb[3 * px..3 * px + 3].to_vec()).collect());
        let fg: Vec<bool> = picks.iter().map(|&(f, px)| seq.frames[f].mask[px]).collect();
        let gt_depth: Vec<f64> = picks.iter().map(|&(f, px)| seq.frames[f].depth[px] as f64).collect();
        let fg_idx: Vec<usize> = (0..r).filter(|&i| fg[i] && gt_depth[i].is_finite()).collect();
        let bg_idx: Vec<usize> = (0..r).filter(|&i| !fg[i]).collect();
        let zero = g.scalar(0.0);
        let on = |a: f64| a > 0.0;

        let l_full = loss_full(g, out.full.color, &gt_rgb);
        let l_st = if on(w.st) { loss_st(g, out.static_.color, &gt_rgb, &fg) } else { zero };

        let l_opt = if on(w.opt) {
            let gt = |fw: bool| -> Vec<[f64; 2]> {
                picks
                    .iter()
                    .map(|&(f, px)| {
                        let fl = if fw { &seq.frames[f].flow_fw } else { &seq.frames[f].flow_bw };
                        fl.as_ref().map_or([f64::NAN; 2], |v| [v[2 * px] as f64, v[2 * px + 1] as f64])
                    })
                    .collect()
            };
            let (gbw, gfw) = (gt(false), gt(true));
            loss_opt(g, &[(out.flow_bw.flow, &out.flow_bw.valid, &gbw), (out.flow_fw.flow, &out.flow_fw.valid, &gfw)])
        } else {
            zero
        };

        let mut l_curr = zero;
        let l_corr = if on(w.corr) && !fg_idx.is_empty() {
            let gt_fg = gt_rgb.gather_rows(&fg_idx);
            let curr = g.gather_rows(out.dynamic.color, &fg_idx);
            l_curr = loss_full(g, curr, &gt_fg);
            let mut renders: Vec<(Var, Tensor)> = vec![(curr, gt_fg)];
            for (slot, valid) in [(0usize, &out.flow_bw.valid), (2usize, &out.flow_fw.valid)] {
                let idx: Vec<usize> = fg_idx.iter().copied().filter(|&i| valid[i]).collect();
                if idx.is_empty() {
                    continue;
                }
                let sub = batch.subset(&idx);
                let rows = batch.sample_rows(&idx);
                let s = &out.eval.slots[slot];
                let x = g.gather_rows(s.position, &rows);
                let frames: Vec<usize> = rows.iter().map(|&i| s.frames[i]).collect();
                let t: Vec<f64> = frames.iter().map(|&f| seq.times[f]).collect();
                let dirs = g.constant(sub.directions());
                let e = model.eval_dynamic(p, &ctx, &vel, DynamicQuery { x, t: &t, anchor: &frames, dirs }, cfg.solver);
                let c = quadrature_render(g, e.out.sigma, e.out.rgb, &sub.depths, &sub.delta);
                renders.push((c.color, gt_rgb.gather_rows(&idx)));
            }
            let refs: Vec<(Var, &Tensor)> = renders.iter().map(|(v, t)| (*v, t)).collect();
            loss_corr(g, &refs)
        } else {
            zero
        };

        let l_db = if on(w.db) && !fg_idx.is_empty() {
            let blend = g.gather_rows(out.blend, &batch.sample_rows(&fg_idx));
            let gd: Vec<f64> = fg_idx.iter().map(|&i| gt_depth[i]).collect();
            loss_db(g, blend, &batch.depths.gather_rows(&fg_idx), &gd, w.eps)
        } else {
            zero
        };

        let l_depth = if on(w.depth) && !fg_idx.is_empty() {
            let gd: Vec<f64> = fg_idx.iter().map(|&i| gt_depth[i]).collect();
            loss_depth(g, g.gather_rows(out.dynamic.depth, &fg_idx), &gd)
        } else {
            zero
        };

        let l_sparse = if on(w.sparse) { loss_sparse(g, out.full.alpha) } else { zero };
        let l_blend_bg = if on(w.blend_bg) && !bg_idx.is_empty() {
            loss_blend_bg(g, g.gather_rows(out.blend, &batch.sample_rows(&bg_idx)))
        } else {
            zero
        };

        let (l_mf, l_smooth) = if (on(w.mf) || on(w.smooth)) && !pools.foreground.is_empty() && k >= 2 && cfg.mf_points > 0 {
            let n = cfg.mf_points;
            let mut pts = Vec::with_capacity(3 * n);
            let mut dirs = Vec::with_capacity(3 * n);
            let (mut fi, mut fj, mut fs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for _ in 0..n {
                let (f, px) = pick(rng, &pools.foreground);
                let ray = Ray::through_pixel(&seq.cameras[f], px % width, px / width, seq.near, seq.far, f, seq.times[f]);
                pts.extend_from_slice(ray.at(seq.frames[f].depth[px] as f64).coords.as_slice());
                dirs.extend_from_slice(ray.dir.as_slice());
                fi.push(f);
                fj.push(draw_source_frame(k, f, rng));
                fs.push(if f + 1 < k { f + 1 } else { f - 1 });
            }
            let x = g.constant(Tensor::matrix(n, 3, pts));
            let ti: Vec<f64> = fi.iter().map(|&f| seq.times[f]).collect();
            let tj: Vec<f64> = fj.iter().map(|&f| seq.times[f]).collect();
            let l_mf = if on(w.mf) {
                let phi = integrate(g, &vel, x, &ti, &tj, cfg.solver);
                let d = g.constant(Tensor::matrix(n, 3, dirs));
                let both = g.concat(&[x, phi], 0);
                let t = [ti.clone(), tj].concat();
                let anchor = [fi.clone(), fj].concat();
                let e = model.eval_dynamic(p, &ctx, &vel, DynamicQuery { x: both, t: &t, anchor: &anchor, dirs: g.concat(&[d, d], 0) }, cfg.solver);
                let first: Vec<usize> = (0..n).collect();
                let second: Vec<usize> = (n..2 * n).collect();
                loss_mf(g, g.gather_rows(e.out.blend, &first), g.gather_rows(e.out.blend, &second))
            } else {
                zero
            };
            let l_smooth = if on(w.smooth) {
                let ts: Vec<f64> = fs.iter().map(|&f| seq.times[f]).collect();
                let t = g.constant(Tensor::column(&[ti, ts].concat()));
                let v = vel.eval(g, g.concat(&[x, x], 0), t);
                let first: Vec<usize> = (0..n).collect();
                let second: Vec<usize> = (n..2 * n).collect();
                loss_smooth(g, g.gather_rows(v, &first), g.gather_rows(v, &second))
            } else {
                zero
            };
            (l_mf, l_smooth)
        } else {
            (zero, zero)
        };

        let terms = [l_full, l_opt, l_corr, l_st, l_db, l_mf, l_depth, l_sparse, l_smooth, l_blend_bg];
        let mut total = zero;
        for (t, a) in terms.iter().zip(w.as_array()) {
            if a > 0.0 {
                total = g.add(total, g.scale(*t, a));
            }
        }
        (terms, total, l_curr)
    }
}

/// Trains from fresh parameters.
pub fn train(
    model: &Model,
    data: &[MonocularSequence],
    cfg: &TrainConfig,
    weights: &LossWeights,
    on_step: impl FnMut(&LossReport),
) -> Result<(ParamStore, Vec<LossReport>)> {
    let mut t = Trainer::new(model, model.init(cfg.seed), cfg.clone(), *weights)?;
    let reports = t.run(data, cfg.steps, on_step)?;
    Ok((t.store, reports))
}

/// Continues training `ckpt` on new videos for `steps` steps.
pub fn finetune(
    model: &Model,
    ckpt: Checkpoint,
    data: &[MonocularSequence],
    cfg: &TrainConfig,
    weights: &LossWeights,
    steps: usize,
    on_step: impl FnMut(&LossReport),
) -> Result<(Checkpoint, Vec<LossReport>)> {
    let meta = ckpt.meta.clone();
    let mut t = Trainer::resume(model, ckpt, cfg.clone(), *weights)?;
    let reports = t.run(data, steps, on_step)?;
    Ok((t.checkpoint(meta), reports))
}
