//! Implementation of the `trajfield` subcommands.

pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use trajfield_core::eval::unseen_frames_split;
use trajfield_core::features::{background_source, EditOp, ForegroundEdit};
use trajfield_core::render::output::{load_png, save_flow_png, save_png};
use trajfield_core::scene::{read_dataset, synthesize, trace_frame, write_dataset};
use trajfield_core::training::{finetune, Trainer};
use trajfield_core::{
    Checkpoint, EncodedVideo, MetricsReport, Model, MonocularSequence, ParamStore, Protocol, RenderedImage, RunConfig,
    ViewProtocol,
};

pub use manifest::RunManifest;

const CHECKPOINT: &str = "model.ckpt";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn frame_png(dir: &Path, channel: &str, i: usize) -> PathBuf {
    dir.join(channel).join(format!("{i:04}.png"))
}

/// Reads a config file, or the defaults when `path` is `None`.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in config {}", p.display()))
        }
    }
}

pub fn load_dataset(dir: &Path) -> Result<MonocularSequence> {
    if !dir.join("manifest").exists() {
        bail!("no dataset at {}", dir.display());
    }
    Ok(read_dataset(dir)?)
}

/// Checkpoint, its run configuration (stored as the checkpoint metadata) and the model.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, RunConfig, Model)> {
    if !path.exists() {
        bail!("checkpoint not found: {}", path.display());
    }
    let ckpt = Checkpoint::load(path)?;
    let cfg = RunConfig::parse(&ckpt.meta).with_context(|| format!("config stored in {}", path.display()))?;
    let model = Model::new(cfg.model_config()?)?;
    ckpt.check_architecture(&model.init(0))?;
    Ok((ckpt, cfg, model))
}

/// Writes the dataset plus ground truth for the fixed-view and novel-view sweeps.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<MonocularSequence> {
    let scene = cfg.scene.scene();
    let seq = synthesize(&scene, &cfg.rig(), cfg.frames)?;
    create_dir(out)?;
    write_dataset(&seq, out)?;
    for protocol in [ViewProtocol::FixedView, ViewProtocol::NovelView] {
        let dir = out.join(protocol.name());
        create_dir(&dir.join("rgb"))?;
        for (i, (cam, t)) in protocol.views(&seq).iter().enumerate() {
            let fr = trace_frame(&scene, cam, *t);
            save_png(&frame_png(&dir, "rgb", i), fr.width, fr.height, &fr.rgb)?;
        }
    }
    let text = cfg.to_text();
    fs::write(out.join("config.txt"), &text)?;
    let mut m = RunManifest::new("synth", &text, cfg.seed);
    m.add_outputs(out)?;
    m.write(out)?;
    Ok(seq)
}

/// Trains on every dataset in `data`, continuing from `cfg.init` when set.
///
/// With `unseen_frames`, only the first frames of each video are used.
pub fn train(cfg: &RunConfig, data: &[PathBuf], out: &Path, unseen_frames: bool) -> Result<Checkpoint> {
    if data.is_empty() {
        bail!("train needs at least one dataset directory");
    }
    let mut videos = Vec::with_capacity(data.len());
    for d in data {
        let seq = load_dataset(d)?;
        videos.push(if unseen_frames { seq.prefix(unseen_frames_split(seq.len())?.0.end) } else { seq });
    }
    create_dir(out)?;
    let text = cfg.to_text();
    let tcfg = cfg.train_config();
    let mut log = String::new();
    let on_step = |r: &trajfield_core::LossReport| {
        if r.step % 100 == 0 {
            log::info!("{}", r.log_line());
        }
    };
    let (ckpt, reports) = match &cfg.init {
        Some(init) => {
            let (base, _, model) = load_checkpoint(init)?;
            let (mut c, reports) = finetune(&model, base, &videos, &tcfg, &cfg.weights, cfg.steps, on_step)?;
            c.meta = text.clone();
            (c, reports)
        }
        None => {
            let model = Model::new(cfg.model_config()?)?;
            let mut trainer = Trainer::new(&model, model.init(cfg.seed), tcfg, cfg.weights)?;
            let reports = trainer.run(&videos, cfg.steps, on_step)?;
            (trainer.checkpoint(text.clone()), reports)
        }
    };
    for r in &reports {
        log.push_str(&r.log_line());
        log.push('\n');
    }
    // Wall-clock times make the log differ between runs; the manifest hashes the checkpoint instead.
    fs::write(out.join("loss.log"), log)?;
    fs::write(out.join("config.txt"), &text)?;
    let ckpt_path = out.join(CHECKPOINT);
    ckpt.save(&ckpt_path)?;
    let mut m = RunManifest::new("train", &text, cfg.seed);
    m.set("checkpoint.sha256", manifest::file_hash(&ckpt_path)?);
    for (i, d) in data.iter().enumerate() {
        m.set(&format!("data.{i}"), d.display().to_string());
    }
    m.write(out)?;
    Ok(ckpt)
}

fn encode(model: &Model, store: &ParamStore, seq: &MonocularSequence) -> EncodedVideo {
    model.encode_frozen(store, seq)
}

fn write_images(images: &[RenderedImage], out: &Path) -> Result<()> {
    for ch in ["rgb", "static", "mask", "flow_fw"] {
        create_dir(&out.join(ch))?;
    }
    for (i, img) in images.iter().enumerate() {
        let (w, h) = (img.width, img.height);
        save_png(&frame_png(out, "rgb", i), w, h, &img.rgb)?;
        if !img.static_rgb.is_empty() {
            save_png(&frame_png(out, "static", i), w, h, &img.static_rgb)?;
        }
        let mask: Vec<f64> = img.foreground_mask().iter().flat_map(|&m| [if m { 1.0 } else { 0.0 }; 3]).collect();
        save_png(&frame_png(out, "mask", i), w, h, &mask)?;
        save_flow_png(&frame_png(out, "flow_fw", i), w, h, &img.flow_fw)?;
    }
    Ok(())
}

fn finish_render(command: &str, cfg: &RunConfig, ckpt: &Path, protocol: ViewProtocol, out: &Path) -> Result<()> {
    let text = cfg.to_text();
    let mut m = RunManifest::new(command, &text, cfg.seed);
    m.set("checkpoint.sha256", manifest::file_hash(ckpt)?);
    m.set("protocol", protocol.name());
    m.add_outputs(out)?;
    m.write(out)
}

/// Renders `data`'s views under `protocol` into `out/{rgb,static,mask,flow_fw}/NNNN.png`.
pub fn render(ckpt_path: &Path, data: &Path, protocol: ViewProtocol, out: &Path) -> Result<Vec<RenderedImage>> {
    let (ckpt, cfg, model) = load_checkpoint(ckpt_path)?;
    let seq = load_dataset(data)?;
    let video = encode(&model, &ckpt.params, &seq);
    let opts = cfg.image_options();
    let images: Vec<RenderedImage> = protocol
        .views(&seq)
        .iter()
        .map(|(cam, t)| trajfield_core::render_view(&model, &ckpt.params, &video, cam, *t, &opts, None))
        .collect();
    create_dir(out)?;
    write_images(&images, out)?;
    finish_render("render", &cfg, ckpt_path, protocol, out)?;
    Ok(images)
}

/// Renders with a `;`-separated edit sequence applied.
pub fn edit(ckpt_path: &Path, data: &Path, ops: &str, protocol: ViewProtocol, out: &Path) -> Result<Vec<RenderedImage>> {
    let ops = EditOp::parse_list(ops)?;
    let (ckpt, cfg, model) = load_checkpoint(ckpt_path)?;
    let seq = load_dataset(data)?;
    let mut video = encode(&model, &ckpt.params, &seq);
    if let Some(bg) = background_source(&ops) {
        let other = load_dataset(Path::new(bg))?;
        video = video.with_background(&encode(&model, &ckpt.params, &other));
    }
    let instances = ForegroundEdit::new(ops.iter().cloned()).instances();
    let opts = cfg.image_options();
    let images: Vec<RenderedImage> = protocol
        .views(&seq)
        .iter()
        .map(|(cam, t)| trajfield_core::render_view(&model, &ckpt.params, &video, cam, *t, &opts, Some(&instances)))
        .collect();
    create_dir(out)?;
    write_images(&images, out)?;
    finish_render("edit", &cfg, ckpt_path, protocol, out)?;
    Ok(images)
}

/// Scores `pred/rgb/*.png` against the same files under `gt/rgb`.
///
/// `frames` restricts the comparison to those indices.
pub fn eval(pred: &Path, gt: &Path, protocol: Protocol, frames: Option<&[usize]>, report: &Path) -> Result<MetricsReport> {
    let pred_rgb = pred.join("rgb");
    let mut names: Vec<String> = fs::read_dir(&pred_rgb)
        .with_context(|| format!("listing {}", pred_rgb.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    let mut loaded = Vec::new();
    for name in names {
        let index: usize = name.trim_end_matches(".png").parse().with_context(|| format!("frame file name `{name}`"))?;
        if frames.is_some_and(|f| !f.contains(&index)) {
            continue;
        }
        let gt_path = gt.join("rgb").join(&name);
        if !gt_path.exists() {
            bail!("missing ground truth {}", gt_path.display());
        }
        let (w, h, p) = load_png(&pred_rgb.join(&name))?;
        let (gw, gh, g) = load_png(&gt_path)?;
        if (w, h) != (gw, gh) {
            bail!("{name}: prediction is {w}x{h}, ground truth {gw}x{gh}");
        }
        loaded.push((index, w, h, p, g));
    }
    if loaded.is_empty() {
        bail!("no frames to evaluate in {}", pred_rgb.display());
    }
    let (w, h) = (loaded[0].1, loaded[0].2);
    let pairs: Vec<(usize, &[f64], &[f64])> = loaded.iter().map(|(i, _, _, p, g)| (*i, &p[..], &g[..])).collect();
    let r = MetricsReport::evaluate(protocol, w, h, &pairs)?;
    if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(report, r.to_text()).with_context(|| format!("writing {}", report.display()))?;
    Ok(r)
}
