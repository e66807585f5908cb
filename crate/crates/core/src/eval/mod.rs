//! Image metrics, evaluation protocols and run configuration.

mod config;
mod metrics;

use std::fmt::Write;
use std::ops::Range;

pub use config::{RunConfig, KEYS};
pub use metrics::{flow_inlier_fraction, psnr, psnr_masked, ssim, PSNR_CAP};

use crate::error::{Error, Result};
use crate::scene::{CameraModel, MonocularSequence};

/// Training frames in the unseen-frames protocol.
pub const UNSEEN_TRAIN_FRAMES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// First camera held fixed while time sweeps the training frames.
    TrainingFrames,
    /// Trained on the first frames, evaluated on the remainder.
    UnseenFrames,
    /// Evaluated on a video never seen in training.
    UnseenVideo,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::TrainingFrames => "training-frames",
            Protocol::UnseenFrames => "unseen-frames",
            Protocol::UnseenVideo => "unseen-video",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Protocol::TrainingFrames, Protocol::UnseenFrames, Protocol::UnseenVideo]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown protocol `{s}`")))
    }
}

/// Camera and time pairs swept by a render.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewProtocol {
    /// Every frame from its own camera at its own time.
    TrainViews,
    /// The first camera while time sweeps the frames.
    FixedView,
    /// Every camera at the middle frame's time.
    NovelView,
}

impl ViewProtocol {
    pub fn name(self) -> &'static str {
        match self {
            ViewProtocol::TrainViews => "train-views",
            ViewProtocol::FixedView => "fixed-view",
            ViewProtocol::NovelView => "novel-view",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [ViewProtocol::TrainViews, ViewProtocol::FixedView, ViewProtocol::NovelView]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown view protocol `{s}`")))
    }

    pub fn views(self, seq: &MonocularSequence) -> Vec<(CameraModel, f64)> {
        let k = seq.len();
        (0..k)
            .map(|i| match self {
                ViewProtocol::TrainViews => (seq.cameras[i].clone(), seq.times[i]),
                ViewProtocol::FixedView => (seq.cameras[0].clone(), seq.times[i]),
                ViewProtocol::NovelView => (seq.cameras[i].clone(), seq.times[k / 2]),
            })
            .collect()
    }
}

/// Train and test frame ranges of the unseen-frames protocol for a `k`-frame video.
pub fn unseen_frames_split(k: usize) -> Result<(Range<usize>, Range<usize>)> {
    if k <= UNSEEN_TRAIN_FRAMES {
        return Err(Error::Config(format!("unseen-frames needs more than {UNSEEN_TRAIN_FRAMES} frames, got {k}")));
    }
    Ok((0..UNSEEN_TRAIN_FRAMES, UNSEEN_TRAIN_FRAMES..k))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricsReport {
    pub fn new(protocol: Protocol, frames: Vec<FrameMetrics>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Invalid("metrics report needs at least one frame".into()));
        }
        let n = frames.len() as f64;
        let mean_psnr = frames.iter().map(|f| f.psnr).sum::<f64>() / n;
        let mean_ssim = frames.iter().map(|f| f.ssim).sum::<f64>() / n;
        Ok(Self { protocol, frames, mean_psnr, mean_ssim })
    }

    /// Scores `(frame, predicted, ground truth)` RGB images of one size.
    pub fn evaluate(protocol: Protocol, width: usize, height: usize, pairs: &[(usize, &[f64], &[f64])]) -> Result<Self> {
        let frames = pairs
            .iter()
            .map(|&(frame, pred, gt)| Ok(FrameMetrics { frame, psnr: psnr(pred, gt)?, ssim: ssim(pred, gt, width, height)? }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(protocol, frames)
    }

    /// `key=value` lines; floats are written so they parse back exactly.
    pub fn to_text(&self) -> String {
        let mut s = format!("protocol={}\n", self.protocol.name());
        for f in &self.frames {
            writeln!(s, "frame.{:04}.psnr={:?}\nframe.{:04}.ssim={:?}", f.frame, f.psnr, f.frame, f.ssim).unwrap();
        }
        writeln!(s, "mean.psnr={:?}\nmean.ssim={:?}", self.mean_psnr, self.mean_ssim).unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unseen_split_for_twelve_frames() {
        let (train, test) = unseen_frames_split(12).unwrap();
        assert_eq!((train.len(), test.len()), (4, 8));
        assert_eq!(test.start, 4);
        assert!(unseen_frames_split(4).is_err());
    }

    #[test]
    fn ground_truth_against_itself() {
        let img: Vec<f64> = (0..3 * 16 * 16).map(|i| (i % 7) as f64 / 7.0).collect();
        let r = MetricsReport::evaluate(Protocol::TrainingFrames, 16, 16, &[(0, &img, &img), (1, &img, &img)]).unwrap();
        assert_eq!(r.mean_psnr, PSNR_CAP);
        assert!((r.mean_ssim - 1.0).abs() < 1e-12);
        assert!(r.to_text().starts_with("protocol=training-frames\nframe.0000.psnr=99.0\n"));
    }

    #[test]
    fn view_protocols() {
        let rig = crate::scene::CameraRig { width: 8, height: 8, focal: 8.0, ..Default::default() };
        let seq = crate::scene::synthesize(&crate::scene::Recipe::Sphere.scene(), &rig, 5).unwrap();
        let fixed = ViewProtocol::FixedView.views(&seq);
        assert!(fixed.iter().all(|(c, _)| *c == seq.cameras[0]));
        assert_eq!(fixed.iter().map(|v| v.1).collect::<Vec<_>>(), seq.times);
        let novel = ViewProtocol::NovelView.views(&seq);
        assert!(novel.iter().all(|(_, t)| *t == 0.5));
        assert_eq!(ViewProtocol::parse("novel-view").unwrap(), ViewProtocol::NovelView);
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in [Protocol::TrainingFrames, Protocol::UnseenFrames, Protocol::UnseenVideo] {
            assert_eq!(Protocol::parse(p.name()).unwrap(), p);
        }
        assert!(Protocol::parse("lpips").is_err());
    }
}
