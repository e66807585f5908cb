//! On-disk dataset layout:
//!
//! ```text
//! manifest            key=value lines (format, frames, width, height, near, far,
//!                     fx, fy, cx, cy, frame.NNNN.t, frame.NNNN.pose)
//! rgb/NNNN.png        8-bit RGB
//! mask/NNNN.png       8-bit gray, 0 or 255
//! depth/NNNN.f32      row-major little-endian f32 ray distances
//! flow_fw/NNNN.f32    interleaved (dx, dy) f32, absent for the last frame
//! flow_bw/NNNN.f32    interleaved (dx, dy) f32, absent for the first frame
//! ```
//!
//! Invalid flow entries are stored as NaN.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use super::camera::{CameraModel, Intrinsics};
use super::spec::{CameraRig, SceneSpec};
use super::trace::{analytic_flow, trace_frame, FrameRecord};
use crate::error::{Error, Result};

const FORMAT: &str = "trajfield-dataset-1";

#[derive(Clone, Debug, PartialEq)]
pub struct MonocularSequence {
    pub frames: Vec<FrameRecord>,
    pub cameras: Vec<CameraModel>,
    pub times: Vec<f64>,
    pub near: f64,
    pub far: f64,
}

impl MonocularSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.cameras[0].width
    }

    pub fn height(&self) -> usize {
        self.cameras[0].height
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.frames.len();
        if k < 2 {
            return Err(Error::Invalid(format!("a sequence needs at least 2 frames, got {k}")));
        }
        if self.cameras.len() != k || self.times.len() != k {
            return Err(Error::Invalid("frame, camera and timestamp counts differ".into()));
        }
        if self.times[0] < 0.0 || self.times[k - 1] > 1.0 || self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("timestamps must increase strictly inside [0, 1]".into()));
        }
        let (w, h) = (self.width(), self.height());
        for (i, (f, c)) in self.frames.iter().zip(&self.cameras).enumerate() {
            if f.width != w || f.height != h || c.width != w || c.height != h {
                return Err(Error::Invalid(format!("frame {i} has a different size")));
            }
        }
        Ok(())
    }

    /// Keeps the first `n` frames, renormalizing nothing: timestamps stay on the
    /// original [0, 1] axis.
    pub fn prefix(&self, n: usize) -> Self {
        let mut s = Self {
            frames: self.frames[..n].to_vec(),
            cameras: self.cameras[..n].to_vec(),
            times: self.times[..n].to_vec(),
            near: self.near,
            far: self.far,
        };
        if let Some(last) = s.frames.last_mut() {
            last.flow_fw = None;
        }
        s
    }
}

/// Evenly spaced timestamps on [0, 1].
pub fn timestamps(k: usize) -> Vec<f64> {
    (0..k).map(|i| if k > 1 { i as f64 / (k - 1) as f64 } else { 0.0 }).collect()
}

/// Renders a `k`-frame monocular video with one rig camera per frame.
pub fn synthesize(scene: &SceneSpec, rig: &CameraRig, k: usize) -> Result<MonocularSequence> {
    scene.validate()?;
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 frames, got {k}")));
    }
    let cameras = rig.cameras(k);
    let times = timestamps(k);
    let mut frames: Vec<FrameRecord> = cameras.iter().zip(&times).map(|(c, &t)| trace_frame(scene, c, t)).collect();
    for i in 0..k {
        if i + 1 < k {
            frames[i].flow_fw = Some(analytic_flow(scene, &cameras[i], &cameras[i + 1], times[i], times[i + 1]));
        }
        if i > 0 {
            frames[i].flow_bw = Some(analytic_flow(scene, &cameras[i], &cameras[i - 1], times[i], times[i - 1]));
        }
    }
    let seq = MonocularSequence { frames, cameras, times, near: scene.near, far: scene.far };
    seq.validate()?;
    Ok(seq)
}

fn frame_file(dir: &Path, channel: &str, i: usize, ext: &str) -> PathBuf {
    dir.join(channel).join(format!("{i:04}.{ext}"))
}

pub fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * expected {
        return Err(Error::format(path, format!("expected {} bytes, found {}", 4 * expected, bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn write_dataset(seq: &MonocularSequence, dir: &Path) -> Result<()> {
    seq.validate()?;
    for sub in ["rgb", "mask", "depth", "flow_fw", "flow_bw"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let (w, h) = (seq.width(), seq.height());
    let k = &seq.cameras[0].intrinsics;
    let mut manifest = format!(
        "format={FORMAT}\nframes={}\nwidth={w}\nheight={h}\nnear={:?}\nfar={:?}\nfx={:?}\nfy={:?}\ncx={:?}\ncy={:?}\n",
        seq.len(),
        seq.near,
        seq.far,
        k.fx,
        k.fy,
        k.cx,
        k.cy
    );
    for (i, (f, cam)) in seq.frames.iter().zip(&seq.cameras).enumerate() {
        manifest.push_str(&format!("frame.{i:04}.t={:?}\n", seq.times[i]));
        let pose: Vec<String> = cam.pose_matrix().iter().map(|v| format!("{v:?}")).collect();
        manifest.push_str(&format!("frame.{i:04}.pose={}\n", pose.join(" ")));

        let rgb: Vec<u8> = f.rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let p = frame_file(dir, "rgb", i, "png");
        RgbImage::from_raw(w as u32, h as u32, rgb)
            .expect("rgb buffer size")
            .save(&p)
            .map_err(|e| Error::format(&p, e.to_string()))?;
        let mask: Vec<u8> = f.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        let p = frame_file(dir, "mask", i, "png");
        GrayImage::from_raw(w as u32, h as u32, mask)
            .expect("mask buffer size")
            .save(&p)
            .map_err(|e| Error::format(&p, e.to_string()))?;
        write_f32(&frame_file(dir, "depth", i, "f32"), &f.depth)?;
        if let Some(fl) = &f.flow_fw {
            write_f32(&frame_file(dir, "flow_fw", i, "f32"), fl)?;
        }
        if let Some(fl) = &f.flow_bw {
            write_f32(&frame_file(dir, "flow_bw", i, "f32"), fl)?;
        }
    }
    let p = dir.join("manifest");
    fs::write(&p, manifest).map_err(|e| Error::io(&p, e))
}

struct Manifest {
    path: PathBuf,
    entries: BTreeMap<String, String>,
}

impl Manifest {
    fn get(&self, key: &str) -> Result<&str> {
        self.entries.get(key).map(String::as_str).ok_or_else(|| Error::format(&self.path, format!("missing key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.parse().map_err(|_| Error::format(&self.path, format!("bad value for `{key}`")))
    }
}

fn count_files(dir: &Path) -> Result<usize> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    Ok(entries.filter_map(|e| e.ok()).filter(|e| e.path().is_file()).count())
}

pub fn read_dataset(dir: &Path) -> Result<MonocularSequence> {
    let path = dir.join("manifest");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::format(&path, format!("malformed line `{line}`")))?;
        entries.insert(k.trim().to_string(), v.trim().to_string());
    }
    let m = Manifest { path: path.clone(), entries };
    if m.get("format")? != FORMAT {
        return Err(Error::format(&path, "unknown dataset format"));
    }
    let k: usize = m.parse("frames")?;
    let (w, h): (usize, usize) = (m.parse("width")?, m.parse("height")?);
    let intr = Intrinsics { fx: m.parse("fx")?, fy: m.parse("fy")?, cx: m.parse("cx")? , cy: m.parse("cy")? };
    let declared = m.entries.keys().filter(|key| key.starts_with("frame.") && key.ends_with(".t")).count();
    let rgb_dir = dir.join("rgb");
    let on_disk = count_files(&rgb_dir)?;
    if declared != k || on_disk != k {
        return Err(Error::format(
            &path,
            format!("manifest declares {k} frames but lists {declared} timestamps and {on_disk} rgb files"),
        ));
    }

    let mut seq = MonocularSequence {
        frames: Vec::with_capacity(k),
        cameras: Vec::with_capacity(k),
        times: Vec::with_capacity(k),
        near: m.parse("near")?,
        far: m.parse("far")?,
    };
    for i in 0..k {
        seq.times.push(m.parse(&format!("frame.{i:04}.t"))?);
        let key = format!("frame.{i:04}.pose");
        let pose: Vec<f64> = m
            .get(&key)?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| Error::format(&path, format!("bad value for `{key}`"))))
            .collect::<Result<_>>()?;
        let pose: [f64; 16] = pose.try_into().map_err(|_| Error::format(&path, format!("`{key}` needs 16 numbers")))?;
        seq.cameras.push(CameraModel::from_pose_matrix(&pose, intr.clone(), w, h));

        let p = frame_file(dir, "rgb", i, "png");
        let img = image::open(&p).map_err(|e| Error::format(&p, e.to_string()))?.to_rgb8();
        if img.dimensions() != (w as u32, h as u32) {
            return Err(Error::format(&p, "image size differs from manifest"));
        }
        let rgb = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        let p = frame_file(dir, "mask", i, "png");
        let img = image::open(&p).map_err(|e| Error::format(&p, e.to_string()))?.to_luma8();
        if img.dimensions() != (w as u32, h as u32) {
            return Err(Error::format(&p, "image size differs from manifest"));
        }
        let mask = img.into_raw().into_iter().map(|v| v >= 128).collect();
        let depth = read_f32(&frame_file(dir, "depth", i, "f32"), w * h)?;
        let flow_fw = if i + 1 < k { Some(read_f32(&frame_file(dir, "flow_fw", i, "f32"), 2 * w * h)?) } else { None };
        let flow_bw = if i > 0 { Some(read_f32(&frame_file(dir, "flow_bw", i, "f32"), 2 * w * h)?) } else { None };
        seq.frames.push(FrameRecord { width: w, height: h, rgb, depth, mask, flow_fw, flow_bw });
    }
    seq.validate().map_err(|e| Error::format(&path, e.to_string()))?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::spec::Recipe;

    fn small() -> MonocularSequence {
        let rig = CameraRig { width: 24, height: 20, focal: 24.0, ..CameraRig::default() };
        synthesize(&Recipe::Sphere.scene(), &rig, 4).unwrap()
    }

    #[test]
    fn roundtrip_is_lossless() {
        let seq = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&seq, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        for (a, b) in seq.frames.iter().zip(&back.frames) {
            let bits = |v: &Option<Vec<f32>>| v.as_ref().map(|x| x.iter().map(|f| f.to_bits()).collect::<Vec<_>>());
            assert_eq!(bits(&a.flow_fw), bits(&b.flow_fw));
            assert_eq!(bits(&a.flow_bw), bits(&b.flow_bw));
            assert_eq!(a.depth, b.depth);
            assert_eq!(a.mask, b.mask);
            let err = a.rgb.iter().zip(&b.rgb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err <= 1.0 / 255.0);
        }
        assert_eq!(seq.times, back.times);
        for (a, b) in seq.cameras.iter().zip(&back.cameras) {
            assert_eq!(a.pose_matrix(), b.pose_matrix());
        }
    }

    #[test]
    fn frame_count_mismatch_is_rejected() {
        let seq = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&seq, dir.path()).unwrap();
        let p = dir.path().join("manifest");
        let text = fs::read_to_string(&p).unwrap().replace("frames=4", "frames=5");
        fs::write(&p, text).unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }

    #[test]
    fn missing_channel_names_file() {
        let seq = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&seq, dir.path()).unwrap();
        fs::remove_file(dir.path().join("depth/0002.f32")).unwrap();
        let msg = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("0002.f32"), "{msg}");
    }

    #[test]
    fn sequence_ends_lack_outward_flow() {
        let seq = small();
        assert!(seq.frames[0].flow_bw.is_none() && seq.frames[0].flow_fw.is_some());
        assert!(seq.frames[3].flow_fw.is_none() && seq.frames[3].flow_bw.is_some());
        assert_eq!(seq.times, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
    }

    /// Bilinear lookup of `flow` at `q`, only where all four taps are valid and
    /// share the mask label of the nearest tap.
    fn lookup(flow: &[f32], mask: &[bool], w: usize, h: usize, x: f64, y: f64) -> Option<(f64, f64)> {
        let (gx, gy) = (x - 0.5, y - 0.5);
        let (x0, y0) = (gx.floor(), gy.floor());
        if x0 < 0.0 || y0 < 0.0 || x0 as usize + 1 >= w || y0 as usize + 1 >= h {
            return None;
        }
        let (x0, y0) = (x0 as usize, y0 as usize);
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let label = mask[y0 * w + x0];
        let mut out = (0.0, 0.0);
        for (dx, dy, wt) in [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)] {
            let i = (y0 + dy) * w + x0 + dx;
            if mask[i] != label || !flow[2 * i].is_finite() {
                return None;
            }
            out.0 += wt * flow[2 * i] as f64;
            out.1 += wt * flow[2 * i + 1] as f64;
        }
        Some(out)
    }

    #[test]
    fn forward_backward_flow_is_consistent() {
        let rig = CameraRig::default();
        for recipe in Recipe::ALL {
            let seq = synthesize(&recipe.scene(), &rig, 6).unwrap();
            let (w, h) = (seq.width(), seq.height());
            let mut checked = 0;
            for i in 0..5 {
                let fw = seq.frames[i].flow_fw.as_ref().unwrap();
                let next = &seq.frames[i + 1];
                let bw = next.flow_bw.as_ref().unwrap();
                for row in 0..h {
                    for col in 0..w {
                        let k = row * w + col;
                        if !fw[2 * k].is_finite() {
                            continue;
                        }
                        let (x, y) = (col as f64 + 0.5 + fw[2 * k] as f64, row as f64 + 0.5 + fw[2 * k + 1] as f64);
                        if let Some((bx, by)) = lookup(bw, &next.mask, w, h, x, y) {
                            let err = (x + bx - col as f64 - 0.5).hypot(y + by - row as f64 - 0.5);
                            assert!(err <= 0.51, "{recipe:?} frame {i} pixel ({col},{row}) cycle error {err}");
                            checked += 1;
                        }
                    }
                }
            }
            assert!(checked > 5 * w * h / 2);
        }
    }
}
