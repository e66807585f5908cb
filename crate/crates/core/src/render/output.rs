use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

/// Quantizes `[0, 1]` RGB to 8 bits.
pub fn to_rgb8(rgb: &[f64]) -> Vec<u8> {
    rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn save_png(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    assert_eq!(rgb.len(), width * height * 3);
    RgbImage::from_raw(width as u32, height as u32, to_rgb8(rgb))
        .expect("rgb buffer size")
        .save(path)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Reads an 8-bit PNG as `(width, height, rgb in [0, 1])`.
pub fn load_png(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()))
}

/// Hue segments of the standard optical-flow color wheel:
/// red-yellow, yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(SEGMENTS.iter().sum());
    let ramps: [(usize, usize, bool); 6] = [(0, 1, true), (1, 0, false), (1, 2, true), (2, 1, false), (2, 0, true), (0, 2, false)];
    for (&n, &(fixed, moving, rising)) in SEGMENTS.iter().zip(&ramps) {
        for i in 0..n {
            let mut c = [0.0; 3];
            c[fixed] = 255.0;
            let f = i as f64 / n as f64;
            c[moving] = 255.0 * if rising { f } else { 1.0 - f };
            wheel.push(c);
        }
    }
    wheel
}

/// Color of flow `(u, v)` with magnitudes normalized by `max_norm`; invalid
/// (NaN) vectors are black.
pub fn flow_color(u: f64, v: f64, max_norm: f64, wheel: &[[f64; 3]]) -> [u8; 3] {
    if !(u.is_finite() && v.is_finite()) {
        return [0, 0, 0];
    }
    let (u, v) = (u / max_norm.max(1e-12), v / max_norm.max(1e-12));
    let rad = (u * u + v * v).sqrt();
    let n = wheel.len();
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (n - 1) as f64;
    let k0 = fk.floor() as usize % n;
    let k1 = (k0 + 1) % n;
    let f = fk - fk.floor();
    let mut out = [0u8; 3];
    for c in 0..3 {
        let col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
        let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
        out[c] = (255.0 * col).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Writes interleaved `(u, v)` flow as a color-wheel PNG, scaled by the
/// largest valid magnitude.
pub fn save_flow_png(path: &Path, width: usize, height: usize, flow: &[f32]) -> Result<()> {
    assert_eq!(flow.len(), width * height * 2);
    let wheel = color_wheel();
    let max = flow
        .chunks_exact(2)
        .filter(|c| c[0].is_finite() && c[1].is_finite())
        .map(|c| (c[0] as f64).hypot(c[1] as f64))
        .fold(0.0, f64::max);
    let px: Vec<u8> = flow.chunks_exact(2).flat_map(|c| flow_color(c[0] as f64, c[1] as f64, max, &wheel)).collect();
    RgbImage::from_raw(width as u32, height as u32, px)
        .expect("flow buffer size")
        .save(path)
        .map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_has_55_hues_starting_red() {
        let w = color_wheel();
        assert_eq!(w.len(), 55);
        assert_eq!(w[0], [255.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_flow_is_white_and_invalid_is_black() {
        let w = color_wheel();
        assert_eq!(flow_color(0.0, 0.0, 1.0, &w), [255, 255, 255]);
        assert_eq!(flow_color(f64::NAN, 0.0, 1.0, &w), [0, 0, 0]);
        assert_ne!(flow_color(1.0, 0.0, 1.0, &w), flow_color(-1.0, 0.0, 1.0, &w));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let rgb: Vec<f64> = (0..2 * 3 * 3).map(|i| i as f64 / 17.0).collect();
        save_png(&p, 3, 2, &rgb).unwrap();
        let back = image::open(&p).unwrap().to_rgb8().into_raw();
        assert_eq!(back, to_rgb8(&rgb));
        let (w, h, f) = load_png(&p).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(to_rgb8(&f), to_rgb8(&rgb));
        save_flow_png(&dir.path().join("f.png"), 3, 2, &[1.0; 12]).unwrap();
    }
}
