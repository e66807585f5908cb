use crate::error::{Error, Result};

/// Returned for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_same(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!("image sizes differ: {} vs {} values", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Invalid("empty image".into()));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Peak signal-to-noise ratio in dB for images with values in `[0, 1]`.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same(a, b)?;
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(psnr_from_mse(mse))
}

/// PSNR over the RGB pixels where `mask` is set. `None` when the mask is empty.
pub fn psnr_masked(a: &[f64], b: &[f64], mask: &[bool]) -> Result<Option<f64>> {
    check_same(a, b)?;
    if a.len() != 3 * mask.len() {
        return Err(Error::Invalid(format!("mask has {} pixels, image {}", mask.len(), a.len() / 3)));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for c in 0..3 {
            let d = a[3 * i + c] - b[3 * i + c];
            sum += d * d;
        }
        n += 3;
    }
    Ok((n > 0).then(|| psnr_from_mse(sum / n as f64)))
}

/// Share of pixels with `mask` set and finite ground-truth flow whose endpoint
/// error is at most `threshold` pixels. Invalid predictions count as misses.
/// `None` when no pixel qualifies.
pub fn flow_inlier_fraction(pred: &[f32], gt: &[f32], mask: &[bool], threshold: f64) -> Result<Option<f64>> {
    if pred.len() != gt.len() || gt.len() != 2 * mask.len() {
        return Err(Error::Invalid(format!(
            "flow sizes differ: {} predicted, {} ground truth, {} mask pixels",
            pred.len() / 2,
            gt.len() / 2,
            mask.len()
        )));
    }
    let (mut hits, mut n) = (0usize, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (gx, gy) = (gt[2 * i] as f64, gt[2 * i + 1] as f64);
        if !(gx.is_finite() && gy.is_finite()) {
            continue;
        }
        n += 1;
        let (px, py) = (pred[2 * i] as f64, pred[2 * i + 1] as f64);
        if ((px - gx).powi(2) + (py - gy).powi(2)).sqrt() <= threshold {
            hits += 1;
        }
    }
    Ok((n > 0).then(|| hits as f64 / n as f64))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" Gaussian filter of a `width x height` plane.
fn filter(x: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (width - SSIM_WINDOW + 1, height - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * height];
    for r in 0..height {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|k| w[k] * x[r * width + c + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|k| w[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity of two interleaved RGB images, computed on
/// luminance (channel average) with an 11x11 Gaussian window (sigma 1.5).
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64> {
    check_same(a, b)?;
    if a.len() != 3 * width * height {
        return Err(Error::Invalid(format!("expected {}x{} RGB, got {} values", width, height, a.len())));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::Invalid(format!("image {width}x{height} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let gray = |x: &[f64]| -> Vec<f64> { x.chunks_exact(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect() };
    let (ga, gb) = (gray(a), gray(b));
    let w = gaussian_window();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter(&ga, width, height, &w);
    let mu_b = filter(&gb, width, height, &w);
    let aa = filter(&prod(&ga, &ga), width, height, &w);
    let bb = filter(&prod(&gb, &gb), width, height, &w);
    let ab = filter(&prod(&ga, &gb), width, height, &w);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok((total / n as f64).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }

    #[test]
    fn psnr_oracles() {
        let a = random(3 * 64, 1);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b: Vec<f64> = a.iter().map(|v| if *v > 0.5 { v - 0.1 } else { v + 0.1 }).collect();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &b[1..]).is_err());
    }

    #[test]
    fn psnr_matches_two_pass_recomputation() {
        let a = random(3 * 100, 2);
        let b = random(3 * 100, 3);
        // Per-channel partial means, then their average.
        let mut channel = [0.0; 3];
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            channel[i % 3] += (x - y).powi(2) / 100.0;
        }
        let mse = channel.iter().sum::<f64>() / 3.0;
        let expect = -10.0 * mse.log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn masked_psnr_uses_only_masked_pixels() {
        let a = vec![0.5; 12];
        let mut b = a.clone();
        b[0] = 0.0;
        let mask = [false, true, true, true];
        assert_eq!(psnr_masked(&a, &b, &mask).unwrap(), Some(PSNR_CAP));
        assert_eq!(psnr_masked(&a, &b, &[false; 4]).unwrap(), None);
    }

    #[test]
    fn flow_inliers() {
        let gt = [1.0, 0.0, 0.0, 0.0, f32::NAN, f32::NAN, 5.0, 5.0];
        let pred = [1.5, 0.5, 3.0, 0.0, 0.0, 0.0, f32::NAN, f32::NAN];
        let mask = [true, true, true, true];
        // Pixel 0 is within sqrt(0.5), pixel 1 is 3 px off, pixel 2 has no ground truth, pixel 3 no prediction.
        assert_eq!(flow_inlier_fraction(&pred, &gt, &mask, 1.0).unwrap(), Some(1.0 / 3.0));
        assert_eq!(flow_inlier_fraction(&pred, &gt, &[false; 4], 1.0).unwrap(), None);
        assert!(flow_inlier_fraction(&pred[..6], &gt, &mask, 1.0).is_err());
    }

    #[test]
    fn ssim_oracles() {
        let (w, h) = (16, 16);
        let a = random(3 * w * h, 4);
        assert!((ssim(&a, &a, w, h).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&a, &neg, w, h).unwrap() < 1.0);
        // Constant levels 0.2 and 0.6: zero variance leaves the luminance term
        // (2 * 0.12 + 1e-4) / (0.04 + 0.36 + 1e-4).
        let c1 = vec![0.2; 3 * w * h];
        let c2 = vec![0.6; 3 * w * h];
        assert!((ssim(&c1, &c2, w, h).unwrap() - 0.6000999750062485).abs() < 1e-12);
        assert!(ssim(&a[..3 * 10 * 10], &a[..3 * 10 * 10], 10, 10).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn metrics_stay_in_range(seed_a in 0u64..1000, seed_b in 0u64..1000) {
            let (w, h) = (12, 13);
            let a = random(3 * w * h, seed_a);
            let b = random(3 * w * h, seed_b + 1000);
            let s = ssim(&a, &b, w, h).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            let p = psnr(&a, &b).unwrap();
            prop_assert!(p.is_finite() && p > 0.0 && p <= PSNR_CAP);
        }
    }
}
