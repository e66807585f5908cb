use super::encoder::Pyramid;
use crate::autodiff::{Graph, Tensor, Var};
use crate::scene::CameraModel;

/// Pixel coordinate given to points behind the camera, far outside any image.
const OFF_IMAGE: f64 = -1.0e3;

fn column(g: &Graph, values: Vec<f64>) -> Var {
    g.constant(Tensor::new(vec![values.len(), 1], values))
}

/// Differentiable pinhole projection of `x: [P, 3]`, point `p` through
/// `cameras[frames[p]]`.
///
/// Returns pixel coordinates `[P, 2]` and whether each point is in front of its
/// camera. Points behind the camera are sent far off-image with zero gradient.
pub fn project_points(g: &Graph, cameras: &[CameraModel], frames: &[usize], x: Var) -> (Var, Vec<bool>) {
    let n = frames.len();
    assert_eq!(g.shape(x), vec![n, 3]);
    let mut rows = [vec![0.0; n * 3], vec![0.0; n * 3], vec![0.0; n * 3]];
    let mut trans = vec![0.0; n * 3];
    let mut focal = vec![0.0; n * 2];
    let mut center = vec![0.0; n * 2];
    for (p, &f) in frames.iter().enumerate() {
        let cam = &cameras[f];
        let r = cam.rotation.matrix();
        for a in 0..3 {
            for b in 0..3 {
                rows[a][p * 3 + b] = r[(a, b)];
            }
            trans[p * 3 + a] = cam.translation[a];
        }
        let k = &cam.intrinsics;
        focal[2 * p..2 * p + 2].copy_from_slice(&[k.fx, k.fy]);
        center[2 * p..2 * p + 2].copy_from_slice(&[k.cx, k.cy]);
    }
    let axis = |r: Vec<f64>| g.sum_axis(g.mul(x, g.constant(Tensor::matrix(n, 3, r))), 1);
    let [r0, r1, r2] = rows;
    let (cx, cy, cz) = (axis(r0), axis(r1), axis(r2));
    let cam = g.add(g.concat(&[cx, cy, cz], 1), g.constant(Tensor::matrix(n, 3, trans)));
    let xy = g.slice_cols(cam, 0, 2);
    let z = g.slice_cols(cam, 2, 3);
    let front: Vec<bool> = g.value(z).data().iter().map(|&v| v > 1e-6).collect();
    let all_front = front.iter().all(|&f| f);
    let z = if all_front {
        z
    } else {
        let keep = column(g, front.iter().map(|&f| f as u8 as f64).collect());
        let pad = column(g, front.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect());
        g.add(g.mul(z, keep), pad)
    };
    let uv = g.add(
        g.mul(g.div(xy, z), g.constant(Tensor::matrix(n, 2, focal))),
        g.constant(Tensor::matrix(n, 2, center)),
    );
    if all_front {
        return (uv, front);
    }
    let keep = column(g, front.iter().map(|&f| f as u8 as f64).collect());
    let pad = column(g, front.iter().map(|&f| if f { 0.0 } else { OFF_IMAGE }).collect());
    (g.add(g.mul(uv, keep), pad), front)
}

/// Bilinear samples of every pyramid level at full-resolution pixel `coords`,
/// concatenated over levels. Level `l` is sampled at `coords / 2^l`.
///
/// A point is valid when `usable[p]` holds and its level-0 lookup is in view;
/// invalid points get an all-zero vector.
pub fn sample_frame_feature(g: &Graph, pyramid: &Pyramid, frames: &[usize], coords: Var, usable: &[bool]) -> (Var, Vec<bool>) {
    let mut parts = Vec::with_capacity(pyramid.levels.len());
    let mut valid = usable.to_vec();
    for (l, &level) in pyramid.levels.iter().enumerate() {
        let c = if l == 0 { coords } else { g.scale(coords, 1.0 / (1u64 << l) as f64) };
        let (v, ok) = g.bilinear(level, c, frames);
        if l == 0 {
            valid.iter_mut().zip(&ok).for_each(|(a, b)| *a &= *b);
        }
        parts.push(v);
    }
    let out = g.concat(&parts, 1);
    if valid.iter().all(|&v| v) {
        return (out, valid);
    }
    let mask = column(g, valid.iter().map(|&v| v as u8 as f64).collect());
    (g.mul(out, mask), valid)
}
