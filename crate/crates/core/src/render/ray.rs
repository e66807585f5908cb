use nalgebra::{Point2, Point3, Unit, Vector3};
use rand::Rng;

use crate::scene::CameraModel;

#[derive(Clone, Debug, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub dir: Unit<Vector3<f64>>,
    pub near: f64,
    pub far: f64,
    /// Source pixel in continuous coordinates of `frame`'s image.
    pub pixel: Point2<f64>,
    /// Frame whose feature window is used (nearest observed frame for novel times).
    pub frame: usize,
    pub time: f64,
}

impl Ray {
    pub fn through_pixel(cam: &CameraModel, col: usize, row: usize, near: f64, far: f64, frame: usize, time: f64) -> Self {
        let pixel = Point2::new(col as f64 + 0.5, row as f64 + 0.5);
        let (origin, dir) = cam.ray(&pixel);
        Self { origin, dir, near, far, pixel, frame, time }
    }

    pub fn at(&self, u: f64) -> Point3<f64> {
        self.origin + self.dir.as_ref() * u
    }

    pub fn is_valid(&self) -> bool {
        (self.dir.norm() - 1.0).abs() <= 1e-9 && 0.0 < self.near && self.near < self.far
    }
}

/// Stratified depths: one per equal bin of `(near, far)`. With `rng = None`
/// every sample sits at its bin center.
pub fn stratified_depths(ray: &Ray, m: usize, rng: Option<&mut dyn rand::RngCore>) -> Vec<f64> {
    let width = (ray.far - ray.near) / m as f64;
    let mut out = Vec::with_capacity(m);
    match rng {
        Some(r) => {
            for j in 0..m {
                // Keep samples strictly inside their bin.
                let xi = 0.001 + 0.998 * r.gen::<f64>();
                out.push(ray.near + (j as f64 + xi) * width);
            }
        }
        None => out.extend((0..m).map(|j| ray.near + (j as f64 + 0.5) * width)),
    }
    out
}

/// `δ_j = u_{j+1} - u_j`, with the last interval closed by `far`.
pub fn intervals(depths: &[f64], far: f64) -> Vec<f64> {
    let mut d: Vec<f64> = depths.windows(2).map(|w| w[1] - w[0]).collect();
    d.push(far - depths[depths.len() - 1]);
    d
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::scene::CameraRig;

    #[test]
    fn stratified_depths_increase_inside_bounds() {
        let cam = CameraRig::default().camera(0, 2);
        let ray = Ray::through_pixel(&cam, 10, 40, 1.0, 4.2, 0, 0.0);
        assert!(ray.is_valid());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let u = stratified_depths(&ray, 64, Some(&mut rng));
            assert!(u.windows(2).all(|w| w[0] < w[1]));
            assert!(u[0] > ray.near && u[63] < ray.far);
            let d = intervals(&u, ray.far);
            assert!((d.iter().sum::<f64>() - (ray.far - u[0])).abs() < 1e-12);
        }
    }
}
