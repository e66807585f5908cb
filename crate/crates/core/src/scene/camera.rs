use nalgebra::{Matrix3, Point2, Point3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels. Pixel `(col, row)` has its center at
/// `(col + 0.5, row + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self { fx: focal, fy: focal, cx: width as f64 / 2.0, cy: height as f64 / 2.0 }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// A posed pinhole camera. `rotation`/`translation` map world points into the
/// camera frame (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(
        intrinsics: Intrinsics,
        rotation: Rotation3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Self {
        Self { intrinsics, rotation, translation, width, height }
    }

    /// Camera at `eye` looking at `target`, with `up` roughly opposite the image y axis.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
    ) -> Self {
        let z = (target - eye).normalize();
        let x = (-up).cross(&z).normalize();
        let y = z.cross(&x);
        // Rows are the camera axes expressed in world coordinates.
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = Rotation3::from_matrix_unchecked(r);
        let translation = -(rotation * eye.coords);
        Self { intrinsics, rotation, translation, width, height }
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.inverse() * self.translation))
    }

    pub fn to_camera(&self, x: &Point3<f64>) -> Vector3<f64> {
        self.rotation * x.coords + self.translation
    }

    /// Pinhole projection; the returned depth is the distance along the optical axis.
    pub fn project(&self, x: &Point3<f64>) -> Result<(Point2<f64>, f64)> {
        let c = self.to_camera(x);
        if c.z <= 0.0 {
            return Err(Error::BehindCamera(c.z));
        }
        let k = &self.intrinsics;
        Ok((Point2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy), c.z))
    }

    /// Inverse of [`project`](Self::project) for a known axial depth.
    pub fn unproject(&self, pixel: &Point2<f64>, depth: f64) -> Point3<f64> {
        let k = &self.intrinsics;
        let c = Vector3::new((pixel.x - k.cx) / k.fx * depth, (pixel.y - k.cy) / k.fy * depth, depth);
        Point3::from(self.rotation.inverse() * (c - self.translation))
    }

    /// World-space ray through a continuous pixel position.
    pub fn ray(&self, pixel: &Point2<f64>) -> (Point3<f64>, Unit<Vector3<f64>>) {
        let k = &self.intrinsics;
        let d_cam = Vector3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0);
        let d = Unit::new_normalize(self.rotation.inverse() * d_cam);
        (self.center(), d)
    }

    /// Ray through the center of integer pixel `(col, row)`.
    pub fn pixel_ray(&self, col: usize, row: usize) -> (Point3<f64>, Unit<Vector3<f64>>) {
        self.ray(&Point2::new(col as f64 + 0.5, row as f64 + 0.5))
    }

    /// Rotation is orthonormal with determinant +1.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = self.rotation.matrix();
        ((r.transpose() * r) - Matrix3::identity()).abs().max() <= tol && (r.determinant() - 1.0).abs() <= tol
    }

    /// Row-major 4x4 world-to-camera matrix.
    pub fn pose_matrix(&self) -> [f64; 16] {
        let r = self.rotation.matrix();
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_pose_matrix(m: &[f64; 16], intrinsics: Intrinsics, width: usize, height: usize) -> Self {
        let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self {
            intrinsics,
            rotation: Rotation3::from_matrix_unchecked(r),
            translation: Vector3::new(m[3], m[7], m[11]),
            width,
            height,
        }
    }
}
