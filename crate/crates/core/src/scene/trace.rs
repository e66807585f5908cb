use nalgebra::{Point2, Point3, Unit, Vector3};

use super::camera::CameraModel;
use super::spec::{Shape, SceneSpec};

/// What a ray hit first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Wall,
    Mover(usize),
    Void,
}

#[derive(Clone, Copy, Debug)]
pub struct Hit {
    /// Distance along the (unit) ray direction.
    pub distance: f64,
    pub point: Point3<f64>,
    pub normal: Vector3<f64>,
    pub surface: Surface,
}

/// Per-frame ground truth. Images are row-major; `flow_*` is interleaved (dx, dy)
/// with invalid entries stored as NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
    pub depth: Vec<f32>,
    pub mask: Vec<bool>,
    pub flow_fw: Option<Vec<f32>>,
    pub flow_bw: Option<Vec<f32>>,
}

impl FrameRecord {
    pub fn pixel(&self, col: usize, row: usize) -> [f64; 3] {
        let i = 3 * (row * self.width + col);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Foreground fraction.
    pub fn coverage(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

fn hit_sphere(o: &Point3<f64>, d: &Vector3<f64>, c: &Point3<f64>, r: f64) -> Option<f64> {
    let oc = o - c;
    let b = oc.dot(d);
    let disc = b * b - (oc.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    [-b - s, -b + s].into_iter().find(|&u| u > 1e-9)
}

fn hit_cuboid(o: &Point3<f64>, d: &Vector3<f64>, c: &Point3<f64>, half: &[f64; 3]) -> Option<(f64, Vector3<f64>)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut axis0 = 0;
    let mut axis1 = 0;
    for a in 0..3 {
        let lo = c[a] - half[a];
        let hi = c[a] + half[a];
        if d[a].abs() < 1e-300 {
            if o[a] < lo || o[a] > hi {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        if ta > t0 {
            t0 = ta;
            axis0 = a;
        }
        if tb < t1 {
            t1 = tb;
            axis1 = a;
        }
    }
    if t0 > t1 || t1 <= 1e-9 {
        return None;
    }
    let (u, axis) = if t0 > 1e-9 { (t0, axis0) } else { (t1, axis1) };
    let mut n = Vector3::zeros();
    n[axis] = if d[axis] > 0.0 { -1.0 } else { 1.0 };
    Some((u, n))
}

/// Nearest intersection of the ray with the scene at time `t`.
pub fn trace_ray(scene: &SceneSpec, o: &Point3<f64>, d: &Unit<Vector3<f64>>, t: f64) -> Hit {
    let mut best = Hit { distance: f64::INFINITY, point: *o, normal: Vector3::zeros(), surface: Surface::Void };
    if d.z > 0.0 {
        let u = (scene.background.depth - o.z) / d.z;
        if u > 1e-9 {
            best = Hit { distance: u, point: o + d.as_ref() * u, normal: -Vector3::z(), surface: Surface::Wall };
        }
    }
    for (k, m) in scene.movers.iter().enumerate() {
        let c = m.path.position(t);
        let found = match &m.shape {
            Shape::Sphere { radius } => hit_sphere(o, d, &c, *radius).map(|u| {
                let p = o + d.as_ref() * u;
                (u, (p - c) / *radius)
            }),
            Shape::Cuboid { half } => hit_cuboid(o, d, &c, half),
        };
        if let Some((u, n)) = found {
            if u < best.distance {
                best = Hit { distance: u, point: o + d.as_ref() * u, normal: n, surface: Surface::Mover(k) };
            }
        }
    }
    best
}

/// Shaded color of a hit.
pub fn shade_hit(scene: &SceneSpec, hit: &Hit) -> [f64; 3] {
    match hit.surface {
        Surface::Void => scene.void_color,
        Surface::Wall => scene.shade(scene.background.pattern.albedo(hit.point.x, hit.point.y), &hit.normal),
        Surface::Mover(k) => scene.shade(scene.movers[k].color, &hit.normal),
    }
}

/// Renders rgb, ray-distance depth and mover mask; flows are left empty.
/// Colors are quantized to 8 bits so that PNG storage is lossless.
pub fn trace_frame(scene: &SceneSpec, camera: &CameraModel, t: f64) -> FrameRecord {
    let (w, h) = (camera.width, camera.height);
    let mut rec = FrameRecord {
        width: w,
        height: h,
        rgb: Vec::with_capacity(w * h * 3),
        depth: Vec::with_capacity(w * h),
        mask: Vec::with_capacity(w * h),
        flow_fw: None,
        flow_bw: None,
    };
    for row in 0..h {
        for col in 0..w {
            let (o, d) = camera.pixel_ray(col, row);
            let hit = trace_ray(scene, &o, &d, t);
            let c = shade_hit(scene, &hit);
            rec.rgb.extend(c.iter().map(|v| (v * 255.0).round() / 255.0));
            let depth = if hit.surface == Surface::Void { scene.far } else { hit.distance };
            rec.depth.push(depth as f32);
            rec.mask.push(matches!(hit.surface, Surface::Mover(_)));
        }
    }
    rec
}

/// Position at `t_to` of the surface point `x` seen on `surface` at `t_from`.
pub fn advect(scene: &SceneSpec, surface: Surface, x: &Point3<f64>, t_from: f64, t_to: f64) -> Point3<f64> {
    match surface {
        Surface::Mover(k) => {
            let path = &scene.movers[k].path;
            x + (path.position(t_to) - path.position(t_from))
        }
        _ => *x,
    }
}

/// Flow from frame `i` (camera `cam_i`, time `t_i`) to frame `j`. Pixels whose
/// surface point is behind `cam_j`, hits nothing, or is occluded at `t_j` are NaN.
pub fn analytic_flow(scene: &SceneSpec, cam_i: &CameraModel, cam_j: &CameraModel, t_i: f64, t_j: f64) -> Vec<f32> {
    let (w, h) = (cam_i.width, cam_i.height);
    let mut flow = Vec::with_capacity(w * h * 2);
    for row in 0..h {
        for col in 0..w {
            let (o, d) = cam_i.pixel_ray(col, row);
            let hit = trace_ray(scene, &o, &d, t_i);
            let f = flow_of_hit(scene, &hit, cam_j, t_i, t_j)
                .map(|q| [(q.x - (col as f64 + 0.5)) as f32, (q.y - (row as f64 + 0.5)) as f32])
                .unwrap_or([f32::NAN; 2]);
            flow.extend(f);
        }
    }
    flow
}

fn flow_of_hit(scene: &SceneSpec, hit: &Hit, cam_j: &CameraModel, t_i: f64, t_j: f64) -> Option<Point2<f64>> {
    if hit.surface == Surface::Void {
        return None;
    }
    let x = advect(scene, hit.surface, &hit.point, t_i, t_j);
    let (q, _) = cam_j.project(&x).ok()?;
    let oj = cam_j.center();
    let dist = (x - oj).norm();
    let seen = trace_ray(scene, &oj, &Unit::new_normalize(x - oj), t_j);
    let visible = seen.surface == hit.surface && (seen.distance - dist).abs() <= 1e-6 * dist.max(1.0);
    visible.then_some(q)
}
