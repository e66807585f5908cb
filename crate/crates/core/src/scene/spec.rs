use std::f64::consts::TAU;

use nalgebra::{Point3, Unit, Vector3};

use super::camera::{CameraModel, Intrinsics};
use crate::error::{Error, Result};

/// Smooth procedural albedo on the background wall:
/// `base[c] + amp[c] * sin(2π(freq.0 x + phase[c])) * cos(2π(freq.1 y + phase[c]))`.
#[derive(Clone, Debug, PartialEq)]
pub struct WallPattern {
    pub base: [f64; 3],
    pub amp: [f64; 3],
    pub freq: (f64, f64),
    pub phase: [f64; 3],
}

impl WallPattern {
    pub fn albedo(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = [0.0; 3];
        for ch in 0..3 {
            let s = (TAU * (self.freq.0 * x + self.phase[ch])).sin();
            let k = (TAU * (self.freq.1 * y + self.phase[ch])).cos();
            c[ch] = (self.base[ch] + self.amp[ch] * s * k).clamp(0.0, 1.0);
        }
        c
    }
}

/// Textured wall `z = depth` facing the cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    pub depth: f64,
    pub pattern: WallPattern,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    /// Axis-aligned box with the given half extents.
    Cuboid { half: [f64; 3] },
}

impl Shape {
    /// Radius of a sphere bounding the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Sphere { radius } => *radius,
            Shape::Cuboid { half } => Vector3::from(*half).norm(),
        }
    }
}

/// Center path over normalized time `t ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum MoverPath {
    /// `c(t) = c0 + c1 t + c2 t²`
    Polynomial { c0: [f64; 3], c1: [f64; 3], c2: [f64; 3] },
    /// Circle in the plane `y = center.y`, angle `phase + omega t`.
    Circular { center: [f64; 3], radius: f64, omega: f64, phase: f64 },
}

impl MoverPath {
    pub fn position(&self, t: f64) -> Point3<f64> {
        match self {
            MoverPath::Polynomial { c0, c1, c2 } => {
                Point3::from(Vector3::from(*c0) + Vector3::from(*c1) * t + Vector3::from(*c2) * (t * t))
            }
            MoverPath::Circular { center, radius, omega, phase } => {
                let a = phase + omega * t;
                Point3::new(center[0] + radius * a.cos(), center[1], center[2] + radius * a.sin())
            }
        }
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        match self {
            MoverPath::Polynomial { c1, c2, .. } => Vector3::from(*c1) + Vector3::from(*c2) * (2.0 * t),
            MoverPath::Circular { radius, omega, phase, .. } => {
                let a = phase + omega * t;
                Vector3::new(-radius * omega * a.sin(), 0.0, radius * omega * a.cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mover {
    pub shape: Shape,
    pub color: [f64; 3],
    pub path: MoverPath,
}

/// A dynamic scene: a static textured wall and rigidly translating movers.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub background: Background,
    pub movers: Vec<Mover>,
    /// Unit direction towards the light.
    pub light: Unit<Vector3<f64>>,
    pub ambient: f64,
    /// Color of rays that hit nothing.
    pub void_color: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl SceneSpec {
    /// Checks that movers stay strictly in front of the wall on `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Config(format!("need 0 < near < far, got {} / {}", self.near, self.far)));
        }
        for (k, m) in self.movers.iter().enumerate() {
            let r = m.shape.bounding_radius();
            for s in 0..=200 {
                let c = m.path.position(s as f64 / 200.0);
                if c.z + r >= self.background.depth {
                    return Err(Error::Config(format!("mover {k} intersects the background wall")));
                }
            }
        }
        Ok(())
    }

    /// Lambertian shading with ambient term.
    pub fn shade(&self, albedo: [f64; 3], normal: &Vector3<f64>) -> [f64; 3] {
        let lambert = normal.dot(&self.light).max(0.0);
        let k = self.ambient + (1.0 - self.ambient) * lambert;
        albedo.map(|a| (a * k).clamp(0.0, 1.0))
    }
}

/// Cameras on a horizontal arc around `target`, one per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    pub target: [f64; 3],
    pub distance: f64,
    /// Arc half-angle in radians; frame 0 sits at `-half_angle`.
    pub half_angle: f64,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraRig {
    pub fn camera(&self, frame: usize, frames: usize) -> CameraModel {
        let s = if frames > 1 { frame as f64 / (frames - 1) as f64 } else { 0.5 };
        let a = -self.half_angle + 2.0 * self.half_angle * s;
        let target = Point3::from(self.target);
        let eye = target + Vector3::new(a.sin(), 0.0, -a.cos()) * self.distance;
        CameraModel::look_at(
            eye,
            target,
            Vector3::new(0.0, 1.0, 0.0),
            Intrinsics::centered(self.focal, self.width, self.height),
            self.width,
            self.height,
        )
    }

    pub fn cameras(&self, frames: usize) -> Vec<CameraModel> {
        (0..frames).map(|i| self.camera(i, frames)).collect()
    }
}

/// Named scene presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipe {
    /// One sphere translating at constant velocity (the default toy scene).
    Sphere,
    /// A box rising diagonally in front of a different wall.
    Cuboid,
    /// A sphere on a circular arc.
    Orbit,
    /// Two spheres crossing.
    Pair,
}

impl Recipe {
    pub const ALL: [Recipe; 4] = [Recipe::Sphere, Recipe::Cuboid, Recipe::Orbit, Recipe::Pair];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::Sphere => "sphere",
            Recipe::Cuboid => "cuboid",
            Recipe::Orbit => "orbit",
            Recipe::Pair => "pair",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scene recipe `{s}`")))
    }

    pub fn scene(self) -> SceneSpec {
        let light = Unit::new_normalize(Vector3::new(-0.4, 0.6, -1.0));
        let common = |pattern: WallPattern, movers: Vec<Mover>| SceneSpec {
            background: Background { depth: 3.0, pattern },
            movers,
            light,
            ambient: 0.35,
            void_color: [0.0, 0.0, 0.0],
            near: 1.0,
            far: 4.2,
        };
        match self {
            Recipe::Sphere => common(
                WallPattern {
                    base: [0.55, 0.6, 0.5],
                    amp: [0.3, 0.25, 0.3],
                    freq: (0.6, 0.45),
                    phase: [0.0, 0.3, 0.6],
                },
                vec![Mover {
                    shape: Shape::Sphere { radius: 0.3 },
                    color: [0.9, 0.25, 0.15],
                    path: MoverPath::Polynomial { c0: [-0.45, 0.05, 1.9], c1: [0.9, -0.1, 0.0], c2: [0.0; 3] },
                }],
            ),
            Recipe::Cuboid => common(
                WallPattern {
                    base: [0.45, 0.5, 0.65],
                    amp: [0.25, 0.3, 0.2],
                    freq: (0.35, 0.7),
                    phase: [0.5, 0.1, 0.8],
                },
                vec![Mover {
                    shape: Shape::Cuboid { half: [0.22, 0.22, 0.22] },
                    color: [0.2, 0.35, 0.9],
                    path: MoverPath::Polynomial { c0: [0.3, -0.45, 2.0], c1: [-0.4, 0.8, 0.0], c2: [0.0; 3] },
                }],
            ),
            Recipe::Orbit => common(
                WallPattern {
                    base: [0.6, 0.5, 0.45],
                    amp: [0.2, 0.3, 0.25],
                    freq: (0.5, 0.3),
                    phase: [0.2, 0.7, 0.4],
                },
                vec![Mover {
                    shape: Shape::Sphere { radius: 0.28 },
                    color: [0.2, 0.8, 0.3],
                    path: MoverPath::Circular { center: [0.0, 0.1, 2.0], radius: 0.4, omega: 2.5, phase: 2.8 },
                }],
            ),
            Recipe::Pair => common(
                WallPattern {
                    base: [0.5, 0.55, 0.55],
                    amp: [0.3, 0.2, 0.3],
                    freq: (0.4, 0.55),
                    phase: [0.9, 0.4, 0.15],
                },
                vec![
                    Mover {
                        shape: Shape::Sphere { radius: 0.22 },
                        color: [0.95, 0.8, 0.1],
                        path: MoverPath::Polynomial { c0: [-0.5, 0.3, 1.9], c1: [1.0, 0.0, 0.0], c2: [0.0; 3] },
                    },
                    Mover {
                        shape: Shape::Sphere { radius: 0.22 },
                        color: [0.6, 0.2, 0.8],
                        path: MoverPath::Polynomial { c0: [0.5, -0.3, 2.1], c1: [-1.0, 0.0, 0.0], c2: [0.0; 3] },
                    },
                ],
            ),
        }
    }
}

impl Default for CameraRig {
    fn default() -> Self {
        Self { target: [0.0, 0.0, 2.5], distance: 2.5, half_angle: 0.08, focal: 64.0, width: 64, height: 64 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for r in Recipe::ALL {
            r.scene().validate().unwrap();
            assert_eq!(Recipe::parse(r.name()).unwrap(), r);
        }
    }

    #[test]
    fn paths_are_c1() {
        // Finite-difference velocity matches the analytic derivative.
        for r in Recipe::ALL {
            for m in r.scene().movers {
                for s in 1..10 {
                    let t = s as f64 / 10.0;
                    let h = 1e-6;
                    let fd = (m.path.position(t + h) - m.path.position(t - h)) / (2.0 * h);
                    assert!((fd - m.path.velocity(t)).norm() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn rig_cameras_are_rotations() {
        for c in CameraRig::default().cameras(12) {
            assert!(c.is_valid(1e-9));
        }
    }
}
