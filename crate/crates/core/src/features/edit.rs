//! Foreground editing as a remapping of dynamic-field queries.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum EditOp {
    /// Route static-field queries through another video's image features.
    SwapBackground(String),
    Translate([f64; 3]),
    /// Uniform scale about `anchor`.
    Scale { factor: f64, anchor: [f64; 3] },
    /// Mirror across the plane `x[axis] = offset`.
    Flip { axis: usize, offset: f64 },
    /// Keep the foreground and add a copy moved by the offset.
    Duplicate([f64; 3]),
}

fn parse_vec(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number in `{s}`"))))
        .collect::<Result<_>>()?;
    v.try_into().map_err(|_| Error::Config(format!("expected three components in `{s}`")))
}

impl EditOp {
    /// Parses one op: `swap-bg:DIR`, `translate:x,y,z`, `scale:s[@x,y,z]`,
    /// `flip[:axis[,offset]]` (axis `x`, `y` or `z`), `duplicate:x,y,z`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let need = || arg.ok_or_else(|| Error::Config(format!("`{name}` needs an argument")));
        match name {
            "swap-bg" => Ok(EditOp::SwapBackground(need()?.to_string())),
            "translate" => Ok(EditOp::Translate(parse_vec(need()?)?)),
            "duplicate" => Ok(EditOp::Duplicate(parse_vec(need()?)?)),
            "scale" => {
                let a = need()?;
                let (f, anchor) = match a.split_once('@') {
                    Some((f, anc)) => (f, parse_vec(anc)?),
                    None => (a, [0.0, 0.0, 2.0]),
                };
                let factor: f64 = f.trim().parse().map_err(|_| Error::Config(format!("bad scale `{f}`")))?;
                if factor == 0.0 || !factor.is_finite() {
                    return Err(Error::Config("scale factor must be finite and nonzero".into()));
                }
                Ok(EditOp::Scale { factor, anchor })
            }
            "flip" => {
                let (axis, offset) = match arg {
                    None => ("x", 0.0),
                    Some(a) => match a.split_once(',') {
                        Some((ax, off)) => {
                            (ax, off.trim().parse().map_err(|_| Error::Config(format!("bad flip offset `{off}`")))?)
                        }
                        None => (a, 0.0),
                    },
                };
                let axis = match axis.trim() {
                    "x" => 0,
                    "y" => 1,
                    "z" => 2,
                    other => return Err(Error::Config(format!("unknown flip axis `{other}`"))),
                };
                Ok(EditOp::Flip { axis, offset })
            }
            other => Err(Error::Config(format!("unknown edit `{other}`"))),
        }
    }

    /// Parses a `;`-separated op sequence.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(';').map(str::trim).filter(|p| !p.is_empty()).map(Self::parse).collect()
    }
}

/// `x -> m x + c`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub m: Matrix3<f64>,
    pub c: Vector3<f64>,
}

impl Affine {
    pub fn identity() -> Self {
        Self { m: Matrix3::identity(), c: Vector3::zeros() }
    }

    pub fn is_identity(&self) -> bool {
        self.m == Matrix3::identity() && self.c == Vector3::zeros()
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.m * x + self.c
    }

    /// `self ∘ other`
    pub fn then_query(&self, other: &Affine) -> Affine {
        Affine { m: self.m * other.m, c: self.m * other.c + self.c }
    }
}

/// Normalized sequence of foreground transforms.
///
/// Adjacent identical flips cancel and adjacent translations merge (dropping
/// exact zeros), so `flip;flip` and `translate:v;translate:-v` reduce to the
/// unedited query mapping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForegroundEdit {
    ops: Vec<EditOp>,
}

impl ForegroundEdit {
    pub fn new(ops: impl IntoIterator<Item = EditOp>) -> Self {
        let mut e = Self::default();
        for op in ops {
            e.push(op);
        }
        e
    }

    pub fn ops(&self) -> &[EditOp] {
        &self.ops
    }

    pub fn push(&mut self, op: EditOp) {
        if matches!(op, EditOp::SwapBackground(_)) {
            return;
        }
        match (self.ops.last(), &op) {
            (Some(EditOp::Flip { axis: a, offset: o }), EditOp::Flip { axis, offset }) if a == axis && o == offset => {
                self.ops.pop();
            }
            (Some(EditOp::Translate(a)), EditOp::Translate(b)) => {
                let sum = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
                self.ops.pop();
                if sum != [0.0; 3] {
                    self.ops.push(EditOp::Translate(sum));
                }
            }
            _ if op == EditOp::Translate([0.0; 3]) => {}
            _ => self.ops.push(op),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.ops.is_empty()
    }

    /// Query maps from edited space back to the original foreground, one per
    /// rendered copy.
    pub fn instances(&self) -> Vec<Affine> {
        let mut out = vec![Affine::identity()];
        for op in &self.ops {
            let inv = match op {
                EditOp::Translate(d) => Affine { m: Matrix3::identity(), c: -Vector3::from(*d) },
                EditOp::Scale { factor, anchor } => {
                    let a = Vector3::from(*anchor);
                    Affine { m: Matrix3::identity() / *factor, c: a - a / *factor }
                }
                EditOp::Flip { axis, offset } => {
                    let mut m = Matrix3::identity();
                    m[(*axis, *axis)] = -1.0;
                    let mut c = Vector3::zeros();
                    c[*axis] = 2.0 * offset;
                    Affine { m, c }
                }
                EditOp::Duplicate(d) => {
                    let shifted = Affine { m: Matrix3::identity(), c: -Vector3::from(*d) };
                    out = out.iter().flat_map(|q| [*q, q.then_query(&shifted)]).collect();
                    continue;
                }
                EditOp::SwapBackground(_) => continue,
            };
            out = out.iter().map(|q| q.then_query(&inv)).collect();
        }
        out
    }
}

/// The background source named by the last `swap-bg` op, if any.
pub fn background_source(ops: &[EditOp]) -> Option<&str> {
    ops.iter().rev().find_map(|op| match op {
        EditOp::SwapBackground(s) => Some(s.as_str()),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip_examples() {
        let ops = EditOp::parse_list("flip;translate:0.1,0,0; scale:2@0,0,2 ;duplicate:0,0.5,0;swap-bg:/tmp/b").unwrap();
        assert_eq!(ops[0], EditOp::Flip { axis: 0, offset: 0.0 });
        assert_eq!(ops[1], EditOp::Translate([0.1, 0.0, 0.0]));
        assert_eq!(ops[2], EditOp::Scale { factor: 2.0, anchor: [0.0, 0.0, 2.0] });
        assert_eq!(ops[3], EditOp::Duplicate([0.0, 0.5, 0.0]));
        assert_eq!(background_source(&ops), Some("/tmp/b"));
        assert!(EditOp::parse("scale:0").is_err());
        assert!(EditOp::parse("spin:1").is_err());
    }

    #[test]
    fn translate_and_inverse_cancel() {
        let e = ForegroundEdit::new([EditOp::Translate([0.3, -0.1, 0.07]), EditOp::Translate([-0.3, 0.1, -0.07])]);
        assert!(e.is_identity());
        assert_eq!(e.instances(), vec![Affine::identity()]);
    }

    #[test]
    fn flip_twice_cancels() {
        let f = EditOp::Flip { axis: 1, offset: 0.2 };
        let e = ForegroundEdit::new([f.clone(), f]);
        assert!(e.is_identity());
    }

    #[test]
    fn affine_composition_inverts_exactly() {
        // Without the symbolic shortcut, T then T^-1 is still the identity map.
        let t = Affine { m: Matrix3::identity(), c: Vector3::new(0.25, -0.5, 0.125) };
        let inv = Affine { m: Matrix3::identity(), c: -t.c };
        assert!(t.then_query(&inv).is_identity());
        let flip = ForegroundEdit::new([EditOp::Flip { axis: 0, offset: 0.5 }]).instances()[0];
        assert!(flip.then_query(&flip).is_identity());
    }

    #[test]
    fn query_maps_invert_the_forward_edit() {
        let e = ForegroundEdit::new([EditOp::Scale { factor: 2.0, anchor: [0.0, 0.0, 2.0] }, EditOp::Translate([0.5, 0.0, 0.0])]);
        // Forward: scale about the anchor, then translate.
        let x = Vector3::new(0.1, 0.2, 2.3);
        let forward = Vector3::new(0.0, 0.0, 2.0) + (x - Vector3::new(0.0, 0.0, 2.0)) * 2.0 + Vector3::new(0.5, 0.0, 0.0);
        let back = e.instances()[0].apply(&forward);
        assert!((back - x).norm() < 1e-12);
    }

    #[test]
    fn duplicate_makes_two_instances() {
        let e = ForegroundEdit::new([EditOp::Duplicate([0.0, 0.4, 0.0])]);
        let inst = e.instances();
        assert_eq!(inst.len(), 2);
        assert!(inst[0].is_identity());
        assert_eq!(inst[1].c, Vector3::new(0.0, -0.4, 0.0));
    }
}
