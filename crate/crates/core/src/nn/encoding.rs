use std::f64::consts::{FRAC_PI_2, PI};

use crate::autodiff::{Graph, Tensor, Var};

/// Frequency encoding of a point: for each component `x_j`, the values
/// `sin(2^k π x_j), cos(2^k π x_j)` for `k = 0..n_freq`, grouped by component.
pub fn positional_encode(x: &[f64], n_freq: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * 2 * n_freq);
    for &xj in x {
        for k in 0..n_freq {
            let a = (1u64 << k) as f64 * PI * xj;
            out.push(a.sin());
            out.push(a.cos());
        }
    }
    out
}

/// Width of the encoding of a `dim`-vector.
pub fn encoded_dim(dim: usize, n_freq: usize) -> usize {
    dim * 2 * n_freq
}

/// Batched, differentiable [`positional_encode`] over the rows of `x: [P, d]`.
///
/// Realized as `sin(x @ S + phase)` where `S` scatters each scaled component to
/// both of its slots and `phase` shifts the cosine slots by π/2.
pub fn positional_encode_var(g: &Graph, x: Var, n_freq: usize) -> Var {
    let d = g.shape(x)[1];
    let width = encoded_dim(d, n_freq);
    if width == 0 {
        let rows = g.shape(x)[0];
        return g.constant(Tensor::zeros(&[rows, 0]));
    }
    let mut s = Tensor::zeros(&[d, width]);
    let mut phase = Tensor::zeros(&[1, width]);
    for j in 0..d {
        for k in 0..n_freq {
            let scale = (1u64 << k) as f64 * PI;
            let col = (j * n_freq + k) * 2;
            s.data_mut()[j * width + col] = scale;
            s.data_mut()[j * width + col + 1] = scale;
            phase.data_mut()[col + 1] = FRAC_PI_2;
        }
    }
    let s = g.constant(s);
    let phase = g.constant(phase);
    g.sin(g.add(g.matmul(x, s), phase))
}

/// Maps world points into a unit box before frequency encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointEncoding {
    pub center: [f64; 3],
    pub scale: f64,
    pub n_freq_x: usize,
    pub n_freq_t: usize,
}

impl Default for PointEncoding {
    fn default() -> Self {
        Self { center: [0.0, 0.0, 2.5], scale: 1.5, n_freq_x: 6, n_freq_t: 4 }
    }
}

impl PointEncoding {
    pub fn x_dim(&self) -> usize {
        encoded_dim(3, self.n_freq_x)
    }

    pub fn xt_dim(&self) -> usize {
        self.x_dim() + encoded_dim(1, self.n_freq_t)
    }

    /// `(x - center) / scale` for `x: [P, 3]`.
    pub fn normalize(&self, g: &Graph, x: Var) -> Var {
        let inv = 1.0 / self.scale;
        let shift = g.constant(Tensor::row(&self.center.map(|c| -c * inv)));
        g.add(g.scale(x, inv), shift)
    }

    pub fn encode_x(&self, g: &Graph, x: Var) -> Var {
        positional_encode_var(g, self.normalize(g, x), self.n_freq_x)
    }

    /// Encoding of `x: [P, 3]` and `t: [P, 1]`, concatenated.
    pub fn encode_xt(&self, g: &Graph, x: Var, t: Var) -> Var {
        let ex = self.encode_x(g, x);
        let et = positional_encode_var(g, t, self.n_freq_t);
        g.concat(&[ex, et], 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input() {
        assert_eq!(positional_encode(&[0.0], 2), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn half_input() {
        let e = positional_encode(&[0.5], 1);
        assert!((e[0] - 1.0).abs() < 1e-15);
        assert!(e[1].abs() < 1e-15);
    }

    #[test]
    fn odd_symmetry_of_sines() {
        for n in 0..5 {
            let e = positional_encode(&[0.3, -0.3], n);
            let half = e.len() / 2;
            for k in (0..half).step_by(2) {
                assert_eq!(e[half + k], -e[k]);
                assert_eq!(e[half + k + 1], e[k + 1]);
            }
        }
    }

    #[test]
    fn graph_version_matches() {
        let pts = [[0.1, -0.7, 0.33], [1.2, 0.0, -2.5]];
        let g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 3, pts.iter().flatten().copied().collect()));
        let e = positional_encode_var(&g, x, 6);
        let ev = g.value(e);
        assert_eq!(ev.shape(), &[2, 36]);
        for (r, p) in pts.iter().enumerate() {
            let want = positional_encode(p, 6);
            for (a, b) in ev.row_slice(r).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}
