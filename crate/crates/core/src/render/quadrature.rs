use crate::autodiff::{Graph, Tensor, Var};

/// Composited quantities for a batch of `R` rays with `M` samples each.
#[derive(Clone, Copy, Debug)]
pub struct Composite {
    /// `[R, 3]`
    pub color: Var,
    /// `[R, 1]`, the sum of weights.
    pub opacity: Var,
    /// `[R, 1]`, `Σ w_j u_j`.
    pub depth: Var,
    /// `[R, M]`
    pub weights: Var,
    /// `[R, M]`, per-sample `α_j`.
    pub alpha: Var,
}

/// Strictly upper-triangular ones: `(τ @ U)_j = Σ_{k<j} τ_k`.
fn exclusive_cumsum(g: &Graph, m: usize) -> Var {
    g.constant(Tensor::from_fn(&[m, m], |i| if i / m < i % m { 1.0 } else { 0.0 }))
}

/// Compositing weights `w_j = T_j α_j` from densities `sigma: [R*M, 1]` and
/// intervals `delta: [R, M]`. Returns `(weights, alpha)`, both `[R, M]`.
pub fn weights(g: &Graph, sigma: Var, delta: &Tensor) -> (Var, Var) {
    let (r, m) = (delta.shape()[0], delta.shape()[1]);
    let tau = g.mul(g.reshape(sigma, &[r, m]), g.constant(delta.clone()));
    let alpha = g.neg(g.add_scalar(g.exp(g.neg(tau)), -1.0));
    let trans = g.exp(g.neg(g.matmul(tau, exclusive_cumsum(g, m))));
    (g.mul(trans, alpha), alpha)
}

/// `Σ_j w_j v_j` per ray for per-sample values `v: [R*M, k]`; returns `[R, k]`.
pub fn accumulate(g: &Graph, w: Var, v: Var) -> Var {
    let s = g.shape(w);
    let (r, m) = (s[0], s[1]);
    let k = g.shape(v)[1];
    let wv = g.mul(g.reshape(w, &[r * m, 1]), v);
    g.reshape(g.sum_axis(g.reshape(wv, &[r, m, k]), 1), &[r, k])
}

/// Emission-absorption quadrature: `color = Σ w_j c_j`, `depth = Σ w_j u_j`.
///
/// `sigma: [R*M, 1]`, `rgb: [R*M, 3]`, `depths` and `delta` are `[R, M]`.
pub fn quadrature_render(g: &Graph, sigma: Var, rgb: Var, depths: &Tensor, delta: &Tensor) -> Composite {
    let (w, alpha) = weights(g, sigma, delta);
    let color = accumulate(g, w, rgb);
    let opacity = g.sum_axis(w, 1);
    let depth = g.sum_axis(g.mul(w, g.constant(depths.clone())), 1);
    Composite { color, opacity, depth, weights: w, alpha }
}

/// Blended compositing of the static and dynamic fields:
/// `σ = (1-b)σ_st + bσ_dy` drives transmittance and the emitted color is
/// `((1-b)σ_st c_st + bσ_dy c_dy) / σ`.
pub fn full_render(
    g: &Graph,
    sigma_dy: Var,
    rgb_dy: Var,
    blend: Var,
    sigma_st: Var,
    rgb_st: Var,
    depths: &Tensor,
    delta: &Tensor,
) -> Composite {
    let one_minus_b = g.neg(g.add_scalar(blend, -1.0));
    let s_st = g.mul(one_minus_b, sigma_st);
    let s_dy = g.mul(blend, sigma_dy);
    let sigma = g.add(s_st, s_dy);
    let emission = g.add(g.mul(s_st, rgb_st), g.mul(s_dy, rgb_dy));
    // relu(σ - ε) + ε equals σ in floating point for any σ ≫ ε and keeps the
    // division finite when both densities underflow.
    let safe = g.add_scalar(g.relu(g.add_scalar(sigma, -1e-30)), 1e-30);
    let rgb = g.div(emission, safe);
    quadrature_render(g, sigma, rgb, depths, delta)
}

/// Plain evaluation of the quadrature for a single ray, used as an oracle.
pub fn quadrature_reference(sigma: &[f64], rgb: &[[f64; 3]], depths: &[f64], delta: &[f64]) -> ([f64; 3], f64, f64) {
    let mut t = 1.0;
    let mut c = [0.0; 3];
    let (mut acc, mut dep) = (0.0, 0.0);
    for j in 0..sigma.len() {
        let a = 1.0 - (-sigma[j] * delta[j]).exp();
        let w = t * a;
        for k in 0..3 {
            c[k] += w * rgb[j][k];
        }
        acc += w;
        dep += w * depths[j];
        t *= 1.0 - a;
    }
    (c, acc, dep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;

    fn uniform(m: usize, near: f64, far: f64) -> (Tensor, Tensor) {
        let w = (far - near) / m as f64;
        let u: Vec<f64> = (0..m).map(|j| near + (j as f64 + 0.5) * w).collect();
        let d = super::super::ray::intervals(&u, far);
        (Tensor::matrix(1, m, u), Tensor::matrix(1, m, d))
    }

    fn render(sigma: Vec<f64>, rgb: Vec<f64>, depths: &Tensor, delta: &Tensor) -> (Vec<f64>, f64, f64, Vec<f64>) {
        let g = Graph::new();
        let m = sigma.len();
        let s = g.constant(Tensor::new(vec![m, 1], sigma));
        let c = g.constant(Tensor::new(vec![m, 3], rgb));
        let out = quadrature_render(&g, s, c, depths, delta);
        let r = (
            g.value(out.color).data().to_vec(),
            g.value(out.opacity).item(),
            g.value(out.depth).item(),
            g.value(out.weights).data().to_vec(),
        );
        r
    }

    #[test]
    fn empty_medium_renders_black() {
        let (u, d) = uniform(16, 1.0, 3.0);
        let (c, acc, _, _) = render(vec![0.0; 16], vec![0.7; 48], &u, &d);
        assert_eq!(c, vec![0.0; 3]);
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn opaque_first_sample_takes_its_color() {
        let (u, d) = uniform(8, 1.0, 3.0);
        let mut sigma = vec![0.5; 8];
        sigma[0] = 1e4;
        let mut rgb = vec![0.1; 24];
        rgb[..3].copy_from_slice(&[0.9, 0.2, 0.4]);
        let (c, _, _, _) = render(sigma, rgb, &u, &d);
        for (a, b) in c.iter().zip([0.9, 0.2, 0.4]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn homogeneous_medium_closed_form() {
        let (near, far, sigma, col): (f64, f64, f64, f64) = (1.0, 3.0, 0.8, 0.6);
        let want = col * (1.0 - (-sigma * (far - near)).exp());
        let (u, d) = uniform(256, near, far);
        let (c, _, _, w) = render(vec![sigma; 256], vec![col; 768], &u, &d);
        assert!((c[0] - want).abs() / want < 0.01, "{} vs {want}", c[0]);
        assert!(w.iter().all(|&x| x >= 0.0) && w.iter().sum::<f64>() <= 1.0 + 1e-6);
    }

    #[test]
    fn matches_reference_loop() {
        let (u, d) = uniform(5, 1.0, 2.0);
        let sigma = vec![0.3, 2.0, 0.0, 5.0, 1.0];
        let rgb: Vec<[f64; 3]> = (0..5).map(|j| [0.1 * j as f64, 0.5, 1.0 - 0.2 * j as f64]).collect();
        let (c, acc, dep, _) = render(sigma.clone(), rgb.iter().flatten().copied().collect(), &u, &d);
        let (rc, racc, rdep) = quadrature_reference(&sigma, &rgb, u.data(), d.data());
        for k in 0..3 {
            assert!((c[k] - rc[k]).abs() < 1e-12);
        }
        assert!((acc - racc).abs() < 1e-12 && (dep - rdep).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_color_matches_finite_differences() {
        let (u, d) = uniform(4, 1.0, 2.0);
        let report = gradcheck::check(
            &[Tensor::new(vec![4, 1], vec![0.4, 1.3, 0.2, 2.2]), Tensor::from_fn(&[4, 3], |i| 0.1 + 0.07 * i as f64)],
            |g, v| {
                let out = quadrature_render(g, v[0], v[1], &u, &d);
                g.sum(g.square(out.color))
            },
            1e-6,
            16,
        );
        assert!(report.passes(1e-4), "{report:?}");
    }

    fn blended(b: f64, sigma_st: &[f64], sigma_dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = sigma_st.len();
        let (u, d) = uniform(m, 1.0, 3.0);
        let g = Graph::new();
        let c_st = Tensor::from_fn(&[m, 3], |i| 0.2 + 0.6 * ((i as f64) * 0.31).sin().abs());
        let c_dy = Tensor::from_fn(&[m, 3], |i| 0.1 + 0.8 * ((i as f64) * 0.77).cos().abs());
        let col = |v: &[f64]| g.constant(Tensor::new(vec![m, 1], v.to_vec()));
        let full = full_render(&g, col(sigma_dy), g.constant(c_dy.clone()), col(&vec![b; m]), col(sigma_st), g.constant(c_st.clone()), &u, &d);
        let dy = quadrature_render(&g, col(sigma_dy), g.constant(c_dy.clone()), &u, &d);
        let st = quadrature_render(&g, col(sigma_st), g.constant(c_st.clone()), &u, &d);
        let r = (g.value(full.color).data().to_vec(), g.value(dy.color).data().to_vec(), g.value(st.color).data().to_vec());
        r
    }

    #[test]
    fn full_render_reduces_to_each_field() {
        let sigma_st = [0.1, 2.0, 0.4, 7.0, 0.0, 1.5];
        let sigma_dy = [3.0, 0.2, 0.0, 0.9, 4.0, 1e-9];
        let (full, dy, _) = blended(1.0, &sigma_st, &sigma_dy);
        assert!(full.iter().zip(&dy).all(|(a, b)| (a - b).abs() <= 1e-12), "{full:?} {dy:?}");
        let (full, _, st) = blended(0.0, &sigma_st, &sigma_dy);
        assert!(full.iter().zip(&st).all(|(a, b)| (a - b).abs() <= 1e-12), "{full:?} {st:?}");
    }

    #[test]
    fn half_blend_of_equal_densities_averages_colors() {
        let sigma = [0.3, 1.2, 0.05, 2.5, 0.7];
        let m = sigma.len();
        let (full, _, _) = blended(0.5, &sigma, &sigma);
        let rgb: Vec<[f64; 3]> = (0..m)
            .map(|j| {
                let mut c = [0.0; 3];
                for k in 0..3 {
                    let i = (j * 3 + k) as f64;
                    c[k] = 0.5 * ((0.2 + 0.6 * (i * 0.31).sin().abs()) + (0.1 + 0.8 * (i * 0.77).cos().abs()));
                }
                c
            })
            .collect();
        let (u, d) = uniform(m, 1.0, 3.0);
        let (want, _, _) = quadrature_reference(&sigma, &rgb, u.data(), d.data());
        for k in 0..3 {
            assert!((full[k] - want[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn more_samples_converge_on_homogeneous_medium() {
        let (near, far, sigma, col): (f64, f64, f64, f64) = (1.0, 3.0, 1.7, 0.9);
        let want = col * (1.0 - (-sigma * (far - near)).exp());
        let mut prev = f64::INFINITY;
        for m in [16, 32, 64, 128, 256, 512] {
            let (u, d) = uniform(m, near, far);
            let (c, _, _, _) = render(vec![sigma; m], vec![col; 3 * m], &u, &d);
            let err = (c[0] - want).abs() / want;
            assert!(err <= prev + 1e-15, "m={m}: {err} > {prev}");
            prev = err;
        }
        assert!(prev < 1e-3, "{prev}");
    }
}
