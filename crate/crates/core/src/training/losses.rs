//! Loss terms over rendered quantities. Each returns a scalar `Var`.

use crate::autodiff::{Graph, Tensor, Var};

fn zero(g: &Graph) -> Var {
    g.scalar(0.0)
}

pub fn abs(g: &Graph, x: Var) -> Var {
    g.add(g.relu(x), g.relu(g.neg(x)))
}

/// Mean over rays of `‖pred − gt‖²`; `pred: [R, 3]`.
pub fn loss_full(g: &Graph, pred: Var, gt: &Tensor) -> Var {
    let r = gt.shape()[0];
    if r == 0 {
        return zero(g);
    }
    g.scale(g.sum(g.square(g.sub(pred, g.constant(gt.clone())))), 1.0 / r as f64)
}

/// Mean over valid `(ray, direction)` pairs of the per-component L1 flow error.
///
/// Each entry pairs a rendered `[R, 2]` flow with its ground truth; NaN
/// ground truth or `valid[r] == false` excludes the pair. Returns zero when
/// nothing is valid.
pub fn loss_opt(g: &Graph, flows: &[(Var, &[bool], &[[f64; 2]])]) -> Var {
    let mut count = 0usize;
    let mut sum: Option<Var> = None;
    for (pred, valid, gt) in flows {
        let r = gt.len();
        let mut mask = vec![0.0; r];
        let mut target = vec![0.0; 2 * r];
        for i in 0..r {
            if valid[i] && gt[i][0].is_finite() && gt[i][1].is_finite() {
                mask[i] = 1.0;
                target[2 * i..2 * i + 2].copy_from_slice(&gt[i]);
                count += 1;
            }
        }
        if mask.iter().all(|&m| m == 0.0) {
            continue;
        }
        let diff = g.sub(*pred, g.constant(Tensor::matrix(r, 2, target)));
        let term = g.sum(g.mul(abs(g, diff), g.constant(Tensor::new(vec![r, 1], mask))));
        sum = Some(match sum {
            Some(s) => g.add(s, term),
            None => term,
        });
    }
    match sum {
        Some(s) => g.scale(s, 1.0 / count as f64),
        None => {
            log::warn!("flow loss: no valid flow in batch");
            zero(g)
        }
    }
}

/// `Σ` over the available warps of the batch-mean squared error against the
/// same ground-truth colors.
pub fn loss_corr(g: &Graph, renders: &[(Var, &Tensor)]) -> Var {
    let mut total = zero(g);
    for (pred, gt) in renders {
        total = g.add(total, loss_full(g, *pred, gt));
    }
    total
}

/// Background reconstruction: squared error weighted by `1 − M`, averaged over
/// background rays.
pub fn loss_st(g: &Graph, pred: Var, gt: &Tensor, foreground: &[bool]) -> Var {
    let bg = foreground.iter().filter(|&&m| !m).count();
    if bg == 0 {
        return zero(g);
    }
    let w: Vec<f64> = foreground.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
    let err = g.mul(g.square(g.sub(pred, g.constant(gt.clone()))), g.constant(Tensor::new(vec![w.len(), 1], w)));
    g.scale(g.sum(err), 1.0 / bg as f64)
}

/// Mean of `b²` over samples outside `(u_d − ε, u_d + ε)`.
///
/// `blend` is `[R*M, 1]` for rays whose `depths` rows are `[R, M]`.
pub fn loss_db(g: &Graph, blend: Var, depths: &Tensor, gt_depth: &[f64], eps: f64) -> Var {
    let m = depths.shape()[1];
    let mut mask = Vec::with_capacity(depths.len());
    for (r, &ud) in gt_depth.iter().enumerate() {
        mask.extend(depths.row_slice(r).iter().map(|&u| if (u - ud).abs() >= eps { 1.0 } else { 0.0 }));
    }
    let count: f64 = mask.iter().sum();
    if count == 0.0 {
        return zero(g);
    }
    let mask = g.constant(Tensor::new(vec![gt_depth.len() * m, 1], mask));
    g.scale(g.sum(g.mul(g.square(blend), mask)), 1.0 / count)
}

/// Mean squared blending-weight change along trajectories; `b_i`, `b_j` are
/// `[P, 1]` values at the two ends.
pub fn loss_mf(g: &Graph, b_i: Var, b_j: Var) -> Var {
    let n = g.shape(b_i)[0];
    if n == 0 {
        return zero(g);
    }
    g.scale(g.sum(g.square(g.sub(b_i, b_j))), 1.0 / n as f64)
}

/// Mean absolute depth error; `pred: [R, 1]`.
pub fn loss_depth(g: &Graph, pred: Var, gt: &[f64]) -> Var {
    if gt.is_empty() {
        return zero(g);
    }
    let d = g.sub(pred, g.constant(Tensor::column(gt)));
    g.scale(g.sum(abs(g, d)), 1.0 / gt.len() as f64)
}

/// Mean binary entropy of per-sample opacities, pushing them toward 0 or 1.
pub fn loss_sparse(g: &Graph, alpha: Var) -> Var {
    let n = g.value(alpha).len();
    if n == 0 {
        return zero(g);
    }
    // Squeeze into (0, 1) so both logs stay finite.
    let a = g.add_scalar(g.scale(alpha, 1.0 - 2e-6), 1e-6);
    let b = g.neg(g.add_scalar(a, -1.0));
    let h = g.add(g.mul(a, g.ln(a)), g.mul(b, g.ln(b)));
    g.scale(g.sum(h), -1.0 / n as f64)
}

/// Mean `‖v_a − v_b‖²` over points; inputs `[P, 3]`.
pub fn loss_smooth(g: &Graph, v_a: Var, v_b: Var) -> Var {
    let n = g.shape(v_a)[0];
    if n == 0 {
        return zero(g);
    }
    g.scale(g.sum(g.square(g.sub(v_a, v_b))), 1.0 / n as f64)
}

/// Mean `b²` over all samples of background rays.
pub fn loss_blend_bg(g: &Graph, blend: Var) -> Var {
    let n = g.shape(blend)[0];
    if n == 0 {
        return zero(g);
    }
    g.scale(g.sum(g.square(blend)), 1.0 / n as f64)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn val(g: &Graph, v: Var) -> f64 {
        g.value(v).item()
    }

    #[test]
    fn full_loss_oracles() {
        let g = Graph::new();
        let gt = Tensor::from_fn(&[4, 3], |i| i as f64 * 0.05);
        assert_eq!(val(&g, loss_full(&g, g.constant(gt.clone()), &gt)), 0.0);
        let off = g.constant(gt.map(|v| v + 0.1));
        assert!((val(&g, loss_full(&g, off, &gt)) - 3.0 * 0.01).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Tensor::from_fn(&[17, 3], |_| rng.gen::<f64>());
        let b = Tensor::from_fn(&[17, 3], |_| rng.gen::<f64>());
        let mut straight = 0.0;
        for r in 0..17 {
            let mut e = 0.0;
            for c in 0..3 {
                e += (a.row_slice(r)[c] - b.row_slice(r)[c]).powi(2);
            }
            straight += e;
        }
        straight /= 17.0;
        assert!((val(&g, loss_full(&g, g.constant(a), &b)) - straight).abs() < 1e-12);
    }

    #[test]
    fn flow_loss_counts_valid_directions() {
        let g = Graph::new();
        let gt = [[1.0, 2.0], [f64::NAN, 0.0], [0.0, -1.0]];
        let pred = g.constant(Tensor::matrix(3, 2, vec![2.0, 3.0, 50.0, 50.0, 1.0, 0.0]));
        let exact = g.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 9.0, 9.0, 0.0, -1.0]));
        let v = [true, true, true];
        assert_eq!(val(&g, loss_opt(&g, &[(exact, &v, &gt)])), 0.0);
        // Ray 1 is NaN-masked; rays 0 and 2 are off by one pixel in both components.
        assert!((val(&g, loss_opt(&g, &[(pred, &v, &gt)])) - 2.0).abs() < 1e-12);
        let none = [false; 3];
        assert_eq!(val(&g, loss_opt(&g, &[(pred, &none, &gt)])), 0.0);
        // Mixing a valid and an invalid direction averages over the valid one only.
        assert!((val(&g, loss_opt(&g, &[(pred, &v, &gt), (pred, &none, &gt)])) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn static_loss_masks() {
        let g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pred = Tensor::from_fn(&[6, 3], |_| rng.gen::<f64>());
        let gt = Tensor::from_fn(&[6, 3], |_| rng.gen::<f64>());
        let p = g.constant(pred.clone());
        assert_eq!(val(&g, loss_st(&g, p, &gt, &[true; 6])), 0.0);
        let plain = val(&g, loss_full(&g, p, &gt));
        assert!((val(&g, loss_st(&g, p, &gt, &[false; 6])) - plain).abs() < 1e-15);
        let half = [true, false, true, false, true, false];
        let idx = [1, 3, 5];
        let sub = val(&g, loss_full(&g, g.constant(pred.gather_rows(&idx)), &gt.gather_rows(&idx)));
        assert!((val(&g, loss_st(&g, p, &gt, &half)) - sub).abs() < 1e-12);
    }

    #[test]
    fn blend_depth_band() {
        let g = Graph::new();
        let depths = Tensor::matrix(1, 4, vec![1.0, 1.5, 2.0, 2.5]);
        let b = g.constant(Tensor::column(&[0.5, 0.1, 0.9, 0.2]));
        assert_eq!(val(&g, loss_db(&g, g.constant(Tensor::zeros(&[4, 1])), &depths, &[1.51], 0.03)), 0.0);
        let want = (0.25 + 0.81 + 0.04) / 3.0;
        assert!((val(&g, loss_db(&g, b, &depths, &[1.51], 0.03)) - want).abs() < 1e-12);
        // A band covering every sample leaves nothing to penalize.
        assert_eq!(val(&g, loss_db(&g, b, &depths, &[1.75], 1.0)), 0.0);
    }

    #[test]
    fn trajectory_blend_pair() {
        let g = Graph::new();
        let a = g.constant(Tensor::column(&[0.2]));
        let b = g.constant(Tensor::column(&[0.8]));
        assert!((val(&g, loss_mf(&g, a, b)) - 0.36).abs() < 1e-12);
        assert_eq!(val(&g, loss_mf(&g, a, a)), 0.0);
    }

    #[test]
    fn auxiliary_terms() {
        let g = Graph::new();
        let d = g.constant(Tensor::column(&[1.0, 2.0]));
        assert_eq!(val(&g, loss_depth(&g, d, &[1.0, 2.0])), 0.0);
        assert!((val(&g, loss_depth(&g, d, &[1.5, 1.0])) - 0.75).abs() < 1e-15);
        let binary = g.constant(Tensor::matrix(1, 2, vec![0.0, 1.0]));
        assert!(val(&g, loss_sparse(&g, binary)) < 1e-4);
        let half = g.constant(Tensor::matrix(1, 2, vec![0.5, 0.5]));
        assert!((val(&g, loss_sparse(&g, half)) - std::f64::consts::LN_2).abs() < 1e-6);
        let v = g.constant(Tensor::matrix(1, 3, vec![0.1, 0.2, 0.3]));
        assert_eq!(val(&g, loss_smooth(&g, v, v)), 0.0);
    }
}
