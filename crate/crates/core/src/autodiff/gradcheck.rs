//! Central finite-difference oracle for reverse-mode gradients.

use super::{Graph, Tensor, Var};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Relative error with a small floor so exact zeros compare sanely.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Checks `build` (which maps input vars to a scalar) at `inputs`.
///
/// Every element of every input is perturbed by `±h`; `max_per_input` caps how
/// many elements per input are probed (evenly strided) to bound the cost.
pub fn check<F>(inputs: &[Tensor], build: F, h: f64, max_per_input: usize) -> GradCheck
where
    F: Fn(&Graph, &[Var]) -> Var,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&g, &vars);
    let grads = g.backward(root).expect("backward failed during gradient check");
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |probe: &[Tensor]| -> f64 {
        let g = Graph::new();
        let vars: Vec<Var> = probe.iter().map(|t| g.constant(t.clone())).collect();
        let root = build(&g, &vars);
        let v = g.value(root).item();
        v
    };

    let mut report = GradCheck { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0 };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = (n / max_per_input.max(1)).max(1);
        for e in (0..n).step_by(stride) {
            let orig = input.data()[e];
            probe[i].data_mut()[e] = orig + h;
            let fp = eval(&probe);
            probe[i].data_mut()[e] = orig - h;
            let fm = eval(&probe);
            probe[i].data_mut()[e] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i].data()[e];
            report.max_rel_error = report.max_rel_error.max(rel_error(a, numeric));
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.checked += 1;
        }
    }
    report
}
