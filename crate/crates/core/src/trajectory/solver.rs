use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    /// N equal bins with piecewise-constant velocity.
    EulerBins,
    /// Classical fixed-step fourth-order Runge-Kutta.
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub steps: usize,
}

impl SolverConfig {
    /// Training default.
    pub const TRAIN: Self = Self { kind: SolverKind::EulerBins, steps: 2 };
    /// Evaluation and reference solver.
    pub const EVAL: Self = Self { kind: SolverKind::Rk4, steps: 16 };

    pub fn euler(steps: usize) -> Self {
        Self { kind: SolverKind::EulerBins, steps }
    }

    pub fn rk4(steps: usize) -> Self {
        Self { kind: SolverKind::Rk4, steps }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("solver needs at least one step".into()));
        }
        Ok(())
    }

    pub fn parse(kind: &str, steps: usize) -> Result<Self> {
        let kind = match kind {
            "euler" | "euler_bins" => SolverKind::EulerBins,
            "rk4" => SolverKind::Rk4,
            other => return Err(Error::Config(format!("unknown solver `{other}`"))),
        };
        let s = Self { kind, steps };
        s.validate()?;
        Ok(s)
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            SolverKind::EulerBins => "euler",
            SolverKind::Rk4 => "rk4",
        }
    }
}

/// A differentiable velocity field `v(x, t)` over batches `x: [P, 3]`, `t: [P, 1]`.
pub trait VelocityFn {
    fn eval(&self, g: &Graph, x: Var, t: Var) -> Var;
}

impl<F: Fn(&Graph, Var, Var) -> Var> VelocityFn for F {
    fn eval(&self, g: &Graph, x: Var, t: Var) -> Var {
        self(g, x, t)
    }
}

fn column(g: &Graph, values: impl Iterator<Item = f64>) -> Var {
    let v: Vec<f64> = values.collect();
    g.constant(Tensor::new(vec![v.len(), 1], v))
}

/// Positions at `t1[p]` of the points that sit at `x0[p]` at time `t0[p]`.
///
/// Euler bins: with `Δ = (t1 - t0) / N`, each bin advances the running
/// position by `v(x, t0 + nΔ) Δ` for `n = 1..N`. RK4 takes `N` classical steps.
/// Points with `t1 == t0` come back unchanged.
pub fn integrate(g: &Graph, v: &impl VelocityFn, x0: Var, t0: &[f64], t1: &[f64], solver: SolverConfig) -> Var {
    assert_eq!(t0.len(), t1.len());
    assert_eq!(g.shape(x0), vec![t0.len(), 3], "trajectory start must be [P, 3]");
    solver.validate().expect("invalid solver");
    if t0 == t1 {
        return x0;
    }
    let n = solver.steps;
    let dt: Vec<f64> = t0.iter().zip(t1).map(|(a, b)| (b - a) / n as f64).collect();
    let h = column(g, dt.iter().copied());
    let time = |frac: f64| column(g, t0.iter().zip(&dt).map(move |(a, d)| a + frac * d));
    let mut x = x0;
    match solver.kind {
        SolverKind::EulerBins => {
            for k in 1..=n {
                let vel = v.eval(g, x, time(k as f64));
                x = g.add(x, g.mul(vel, h));
            }
        }
        SolverKind::Rk4 => {
            let half = column(g, dt.iter().map(|d| 0.5 * d));
            for k in 0..n {
                let s = k as f64;
                let k1 = v.eval(g, x, time(s));
                let k2 = v.eval(g, g.add(x, g.mul(k1, half)), time(s + 0.5));
                let k3 = v.eval(g, g.add(x, g.mul(k2, half)), time(s + 0.5));
                let k4 = v.eval(g, g.add(x, g.mul(k3, h)), time(s + 1.0));
                let sum = g.add(g.add(k1, k4), g.scale(g.add(k2, k3), 2.0));
                x = g.add(x, g.scale(g.mul(sum, h), 1.0 / 6.0));
            }
        }
    }
    x
}

/// `Φ(p, t_neighbor) - x_p`, or `None` when there is no neighbor timestamp.
pub fn trajectory_variation(
    g: &Graph,
    v: &impl VelocityFn,
    x: Var,
    t: &[f64],
    neighbor: Option<&[f64]>,
    solver: SolverConfig,
) -> Option<Var> {
    let t1 = neighbor?;
    Some(g.sub(integrate(g, v, x, t, t1, solver), x))
}
