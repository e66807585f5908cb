use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Gradients, Graph, Tensor, Var};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(!self.params.contains_key(&name), "duplicate parameter `{name}`");
        self.params.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// `{name}.w` as `[fan_in, fan_out]` drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// and `{name}.b` as a zero `[1, fan_out]` row.
    pub fn init_linear(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.init_uniform(&format!("{name}.w"), &[fan_in, fan_out], bound, rng);
        self.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
    }

    pub fn init_uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut impl Rng) {
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound));
        self.insert(name, t);
    }

    /// Sets every value to zero (used by tests and frozen baselines).
    pub fn zero_matching(&mut self, prefix: &str) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                t.map_inplace(|_| 0.0);
            }
        }
    }
}

/// Parameters of a [`ParamStore`] placed on a [`Graph`] for one forward pass.
pub struct Bound<'g> {
    pub graph: &'g Graph,
    vars: BTreeMap<String, Var>,
}

impl<'g> Bound<'g> {
    /// Binds every parameter; those rejected by `trainable` become constants.
    pub fn new(graph: &'g Graph, store: &ParamStore, trainable: impl Fn(&str) -> bool) -> Self {
        let vars = store
            .iter()
            .map(|(name, t)| {
                let v = if trainable(name) {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Self { graph, vars }
    }

    /// Wraps already-placed vars, e.g. perturbed copies in a gradient check.
    pub fn from_vars(graph: &'g Graph, vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self { graph, vars: vars.into_iter().collect() }
    }

    /// Binds every parameter as a constant (no gradients).
    pub fn frozen(graph: &'g Graph, store: &ParamStore) -> Self {
        Self::new(graph, store, |_| false)
    }

    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// `x @ {name}.w + {name}.b`
    pub fn linear(&self, name: &str, x: Var) -> Var {
        let g = self.graph;
        let w = self.var(&format!("{name}.w"));
        let b = self.var(&format!("{name}.b"));
        g.add(g.matmul(x, w), b)
    }

    /// Gradients of bound parameters, keyed by name.
    pub fn collect_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(name, v)| grads.wrt(*v).map(|t| (name.clone(), t.clone())))
            .collect()
    }
}
