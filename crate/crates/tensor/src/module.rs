use crate::{Element, Gradients, Param, Result, Tensor, TensorError};

/// Joins a parameter path segment onto a prefix with `.`.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything owning named parameters (and optionally non-trainable buffers
/// such as batch-norm running statistics).
pub trait Module<T: Element> {
    fn for_each_param<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>));

    fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn for_each_buffer(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor<T>)) {}

    fn for_each_buffer_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}

impl<T: Element, M: Module<T>> Module<T> for Option<M> {
    fn for_each_param<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        if let Some(m) = self {
            m.for_each_param(prefix, f);
        }
    }

    fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        if let Some(m) = self {
            m.for_each_param_mut(prefix, f);
        }
    }

    fn for_each_buffer(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Some(m) = self {
            m.for_each_buffer(prefix, f);
        }
    }

    fn for_each_buffer_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Some(m) = self {
            m.for_each_buffer_mut(prefix, f);
        }
    }
}

impl<T: Element, M: Module<T>> Module<T> for Vec<M> {
    fn for_each_param<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        for (i, m) in self.iter().enumerate() {
            m.for_each_param(&join(prefix, &i.to_string()), f);
        }
    }

    fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.for_each_param_mut(&join(prefix, &i.to_string()), f);
        }
    }

    fn for_each_buffer(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, m) in self.iter().enumerate() {
            m.for_each_buffer(&join(prefix, &i.to_string()), f);
        }
    }

    fn for_each_buffer_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.for_each_buffer_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Convenience operations available on every [`Module`].
pub trait ModuleExt<T: Element>: Module<T> {
    fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param("", &mut |_, p| n += p.value().numel());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_param("", &mut |name, _| names.push(name.to_string()));
        names
    }

    fn zero_grad(&mut self) {
        self.for_each_param_mut("", &mut |_, p| p.zero_grad());
    }

    /// Adds tape gradients into the parameters' accumulators.
    fn accumulate_grads(&mut self, grads: &Gradients<T>) -> Result<()> {
        let mut err = None;
        self.for_each_param_mut("", &mut |_, p| {
            if let Some(g) = grads.get(p.id()) {
                if let Err(e) = p.accumulate_grad(g) {
                    err.get_or_insert(e);
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Every parameter and buffer by name, in visiting order.
    fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.for_each_param("", &mut |name, p| out.push((name.to_string(), p.value().clone())));
        self.for_each_buffer("", &mut |name, b| out.push((name.to_string(), b.clone())));
        out
    }

    /// Overwrites parameters and buffers from `state`. Names must match
    /// exactly; shapes must agree.
    fn load_state(&mut self, state: &[(String, Tensor<T>)]) -> Result<()> {
        use std::collections::{BTreeSet, HashMap};
        let incoming: HashMap<&str, &Tensor<T>> =
            state.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut own: BTreeSet<String> = BTreeSet::new();
        let mut shape_errors = Vec::new();
        self.for_each_param("", &mut |name, p| {
            own.insert(name.to_string());
            if let Some(t) = incoming.get(name) {
                if t.shape() != p.shape() {
                    shape_errors.push(format!("{name}: expected {} got {}", p.shape(), t.shape()));
                }
            }
        });
        self.for_each_buffer("", &mut |name, b| {
            own.insert(name.to_string());
            if let Some(t) = incoming.get(name) {
                if t.shape() != b.shape() {
                    shape_errors.push(format!("{name}: expected {} got {}", b.shape(), t.shape()));
                }
            }
        });
        let theirs: BTreeSet<String> = incoming.keys().map(|s| s.to_string()).collect();
        let missing: Vec<_> = own.difference(&theirs).cloned().collect();
        let extra: Vec<_> = theirs.difference(&own).cloned().collect();
        if !missing.is_empty() || !extra.is_empty() || !shape_errors.is_empty() {
            return Err(TensorError::Config(format!(
                "state mismatch: missing {missing:?}, unexpected {extra:?}, shape {shape_errors:?}"
            )));
        }
        self.for_each_param_mut("", &mut |name, p| {
            p.set_value(incoming[name].clone()).expect("shape checked");
        });
        self.for_each_buffer_mut("", &mut |name, b| {
            *b = incoming[name].clone();
        });
        Ok(())
    }
}

impl<T: Element, M: Module<T> + ?Sized> ModuleExt<T> for M {}
