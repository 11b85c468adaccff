use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use gctx_numerics::{gradcheck, Element, GradcheckOptions, GradcheckReport, Gradients, Graph, Rng, Tensor, Var};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Handle to one tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered registry of named parameter tensors.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<T>>>,
    index: HashMap<String, usize>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Usage(format!("duplicate parameter name '{name}'")));
        }
        let id = self.names.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.tensors.push(Arc::new(value));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &*self.tensors[i])
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(|t| &**t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.len()).map(ParamId)
    }

    pub(crate) fn arc(&self, id: ParamId) -> Arc<Tensor<T>> {
        self.tensors[id.0].clone()
    }

    /// Replaces a tensor, keeping its name; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.tensors[id.0].shape() {
            return Err(Error::Usage(format!(
                "parameter '{}' has shape {:?}, got {:?}",
                self.names[id.0],
                self.tensors[id.0].shape(),
                value.shape()
            )));
        }
        self.tensors[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// SHA-256 over names, shapes and raw values, as lowercase hex.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.bit_eq(b))
    }
}

/// Creates parameters under a dotted name prefix, drawing initial values
/// from one RNG in construction order.
pub struct Init<'a> {
    store: &'a mut ParamStore<f32>,
    rng: &'a mut Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, rng: &'a mut Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn scope<'b>(&'b mut self, name: impl std::fmt::Display) -> Init<'b> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Init { store: self.store, rng: self.rng, prefix }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn param(&mut self, name: &str, value: Tensor<f32>) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.insert(&full, value)
    }

    pub fn trunc_normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let t = Tensor::trunc_normal(shape, std, self.rng);
        self.param(name, t)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let t = Tensor::uniform(shape, -bound, bound, self.rng);
        self.param(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.param(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.param(name, Tensor::ones(shape))
    }
}

/// Parameters of one store bound to a [`Graph`] for a single forward pass.
pub struct Session<'g, T: Element> {
    graph: &'g Graph<T>,
    vars: Vec<Var<'g, T>>,
    train: bool,
    rng: RefCell<Option<Rng>>,
}

impl<'g, T: Element> Session<'g, T> {
    /// Every parameter becomes a trainable leaf when the graph records gradients.
    pub fn new(graph: &'g Graph<T>, store: &ParamStore<T>) -> Self {
        let vars = store.ids().map(|id| graph.leaf_arc(store.arc(id))).collect();
        Self { graph, vars, train: false, rng: RefCell::new(None) }
    }

    /// Parameters enter as constants.
    pub fn frozen(graph: &'g Graph<T>, store: &ParamStore<T>) -> Self {
        let vars = store.ids().map(|id| graph.constant_arc(store.arc(id))).collect();
        Self { graph, vars, train: false, rng: RefCell::new(None) }
    }

    /// Binds caller-made variables, one per parameter in store order.
    pub fn bind(graph: &'g Graph<T>, vars: Vec<Var<'g, T>>) -> Self {
        Self { graph, vars, train: false, rng: RefCell::new(None) }
    }

    /// Enables stochastic layers (dropout, drop-path) driven by `rng`.
    pub fn training(mut self, rng: Rng) -> Self {
        self.train = true;
        self.rng = RefCell::new(Some(rng));
        self
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn param(&self, id: ParamId) -> &Var<'g, T> {
        &self.vars[id.0]
    }

    pub fn params(&self) -> &[Var<'g, T>] {
        &self.vars
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    /// Gradients in store order; parameters the loss did not reach get zeros.
    pub fn collect_grads(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|v| grads.get_or_zeros(v)).collect()
    }

    /// Inverted dropout; identity outside training or for `p == 0`.
    pub fn dropout(&self, x: &Var<'g, T>, p: f64) -> Result<Var<'g, T>> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let mut guard = self.rng.borrow_mut();
        let rng = guard.as_mut().expect("training session has an rng");
        let keep = 1.0 / (1.0 - p);
        let mask = Tensor::from_fn(x.shape(), |_| T::from_f64(if rng.bernoulli(p) { 0.0 } else { keep }));
        Ok(x.mul(&self.graph.constant(mask))?)
    }

    /// Stochastic depth over the leading (batch) axis.
    pub fn drop_path(&self, x: &Var<'g, T>, p: f64) -> Result<Var<'g, T>> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let mut guard = self.rng.borrow_mut();
        let rng = guard.as_mut().expect("training session has an rng");
        let keep = 1.0 / (1.0 - p);
        let mut shape = vec![1; x.rank()];
        shape[0] = x.shape()[0];
        let mask = Tensor::from_fn(&shape, |_| T::from_f64(if rng.bernoulli(p) { 0.0 } else { keep }));
        Ok(x.mul(&self.graph.constant(mask))?)
    }
}

/// Finite-difference check of `f` with respect to `inputs` and every
/// parameter of `store`. Parameters are reported under their registry names.
pub fn gradcheck_with_params<F>(
    store: &ParamStore<f64>,
    inputs: &[(String, Tensor<f64>)],
    f: F,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: for<'g> Fn(&Session<'g, f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let n = inputs.len();
    let mut all = inputs.to_vec();
    all.extend(store.iter().map(|(name, t)| (name.to_string(), t.clone())));
    let report = gradcheck(
        |g, vars| {
            let s = Session::bind(g, vars[n..].to_vec());
            f(&s, &vars[..n]).map_err(|e| match e {
                Error::Numerics(e) => e,
                other => gctx_numerics::Error::Usage(other.to_string()),
            })
        },
        &all,
        opts,
    )?;
    Ok(report)
}
