//! Named parameter storage, graph binding, and the layer helpers shared by
//! the encoder, slot attention, and decoder.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{relative_gap, Graph, Result, TensorError, TensorId};

/// One named weight tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered collection of parameters. Iteration order is insertion order,
/// which fixes checkpoint layout, optimizer-state layout, and gradient
/// reduction order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "param {name}: data length does not match shape"
        );
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Param {
            name: name.to_string(),
            shape,
            data,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.position(name).map(|i| &self.entries[i])
    }

    pub fn at(&self, i: usize) -> &Param {
        &self.entries[i]
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Param {
        &mut self.entries[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    /// Clone the parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        let mut out = ParamSet::new();
        for p in &self.entries {
            if p.name.starts_with(prefix) {
                out.insert(&p.name, p.shape.clone(), p.data.clone());
            }
        }
        out
    }

    /// Zeroed gradient buffer aligned with this set.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|p| vec![0.0; p.numel()]).collect()
    }
}

/// A forward pass under construction: a graph plus memoized bindings of
/// parameters into it.
pub struct Session<'g, 'p> {
    pub graph: &'g mut Graph,
    params: &'p ParamSet,
    bound: Vec<Option<TensorId>>,
    trainable: Option<Vec<bool>>,
}

impl<'g, 'p> Session<'g, 'p> {
    /// All parameters receive gradients.
    pub fn on(graph: &'g mut Graph, params: &'p ParamSet) -> Self {
        Session {
            graph,
            params,
            bound: vec![None; params.len()],
            trainable: None,
        }
    }

    /// No parameter receives a gradient (target-encoder passes, eval).
    pub fn frozen_on(graph: &'g mut Graph, params: &'p ParamSet) -> Self {
        Session {
            graph,
            params,
            bound: vec![None; params.len()],
            trainable: Some(vec![false; params.len()]),
        }
    }

    /// Per-parameter gradient mask aligned with `params` order.
    pub fn masked_on(graph: &'g mut Graph, params: &'p ParamSet, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), params.len());
        Session {
            graph,
            params,
            bound: vec![None; params.len()],
            trainable: Some(mask),
        }
    }

    /// Bind parameter `name` into the graph (memoized).
    pub fn p(&mut self, name: &str) -> Result<TensorId> {
        let i = self
            .params
            .position(name)
            .ok_or_else(|| TensorError::Invalid(format!("unknown parameter {name}")))?;
        if let Some(id) = self.bound[i] {
            return Ok(id);
        }
        let param = self.params.at(i);
        let rg = match &self.trainable {
            None => true,
            Some(mask) => mask[i],
        };
        let id = self.graph.leaf(param.data.clone(), &param.shape, rg)?;
        self.bound[i] = Some(id);
        Ok(id)
    }

    /// After `backward`, add each bound parameter's gradient into `out`
    /// (aligned with the [`ParamSet`] order).
    pub fn accumulate_grads(&self, out: &mut [Vec<f64>]) {
        for (i, bound) in self.bound.iter().enumerate() {
            if let Some(id) = bound {
                if let Some(g) = self.graph.grad(*id) {
                    for (o, &v) in out[i].iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

pub fn xavier_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect()
}

pub fn normal(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    use rand_distr::Distribution;
    let dist = rand_distr::Normal::new(0.0, std).expect("std must be finite");
    (0..n).map(|_| dist.sample(rng)).collect()
}

pub fn init_linear(
    ps: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    bias: bool,
) {
    ps.insert(
        &format!("{name}.w"),
        vec![fan_in, fan_out],
        xavier_uniform(rng, fan_in, fan_out),
    );
    if bias {
        ps.insert(&format!("{name}.b"), vec![fan_out], vec![0.0; fan_out]);
    }
}

pub fn init_layer_norm(ps: &mut ParamSet, name: &str, dim: usize) {
    ps.insert(&format!("{name}.gamma"), vec![dim], vec![1.0; dim]);
    ps.insert(&format!("{name}.beta"), vec![dim], vec![0.0; dim]);
}

pub fn init_gru(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, dim: usize) {
    for gate in ["z", "r", "n"] {
        ps.insert(
            &format!("{name}.w{gate}"),
            vec![dim, dim],
            xavier_uniform(rng, dim, dim),
        );
        ps.insert(
            &format!("{name}.u{gate}"),
            vec![dim, dim],
            xavier_uniform(rng, dim, dim),
        );
        ps.insert(&format!("{name}.b{gate}"), vec![dim], vec![0.0; dim]);
    }
    ps.insert(&format!("{name}.bn_hid"), vec![dim], vec![0.0; dim]);
}

// ---------------------------------------------------------------------------
// Layer helpers
// ---------------------------------------------------------------------------

pub const LN_EPS: f64 = 1e-5;

/// `x @ W (+ b)` with `W`/`b` looked up as `{name}.w` / `{name}.b`.
pub fn linear(s: &mut Session, x: TensorId, name: &str, bias: bool) -> Result<TensorId> {
    let w = s.p(&format!("{name}.w"))?;
    let mut y = s.graph.matmul(x, w)?;
    if bias {
        let b = s.p(&format!("{name}.b"))?;
        let rows = s.graph.shape(y)[0];
        let bb = s.graph.broadcast_lead(b, rows)?;
        y = s.graph.add(y, bb)?;
    }
    Ok(y)
}

/// Layer norm over the last axis with `{name}.gamma` / `{name}.beta`.
pub fn layer_norm(s: &mut Session, x: TensorId, name: &str) -> Result<TensorId> {
    let gamma = s.p(&format!("{name}.gamma"))?;
    let beta = s.p(&format!("{name}.beta"))?;
    s.graph.layer_norm(x, gamma, beta, LN_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

/// MLP over `{name}.fc0..fcN`, hidden activations as given, final layer
/// linear.
pub fn mlp(
    s: &mut Session,
    x: TensorId,
    name: &str,
    n_layers: usize,
    act: Activation,
) -> Result<TensorId> {
    let mut h = x;
    for layer in 0..n_layers {
        h = linear(s, h, &format!("{name}.fc{layer}"), true)?;
        if layer + 1 < n_layers {
            h = match act {
                Activation::Relu => s.graph.relu(h)?,
                Activation::Gelu => s.graph.gelu(h)?,
            };
        }
    }
    Ok(h)
}

/// Gated recurrent cell applied row-wise: update gate `z`, reset gate `r`,
/// tanh candidate, `h' = (1-z)*cand + z*h`.
pub fn gru_cell(s: &mut Session, x: TensorId, h: TensorId, name: &str) -> Result<TensorId> {
    let rows = s.graph.shape(x)[0];
    let bias = |s: &mut Session, n: String| -> Result<TensorId> {
        let b = s.p(&n)?;
        s.graph.broadcast_lead(b, rows)
    };

    let wz = s.p(&format!("{name}.wz"))?;
    let uz = s.p(&format!("{name}.uz"))?;
    let xz = s.graph.matmul(x, wz)?;
    let hz = s.graph.matmul(h, uz)?;
    let sum = s.graph.add(xz, hz)?;
    let bz = bias(s, format!("{name}.bz"))?;
    let sum = s.graph.add(sum, bz)?;
    let z = s.graph.sigmoid(sum)?;

    let wr = s.p(&format!("{name}.wr"))?;
    let ur = s.p(&format!("{name}.ur"))?;
    let xr = s.graph.matmul(x, wr)?;
    let hr = s.graph.matmul(h, ur)?;
    let sum = s.graph.add(xr, hr)?;
    let br = bias(s, format!("{name}.br"))?;
    let sum = s.graph.add(sum, br)?;
    let r = s.graph.sigmoid(sum)?;

    let wn = s.p(&format!("{name}.wn"))?;
    let un = s.p(&format!("{name}.un"))?;
    let xn = s.graph.matmul(x, wn)?;
    let bn = bias(s, format!("{name}.bn"))?;
    let xn = s.graph.add(xn, bn)?;
    let hn = s.graph.matmul(h, un)?;
    let bnh = bias(s, format!("{name}.bn_hid"))?;
    let hn = s.graph.add(hn, bnh)?;
    let gated = s.graph.mul(r, hn)?;
    let pre = s.graph.add(xn, gated)?;
    let cand = s.graph.tanh(pre)?;

    // h' = (1 - z) * cand + z * h
    let one_minus_z = {
        let neg = s.graph.scalar_mul(z, -1.0)?;
        s.graph.scalar_add(neg, 1.0)?
    };
    let a = s.graph.mul(one_minus_z, cand)?;
    let b = s.graph.mul(z, h)?;
    s.graph.add(a, b)
}

// ---------------------------------------------------------------------------
// Whole-model finite differences
// ---------------------------------------------------------------------------

/// Compare analytic per-parameter gradients against central finite
/// differences of `eval`, restricted to parameters accepted by `filter`.
/// Returns the worst relative gap.
pub fn finite_diff_gap<F, P>(
    params: &ParamSet,
    analytic: &[Vec<f64>],
    mut eval: F,
    eps: f64,
    mut filter: P,
) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<f64>,
    P: FnMut(&str) -> bool,
{
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        if !filter(&params.at(i).name) {
            continue;
        }
        for c in 0..params.at(i).numel() {
            let orig = work.at(i).data[c];
            work.at_mut(i).data[c] = orig + eps;
            let lp = eval(&work)?;
            work.at_mut(i).data[c] = orig - eps;
            let lm = eval(&work)?;
            work.at_mut(i).data[c] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(TensorError::NonFinite {
                    context: format!("finite differences of {}", params.at(i).name),
                    index: c,
                });
            }
            worst = worst.max(relative_gap(analytic[i][c], numeric));
        }
    }
    Ok(worst)
}
