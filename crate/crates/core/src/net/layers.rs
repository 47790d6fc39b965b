//! Named parameter storage and the small layers the blocks are built from.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Padding, PaddingMode, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters in declaration order, each with a dotted name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        self.find(name)
            .map(|id| self.get(id))
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))?;
        if self.tensors[id.0].shape() != t.shape() {
            return Err(Error::Shape(format!(
                "parameter {name}: shape {:?} vs {:?}",
                t.shape(),
                self.tensors[id.0].shape()
            )));
        }
        self.tensors[id.0] = t;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter in `g`: trainable leaves when `trainable`,
    /// constants otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound(
            self.tensors
                .iter()
                .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
                .collect(),
        )
    }
}

/// Graph handles of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn new(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Builds parameters under a name prefix with seeded initialization.
pub struct Init<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
    prefix: String,
}

impl<'a, R: Rng> Init<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Runs `f` with `name.` appended to the prefix.
    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let saved = self.prefix.clone();
        self.prefix = format!("{saved}{name}.");
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn randn(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let t = Tensor::randn(shape, std, self.rng);
        self.store.add(format!("{}{name}", self.prefix), t)
    }

    pub fn full(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.add(format!("{}{name}", self.prefix), Tensor::full(shape, value))
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl Conv {
    /// `k × k` convolution with "same" padding at stride 1, weights drawn
    /// with standard deviation `gain / √fan_in`.
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, c_in: usize, c_out: usize, k: usize, gain: f64) -> Self {
        Self::general(init, name, c_in, c_out, k, 1, 1, Padding::same(k, PaddingMode::Reflect), gain)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn general<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        groups: usize,
        padding: Padding,
        gain: f64,
    ) -> Self {
        let fan_in = (c_in / groups) * k * k;
        init.scope(name, |i| Conv {
            weight: i.randn("weight", &[c_out, c_in / groups, k, k], gain / (fan_in as f64).sqrt()),
            bias: Some(i.full("bias", &[c_out], 0.0)),
            stride,
            padding,
            groups,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        self.forward_padded(g, p, x, self.padding)
    }

    /// Same as [`Conv::forward`] with a per-call padding.
    pub fn forward_padded(&self, g: &mut Graph, p: &Bound, x: Var, padding: Padding) -> Result<Var> {
        let b = self.bias.map(|b| p.var(b));
        g.conv2d(x, p.var(self.weight), b, self.stride, padding, self.groups)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        Self::with_gain(init, name, d_in, d_out, bias, 1.0)
    }

    /// Weights drawn with standard deviation `gain / √d_in`.
    pub fn with_gain<R: Rng>(init: &mut Init<'_, R>, name: &str, d_in: usize, d_out: usize, bias: bool, gain: f64) -> Self {
        init.scope(name, |i| Linear {
            weight: i.randn("weight", &[d_in, d_out], gain / (d_in as f64).sqrt()),
            bias: bias.then(|| i.full("bias", &[d_out], 0.0)),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.weight), self.bias.map(|b| p.var(b)))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, dim: usize, eps: f64) -> Self {
        init.scope(name, |i| LayerNorm {
            gamma: i.full("gamma", &[dim], 1.0),
            beta: i.full("beta", &[dim], 0.0),
            eps,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gamma), p.var(self.beta), self.eps)
    }
}

/// `[B, c, h, w]` → `[B, h, w, c]`.
pub fn to_tokens(g: &mut Graph, x: Var) -> Result<Var> {
    g.permute(x, &[0, 2, 3, 1])
}

/// `[B, h, w, c]` → `[B, c, h, w]`.
pub fn from_tokens(g: &mut Graph, x: Var) -> Result<Var> {
    g.permute(x, &[0, 3, 1, 2])
}
