//! Parameter storage and the parameterized layers the network is built from.

pub mod attention;
pub mod blocks;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::conv::{output_size, ConvSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered parameter tensors of one network.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let cur = &self.values[id.0];
        if cur.shape() != value.shape() {
            return Err(Error::dim(
                "ParamStore::set",
                self.names[id.0].clone(),
                format!("{:?}", cur.shape()),
                format!("{:?}", value.shape()),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.values.iter().map(|v| tape.leaf(v.clone())).collect())
    }

    /// Registers every parameter as a constant (inference: no gradients are tracked).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.values.iter().map(|v| tape.constant(v.clone())).collect())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Tape handles of a [`ParamStore`]'s parameters, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps handles already on a tape, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Everything a layer needs during one forward pass.
pub struct Forward<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a Bound,
    /// When set, channel attention pools over this local window instead of globally.
    pub tlc_window: Option<usize>,
}

impl<'a, T: Scalar> Forward<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a Bound) -> Self {
        Self {
            tape,
            params,
            tlc_window: None,
        }
    }

    pub fn with_tlc(mut self, window: Option<usize>) -> Self {
        self.tlc_window = window;
        self
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params.var(id)
    }
}

/// Uniform samples in `[-bound, bound]`.
pub fn uniform_tensor<T: Scalar>(shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
}

/// Convolution layer: weight `(out, in / groups, k, k)` and a bias per output channel.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub spec: ConvSpec,
}

impl Conv2d {
    /// Weight and bias drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        spec: ConvSpec,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels / spec.groups * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform_tensor(vec![out_channels, in_channels / spec.groups, kernel, kernel], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), uniform_tensor(vec![out_channels], bound, rng));
        Self {
            weight,
            bias: Some(bias),
            in_channels,
            out_channels,
            kernel,
            spec,
        }
    }

    /// A convolution whose weight and bias start at zero.
    pub fn zeroed<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        spec: ConvSpec,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::zeros(vec![out_channels, in_channels / spec.groups, kernel, kernel]),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_channels]));
        Self {
            weight,
            bias: Some(bias),
            in_channels,
            out_channels,
            kernel,
            spec,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let c = f.tape.value(x).dims4()?.1;
        if c != self.in_channels {
            return Err(Error::dim("conv2d", "input channels", self.in_channels, c));
        }
        let (w, b) = (f.param(self.weight), self.bias.map(|b| f.param(b)));
        f.tape.conv2d(x, w, b, self.spec)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            output_size(h, self.kernel, self.spec.stride, self.spec.padding),
            output_size(w, self.kernel, self.spec.stride, self.spec.padding),
        )
    }

    /// Multiply-accumulates for one image of spatial size `h` x `w`.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.output_hw(h, w);
        (self.kernel * self.kernel * self.in_channels / self.spec.groups * self.out_channels * oh * ow) as u64
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Channel-wise layer norm with a gain and offset per channel.
#[derive(Clone, Debug)]
pub struct LayerNorm2d {
    pub gain: ParamId,
    pub offset: ParamId,
    pub channels: usize,
}

impl LayerNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(vec![channels])),
            offset: store.add(format!("{name}.offset"), Tensor::zeros(vec![channels])),
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (g, o) = (f.param(self.gain), f.param(self.offset));
        f.tape.layer_norm_channel(x, g, o, T::lit(LAYER_NORM_EPS))
    }
}
