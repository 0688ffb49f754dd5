use rand::Rng;

use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named parameter tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl<T: Real> ParamStore<T> {
    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.tensors.iter().map(|t| tape.param(t.clone())).collect())
    }

    /// Registers every parameter as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.tensors.iter().map(|t| tape.constant(t.clone())).collect())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Convolution with its own kernel and bias parameters.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    /// Kaiming-uniform initialisation for a leaky-ReLU successor.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (cin * k * k) as f64;
        let slope = crate::tensor::LEAKY_SLOPE;
        let bound = (6.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
        let data = (0..cout * cin * k * k)
            .map(|_| T::from_f64(rng.random_range(-bound..bound)))
            .collect();
        let kernel = store.add(format!("{name}.weight"), Tensor::from_raw(vec![cout, cin, k, k], data));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self {
            kernel,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> crate::tensor::Result<Var> {
        tape.conv2d(x, p.var(self.kernel), p.var(self.bias), self.stride, self.padding)
    }
}

/// Whole-sample layer normalisation with per-channel gain and bias.
#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const NORM_EPS: f64 = 1e-5;

impl Norm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[channels], T::one()));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[channels]));
        Self { gain, bias }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> crate::tensor::Result<Var> {
        tape.layer_norm(x, p.var(self.gain), p.var(self.bias), T::from_f64(NORM_EPS))
    }
}

pub(crate) fn lrelu<T: Real>(tape: &mut Tape<T>, x: Var) -> Var {
    tape.leaky_relu(x, T::from_f64(crate::tensor::LEAKY_SLOPE))
}

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by `1/(1−rate)`. Identity when `rng` is `None`.
pub(crate) fn dropout<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    rate: f64,
    rng: Option<&mut dyn rand::RngCore>,
) -> crate::tensor::Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let shape = tape.shape(x).to_vec();
    let n = shape.iter().product();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    tape.mul_const(x, Tensor::from_raw(shape, mask))
}
