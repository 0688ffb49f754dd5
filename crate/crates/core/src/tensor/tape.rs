use super::conv::{self, ConvGeom};
use super::{shape_err, Real, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor<T>),
    Affine(Var, T),
    Abs(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    LogClamped(Var, T, T),
    Concat(Vec<Var>),
    Narrow { x: Var, start: usize, len: usize },
    Sum(Var),
    Mean(Var),
    MaskedMean { x: Var, mask: Tensor<T>, count: T },
    Upsample2(Var),
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<T>,
        inv_std: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive applications for one forward pass and replays them in
/// reverse to compute gradients.
///
/// Nodes are appended after their parents, so index order is a topological
/// order and the backward sweep is a single reverse scan.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_raw(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant leaf (no gradient is accumulated for it).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let out = zip_map(va, vb, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb)?;
        let out = zip_map(va, vb, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let out = zip_map(va, vb, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant tensor (used for dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor<T>) -> Result<Var> {
        let va = self.value(a);
        same_shape("mul_const", va, &c)?;
        let out = zip_map(va, &c, |x, y| x * y);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::MulConst(a, c), rg))
    }

    /// `scale · a + offset`, elementwise.
    pub fn affine(&mut self, a: Var, scale: T, offset: T) -> Var {
        let out = self.value(a).map(|x| scale * x + offset);
        let rg = self.rg(&[a]);
        self.push(out, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| s * x);
        let rg = self.rg(&[a]);
        self.push(out, Op::Affine(a, s), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::abs);
        let rg = self.rg(&[a]);
        self.push(out, Op::Abs(a), rg)
    }

    /// `max(0, a)`. The subgradient at zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        debug_assert!(slope >= T::zero() && slope < T::one());
        let out = self.value(a).map(|x| if x >= T::zero() { x } else { slope * x });
        let rg = self.rg(&[a]);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// `ln(clamp(a, eps, 1 − eps))`; zero gradient where the clamp is active.
    pub fn log_clamped(&mut self, a: Var, eps: T) -> Var {
        let (lo, hi) = (eps, T::one() - eps);
        let out = self.value(a).map(|x| x.max(lo).min(hi).ln());
        let rg = self.rg(&[a]);
        self.push(out, Op::LogClamped(a, lo, hi), rg)
    }

    /// Concatenates `[C_i,H,W]` values along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_channels(&refs)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Channels `start..start+len` of a `[C,H,W]` value.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if len == 0 || start + len > c {
            return Err(shape_err(
                "narrow_channels",
                format!("channels {start}..{} out of range for C={c}", start + len),
            ));
        }
        let plane = h * w;
        let data = self.value(x).data()[start * plane..(start + len) * plane].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_raw(vec![len, h, w], data),
            Op::Narrow { x, start, len },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::from_f64(v.len() as f64);
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Mean of `a` over the positions where the 0/1 `mask` is one. Evaluates
    /// to zero (with zero gradient) when the mask is empty.
    pub fn masked_mean(&mut self, a: Var, mask: Tensor<T>) -> Result<Var> {
        let va = self.value(a);
        same_shape("masked_mean", va, &mask)?;
        let count: T = mask.data().iter().copied().sum();
        let m = if count > T::zero() {
            let s: T = va
                .data()
                .iter()
                .zip(mask.data())
                .map(|(&x, &k)| x * k)
                .sum();
            s / count
        } else {
            T::zero()
        };
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(m), Op::MaskedMean { x: a, mask, count }, rg))
    }

    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let out = conv::upsample2_forward(self.value(a))?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Upsample2(a), rg))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (vx, vk, vb) = (self.value(x), self.value(k), self.value(b));
        let geom = ConvGeom::new(vx, vk, vb, stride, padding)?;
        let (out, cols) = conv::conv2d_with_cols(vx, vk, vb, &geom);
        let rg = self.rg(&[x, k, b]);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                k,
                b,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Normalizes the whole `[C,H,W]` sample to zero mean and unit variance,
    /// then applies a per-channel affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "gain {:?} / bias {:?} must both be [{c}]",
                    self.shape(gain),
                    self.shape(bias)
                ),
            ));
        }
        let vx = self.value(x).data();
        let n = T::from_f64(vx.len() as f64);
        let mean = vx.iter().copied().sum::<T>() / n;
        let var = vx.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv_std = T::one() / (var + eps).sqrt();
        let normed: Vec<T> = vx.iter().map(|&v| (v - mean) * inv_std).collect();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let plane = h * w;
        let out: Vec<T> = normed
            .iter()
            .enumerate()
            .map(|(i, &v)| g[i / plane] * v + b[i / plane])
            .collect();
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::from_raw(vec![c, h, w], out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("root must be a scalar, got {:?}", self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(T::one()));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if !matches!(node.op, Op::Leaf) {
                self.propagate(node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if g.as_ref().is_some_and(|g| !g.all_finite()) {
                return Err(TensorError::NonFiniteGradient(i));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e = *e + *x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn with_data(&self, v: Var, data: Vec<T>) -> Tensor<T> {
        Tensor::from_raw(self.shape(v).to_vec(), data)
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, zip_map(g, vb, |x, y| x * y));
                self.accumulate(grads, *b, zip_map(g, va, |x, y| x * y));
            }
            Op::MulConst(a, c) => {
                self.accumulate(grads, *a, zip_map(g, c, |x, y| x * y));
            }
            Op::Affine(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::Abs(a) => {
                let va = self.value(*a);
                let d = zip_map(g, va, |x, v| {
                    if v > T::zero() {
                        x
                    } else if v < T::zero() {
                        -x
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = zip_map(g, self.value(*a), |x, v| if v > T::zero() { x } else { T::zero() });
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let d = zip_map(g, self.value(*a), |x, v| if v >= T::zero() { x } else { s * x });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = zip_map(g, &node.value, |x, y| x * y * (T::one() - y));
                self.accumulate(grads, *a, d);
            }
            Op::LogClamped(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = zip_map(g, self.value(*a), |x, v| {
                    if v < lo || v > hi {
                        T::zero()
                    } else {
                        x / v
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let d = self.with_data(p, gd[offset..offset + n].to_vec());
                    offset += n;
                    self.accumulate(grads, p, d);
                }
            }
            Op::Narrow { x, start, len } => {
                let (c, h, w) = self.value(*x).chw().expect("narrow on [C,H,W]");
                let plane = h * w;
                let mut d = vec![T::zero(); c * plane];
                d[start * plane..(start + len) * plane].copy_from_slice(gd);
                let d = self.with_data(*x, d);
                self.accumulate(grads, *x, d);
            }
            Op::Sum(a) => {
                let d = Tensor::full(self.shape(*a), gd[0]);
                self.accumulate(grads, *a, d);
            }
            Op::Mean(a) => {
                let n = T::from_f64(self.value(*a).len() as f64);
                let d = Tensor::full(self.shape(*a), gd[0] / n);
                self.accumulate(grads, *a, d);
            }
            Op::MaskedMean { x, mask, count } => {
                if *count > T::zero() {
                    let s = gd[0] / *count;
                    self.accumulate(grads, *x, mask.map(|k| k * s));
                }
            }
            Op::Upsample2(a) => {
                let (c, h, w) = self.value(*a).chw().expect("upsample on [C,H,W]");
                let d = conv::upsample2_backward(gd, c, h, w);
                let d = self.with_data(*a, d);
                self.accumulate(grads, *a, d);
            }
            Op::Conv2d {
                x,
                k,
                b,
                geom,
                cols,
            } => {
                let need_input = self.nodes[x.0].requires_grad;
                let (dx, dk, db) =
                    conv::conv2d_backward(gd, self.value(*k).data(), cols, geom, need_input);
                if let Some(dx) = dx {
                    let dx = self.with_data(*x, dx);
                    self.accumulate(grads, *x, dx);
                }
                let dk = self.with_data(*k, dk);
                self.accumulate(grads, *k, dk);
                let db = self.with_data(*b, db);
                self.accumulate(grads, *b, db);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let (c, h, w) = self.value(*x).chw().expect("layer_norm on [C,H,W]");
                let plane = h * w;
                let gv = self.value(*gain).data();
                let mut dgain = vec![T::zero(); c];
                let mut dbias = vec![T::zero(); c];
                let mut dnormed = Vec::with_capacity(gd.len());
                for (i, (&dy, &xh)) in gd.iter().zip(normed).enumerate() {
                    let ch = i / plane;
                    dgain[ch] = dgain[ch] + dy * xh;
                    dbias[ch] = dbias[ch] + dy;
                    dnormed.push(dy * gv[ch]);
                }
                let n = T::from_f64(gd.len() as f64);
                let mean_d = dnormed.iter().copied().sum::<T>() / n;
                let mean_dx = dnormed
                    .iter()
                    .zip(normed)
                    .map(|(&d, &xh)| d * xh)
                    .sum::<T>()
                    / n;
                let dx: Vec<T> = dnormed
                    .iter()
                    .zip(normed)
                    .map(|(&d, &xh)| *inv_std * (d - mean_d - xh * mean_dx))
                    .collect();
                let dx = self.with_data(*x, dx);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gain, Tensor::from_raw(vec![c], dgain));
                self.accumulate(grads, *bias, Tensor::from_raw(vec![c], dbias));
            }
        }
    }
}
