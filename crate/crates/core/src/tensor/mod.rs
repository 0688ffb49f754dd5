//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! Tensors are plain row-major buffers. All differentiable computation is
//! recorded on a [`Tape`], which owns every intermediate value and replays
//! the recorded primitives backwards to accumulate gradients.

mod conv;
mod gradcheck;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

pub use conv::{conv2d_forward, conv_output_size, upsample2_forward};
pub use gradcheck::{gradient_check, gradient_check_with, Difference, GradCheckReport};
pub use tape::{Gradients, Tape, Var};

/// Leaky ReLU negative slope used by every network in the crate.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Clamp applied to probabilities before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {got} values were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("non-finite gradient reached tape node {0}")]
    NonFiniteGradient(usize),
    #[error("{op}: shape mismatch, {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("gradient check: {0}")]
    GradCheck(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}

/// Scalar element type. Implemented for `f32` (training) and `f64`
/// (gradient checks).
pub trait Real:
    Float + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// `c = a · b (+ c if accumulate)` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        c: &mut [Self],
        accumulate: bool,
    );

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: callers pass buffers whose extents cover the strided
                // views (checked by the debug assertions in conv.rs), and `c`
                // is a dense m×n row-major block.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Dense row-major tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor{:?} {:?}", self.shape, preview)?;
        if self.data.len() > 8 {
            write!(f, "…")?;
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.contains(&0) {
        return Err(TensorError::ZeroExtent(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected = check_shape(shape)?;
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_raw(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Element-type conversion (e.g. f32 parameters into an f64 tape).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_raw(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extents of a `[C, H, W]` tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(shape_err("chw", format!("expected [C,H,W], got {:?}", self.shape))),
        }
    }

    /// Mean of `|self - other|` over all elements.
    pub fn mean_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        let s: T = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        s / T::from_f64(self.data.len() as f64)
    }

    /// Nearest-neighbour downsampling of a `[C, H, W]` tensor by an integer
    /// factor (picks the top-left sample of each block).
    pub fn downsample_nearest(&self, factor: usize) -> Result<Self> {
        let (c, h, w) = self.chw()?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(shape_err(
                "downsample_nearest",
                format!("{h}×{w} not divisible by {factor}"),
            ));
        }
        let (ho, wo) = (h / factor, w / factor);
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for y in 0..ho {
                for x in 0..wo {
                    out.push(self.data[ch * h * w + y * factor * w + x * factor]);
                }
            }
        }
        Ok(Self::from_raw(vec![c, ho, wo], out))
    }

    /// 2×2 mean pooling of a `[C, H, W]` tensor.
    pub fn mean_pool2(&self) -> Result<Self> {
        let (c, h, w) = self.chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err("mean_pool2", format!("{h}×{w} is not even")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            let base = ch * h * w;
            for y in 0..ho {
                for x in 0..wo {
                    let i = base + 2 * y * w + 2 * x;
                    let s = self.data[i] + self.data[i + 1] + self.data[i + w] + self.data[i + w + 1];
                    out.push(s * quarter);
                }
            }
        }
        Ok(Self::from_raw(vec![c, ho, wo], out))
    }

    /// Concatenates `[C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let (_, h, w) = first.chw()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.chw()?;
            if (ph, pw) != (h, w) {
                return Err(shape_err(
                    "concat",
                    format!("spatial {ph}×{pw} does not match {h}×{w}"),
                ));
            }
            channels += c;
            data.extend_from_slice(&p.data);
        }
        Ok(Self::from_raw(vec![channels, h, w], data))
    }
}
