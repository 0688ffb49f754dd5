//! Convolution and resampling kernels shared by the tape's forward and
//! backward passes.

use super::{shape_err, Real, Result, Tensor};

/// Output extent of a convolution along one axis.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel > size + 2 * padding {
        return None;
    }
    Some((size + 2 * padding - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new<T: Real>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (cin, h, w) = input
            .chw()
            .map_err(|_| shape_err("conv2d", format!("input must be [Cin,H,W], got {:?}", input.shape())))?;
        let [cout, kcin, kh, kw] = kernel.shape()[..] else {
            return Err(shape_err(
                "conv2d",
                format!("kernel must be [Cout,Cin,kh,kw], got {:?}", kernel.shape()),
            ));
        };
        if kcin != cin {
            return Err(shape_err(
                "conv2d",
                format!("kernel expects {kcin} input channels, input has {cin}"),
            ));
        }
        if bias.shape() != [cout] {
            return Err(shape_err(
                "conv2d",
                format!("bias shape {:?} does not match Cout={cout}", bias.shape()),
            ));
        }
        let ho = conv_output_size(h, kh, stride, pad).ok_or_else(|| {
            shape_err(
                "conv2d",
                format!("kernel height {kh} exceeds padded input height {} (stride {stride})", h + 2 * pad),
            )
        })?;
        let wo = conv_output_size(w, kw, stride, pad).ok_or_else(|| {
            shape_err(
                "conv2d",
                format!("kernel width {kw} exceeds padded input width {} (stride {stride})", w + 2 * pad),
            )
        })?;
        Ok(Self {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output columns `ox` whose input column `ox·stride + kx − pad` is in bounds.
fn valid_cols(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride);
    let hi = (g.w + g.pad).saturating_sub(kx).div_ceil(g.stride).min(g.wo);
    (lo.min(hi), hi)
}

/// Unfolds `[Cin,H,W]` into a `[Cin·kh·kw, Ho·Wo]` patch matrix.
pub(crate) fn im2col<T: Real>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let n = g.out_pixels();
    let mut cols = vec![T::zero(); g.patch_len() * n];
    for c in 0..g.cin {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = valid_cols(g, kx);
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let Some(iy) = (oy * g.stride + ky).checked_sub(g.pad).filter(|&y| y < g.h) else {
                        continue;
                    };
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let drow = &mut dst[oy * g.wo + lo..oy * g.wo + hi];
                    let x0 = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        drow.copy_from_slice(&src[x0..x0 + drow.len()]);
                    } else {
                        for (i, d) in drow.iter_mut().enumerate() {
                            *d = src[x0 + i * g.stride];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let n = g.out_pixels();
    let mut out = vec![T::zero(); g.cin * g.h * g.w];
    for c in 0..g.cin {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = valid_cols(g, kx);
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let Some(iy) = (oy * g.stride + ky).checked_sub(g.pad).filter(|&y| y < g.h) else {
                        continue;
                    };
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let srow = &src[oy * g.wo + lo..oy * g.wo + hi];
                    let x0 = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        for (d, &v) in dst[x0..x0 + srow.len()].iter_mut().zip(srow) {
                            *d = *d + v;
                        }
                    } else {
                        for (i, &v) in srow.iter().enumerate() {
                            let d = &mut dst[x0 + i * g.stride];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Forward convolution returning the output and the patch matrix (kept for
/// the backward pass).
pub(crate) fn conv2d_with_cols<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    g: &ConvGeom,
) -> (Tensor<T>, Vec<T>) {
    let n = g.out_pixels();
    let k = g.patch_len();
    let cols = im2col(input.data(), g);
    let mut out = Vec::with_capacity(g.cout * n);
    for &b in bias.data() {
        out.extend(std::iter::repeat_n(b, n));
    }
    T::gemm(
        g.cout,
        k,
        n,
        kernel.data(),
        (k as isize, 1),
        &cols,
        (n as isize, 1),
        &mut out,
        true,
    );
    (Tensor::from_raw(vec![g.cout, g.ho, g.wo], out), cols)
}

/// Zero-padded 2-D convolution of a single `[Cin,H,W]` sample.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input, kernel, bias, stride, padding)?;
    Ok(conv2d_with_cols(input, kernel, bias, &g).0)
}

/// Gradients of a convolution given the upstream gradient `dout`.
/// Returns `(d_input, d_kernel, d_bias)`.
pub(crate) fn conv2d_backward<T: Real>(
    dout: &[T],
    kernel: &[T],
    cols: &[T],
    g: &ConvGeom,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let n = g.out_pixels();
    let k = g.patch_len();
    let dbias: Vec<T> = dout.chunks(n).map(|row| row.iter().copied().sum()).collect();
    let mut dkernel = vec![T::zero(); g.cout * k];
    // dK = dOut · colsᵀ
    T::gemm(
        g.cout,
        n,
        k,
        dout,
        (n as isize, 1),
        cols,
        (1, n as isize),
        &mut dkernel,
        false,
    );
    let dinput = need_input.then(|| {
        // dCols = Kᵀ · dOut
        let mut dcols = vec![T::zero(); k * n];
        T::gemm(
            k,
            g.cout,
            n,
            kernel,
            (1, k as isize),
            dout,
            (n as isize, 1),
            &mut dcols,
            false,
        );
        col2im(&dcols, g)
    });
    (dinput, dkernel, dbias)
}

/// Nearest-neighbour ×2 upsampling of a `[C,H,W]` tensor.
pub fn upsample2_forward<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw()?;
    let src = input.data();
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for y in 0..ho {
            let row = &src[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
    }
    Ok(Tensor::from_raw(vec![c, ho, wo], out))
}

/// Adjoint of [`upsample2_forward`]: sums each 2×2 block.
pub(crate) fn upsample2_backward<T: Real>(dout: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let wo = 2 * w;
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let base = ch * 4 * h * w;
        for y in 0..h {
            for x in 0..w {
                let i = base + 2 * y * wo + 2 * x;
                out[ch * h * w + y * w + x] = dout[i] + dout[i + 1] + dout[i + wo] + dout[i + wo + 1];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_conv(
        input: &Tensor<f64>,
        kernel: &Tensor<f64>,
        bias: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let (cin, h, w) = input.chw().unwrap();
        let [cout, _, kh, kw] = kernel.shape()[..] else { unreachable!() };
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; cout * ho * wo];
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = bias.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    s += input.data()[ci * h * w + iy as usize * w + ix as usize]
                                        * kernel.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                    out[(co * ho + oy) * wo + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::from_vec(&[1, 2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &k, &b, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let x = Tensor::from_vec(&[2, 3, 3], (0..18).map(f64::from).collect()).unwrap();
        let k = Tensor::zeros(&[4, 2, 3, 3]);
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[4]), 1, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), &[4, 3, 3]);
    }

    #[test]
    fn all_ones_two_by_two() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::full(&[1, 1, 2, 2], 1.0);
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn matches_brute_force_with_stride_and_padding() {
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for &(cin, cout, h, w, kh, kw, s, p) in &[
            (2, 3, 5, 6, 3, 3, 1, 1),
            (3, 2, 8, 8, 4, 4, 2, 1),
            (1, 1, 4, 4, 3, 2, 2, 0),
            (2, 2, 3, 3, 1, 1, 1, 0),
        ] {
            let x = Tensor::from_vec(&[cin, h, w], (0..cin * h * w).map(|_| next()).collect()).unwrap();
            let k = Tensor::from_vec(
                &[cout, cin, kh, kw],
                (0..cout * cin * kh * kw).map(|_| next()).collect(),
            )
            .unwrap();
            let b = Tensor::from_vec(&[cout], (0..cout).map(|_| next()).collect()).unwrap();
            let fast = conv2d_forward(&x, &k, &b, s, p).unwrap();
            let slow = brute_conv(&x, &k, &b, s, p);
            for (a, e) in fast.data().iter().zip(&slow) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn shape_errors_name_dimensions() {
        let x = Tensor::<f32>::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap_err();
        assert!(err.to_string().contains("3 input channels"), "{err}");
        let k = Tensor::zeros(&[1, 2, 5, 5]);
        let err = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap_err();
        assert!(err.to_string().contains("kernel height 5"), "{err}");
    }

    #[test]
    fn upsample_then_pool_is_identity() {
        let x = Tensor::from_vec(&[2, 2, 3], (0..12).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let up = upsample2_forward(&x).unwrap();
        assert_eq!(up.shape(), &[2, 4, 6]);
        assert_eq!(up.mean_pool2().unwrap(), x);
    }
}
