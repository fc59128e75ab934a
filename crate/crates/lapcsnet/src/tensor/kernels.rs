//! Raw convolution kernels on flat row-major buffers.
//!
//! Every output element is reduced by a single sequential loop, so results
//! are bitwise identical for any worker count; parallelism only partitions
//! the independent output elements across threads.

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::Scalar;

/// Resolved geometry of a strided 2-d convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvShape {
    /// Validate input/weight dimensions and derive the output extent
    /// `out = floor((in + 2*pad - kernel) / stride) + 1`.
    pub fn resolve(
        input_dims: &[usize],
        weight_dims: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Argument("convolution stride must be positive".into()));
        }
        let [batch, in_channels, in_h, in_w] = four(input_dims, "conv2d input")?;
        let [out_channels, w_in, kernel_h, kernel_w] = four(weight_dims, "conv2d weight")?;
        if w_in != in_channels {
            return Err(Error::Shape(format!(
                "conv2d weight expects {} input channels, input has {}",
                w_in, in_channels
            )));
        }
        if in_h + 2 * pad < kernel_h || in_w + 2 * pad < kernel_w {
            return Err(Error::Shape(format!(
                "conv2d kernel {}x{} exceeds padded input {}x{}",
                kernel_h,
                kernel_w,
                in_h + 2 * pad,
                in_w + 2 * pad
            )));
        }
        let out_h = (in_h + 2 * pad - kernel_h) / stride + 1;
        let out_w = (in_w + 2 * pad - kernel_w) / stride + 1;
        Ok(ConvShape {
            batch,
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    pub fn output_dims(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h, self.out_w]
    }
}

/// Geometry of the fixed 2x transposed convolution (4x4 kernel, stride 2,
/// padding 1); the output is exactly twice the input in each direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpconvShape {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub const UPCONV_KERNEL: usize = 4;
pub const UPCONV_STRIDE: usize = 2;
pub const UPCONV_PAD: usize = 1;

impl UpconvShape {
    pub fn resolve(input_dims: &[usize], weight_dims: &[usize]) -> Result<Self> {
        let [batch, in_channels, in_h, in_w] = four(input_dims, "conv_transpose2d input")?;
        let [w_in, out_channels, kernel_h, kernel_w] = four(weight_dims, "conv_transpose2d weight")?;
        if kernel_h != UPCONV_KERNEL || kernel_w != UPCONV_KERNEL {
            return Err(Error::Argument(format!(
                "conv_transpose2d kernel must be {k}x{k}, got {kernel_h}x{kernel_w}",
                k = UPCONV_KERNEL
            )));
        }
        if w_in != in_channels {
            return Err(Error::Shape(format!(
                "conv_transpose2d weight expects {} input channels, input has {}",
                w_in, in_channels
            )));
        }
        Ok(UpconvShape {
            batch,
            in_channels,
            in_h,
            in_w,
            out_channels,
            out_h: 2 * in_h,
            out_w: 2 * in_w,
        })
    }

    pub fn output_dims(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h, self.out_w]
    }
}

fn four(dims: &[usize], what: &str) -> Result<[usize; 4]> {
    match dims {
        &[a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::Shape(format!("{what} must be 4-d, got {dims:?}"))),
    }
}

// Below ~64k multiply-adds the rayon dispatch overhead dominates.
const PAR_THRESHOLD: usize = 1 << 16;

fn maybe_par<T: Scalar>(
    out: &mut [T],
    chunk: usize,
    work_per_chunk: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    let chunks = out.len() / chunk.max(1);
    if chunks * work_per_chunk < PAR_THRESHOLD || chunks <= 1 {
        for (i, c) in out.chunks_mut(chunk).enumerate() {
            f(i, c);
        }
    } else {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Strided 2-d convolution with zero padding.
pub fn conv2d_forward<T: Scalar>(
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    s: &ConvShape,
) -> Vec<T> {
    let mut out = vec![T::zero(); s.batch * s.out_channels * s.out_h * s.out_w];
    let plane = s.out_h * s.out_w;
    let in_plane = s.in_h * s.in_w;
    let w_per_co = s.in_channels * s.kernel_h * s.kernel_w;
    let work = plane * w_per_co;
    maybe_par(&mut out, plane, work, |p, out_plane| {
        let n = p / s.out_channels;
        let co = p % s.out_channels;
        let b = bias.map_or(T::zero(), |b| b[co]);
        let w_base = co * w_per_co;
        for oh in 0..s.out_h {
            for ow in 0..s.out_w {
                let mut acc = b;
                for ci in 0..s.in_channels {
                    let in_base = (n * s.in_channels + ci) * in_plane;
                    let w_ci = w_base + ci * s.kernel_h * s.kernel_w;
                    for ki in 0..s.kernel_h {
                        let ih = (oh * s.stride + ki) as isize - s.pad as isize;
                        if ih < 0 || ih >= s.in_h as isize {
                            continue;
                        }
                        let row = in_base + ih as usize * s.in_w;
                        let w_row = w_ci + ki * s.kernel_w;
                        for kj in 0..s.kernel_w {
                            let iw = (ow * s.stride + kj) as isize - s.pad as isize;
                            if iw < 0 || iw >= s.in_w as isize {
                                continue;
                            }
                            acc = acc + input[row + iw as usize] * weight[w_row + kj];
                        }
                    }
                }
                out_plane[oh * s.out_w + ow] = acc;
            }
        }
    });
    out
}

/// Gradient of `conv2d_forward` with respect to its input.
pub fn conv2d_backward_input<T: Scalar>(grad_out: &[T], weight: &[T], s: &ConvShape) -> Vec<T> {
    let mut grad_in = vec![T::zero(); s.batch * s.in_channels * s.in_h * s.in_w];
    let in_plane = s.in_h * s.in_w;
    let out_plane = s.out_h * s.out_w;
    let k_area = s.kernel_h * s.kernel_w;
    let work = in_plane * s.out_channels * k_area / s.stride.max(1);
    maybe_par(&mut grad_in, in_plane, work, |p, gi_plane| {
        let n = p / s.in_channels;
        let ci = p % s.in_channels;
        for ih in 0..s.in_h {
            for iw in 0..s.in_w {
                let mut acc = T::zero();
                // Output positions whose receptive field covers (ih, iw).
                for ki in 0..s.kernel_h {
                    let oh_num = ih + s.pad;
                    if oh_num < ki || (oh_num - ki) % s.stride != 0 {
                        continue;
                    }
                    let oh = (oh_num - ki) / s.stride;
                    if oh >= s.out_h {
                        continue;
                    }
                    for kj in 0..s.kernel_w {
                        let ow_num = iw + s.pad;
                        if ow_num < kj || (ow_num - kj) % s.stride != 0 {
                            continue;
                        }
                        let ow = (ow_num - kj) / s.stride;
                        if ow >= s.out_w {
                            continue;
                        }
                        for co in 0..s.out_channels {
                            let g = grad_out[(n * s.out_channels + co) * out_plane
                                + oh * s.out_w
                                + ow];
                            let w = weight
                                [((co * s.in_channels + ci) * s.kernel_h + ki) * s.kernel_w + kj];
                            acc = acc + g * w;
                        }
                    }
                }
                gi_plane[ih * s.in_w + iw] = acc;
            }
        }
    });
    grad_in
}

/// Gradient of `conv2d_forward` with respect to its weight.
pub fn conv2d_backward_weight<T: Scalar>(grad_out: &[T], input: &[T], s: &ConvShape) -> Vec<T> {
    let per_co = s.in_channels * s.kernel_h * s.kernel_w;
    let mut grad_w = vec![T::zero(); s.out_channels * per_co];
    let in_plane = s.in_h * s.in_w;
    let out_plane = s.out_h * s.out_w;
    let work = per_co * s.batch * out_plane;
    maybe_par(&mut grad_w, per_co, work, |co, gw| {
        for ci in 0..s.in_channels {
            for ki in 0..s.kernel_h {
                for kj in 0..s.kernel_w {
                    let mut acc = T::zero();
                    for n in 0..s.batch {
                        let g_base = (n * s.out_channels + co) * out_plane;
                        let in_base = (n * s.in_channels + ci) * in_plane;
                        for oh in 0..s.out_h {
                            let ih = (oh * s.stride + ki) as isize - s.pad as isize;
                            if ih < 0 || ih >= s.in_h as isize {
                                continue;
                            }
                            let row = in_base + ih as usize * s.in_w;
                            let g_row = g_base + oh * s.out_w;
                            for ow in 0..s.out_w {
                                let iw = (ow * s.stride + kj) as isize - s.pad as isize;
                                if iw < 0 || iw >= s.in_w as isize {
                                    continue;
                                }
                                acc = acc + grad_out[g_row + ow] * input[row + iw as usize];
                            }
                        }
                    }
                    gw[(ci * s.kernel_h + ki) * s.kernel_w + kj] = acc;
                }
            }
        }
    });
    grad_w
}

/// Gradient of `conv2d_forward` with respect to its bias.
pub fn conv2d_backward_bias<T: Scalar>(grad_out: &[T], s: &ConvShape) -> Vec<T> {
    let out_plane = s.out_h * s.out_w;
    let mut grad_b = vec![T::zero(); s.out_channels];
    for (co, gb) in grad_b.iter_mut().enumerate() {
        let mut acc = T::zero();
        for n in 0..s.batch {
            let base = (n * s.out_channels + co) * out_plane;
            for v in &grad_out[base..base + out_plane] {
                acc = acc + *v;
            }
        }
        *gb = acc;
    }
    grad_b
}

/// 2x transposed convolution (4x4 kernel, stride 2, pad 1), computed as a
/// gather over the input positions contributing to each output pixel.
pub fn upconv_forward<T: Scalar>(
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    s: &UpconvShape,
) -> Vec<T> {
    let mut out = vec![T::zero(); s.batch * s.out_channels * s.out_h * s.out_w];
    let out_plane = s.out_h * s.out_w;
    let in_plane = s.in_h * s.in_w;
    let k = UPCONV_KERNEL;
    let work = out_plane * s.in_channels * 4;
    maybe_par(&mut out, out_plane, work, |p, out_plane_buf| {
        let n = p / s.out_channels;
        let co = p % s.out_channels;
        let b = bias.map_or(T::zero(), |b| b[co]);
        for oy in 0..s.out_h {
            for ox in 0..s.out_w {
                let mut acc = b;
                // oy = 2*ih - pad + ki  =>  ih = (oy + pad - ki) / 2
                for ki in 0..k {
                    let ih_num = oy as isize + UPCONV_PAD as isize - ki as isize;
                    if ih_num < 0 || ih_num % UPCONV_STRIDE as isize != 0 {
                        continue;
                    }
                    let ih = (ih_num / UPCONV_STRIDE as isize) as usize;
                    if ih >= s.in_h {
                        continue;
                    }
                    for kj in 0..k {
                        let iw_num = ox as isize + UPCONV_PAD as isize - kj as isize;
                        if iw_num < 0 || iw_num % UPCONV_STRIDE as isize != 0 {
                            continue;
                        }
                        let iw = (iw_num / UPCONV_STRIDE as isize) as usize;
                        if iw >= s.in_w {
                            continue;
                        }
                        for ci in 0..s.in_channels {
                            let x = input[(n * s.in_channels + ci) * in_plane + ih * s.in_w + iw];
                            let w = weight[((ci * s.out_channels + co) * k + ki) * k + kj];
                            acc = acc + x * w;
                        }
                    }
                }
                out_plane_buf[oy * s.out_w + ox] = acc;
            }
        }
    });
    out
}

/// Gradient of `upconv_forward` with respect to its input; this is exactly
/// the matching strided convolution applied to the output gradient.
pub fn upconv_backward_input<T: Scalar>(grad_out: &[T], weight: &[T], s: &UpconvShape) -> Vec<T> {
    let mut grad_in = vec![T::zero(); s.batch * s.in_channels * s.in_h * s.in_w];
    let in_plane = s.in_h * s.in_w;
    let out_plane = s.out_h * s.out_w;
    let k = UPCONV_KERNEL;
    let work = in_plane * s.out_channels * k * k;
    maybe_par(&mut grad_in, in_plane, work, |p, gi| {
        let n = p / s.in_channels;
        let ci = p % s.in_channels;
        for ih in 0..s.in_h {
            for iw in 0..s.in_w {
                let mut acc = T::zero();
                for ki in 0..k {
                    let oy = (ih * UPCONV_STRIDE + ki) as isize - UPCONV_PAD as isize;
                    if oy < 0 || oy >= s.out_h as isize {
                        continue;
                    }
                    for kj in 0..k {
                        let ox = (iw * UPCONV_STRIDE + kj) as isize - UPCONV_PAD as isize;
                        if ox < 0 || ox >= s.out_w as isize {
                            continue;
                        }
                        for co in 0..s.out_channels {
                            let g = grad_out[(n * s.out_channels + co) * out_plane
                                + oy as usize * s.out_w
                                + ox as usize];
                            let w = weight[((ci * s.out_channels + co) * k + ki) * k + kj];
                            acc = acc + g * w;
                        }
                    }
                }
                gi[ih * s.in_w + iw] = acc;
            }
        }
    });
    grad_in
}

/// Gradient of `upconv_forward` with respect to its weight.
pub fn upconv_backward_weight<T: Scalar>(grad_out: &[T], input: &[T], s: &UpconvShape) -> Vec<T> {
    let k = UPCONV_KERNEL;
    let per_ci = s.out_channels * k * k;
    let mut grad_w = vec![T::zero(); s.in_channels * per_ci];
    let in_plane = s.in_h * s.in_w;
    let out_plane = s.out_h * s.out_w;
    let work = per_ci * s.batch * in_plane;
    maybe_par(&mut grad_w, per_ci, work, |ci, gw| {
        for co in 0..s.out_channels {
            for ki in 0..k {
                for kj in 0..k {
                    let mut acc = T::zero();
                    for n in 0..s.batch {
                        let in_base = (n * s.in_channels + ci) * in_plane;
                        let g_base = (n * s.out_channels + co) * out_plane;
                        for ih in 0..s.in_h {
                            let oy = (ih * UPCONV_STRIDE + ki) as isize - UPCONV_PAD as isize;
                            if oy < 0 || oy >= s.out_h as isize {
                                continue;
                            }
                            for iw in 0..s.in_w {
                                let ox =
                                    (iw * UPCONV_STRIDE + kj) as isize - UPCONV_PAD as isize;
                                if ox < 0 || ox >= s.out_w as isize {
                                    continue;
                                }
                                acc = acc
                                    + input[in_base + ih * s.in_w + iw]
                                        * grad_out
                                            [g_base + oy as usize * s.out_w + ox as usize];
                            }
                        }
                    }
                    gw[(co * k + ki) * k + kj] = acc;
                }
            }
        }
    });
    grad_w
}

/// Permute `[N, k^2, gh, gw]` into `[N, 1, gh*k, gw*k]`: channel `c` of
/// grid cell `(u, v)` maps to pixel `(u*k + c/k, v*k + c%k)`.
pub fn block_merge<T: Copy>(input: &[T], batch: usize, k: usize, gh: usize, gw: usize) -> Vec<T> {
    let (out_h, out_w) = (gh * k, gw * k);
    let mut out = input.to_vec();
    for n in 0..batch {
        let in_base = n * k * k * gh * gw;
        let out_base = n * out_h * out_w;
        for c in 0..k * k {
            for u in 0..gh {
                for v in 0..gw {
                    let src = in_base + (c * gh + u) * gw + v;
                    let dst = out_base + (u * k + c / k) * out_w + v * k + c % k;
                    out[dst] = input[src];
                }
            }
        }
    }
    out
}

/// Inverse of [`block_merge`]: split `[N, 1, gh*k, gw*k]` back into
/// `[N, k^2, gh, gw]`.
pub fn block_split<T: Copy>(input: &[T], batch: usize, k: usize, gh: usize, gw: usize) -> Vec<T> {
    let (in_h, in_w) = (gh * k, gw * k);
    let mut out = input.to_vec();
    for n in 0..batch {
        let in_base = n * in_h * in_w;
        let out_base = n * k * k * gh * gw;
        for c in 0..k * k {
            for u in 0..gh {
                for v in 0..gw {
                    let src = in_base + (u * k + c / k) * in_w + v * k + c % k;
                    let dst = out_base + (c * gh + u) * gw + v;
                    out[dst] = input[src];
                }
            }
        }
    }
    out
}

/// Gradient of `upconv_forward` with respect to its bias.
pub fn upconv_backward_bias<T: Scalar>(grad_out: &[T], s: &UpconvShape) -> Vec<T> {
    let out_plane = s.out_h * s.out_w;
    let mut grad_b = vec![T::zero(); s.out_channels];
    for (co, gb) in grad_b.iter_mut().enumerate() {
        let mut acc = T::zero();
        for n in 0..s.batch {
            let base = (n * s.out_channels + co) * out_plane;
            for v in &grad_out[base..base + out_plane] {
                acc = acc + *v;
            }
        }
        *gb = acc;
    }
    grad_b
}
