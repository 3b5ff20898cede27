//! 3×3 convolution (zero padding 1, stride 1 or 2) via im2col + GEMM, nearest
//! ×2 upsampling, and their exact adjoints.

use super::Scalar;

/// C×H×W activation, row-major per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Activation<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }
}

#[inline]
pub(crate) fn out_size(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

/// Output columns `lo..hi` whose tap `kx` lands inside a row of width `w`
/// (padding 1): `0 <= ox·stride + kx − 1 < w`.
#[inline]
fn valid_cols(kx: usize, w: usize, wo: usize, stride: usize) -> (usize, usize) {
    let lo = usize::from(kx == 0);
    let hi = ((w + 1 - kx).div_ceil(stride)).min(wo);
    (lo, hi.max(lo))
}

/// Column matrix of shape (cin·9) × (hout·wout).
pub(crate) fn im2col<T: Scalar>(x: &Activation<T>, stride: usize) -> (Vec<T>, usize, usize) {
    let (ho, wo) = (out_size(x.h, stride), out_size(x.w, stride));
    let p = ho * wo;
    let mut cols = vec![T::zero(); x.c * 9 * p];
    for ci in 0..x.c {
        let plane = &x.data[ci * x.h * x.w..(ci + 1) * x.h * x.w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    let (lo, hi) = valid_cols(kx, x.w, wo, stride);
                    if stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[lo + kx - 1..hi + kx - 1]);
                    } else {
                        for ox in lo..hi {
                            dst[ox] = src[ox * stride + kx - 1];
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub(crate) fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, stride: usize) -> Activation<T> {
    let (ho, wo) = (out_size(h, stride), out_size(w, stride));
    let p = ho * wo;
    let mut out = Activation::zeros(c, h, w);
    for ci in 0..c {
        let plane = &mut out.data[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[oy * wo..(oy + 1) * wo];
                    let (lo, hi) = valid_cols(kx, w, wo, stride);
                    for ox in lo..hi {
                        dst[ox * stride + kx - 1] += src[ox];
                    }
                }
            }
        }
    }
    out
}

/// `weight` is cout × (cin·9); returns the pre-activation output and the column matrix.
pub(crate) fn conv_forward<T: Scalar>(
    x: &Activation<T>,
    weight: &[T],
    bias: &[T],
    cout: usize,
    stride: usize,
) -> (Activation<T>, Vec<T>) {
    let (cols, ho, wo) = im2col(x, stride);
    let k = x.c * 9;
    let p = ho * wo;
    let mut out = vec![T::zero(); cout * p];
    for (co, row) in out.chunks_mut(p).enumerate() {
        row.iter_mut().for_each(|v| *v = bias[co]);
    }
    T::gemm(cout, k, p, weight, k as isize, 1, &cols, p as isize, 1, &mut out, p as isize, 1, true);
    (
        Activation {
            c: cout,
            h: ho,
            w: wo,
            data: out,
        },
        cols,
    )
}

/// Accumulates weight/bias gradients and optionally returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    grad_out: &[T],
    cols: &[T],
    weight: &[T],
    cin: usize,
    in_h: usize,
    in_w: usize,
    cout: usize,
    stride: usize,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    need_input_grad: bool,
) -> Option<Activation<T>> {
    let k = cin * 9;
    let p = grad_out.len() / cout;
    for (co, row) in grad_out.chunks(p).enumerate() {
        let mut s = T::zero();
        for v in row {
            s += *v;
        }
        grad_bias[co] += s;
    }
    // dW += dOut · colsᵀ
    T::gemm(cout, p, k, grad_out, p as isize, 1, cols, 1, p as isize, grad_weight, k as isize, 1, true);
    if !need_input_grad {
        return None;
    }
    // dCols = Wᵀ · dOut
    let mut dcols = vec![T::zero(); k * p];
    T::gemm(k, cout, p, weight, 1, k as isize, grad_out, p as isize, 1, &mut dcols, p as isize, 1, false);
    Some(col2im(&dcols, cin, in_h, in_w, stride))
}

pub(crate) fn upsample2<T: Scalar>(x: &Activation<T>) -> Activation<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Activation::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.data[(c * h + y) * w + xx] = x.data[(c * x.h + y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Scalar>(g: &Activation<T>) -> Activation<T> {
    let (h, w) = (g.h / 2, g.w / 2);
    let mut out = Activation::zeros(g.c, h, w);
    for c in 0..g.c {
        for y in 0..g.h {
            for x in 0..g.w {
                out.data[(c * h + y / 2) * w + x / 2] += g.data[(c * g.h + y) * g.w + x];
            }
        }
    }
    out
}
