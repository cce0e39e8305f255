//! 3D convolution over `[N, C, T, H, W]` inputs with `[F, C, kt, kh, kw]` kernels.
//!
//! [`conv3d`] lowers each sample to a column matrix and multiplies it with the
//! flattened kernel; [`conv3d_direct`] is the plain seven-loop definition and
//! serves as the reference the lowered path is tested against.

use crate::float::{gemm, Mat};
use crate::{Float, NumError, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dSpec {
    pub fn new(stride: [usize; 3], padding: [usize; 3]) -> Self {
        Conv3dSpec { stride, padding }
    }
}

/// Output extent along one axis: `floor((len + 2 pad - k) / stride) + 1`.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (stride >= 1 && k >= 1 && padded >= k).then(|| (padded - k) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub input: [usize; 3],
    pub f: usize,
    pub k: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub out: [usize; 3],
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], spec: Conv3dSpec) -> Result<Self> {
        if x.len() != 5 || w.len() != 5 {
            return Err(NumError::dim(
                "conv3d",
                format!("expected rank-5 input and kernel, got {x:?} and {w:?}"),
            ));
        }
        if x[1] != w[1] {
            return Err(NumError::dim(
                "conv3d",
                format!("input has {} channels, kernel expects {}", x[1], w[1]),
            ));
        }
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = conv_out_len(x[2 + a], w[2 + a], spec.stride[a], spec.padding[a])
                .ok_or_else(|| {
                    NumError::dim(
                        "conv3d",
                        format!(
                            "kernel {:?} does not fit input {:?} with stride {:?} padding {:?}",
                            &w[2..],
                            &x[2..],
                            spec.stride,
                            spec.padding
                        ),
                    )
                })?;
        }
        Ok(ConvGeom {
            n: x[0],
            c: x[1],
            input: [x[2], x[3], x[4]],
            f: w[0],
            k: [w[2], w[3], w[4]],
            stride: spec.stride,
            pad: spec.padding,
            out,
        })
    }

    pub fn out_shape(&self) -> [usize; 5] {
        [self.n, self.f, self.out[0], self.out[1], self.out[2]]
    }

    fn in_len(&self) -> usize {
        self.c * self.input.iter().product::<usize>()
    }

    fn col_rows(&self) -> usize {
        self.c * self.k.iter().product::<usize>()
    }

    fn col_cols(&self) -> usize {
        self.out.iter().product()
    }
}

/// Range of output positions along one axis whose input index `o*s + d - p` is in `[0, len)`.
#[inline]
fn valid_range(out: usize, len: usize, s: usize, d: usize, p: usize) -> (usize, usize) {
    let lo = if p > d { (p - d).div_ceil(s) } else { 0 };
    let hi = if len + p > d { ((len + p - d - 1) / s + 1).min(out) } else { 0 };
    (lo.min(out), hi.max(lo.min(out)))
}

/// Visit the in-bounds taps of one sample as runs along W:
/// `visit(row, col_start, input_start, count)`. Column slots that read padding are
/// never visited.
#[inline]
fn for_each_tap<F: FnMut(usize, usize, usize, usize)>(g: &ConvGeom, mut visit: F) {
    let [t, h, w] = g.input;
    let [kt, kh, kw] = g.k;
    let [ot, oh, ow] = g.out;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let p = ot * oh * ow;
    let mut row = 0;
    for c in 0..g.c {
        let base_c = c * t * h * w;
        for dt in 0..kt {
            let (t_lo, t_hi) = valid_range(ot, t, st, dt, pt);
            for dh in 0..kh {
                let (h_lo, h_hi) = valid_range(oh, h, sh, dh, ph);
                for dw in 0..kw {
                    let (w_lo, w_hi) = valid_range(ow, w, sw, dw, pw);
                    if w_hi > w_lo {
                        for o_t in t_lo..t_hi {
                            let it = o_t * st + dt - pt;
                            for o_h in h_lo..h_hi {
                                let ih = o_h * sh + dh - ph;
                                let col = row * p + (o_t * oh + o_h) * ow + w_lo;
                                let src = base_c + (it * h + ih) * w + (w_lo * sw + dw - pw);
                                visit(row, col, src, w_hi - w_lo);
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn im2col<F: Float>(x: &[F], g: &ConvGeom, col: &mut [F]) {
    col.fill(F::zero());
    let sw = g.stride[2];
    for_each_tap(g, |_, dst, src, count| {
        if sw == 1 {
            col[dst..dst + count].copy_from_slice(&x[src..src + count]);
        } else {
            for i in 0..count {
                col[dst + i] = x[src + i * sw];
            }
        }
    });
}

fn col2im<F: Float>(col: &[F], g: &ConvGeom, dx: &mut [F]) {
    let sw = g.stride[2];
    for_each_tap(g, |_, src, dst, count| {
        for i in 0..count {
            dx[dst + i * sw] += col[src + i];
        }
    });
}

/// Convolution through column lowering and matrix multiplication.
pub fn conv3d<F: Float>(x: &Tensor<F>, w: &Tensor<F>, spec: Conv3dSpec) -> Result<Tensor<F>> {
    let g = ConvGeom::new(x.shape(), w.shape(), spec)?;
    let (rows, p) = (g.col_rows(), g.col_cols());
    let mut out = vec![F::zero(); g.n * g.f * p];
    let mut col = vec![F::zero(); rows * p];
    for n in 0..g.n {
        let xn = &x.data()[n * g.in_len()..(n + 1) * g.in_len()];
        im2col(xn, &g, &mut col);
        gemm(
            Mat::new(w.data(), g.f, rows),
            Mat::new(&col, rows, p),
            F::zero(),
            &mut out[n * g.f * p..(n + 1) * g.f * p],
        );
    }
    Tensor::new(&g.out_shape(), out)
}

/// Gradients of [`conv3d`] with respect to its input and/or kernel.
pub(crate) fn conv3d_backward<F: Float>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    gy: &Tensor<F>,
    spec: Conv3dSpec,
    need_dx: bool,
    need_dw: bool,
) -> Result<(Option<Tensor<F>>, Option<Tensor<F>>)> {
    let g = ConvGeom::new(x.shape(), w.shape(), spec)?;
    let (rows, p) = (g.col_rows(), g.col_cols());
    let mut dx = need_dx.then(|| vec![F::zero(); x.numel()]);
    let mut dw = need_dw.then(|| vec![F::zero(); w.numel()]);
    let mut col = vec![F::zero(); rows * p];
    for n in 0..g.n {
        let gyn = &gy.data()[n * g.f * p..(n + 1) * g.f * p];
        if let Some(dw) = dw.as_mut() {
            let xn = &x.data()[n * g.in_len()..(n + 1) * g.in_len()];
            im2col(xn, &g, &mut col);
            gemm(Mat::new(gyn, g.f, p), Mat::new(&col, rows, p).t(), F::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(Mat::new(w.data(), g.f, rows).t(), Mat::new(gyn, g.f, p), F::zero(), &mut col);
            col2im(&col, &g, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
        }
    }
    Ok((
        dx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
        dw.map(|d| Tensor::new(w.shape(), d)).transpose()?,
    ))
}

/// Reference convolution evaluated straight from the definition, accumulating in f64.
pub fn conv3d_direct<F: Float>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    spec: Conv3dSpec,
) -> Result<Tensor<F>> {
    let g = ConvGeom::new(x.shape(), w.shape(), spec)?;
    let [t, h, wd] = g.input;
    let [kt, kh, kw] = g.k;
    let [ot, oh, ow] = g.out;
    let mut out = Vec::with_capacity(g.n * g.f * ot * oh * ow);
    let xd = x.data();
    let wdat = w.data();
    for n in 0..g.n {
        for f in 0..g.f {
            for o_t in 0..ot {
                for o_h in 0..oh {
                    for o_w in 0..ow {
                        let mut acc = 0.0f64;
                        for c in 0..g.c {
                            for dt in 0..kt {
                                let it = (o_t * g.stride[0] + dt) as isize - g.pad[0] as isize;
                                if it < 0 || it >= t as isize {
                                    continue;
                                }
                                for dh in 0..kh {
                                    let ih =
                                        (o_h * g.stride[1] + dh) as isize - g.pad[1] as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    for dw in 0..kw {
                                        let iw =
                                            (o_w * g.stride[2] + dw) as isize - g.pad[2] as isize;
                                        if iw < 0 || iw >= wd as isize {
                                            continue;
                                        }
                                        let xi = (((n * g.c + c) * t + it as usize) * h
                                            + ih as usize)
                                            * wd
                                            + iw as usize;
                                        let wi = (((f * g.c + c) * kt + dt) * kh + dh) * kw + dw;
                                        acc += xd[xi].as_f64() * wdat[wi].as_f64();
                                    }
                                }
                            }
                        }
                        out.push(F::of(acc));
                    }
                }
            }
        }
    }
    Tensor::new(&g.out_shape(), out)
}
