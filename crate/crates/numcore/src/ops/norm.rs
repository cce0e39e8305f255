//! Batch normalization over `[N, C, ...]` layouts, statistics per channel.

use crate::{Float, NumError, Result, Tensor};

pub const BN_EPS: f64 = 1e-5;

/// Batch statistics saved by the training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Unbiased variance, used to update running estimates.
    pub var_unbiased: Vec<f64>,
}

fn layout<F: Float>(x: &Tensor<F>, op: &'static str) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(NumError::dim(op, format!("expected [N, C, ...], got {s:?}")));
    }
    Ok((s[0], s[1], s[2..].iter().product()))
}

fn check_channels<F: Float>(op: &'static str, c: usize, t: &Tensor<F>) -> Result<()> {
    if t.shape() != [c] {
        return Err(NumError::dim(op, format!("per-channel tensor {:?} for {c} channels", t.shape())));
    }
    Ok(())
}

pub fn batch_norm_train<F: Float>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
) -> Result<(Tensor<F>, BatchStats)> {
    let (n, c, s) = layout(x, "batch_norm")?;
    check_channels("batch_norm", c, gamma)?;
    check_channels("batch_norm", c, beta)?;
    let m = (n * s) as f64;
    let xd = x.data();
    let mut stats = BatchStats {
        mean: vec![0.0; c],
        inv_std: vec![0.0; c],
        var_unbiased: vec![0.0; c],
    };
    let mut out = vec![F::zero(); x.numel()];
    for ch in 0..c {
        let plane = |i: usize| &xd[(i * c + ch) * s..(i * c + ch + 1) * s];
        let sum: f64 = (0..n).flat_map(plane).map(|v| v.as_f64()).sum();
        let mean = sum / m;
        let sq: f64 = (0..n).flat_map(plane).map(|v| (v.as_f64() - mean).powi(2)).sum();
        let var = sq / m;
        let inv_std = 1.0 / (var + BN_EPS).sqrt();
        stats.mean[ch] = mean;
        stats.inv_std[ch] = inv_std;
        stats.var_unbiased[ch] = if m > 1.0 { sq / (m - 1.0) } else { 0.0 };
        let scale = gamma.data()[ch].as_f64() * inv_std;
        let shift = beta.data()[ch].as_f64() - mean * scale;
        for i in 0..n {
            let o = (i * c + ch) * s;
            for (dst, &v) in out[o..o + s].iter_mut().zip(plane(i)) {
                *dst = F::of(v.as_f64() * scale + shift);
            }
        }
    }
    Ok((Tensor::new(x.shape(), out)?, stats))
}

/// Returns `(dx, dgamma, dbeta)`, treating the batch statistics as functions of `x`.
pub(crate) fn batch_norm_backward<F: Float>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    gy: &Tensor<F>,
    stats: &BatchStats,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (n, c, s) = layout(x, "batch_norm")?;
    let m = (n * s) as f64;
    let (xd, gd) = (x.data(), gy.data());
    let mut dx = vec![F::zero(); x.numel()];
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for ch in 0..c {
        let (mean, inv_std) = (stats.mean[ch], stats.inv_std[ch]);
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for i in 0..n {
            let o = (i * c + ch) * s;
            for k in o..o + s {
                let g = gd[k].as_f64();
                sum_g += g;
                sum_gx += g * (xd[k].as_f64() - mean) * inv_std;
            }
        }
        dgamma[ch] = F::of(sum_gx);
        dbeta[ch] = F::of(sum_g);
        let coef = gamma.data()[ch].as_f64() * inv_std / m;
        for i in 0..n {
            let o = (i * c + ch) * s;
            for k in o..o + s {
                let xhat = (xd[k].as_f64() - mean) * inv_std;
                dx[k] = F::of(coef * (m * gd[k].as_f64() - sum_g - xhat * sum_gx));
            }
        }
    }
    Ok((
        Tensor::new(x.shape(), dx)?,
        Tensor::new(&[c], dgamma)?,
        Tensor::new(&[c], dbeta)?,
    ))
}

/// `y = x * scale[c] + shift[c]`; the inference-time form of batch normalization.
pub fn channel_affine<F: Float>(x: &Tensor<F>, scale: &[F], shift: &[F]) -> Result<Tensor<F>> {
    let (n, c, s) = layout(x, "channel_affine")?;
    if scale.len() != c || shift.len() != c {
        return Err(NumError::dim("channel_affine", format!("{c} channels")));
    }
    let mut out = x.data().to_vec();
    for i in 0..n {
        for ch in 0..c {
            let o = (i * c + ch) * s;
            for v in &mut out[o..o + s] {
                *v = *v * scale[ch] + shift[ch];
            }
        }
    }
    Tensor::new(x.shape(), out)
}
