//! Row-wise kernels on rank-2 tensors: affine maps, softmax, cosine similarity,
//! column concatenation.

use crate::float::{gemm, Mat};
use crate::{Float, NumError, Result, Tensor};

pub(crate) fn matrix_dims<F: Float>(t: &Tensor<F>, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(NumError::dim(op, format!("expected a matrix, got {:?}", t.shape()))),
    }
}

/// `x[N,D] * w[D,E] + b[E]`.
pub fn linear<F: Float>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, d) = matrix_dims(x, "linear")?;
    let (d2, e) = matrix_dims(w, "linear")?;
    if d != d2 || b.shape() != [e] {
        return Err(NumError::dim(
            "linear",
            format!("input {:?}, weight {:?}, bias {:?}", x.shape(), w.shape(), b.shape()),
        ));
    }
    let mut out: Vec<F> = (0..n).flat_map(|_| b.data().iter().copied()).collect();
    gemm(Mat::new(x.data(), n, d), Mat::new(w.data(), d, e), F::one(), &mut out);
    Tensor::new(&[n, e], out)
}

/// Returns `(dx, dw, db)` for [`linear`].
pub(crate) fn linear_backward<F: Float>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    gy: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (n, d) = matrix_dims(x, "linear")?;
    let (_, e) = matrix_dims(w, "linear")?;
    let mut dx = vec![F::zero(); n * d];
    gemm(Mat::new(gy.data(), n, e), Mat::new(w.data(), d, e).t(), F::zero(), &mut dx);
    let mut dw = vec![F::zero(); d * e];
    gemm(Mat::new(x.data(), n, d).t(), Mat::new(gy.data(), n, e), F::zero(), &mut dw);
    let db = (0..e)
        .map(|j| F::of((0..n).map(|i| gy.data()[i * e + j].as_f64()).sum()))
        .collect();
    Ok((Tensor::new(&[n, d], dx)?, Tensor::new(&[d, e], dw)?, Tensor::new(&[e], db)?))
}

/// Row-wise softmax with max subtraction.
pub fn softmax<F: Float>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, m) = matrix_dims(x, "softmax")?;
    let mut out = vec![F::zero(); n * m];
    for (row, dst) in x.data().chunks_exact(m).zip(out.chunks_exact_mut(m)) {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (d, e) in dst.iter_mut().zip(exps) {
            *d = F::of(e / total);
        }
    }
    Tensor::new(&[n, m], out)
}

pub(crate) fn softmax_backward<F: Float>(y: &Tensor<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, m) = matrix_dims(y, "softmax")?;
    let mut dx = vec![F::zero(); n * m];
    for ((yr, gr), dr) in y
        .data()
        .chunks_exact(m)
        .zip(gy.data().chunks_exact(m))
        .zip(dx.chunks_exact_mut(m))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
            *d = F::of(yv.as_f64() * (gv.as_f64() - dot));
        }
    }
    Tensor::new(&[n, m], dx)
}

/// Saved norms for the cosine backward pass.
#[derive(Clone, Debug)]
pub struct CosineSaved {
    pub norm_a: Vec<f64>,
    pub norm_b: Vec<f64>,
}

/// Cosine similarity of matching rows of `a[M,D]` and `b[M,D]`, giving `[M]`.
pub fn cosine_rows<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<(Tensor<F>, CosineSaved)> {
    let (m, d) = matrix_dims(a, "cosine")?;
    if a.shape() != b.shape() {
        return Err(NumError::dim("cosine", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut saved = CosineSaved { norm_a: Vec::with_capacity(m), norm_b: Vec::with_capacity(m) };
    let mut out = Vec::with_capacity(m);
    for (i, (ra, rb)) in a.data().chunks_exact(d).zip(b.data().chunks_exact(d)).enumerate() {
        let na = ra.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        let nb = rb.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(NumError::degenerate("cosine", format!("zero-norm vector in row {i}")));
        }
        let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
        out.push(F::of((dot / (na * nb)).clamp(-1.0, 1.0)));
        saved.norm_a.push(na);
        saved.norm_b.push(nb);
    }
    Ok((Tensor::new(&[m], out)?, saved))
}

pub(crate) fn cosine_rows_backward<F: Float>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    y: &Tensor<F>,
    gy: &Tensor<F>,
    saved: &CosineSaved,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (_, d) = matrix_dims(a, "cosine")?;
    let mut da = vec![F::zero(); a.numel()];
    let mut db = vec![F::zero(); b.numel()];
    let rows = a.data().chunks_exact(d).zip(b.data().chunks_exact(d));
    for (i, (ra, rb)) in rows.enumerate() {
        let (na, nb) = (saved.norm_a[i], saved.norm_b[i]);
        let (c, g) = (y.data()[i].as_f64(), gy.data()[i].as_f64());
        for j in 0..d {
            let (x, z) = (ra[j].as_f64(), rb[j].as_f64());
            da[i * d + j] = F::of(g * (z / (na * nb) - c * x / (na * na)));
            db[i * d + j] = F::of(g * (x / (na * nb) - c * z / (nb * nb)));
        }
    }
    Ok((Tensor::new(a.shape(), da)?, Tensor::new(b.shape(), db)?))
}

/// Cosine similarity of two vectors of equal length.
pub fn cosine_similarity<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<f64> {
    if a.rank() != 1 || a.shape() != b.shape() {
        return Err(NumError::dim("cosine", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let d = a.numel();
    let (y, _) = cosine_rows(&a.clone().reshape(&[1, d])?, &b.clone().reshape(&[1, d])?)?;
    Ok(y.data()[0].as_f64())
}

/// `[N,D1] ++ [N,D2] -> [N,D1+D2]`.
pub fn concat_cols<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, d1) = matrix_dims(a, "concat")?;
    let (n2, d2) = matrix_dims(b, "concat")?;
    if n != n2 {
        return Err(NumError::dim("concat", format!("leading extents {n} and {n2}")));
    }
    let mut out = Vec::with_capacity(n * (d1 + d2));
    for (ra, rb) in a.data().chunks_exact(d1).zip(b.data().chunks_exact(d2)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    Tensor::new(&[n, d1 + d2], out)
}

/// Columns `start..start+len` of a matrix.
pub fn slice_cols<F: Float>(x: &Tensor<F>, start: usize, len: usize) -> Result<Tensor<F>> {
    let (n, d) = matrix_dims(x, "slice_cols")?;
    if len == 0 || start + len > d {
        return Err(NumError::dim("slice_cols", format!("{start}..{} of {d}", start + len)));
    }
    let out = x.data().chunks_exact(d).flat_map(|r| r[start..start + len].iter().copied()).collect();
    Tensor::new(&[n, len], out)
}
