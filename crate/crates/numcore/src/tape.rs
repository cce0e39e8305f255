use crate::ops::conv::{conv3d, conv3d_backward, Conv3dSpec};
use crate::ops::dense::{
    concat_cols, cosine_rows, cosine_rows_backward, linear, linear_backward, matrix_dims,
    slice_cols, softmax, softmax_backward, CosineSaved,
};
use crate::ops::norm::{batch_norm_backward, batch_norm_train, channel_affine, BatchStats};
use crate::{Float, NumError, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    Conv3d { x: Var, w: Var, spec: Conv3dSpec },
    BatchNorm { x: Var, gamma: Var, beta: Var, stats: BatchStats },
    ChannelAffine { x: Var, scale: Vec<F> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    ClampMin(Var, F),
    Relu(Var),
    SumAll(Var),
    MeanAll(Var),
    SumAxis { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
    Linear { x: Var, w: Var, b: Var },
    Concat(Var, Var),
    SliceCols { x: Var, start: usize },
    Softmax(Var),
    Pick { x: Var, idx: Vec<usize> },
    GatherRows { x: Var, idx: Vec<usize> },
    CosineRows { a: Var, b: Var, saved: CosineSaved },
    Reshape(Var),
    GlobalAvgPool(Var),
    Embedding { table: Var, ids: Vec<usize> },
    MaskedMean { x: Var, mask: Vec<bool>, counts: Vec<usize> },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Ordered record of differentiable operations.
///
/// Nodes are appended as operations execute, so every node's inputs precede
/// it. [`Tape::backward`] walks the record once in reverse. A tape belongs to
/// one thread; build a fresh tape per forward pass.
pub struct Tape<F: Float = f32> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Shape `[outer, axis, inner]` view of a tensor around one axis.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(NumError::dim("reduce", format!("axis {axis} of {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

fn removed_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect()
}

fn zip_map<F: Float>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Move a recorded value out, leaving a scalar zero behind. Only meaningful
    /// once the tape is finished, since later ops and `backward` read values.
    pub fn take_value(&mut self, v: Var) -> Tensor<F> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(F::zero()))
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(NumError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NumError::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn conv3d(&mut self, x: Var, w: Var, spec: Conv3dSpec) -> Result<Var> {
        let y = conv3d(self.value(x), self.value(w), spec)?;
        self.push("conv3d", y, Op::Conv3d { x, w, spec }, &[x, w])
    }

    /// Training-mode batch normalization; also returns the batch statistics.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let (y, stats) = batch_norm_train(self.value(x), self.value(gamma), self.value(beta))?;
        let v = self.push(
            "batch_norm",
            y,
            Op::BatchNorm { x, gamma, beta, stats: stats.clone() },
            &[x, gamma, beta],
        )?;
        Ok((v, stats))
    }

    /// `x * scale[c] + shift[c]` with constant per-channel coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: &[F], shift: &[F]) -> Result<Var> {
        let y = channel_affine(self.value(x), scale, shift)?;
        self.push("channel_affine", y, Op::ChannelAffine { x, scale: scale.to_vec() }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let y = zip_map(self.value(a), self.value(b), |x, y| x + y)?;
        self.push("add", y, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let y = zip_map(self.value(a), self.value(b), |x, y| x - y)?;
        self.push("sub", y, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let y = zip_map(self.value(a), self.value(b), |x, y| x * y)?;
        self.push("mul", y, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        let y = self.value(x).map(|v| v * c);
        self.push("scale", y, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: F) -> Result<Var> {
        let y = self.value(x).map(|v| v + c);
        self.push("add_scalar", y, Op::AddScalar(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(F::exp);
        self.push("exp", y, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= F::zero()) {
            return Err(NumError::degenerate("log", "non-positive argument"));
        }
        let y = self.value(x).map(F::ln);
        self.push("log", y, Op::Log(x), &[x])
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: F) -> Result<Var> {
        let y = self.value(x).map(|v| v.max(floor));
        self.push("clamp_min", y, Op::ClampMin(x, floor), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| v.max(F::zero()));
        self.push("relu", y, Op::Relu(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(F::of(self.value(x).sum_f64()));
        self.push("sum", y, Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let y = Tensor::scalar(F::of(t.sum_f64() / t.numel() as f64));
        self.push("mean", y, Op::MeanAll(x), &[x])
    }

    fn reduce_axis(&self, x: Var, axis: usize, divide: bool) -> Result<Tensor<F>> {
        let t = self.value(x);
        let (outer, len, inner) = axis_split(t.shape(), axis)?;
        let d = t.data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..len).map(|k| d[(o * len + k) * inner + i].as_f64()).sum();
                out.push(F::of(if divide { s / len as f64 } else { s }));
            }
        }
        let shape = removed_axis(t.shape(), axis);
        Tensor::new(&shape, out)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let y = self.reduce_axis(x, axis, false)?;
        self.push("sum_axis", y, Op::SumAxis { x, axis }, &[x])
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let y = self.reduce_axis(x, axis, true)?;
        self.push("mean_axis", y, Op::MeanAxis { x, axis }, &[x])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = linear(self.value(x), self.value(w), self.value(b))?;
        self.push("linear", y, Op::Linear { x, w, b }, &[x, w, b])
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = concat_cols(self.value(a), self.value(b))?;
        self.push("concat", y, Op::Concat(a, b), &[a, b])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = slice_cols(self.value(x), start, len)?;
        self.push("slice_cols", y, Op::SliceCols { x, start }, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let y = softmax(self.value(x))?;
        self.push("softmax", y, Op::Softmax(x), &[x])
    }

    /// `y[i] = x[i, idx[i]]` for a matrix `x`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = matrix_dims(self.value(x), "pick")?;
        if idx.len() != n || idx.iter().any(|&j| j >= m) {
            return Err(NumError::dim("pick", format!("indices {idx:?} into [{n}, {m}]")));
        }
        let d = self.value(x).data();
        let y = Tensor::new(&[n], idx.iter().enumerate().map(|(i, &j)| d[i * m + j]).collect())?;
        self.push("pick", y, Op::Pick { x, idx: idx.to_vec() }, &[x])
    }

    /// Rows `idx` of a matrix, in order, with repetition allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(x), "gather_rows")?;
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return Err(NumError::dim("gather_rows", format!("indices {idx:?} into {n} rows")));
        }
        let src = self.value(x).data();
        let data = idx.iter().flat_map(|&i| src[i * d..(i + 1) * d].iter().copied()).collect();
        let y = Tensor::new(&[idx.len(), d], data)?;
        self.push("gather_rows", y, Op::GatherRows { x, idx: idx.to_vec() }, &[x])
    }

    /// Cosine similarity of matching rows, `[M,D] x [M,D] -> [M]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (y, saved) = cosine_rows(self.value(a), self.value(b))?;
        self.push("cosine", y, Op::CosineRows { a, b, saved }, &[a, b])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        self.push("reshape", y, Op::Reshape(x), &[x])
    }

    /// Mean over every axis after the first two: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 3 {
            return Err(NumError::dim("global_avg_pool", format!("{:?}", t.shape())));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let s: usize = t.shape()[2..].iter().product();
        let data = t
            .data()
            .chunks_exact(s)
            .map(|p| F::of(p.iter().map(|v| v.as_f64()).sum::<f64>() / s as f64))
            .collect();
        let y = Tensor::new(&[n, c], data)?;
        self.push("global_avg_pool", y, Op::GlobalAvgPool(x), &[x])
    }

    /// Row lookup: `table[V,E]` with ids shaped `shape` gives `shape ++ [E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], shape: &[usize]) -> Result<Var> {
        let (v, e) = matrix_dims(self.value(table), "embedding")?;
        if ids.len() != shape.iter().product::<usize>() {
            return Err(NumError::dim("embedding", format!("{} ids for shape {shape:?}", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NumError::dim("embedding", format!("id {bad} outside vocabulary of {v}")));
        }
        let src = self.value(table).data();
        let data = ids.iter().flat_map(|&i| src[i * e..(i + 1) * e].iter().copied()).collect();
        let mut out_shape = shape.to_vec();
        out_shape.push(e);
        let y = Tensor::new(&out_shape, data)?;
        self.push("embedding", y, Op::Embedding { table, ids: ids.to_vec() }, &[table])
    }

    /// Mean over axis 1 of `x[N,L,E]` restricted to positions where `mask` is set.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(x);
        let [n, l, e] = *t.shape() else {
            return Err(NumError::dim("masked_mean", format!("{:?}", t.shape())));
        };
        if mask.len() != n * l {
            return Err(NumError::dim("masked_mean", format!("mask of {} for [{n}, {l}]", mask.len())));
        }
        let mut counts = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * e);
        for i in 0..n {
            let rows: Vec<usize> = (0..l).filter(|&j| mask[i * l + j]).collect();
            if rows.is_empty() {
                return Err(NumError::degenerate("masked_mean", format!("row {i} has no unmasked positions")));
            }
            for k in 0..e {
                let s: f64 = rows.iter().map(|&j| t.data()[(i * l + j) * e + k].as_f64()).sum();
                out.push(F::of(s / rows.len() as f64));
            }
            counts.push(rows.len());
        }
        let y = Tensor::new(&[n, e], out)?;
        self.push("masked_mean", y, Op::MaskedMean { x, mask: mask.to_vec(), counts }, &[x])
    }

    /// Reverse pass from a scalar `loss`. Leaf gradients stay available through
    /// [`Tape::grad`]; contributions from several uses of a value add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        let seed = Tensor::full(self.value(loss).shape(), F::one());
        self.grads[loss.0] = Some(seed);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            let Some(gy) = (if is_leaf { None } else { self.grads[i].take() }) else {
                continue;
            };
            for (target, g) in self.local_grads(i, &gy)? {
                self.accumulate(target, g)?;
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<F>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient contributions of node `i` to its inputs given its output gradient.
    fn local_grads(&self, i: usize, gy: &Tensor<F>) -> Result<Vec<(Var, Tensor<F>)>> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| self.value(v);
        let mut out = Vec::with_capacity(3);
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d { x, w, spec } => {
                let (dx, dw) =
                    conv3d_backward(val(*x), val(*w), gy, *spec, self.needs(*x), self.needs(*w))?;
                out.extend(dx.map(|d| (*x, d)));
                out.extend(dw.map(|d| (*w, d)));
            }
            Op::BatchNorm { x, gamma, beta, stats } => {
                let (dx, dg, db) = batch_norm_backward(val(*x), val(*gamma), gy, stats)?;
                out.push((*x, dx));
                out.push((*gamma, dg));
                out.push((*beta, db));
            }
            Op::ChannelAffine { x, scale } => {
                let zeros = vec![F::zero(); scale.len()];
                out.push((*x, channel_affine(gy, scale, &zeros)?));
            }
            Op::Add(a, b) => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.map(|g| -g)));
            }
            Op::Mul(a, b) => {
                out.push((*a, zip_map(gy, val(*b), |g, v| g * v)?));
                out.push((*b, zip_map(gy, val(*a), |g, v| g * v)?));
            }
            Op::Scale(x, c) => out.push((*x, gy.map(|g| g * *c))),
            Op::AddScalar(x) => out.push((*x, gy.clone())),
            Op::Exp(x) => out.push((*x, zip_map(gy, y, |g, v| g * v)?)),
            Op::Log(x) => out.push((*x, zip_map(gy, val(*x), |g, v| g / v)?)),
            Op::ClampMin(x, floor) => {
                out.push((*x, zip_map(gy, val(*x), |g, v| if v > *floor { g } else { F::zero() })?))
            }
            Op::Relu(x) => {
                out.push((*x, zip_map(gy, val(*x), |g, v| if v > F::zero() { g } else { F::zero() })?))
            }
            Op::SumAll(x) => out.push((*x, Tensor::full(val(*x).shape(), gy.data()[0]))),
            Op::MeanAll(x) => {
                let n = F::of(val(*x).numel() as f64);
                out.push((*x, Tensor::full(val(*x).shape(), gy.data()[0] / n)));
            }
            Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                let shape = val(*x).shape();
                let (outer, len, inner) = axis_split(shape, *axis)?;
                let div = if matches!(node.op, Op::MeanAxis { .. }) { len as f64 } else { 1.0 };
                let mut d = vec![F::zero(); outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        for j in 0..inner {
                            d[(o * len + k) * inner + j] = F::of(gy.data()[o * inner + j].as_f64() / div);
                        }
                    }
                }
                out.push((*x, Tensor::new(shape, d)?));
            }
            Op::Linear { x, w, b } => {
                let (dx, dw, db) = linear_backward(val(*x), val(*w), gy)?;
                out.push((*x, dx));
                out.push((*w, dw));
                out.push((*b, db));
            }
            Op::Concat(a, b) => {
                let d1 = val(*a).shape()[1];
                let d2 = val(*b).shape()[1];
                out.push((*a, slice_cols(gy, 0, d1)?));
                out.push((*b, slice_cols(gy, d1, d2)?));
            }
            Op::SliceCols { x, start } => {
                let (n, d) = matrix_dims(val(*x), "slice_cols")?;
                let len = gy.shape()[1];
                let mut dx = vec![F::zero(); n * d];
                for r in 0..n {
                    dx[r * d + start..r * d + start + len]
                        .copy_from_slice(&gy.data()[r * len..(r + 1) * len]);
                }
                out.push((*x, Tensor::new(&[n, d], dx)?));
            }
            Op::Softmax(x) => out.push((*x, softmax_backward(y, gy)?)),
            Op::Pick { x, idx } => {
                let (n, m) = matrix_dims(val(*x), "pick")?;
                let mut dx = vec![F::zero(); n * m];
                for (r, &j) in idx.iter().enumerate() {
                    dx[r * m + j] = gy.data()[r];
                }
                out.push((*x, Tensor::new(&[n, m], dx)?));
            }
            Op::GatherRows { x, idx } => {
                let (n, d) = matrix_dims(val(*x), "gather_rows")?;
                let mut dx = vec![F::zero(); n * d];
                for (r, &src) in idx.iter().enumerate() {
                    for k in 0..d {
                        dx[src * d + k] += gy.data()[r * d + k];
                    }
                }
                out.push((*x, Tensor::new(&[n, d], dx)?));
            }
            Op::CosineRows { a, b, saved } => {
                let (da, db) = cosine_rows_backward(val(*a), val(*b), y, gy, saved)?;
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::Reshape(x) => out.push((*x, gy.clone().reshape(val(*x).shape())?)),
            Op::GlobalAvgPool(x) => {
                let shape = val(*x).shape();
                let s: usize = shape[2..].iter().product();
                let dx = gy
                    .data()
                    .iter()
                    .flat_map(|&g| std::iter::repeat(F::of(g.as_f64() / s as f64)).take(s))
                    .collect();
                out.push((*x, Tensor::new(shape, dx)?));
            }
            Op::Embedding { table, ids } => {
                let (v, e) = matrix_dims(val(*table), "embedding")?;
                let mut dt = vec![F::zero(); v * e];
                for (r, &id) in ids.iter().enumerate() {
                    for k in 0..e {
                        dt[id * e + k] += gy.data()[r * e + k];
                    }
                }
                out.push((*table, Tensor::new(&[v, e], dt)?));
            }
            Op::MaskedMean { x, mask, counts } => {
                let shape = val(*x).shape();
                let (l, e) = (shape[1], shape[2]);
                let mut dx = vec![F::zero(); val(*x).numel()];
                for (pos, &on) in mask.iter().enumerate() {
                    if on {
                        let n = pos / l;
                        let c = F::of(counts[n] as f64);
                        for k in 0..e {
                            dx[pos * e + k] = gy.data()[n * e + k] / c;
                        }
                    }
                }
                out.push((*x, Tensor::new(shape, dx)?));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, -2.0, 3.0]).unwrap(), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::<f32>::new();
        let y = tape.leaf(Tensor::scalar(0.7), true);
        let z = tape.add(y, y).unwrap();
        tape.backward(z).unwrap();
        assert_eq!(tape.grad(y).unwrap().data(), &[2.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2]), true);
        assert!(matches!(tape.backward(x), Err(NumError::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let c = tape.constant(Tensor::full(&[2], 3.0));
        let x = tape.leaf(Tensor::full(&[2], 2.0), true);
        let p = tape.mul(c, x).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn log_of_zero_is_rejected_not_nan() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[1]), true);
        assert!(tape.log(x).is_err());
    }

    #[test]
    fn overflowing_exp_is_reported() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::full(&[1], 1000.0), true);
        assert!(matches!(tape.exp(x), Err(NumError::NonFinite { op: "exp" })));
    }

    #[test]
    fn repeated_passes_give_bit_identical_gradients() {
        let run = || {
            let mut tape = Tape::<f32>::new();
            let x = tape.leaf(Tensor::from_f64(&[2, 3], &[0.1, 0.2, -0.3, 0.4, -0.5, 0.6]).unwrap(), true);
            let s = tape.softmax(x).unwrap();
            let p = tape.pick(s, &[2, 0]).unwrap();
            let l = tape.log(p).unwrap();
            let m = tape.mean(l).unwrap();
            tape.backward(m).unwrap();
            tape.grad(x).unwrap().clone()
        };
        let (a, b) = (run(), run());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
