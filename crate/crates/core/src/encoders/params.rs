//! Named parameter storage and binding of parameters onto a tape.

use numcore::{Float, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry<F> {
    name: String,
    value: Tensor<F>,
    trainable: bool,
}

/// Ordered, named tensors. Non-trainable entries hold buffers such as
/// batch-norm running statistics.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<F: Float = f32> {
    entries: Vec<Entry<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(Entry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), value: e.value.cast(), trainable: e.trainable })
                .collect(),
        }
    }

    /// SHA-256 over names, shapes and little-endian values of every entry.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for &d in e.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            h.update(F::to_le_bytes_vec(e.value.data()));
        }
        hex::encode(h.finalize())
    }

    /// Replace the value of `name`, which must keep its shape.
    pub fn set(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        let id = self.find(name).ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
        let slot = &mut self.entries[id.0].value;
        if slot.shape() != value.shape() {
            return Err(Error::Format(format!(
                "parameter {name}: shape {:?} does not match {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
        Ok(())
    }
}

/// Uniform `[-bound, bound]` tensor drawn from a stream keyed by `(seed, stream)`.
pub(crate) fn uniform_init(shape: &[usize], bound: f64, seed: u64, stream: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound) as f32).collect();
    Tensor::new(shape, data).expect("init shape")
}

/// How a forward pass uses batch normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are updated.
    Train,
    /// Running estimates as a fixed per-channel affine map.
    Eval,
}

/// Momentum of batch-norm running estimates.
pub const BN_MOMENTUM: f64 = 0.1;

enum Source<'s, F: Float> {
    Shared(&'s ParamStore<F>),
    Lent(&'s mut ParamStore<F>),
}

/// Puts parameters on a tape on first use.
///
/// A shared binder copies values in as constants and runs in [`Mode::Eval`].
/// A lending binder moves values onto the tape as gradient-carrying leaves and
/// runs in [`Mode::Train`]; [`Binder::finish`] must be called to return them.
pub struct Binder<'s, F: Float> {
    source: Source<'s, F>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    trace: Option<Vec<(String, Vec<usize>)>>,
}

impl<'s, F: Float> Binder<'s, F> {
    pub fn shared(store: &'s ParamStore<F>) -> Self {
        Binder { bound: vec![None; store.len()], source: Source::Shared(store), mode: Mode::Eval, trace: None }
    }

    pub fn lend(store: &'s mut ParamStore<F>) -> Self {
        Binder { bound: vec![None; store.len()], source: Source::Lent(store), mode: Mode::Train, trace: None }
    }

    /// Record activation shapes under stage names during forward passes.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<F> {
        match &self.source {
            Source::Shared(s) => s,
            Source::Lent(s) => s,
        }
    }

    pub fn var(&mut self, tape: &mut Tape<F>, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = match &mut self.source {
            Source::Shared(s) => tape.constant(s.get(id).clone()),
            Source::Lent(s) => {
                let trainable = s.is_trainable(id);
                let value = std::mem::replace(s.get_mut(id), Tensor::scalar(F::zero()));
                tape.leaf(value, trainable)
            }
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub(crate) fn record(&mut self, stage: &str, shape: &[usize]) {
        if let Some(t) = self.trace.as_mut() {
            t.push((stage.to_string(), shape.to_vec()));
        }
    }

    pub fn trace(&self) -> &[(String, Vec<usize>)] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Blend batch statistics into running estimates (train mode only).
    pub(crate) fn update_running(&mut self, mean: ParamId, var: ParamId, batch_mean: &[f64], batch_var: &[f64]) {
        if let Source::Lent(s) = &mut self.source {
            for (id, src) in [(mean, batch_mean), (var, batch_var)] {
                for (r, &b) in s.get_mut(id).data_mut().iter_mut().zip(src) {
                    *r = F::of((1.0 - BN_MOMENTUM) * r.as_f64() + BN_MOMENTUM * b);
                }
            }
        }
    }

    /// Return lent values to the store and collect gradients of the bound
    /// trainable parameters. Parameters without a gradient are omitted.
    pub fn finish(mut self, tape: &mut Tape<F>) -> Vec<(ParamId, Tensor<F>)> {
        let mut grads = Vec::new();
        for (i, v) in self.bound.iter().enumerate() {
            let Some(v) = *v else { continue };
            if let Source::Lent(s) = &mut self.source {
                *s.get_mut(ParamId(i)) = tape.take_value(v);
                if let Some(g) = tape.take_grad(v) {
                    grads.push((ParamId(i), g));
                }
            }
        }
        self.bound.clear();
        grads
    }
}

impl<F: Float> Drop for Binder<'_, F> {
    fn drop(&mut self) {
        let lent = matches!(self.source, Source::Lent(_));
        debug_assert!(
            !lent || self.bound.iter().all(Option::is_none) || std::thread::panicking(),
            "lending binder dropped without finish"
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lend_and_finish_round_trip() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::new(&[2], vec![1.0, -2.0]).unwrap(), true);
        let buf = store.add("buf", Tensor::new(&[1], vec![5.0]).unwrap(), false);
        let before = store.clone();
        let mut tape = Tape::new();
        let mut b = Binder::lend(&mut store);
        let va = b.var(&mut tape, a);
        assert_eq!(b.var(&mut tape, a), va);
        let vb = b.var(&mut tape, buf);
        let s = tape.mul(va, va).unwrap();
        let s = tape.sum(s).unwrap();
        let vb = tape.sum(vb).unwrap();
        let s = tape.add(s, vb).unwrap();
        tape.backward(s).unwrap();
        let grads = b.finish(&mut tape);
        assert_eq!(store, before);
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].0, a);
        assert_eq!(grads[0].1.data(), &[2.0, -4.0]);
    }

    #[test]
    fn checksum_tracks_values() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::full(&[3], 1.0), true);
        let c0 = s.checksum();
        assert_eq!(c0, s.clone().checksum());
        s.set("w", Tensor::full(&[3], 2.0)).unwrap();
        assert_ne!(c0, s.checksum());
        assert!(s.set("w", Tensor::full(&[4], 2.0)).is_err());
        assert!(s.set("missing", Tensor::full(&[3], 2.0)).is_err());
    }

    #[test]
    fn init_streams_are_independent_of_order() {
        let a = uniform_init(&[4], 0.5, 9, 3);
        let b = uniform_init(&[4], 0.5, 9, 3);
        assert_eq!(a, b);
        assert_ne!(a, uniform_init(&[4], 0.5, 9, 4));
        assert!(a.data().iter().all(|v| v.abs() <= 0.5));
    }
}
