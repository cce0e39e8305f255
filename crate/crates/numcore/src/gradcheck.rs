//! Central finite-difference reference for gradient checks.
//!
//! The numeric side only ever evaluates forward passes in `f64`; it never
//! looks at what `Tape::backward` produced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Result, Tape, Tensor, Var};

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// `(f(+h) - f(-h)) / 2h`, where `f(delta)` evaluates the function with the
/// probed coordinate shifted by `delta`.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, step: f64) -> Result<f64> {
    let plus = f(step)?;
    let minus = f(-step)?;
    Ok((plus - minus) / (2.0 * step))
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub probes: Vec<Probe>,
}

impl Report {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        !self.probes.is_empty() && self.max_rel_err() < tol
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CheckConfig {
    pub probes: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { probes: 20, step: 1e-3, seed: 0 }
    }
}

/// Pick `count` random coordinates across tensors with the given sizes,
/// without repetition when enough coordinates exist.
pub fn sample_coordinates(sizes: &[usize], count: usize, seed: u64) -> Vec<(usize, usize)> {
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat: Vec<usize> = Vec::with_capacity(count);
    while flat.len() < count.min(total) {
        let k = rng.gen_range(0..total);
        if !flat.contains(&k) {
            flat.push(k);
        }
    }
    while flat.len() < count {
        flat.push(rng.gen_range(0..total));
    }
    flat.into_iter()
        .map(|mut k| {
            let mut t = 0;
            while k >= sizes[t] {
                k -= sizes[t];
                t += 1;
            }
            (t, k)
        })
        .collect()
}

/// Compare tape gradients of a scalar function of `inputs` against central
/// differences at randomly chosen coordinates.
pub fn check_function<B>(inputs: &[Tensor<f64>], build: B, cfg: CheckConfig) -> Result<Report>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let sizes: Vec<usize> = inputs.iter().map(Tensor::numel).collect();
    let mut report = Report::default();
    for (input, index) in sample_coordinates(&sizes, cfg.probes, cfg.seed) {
        let numeric = central_difference(
            |delta| {
                let mut shifted = inputs.to_vec();
                shifted[input].data_mut()[index] += delta;
                let mut tape = Tape::new();
                let vars: Vec<Var> = shifted.into_iter().map(|t| tape.constant(t)).collect();
                let out = build(&mut tape, &vars)?;
                tape.value(out).item()
            },
            cfg.step,
        )?;
        let a = analytic[input].data()[index];
        report.probes.push(Probe {
            input,
            index,
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric),
        });
    }
    Ok(report)
}
