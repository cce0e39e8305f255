//! Cross-modal contrastive loss, classification cross-entropy and their
//! weighted combination.
//!
//! Tape builders take fused video features `z_m [B, D]` and attribute features
//! `z_a [B, D]`; row `i` of both belongs to the same sample.

use numcore::ops::cosine_similarity;
use numcore::{Float, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Probability floor inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Negatives are attribute features of samples from another class.
    #[default]
    DifferentClass,
    /// Any other sample is a negative.
    DifferentSample,
}

/// One positive per anchor row plus `k` negative attribute rows for each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairBatch {
    pub sample_ids: Vec<u64>,
    /// `negatives[i]` holds the attribute rows paired against anchor `i`.
    pub negatives: Vec<Vec<usize>>,
}

impl PairBatch {
    /// In-batch negatives for every anchor. `k` is the largest count every
    /// anchor can satisfy, capped at `k_max`; candidates are taken cyclically
    /// starting after the anchor.
    pub fn build(sample_ids: &[u64], class_ids: &[usize], k_max: usize, mode: NegativeMode) -> Result<Self> {
        let b = sample_ids.len();
        if class_ids.len() != b {
            return Err(Error::Contract(format!("{b} sample ids but {} class ids", class_ids.len())));
        }
        let candidates: Vec<Vec<usize>> = (0..b)
            .map(|i| {
                (1..b)
                    .map(|o| (i + o) % b)
                    .filter(|&j| sample_ids[j] != sample_ids[i])
                    .filter(|&j| mode == NegativeMode::DifferentSample || class_ids[j] != class_ids[i])
                    .collect()
            })
            .collect();
        let k = candidates.iter().map(Vec::len).min().unwrap_or(0).min(k_max);
        let negatives = candidates.into_iter().map(|mut c| {
            c.truncate(k);
            c
        });
        Ok(PairBatch { sample_ids: sample_ids.to_vec(), negatives: negatives.collect() })
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn k(&self) -> usize {
        self.negatives.first().map_or(0, Vec::len)
    }

    /// Every negative refers to a different sample and `k` is uniform.
    pub fn is_valid(&self) -> bool {
        let k = self.k();
        self.negatives.len() == self.sample_ids.len()
            && self.negatives.iter().enumerate().all(|(i, negs)| {
                negs.len() == k
                    && negs.iter().all(|&j| j < self.sample_ids.len() && self.sample_ids[j] != self.sample_ids[i])
            })
    }
}

/// `exp(cos(z_m, z_a))`, in `[1/e, e]`.
pub fn pair_distance<F: Float>(z_m: &Tensor<F>, z_a: &Tensor<F>) -> Result<f64> {
    Ok(cosine_similarity(z_m, z_a)?.exp())
}

/// Mean over anchors of `-ln(d_pos / (d_pos + sum d_neg))` from precomputed distances.
pub fn contrastive_from_distances(positive: &[f64], negatives: &[Vec<f64>]) -> Result<f64> {
    if positive.is_empty() || positive.len() != negatives.len() {
        return Err(Error::Contract("one negative list per positive required".into()));
    }
    let total: f64 = positive
        .iter()
        .zip(negatives)
        .map(|(&d, negs)| (1.0 + negs.iter().map(|&n| n / d).sum::<f64>()).ln())
        .sum();
    Ok(total / positive.len() as f64)
}

/// Contrastive loss on the tape. Each anchor's term is written as
/// `ln(1 + sum_j exp(cos_neg_j - cos_pos))`, which equals the distance-ratio
/// form and is exactly zero when `k = 0`.
pub fn contrastive_loss<F: Float>(tape: &mut Tape<F>, z_m: Var, z_a: Var, batch: &PairBatch) -> Result<Var> {
    let b = tape.value(z_m).shape()[0];
    if batch.len() != b || !batch.is_valid() {
        return Err(Error::Contract(format!("pair batch of {} does not match {b} feature rows", batch.len())));
    }
    let pos = tape.cosine_rows(z_m, z_a)?;
    let k = batch.k();
    if k == 0 {
        let m = tape.mean(pos)?;
        return Ok(tape.scale(m, F::of(0.0))?);
    }
    let anchor_rows: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat(i).take(k)).collect();
    let neg_rows: Vec<usize> = batch.negatives.iter().flatten().copied().collect();
    let zm_rep = tape.gather_rows(z_m, &anchor_rows)?;
    let za_neg = tape.gather_rows(z_a, &neg_rows)?;
    let neg = tape.cosine_rows(zm_rep, za_neg)?;
    let neg = tape.reshape(neg, &[b, k])?;
    let pos_col = tape.reshape(pos, &[b, 1])?;
    let pos_rep = tape.gather_rows(pos_col, &anchor_rows)?;
    let pos_rep = tape.reshape(pos_rep, &[b, k])?;
    let diff = tape.sub(neg, pos_rep)?;
    let e = tape.exp(diff)?;
    let s = tape.sum_axis(e, 1)?;
    let s = tape.add_scalar(s, F::of(1.0))?;
    let l = tape.log(s)?;
    Ok(tape.mean(l)?)
}

/// `-ln pred[class]` with the probability floored at [`PROB_FLOOR`].
pub fn cross_entropy_value(pred: &[f64], class: usize) -> Result<f64> {
    let p = pred
        .get(class)
        .ok_or_else(|| Error::Contract(format!("class {class} outside {} classes", pred.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Mean cross-entropy of probability rows `probs [B, n]` against `classes`.
pub fn cross_entropy<F: Float>(tape: &mut Tape<F>, probs: Var, classes: &[usize]) -> Result<Var> {
    let shape = tape.value(probs).shape().to_vec();
    if shape.len() != 2 || classes.len() != shape[0] {
        return Err(Error::Contract(format!("{} labels for probabilities {shape:?}", classes.len())));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= shape[1]) {
        return Err(Error::Contract(format!("class {c} outside {} classes", shape[1])));
    }
    let p = tape.pick(probs, classes)?;
    let p = tape.clamp_min(p, F::of(PROB_FLOOR))?;
    let l = tape.log(p)?;
    let m = tape.mean(l)?;
    Ok(tape.scale(m, F::of(-1.0))?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    alpha: f64,
}

impl LossWeights {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(LossWeights { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// `(1 - alpha)(l_theta + l_phi) + alpha * l_contrast`.
pub fn total_loss_value(l_theta: f64, l_phi: f64, l_contrast: f64, w: LossWeights) -> Result<f64> {
    if ![l_theta, l_phi, l_contrast].iter().all(|v| v.is_finite()) {
        return Err(Error::Contract("loss components must be finite".into()));
    }
    Ok((1.0 - w.alpha) * (l_theta + l_phi) + w.alpha * l_contrast)
}

pub fn total_loss<F: Float>(tape: &mut Tape<F>, l_theta: Var, l_phi: Var, l_contrast: Var, w: LossWeights) -> Result<Var> {
    let cls = tape.add(l_theta, l_phi)?;
    let cls = tape.scale(cls, F::of(1.0 - w.alpha))?;
    let con = tape.scale(l_contrast, F::of(w.alpha))?;
    Ok(tape.add(cls, con)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn distance_examples() {
        let z = t(&[0.3, -1.2, 2.0]);
        assert!((pair_distance(&z, &z).unwrap() - E).abs() < 1e-12);
        assert!((pair_distance(&z, &z.map(|v| -v)).unwrap() - 1.0 / E).abs() < 1e-12);
        assert!((pair_distance(&t(&[1.0, 0.0]), &t(&[0.0, 3.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(pair_distance(&z, &t(&[0.0; 3])), Err(Error::Num(_))));
    }

    #[test]
    fn distance_ratio_examples() {
        assert_eq!(contrastive_from_distances(&[E], &[vec![]]).unwrap(), 0.0);
        let l = contrastive_from_distances(&[1.3], &[vec![1.3; 3]]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        // ln(1 + 2 e^-2) = 0.2395447...
        let l = contrastive_from_distances(&[E], &[vec![1.0 / E; 2]]).unwrap();
        assert!((l - 0.239_544_766).abs() < 1e-6);
    }

    fn features(rows: &[&[f64]]) -> Tensor<f64> {
        let d = rows[0].len();
        Tensor::new(&[rows.len(), d], rows.concat()).unwrap()
    }

    #[test]
    fn tape_loss_matches_distance_form() {
        let zm = features(&[&[1.0, 0.2, -0.3], &[0.1, 1.0, 0.5], &[-0.4, 0.3, 1.0]]);
        let za = features(&[&[0.9, 0.1, 0.0], &[0.3, -1.0, 0.2], &[0.2, 0.2, 0.7]]);
        let batch = PairBatch::build(&[10, 11, 12], &[0, 1, 2], 2, NegativeMode::DifferentClass).unwrap();
        let mut tape = Tape::<f64>::new();
        let (a, b) = (tape.constant(zm.clone()), tape.constant(za.clone()));
        let l = contrastive_loss(&mut tape, a, b, &batch).unwrap();
        let got = tape.value(l).item().unwrap();

        let row = |x: &Tensor<f64>, i: usize| t(&x.data()[i * 3..i * 3 + 3]);
        let pos: Vec<f64> = (0..3).map(|i| pair_distance(&row(&zm, i), &row(&za, i)).unwrap()).collect();
        let negs: Vec<Vec<f64>> = (0..3)
            .map(|i| batch.negatives[i].iter().map(|&j| pair_distance(&row(&zm, i), &row(&za, j)).unwrap()).collect())
            .collect();
        assert!((got - contrastive_from_distances(&pos, &negs).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pair_batch_modes() {
        let ids = [1, 2, 3, 4];
        let classes = [0, 0, 1, 1];
        let b = PairBatch::build(&ids, &classes, 8, NegativeMode::DifferentClass).unwrap();
        assert_eq!(b.k(), 2);
        assert_eq!(b.negatives[0], vec![2, 3]);
        assert!(b.is_valid());
        let b = PairBatch::build(&ids, &classes, 8, NegativeMode::DifferentSample).unwrap();
        assert_eq!(b.k(), 3);
        let b = PairBatch::build(&ids, &classes, 1, NegativeMode::DifferentSample).unwrap();
        assert_eq!(b.k(), 1);
        let b = PairBatch::build(&ids, &[0; 4], 8, NegativeMode::DifferentClass).unwrap();
        assert_eq!(b.k(), 0);
    }

    #[test]
    fn k_zero_loss_is_exactly_zero() {
        let zm = features(&[&[1.0, 2.0], &[3.0, -1.0]]);
        let batch = PairBatch::build(&[1, 2], &[0, 0], 4, NegativeMode::DifferentClass).unwrap();
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(zm.cast());
        let b = tape.constant(zm.map(|v| v + 0.5).cast());
        let l = contrastive_loss(&mut tape, a, b, &batch).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy_value(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert!((cross_entropy_value(&[0.2; 5], 3).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!((cross_entropy_value(&[0.7, 0.2, 0.1], 0).unwrap() - 0.356675).abs() < 1e-6);
        assert!((cross_entropy_value(&[1.0, 0.0], 1).unwrap() - 1e12f64.ln()).abs() < 1e-9);
        assert!(cross_entropy_value(&[0.5, 0.5], 2).is_err());

        let mut tape = Tape::<f64>::new();
        let p = tape.constant(features(&[&[0.7, 0.2, 0.1], &[0.2, 0.2, 0.6]]));
        let l = cross_entropy(&mut tape, p, &[0, 2]).unwrap();
        let expect = (-(0.7f64).ln() - (0.6f64).ln()) / 2.0;
        assert!((tape.value(l).item().unwrap() - expect).abs() < 1e-12);
        assert!(cross_entropy(&mut tape, p, &[0, 3]).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let v = |a| total_loss_value(1.0, 2.0, 4.0, LossWeights::new(a).unwrap()).unwrap();
        assert_eq!(v(0.0), 3.0);
        assert_eq!(v(1.0), 4.0);
        assert_eq!(v(0.25), 3.25);
        assert!(matches!(LossWeights::new(1.5), Err(Error::Config(_))));
        assert!(LossWeights::new(-0.1).is_err());

        let mut tape = Tape::<f64>::new();
        let (a, b, c) = (
            tape.constant(Tensor::scalar(1.3)),
            tape.constant(Tensor::scalar(0.4)),
            tape.constant(Tensor::scalar(2.2)),
        );
        let l = total_loss(&mut tape, a, b, c, LossWeights::new(0.0).unwrap()).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 1.3 + 0.4);
        let l = total_loss(&mut tape, a, b, c, LossWeights::new(1.0).unwrap()).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 2.2);
    }
}
