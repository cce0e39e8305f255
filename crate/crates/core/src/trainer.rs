//! Subject-disjoint splitting, joint training of the video and attribute
//! encoders, video-only evaluation and the repeated-run experiment harnesses.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use numcore::{Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::encoders::{
    stack_clips, AttributeEncoder, AttributeNet, Binder, ParamId, ParamStore, ResNet3DConfig, TextEncoder,
    VideoEncoder, VideoNet,
};
use crate::losses::{contrastive_loss, cross_entropy, total_loss, LossWeights, NegativeMode, PairBatch};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Both classification losses plus the weighted contrastive term.
    #[default]
    Full,
    /// Video classification loss only; the attribute branch is not trained.
    VideoOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub depth: usize,
    pub alpha: f64,
    /// Upper bound on negatives per anchor.
    pub k: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Train to test ratio, counted in subjects.
    pub split_ratio: [usize; 2],
    pub n_repeats: usize,
    pub seed: u64,
    pub negative_mode: NegativeMode,
    pub loss_mode: LossMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            depth: 10,
            alpha: 0.5,
            k: 8,
            lr: 1e-4,
            epochs: 30,
            batch_size: 8,
            split_ratio: [3, 2],
            n_repeats: 5,
            seed: 0,
            negative_mode: NegativeMode::DifferentClass,
            loss_mode: LossMode::Full,
        }
    }
}

impl ExperimentConfig {
    /// Full-scale schedule: 200 epochs with batches of 32.
    pub fn full_scale() -> Self {
        ExperimentConfig { epochs: 200, batch_size: 32, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        ResNet3DConfig::new(self.depth)?;
        LossWeights::new(self.alpha)?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if self.split_ratio.contains(&0) {
            return bad("split_ratio entries must be positive");
        }
        if self.n_repeats == 0 {
            return bad("n_repeats must be >= 1");
        }
        Ok(())
    }

    fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(if self.loss_mode == LossMode::VideoOnly { 0.0 } else { self.alpha })
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const SPLIT_STREAM: u64 = 1 << 40;
const BATCH_STREAM: u64 = 1 << 41;

/// Attribute encoders draw their initial weights from a seed distinct from the video encoder's.
fn attribute_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
    pub train_subjects: Vec<u32>,
    pub test_subjects: Vec<u32>,
}

/// Partition subjects by `ratio`, rounding the train share up while keeping at
/// least one test subject. Sample ids come back sorted.
pub fn split_by_subject(samples: &[(u64, u32)], ratio: [usize; 2], seed: u64) -> Result<Split> {
    let subjects: BTreeSet<u32> = samples.iter().map(|s| s.1).collect();
    let n = subjects.len();
    if n < 5 {
        return Err(Error::Config(format!("subject-disjoint split needs at least 5 subjects, found {n}")));
    }
    if ratio.contains(&0) {
        return Err(Error::Config("split ratio entries must be positive".into()));
    }
    let mut order: Vec<u32> = subjects.into_iter().collect();
    order.shuffle(&mut rng(seed, SPLIT_STREAM));
    let n_train = (n * ratio[0]).div_ceil(ratio[0] + ratio[1]).min(n - 1);
    let mut train_subjects = order[..n_train].to_vec();
    let mut test_subjects = order[n_train..].to_vec();
    train_subjects.sort_unstable();
    test_subjects.sort_unstable();
    let side = |subs: &[u32]| {
        let mut ids: Vec<u64> = samples.iter().filter(|s| subs.contains(&s.1)).map(|s| s.0).collect();
        ids.sort_unstable();
        ids
    };
    Ok(Split { train: side(&train_subjects), test: side(&test_subjects), train_subjects, test_subjects })
}

/// Adaptive moment estimation with bias correction.
pub struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(lr: f64, store: &ParamStore) -> Self {
        Adam { lr, t: 0, m: vec![Vec::new(); store.len()], v: vec![Vec::new(); store.len()] }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: Vec<(ParamId, Tensor)>) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (id, g) in grads {
            let i = id.index();
            let p = store.get_mut(id).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if m.is_empty() {
                m.resize(p.len(), 0.0);
                v.resize(p.len(), 0.0);
            }
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g as f64;
                let mn = Self::BETA1 * *m as f64 + (1.0 - Self::BETA1) * g;
                let vn = Self::BETA2 * *v as f64 + (1.0 - Self::BETA2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                *p = (*p as f64 - self.lr * (mn / c1) / ((vn / c2).sqrt() + Self::EPS)) as f32;
            }
        }
    }
}

/// Batches of dataset positions for one epoch: each class is shuffled, then
/// classes are interleaved round-robin. A trailing batch of one is merged into
/// the previous batch so batch statistics are always defined.
pub fn epoch_batches(data: &Dataset, idx: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut r = rng(seed, BATCH_STREAM + epoch as u64);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes];
    for &i in idx {
        by_class[data.clips[i].class_id].push(i);
    }
    for c in &mut by_class {
        c.shuffle(&mut r);
    }
    let mut order = Vec::with_capacity(idx.len());
    let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
    for round in 0..longest {
        order.extend(by_class.iter().filter_map(|c| c.get(round)));
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_theta: f64,
    /// Absent when the attribute branch is not trained.
    pub l_phi: Option<f64>,
    pub l_contrast: Option<f64>,
    pub loss: f64,
    /// Accuracy of the in-step predictions, with batch statistics.
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub epochs: Vec<EpochStats>,
    /// Optimizer steps taken in total.
    pub steps: usize,
    /// Eval-mode accuracy on the training samples after the last epoch.
    pub final_train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub train_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
    /// Video parameters before the first update and after the last.
    pub init_checksum: String,
    pub final_checksum: String,
}

pub struct Trained {
    pub video: VideoEncoder,
    pub attribute: AttributeEncoder,
    pub report: RunReport,
}

struct StepOut {
    l_theta: f64,
    l_phi: Option<f64>,
    l_contrast: Option<f64>,
    loss: f64,
    correct: usize,
}

fn scalar(tape: &Tape<f32>, v: Var) -> f64 {
    tape.value(v).data()[0] as f64
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn forward_step(
    cfg: &ExperimentConfig,
    data: &Dataset,
    batch: &[usize],
    tape: &mut Tape<f32>,
    video: (&VideoNet, &mut Binder<f32>),
    attr: (&AttributeNet, &mut Binder<f32>),
) -> Result<(Var, StepOut)> {
    let clips: Vec<_> = batch.iter().map(|&i| &data.clips[i]).collect();
    let classes: Vec<usize> = clips.iter().map(|c| c.class_id).collect();
    let (rgb, flow) = stack_clips(&clips)?;
    let (vnet, vb) = video;
    let (r, f) = (tape.constant(rgb), tape.constant(flow));
    let z_m = vnet.features(tape, vb, r, f)?;
    let p_m = vnet.head.probabilities(tape, vb, z_m)?;
    let l_theta = cross_entropy(tape, p_m, &classes)?;
    let n = vnet.head.n_classes();
    let correct =
        tape.value(p_m).data().chunks(n).zip(&classes).filter(|(row, &c)| argmax(row) == c).count();

    if cfg.loss_mode == LossMode::VideoOnly {
        let out = StepOut { l_theta: scalar(tape, l_theta), l_phi: None, l_contrast: None, loss: 0.0, correct };
        return Ok((l_theta, StepOut { loss: out.l_theta, ..out }));
    }
    let (anet, ab) = attr;
    let tokens: Vec<Vec<u32>> = batch.iter().map(|&i| data.tokens[i].clone()).collect();
    let z_a = anet.text.encode(tape, ab, &tokens)?;
    let p_a = anet.head.probabilities(tape, ab, z_a)?;
    let l_phi = cross_entropy(tape, p_a, &classes)?;
    let ids: Vec<u64> = clips.iter().map(|c| c.sample_id).collect();
    let pairs = PairBatch::build(&ids, &classes, cfg.k, cfg.negative_mode)?;
    let l_c = contrastive_loss(tape, z_m, z_a, &pairs)?;
    let total = total_loss(tape, l_theta, l_phi, l_c, cfg.weights()?)?;
    let out = StepOut {
        l_theta: scalar(tape, l_theta),
        l_phi: Some(scalar(tape, l_phi)),
        l_contrast: Some(scalar(tape, l_c)),
        loss: scalar(tape, total),
        correct,
    };
    Ok((total, out))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Train both encoders on the dataset positions `train_idx`.
pub fn train(cfg: &ExperimentConfig, data: &Dataset, train_idx: &[usize]) -> Result<Trained> {
    cfg.validate()?;
    if train_idx.len() < 2 {
        return Err(Error::Contract("training needs at least 2 samples".into()));
    }
    let mut video = VideoEncoder::new(&ResNet3DConfig::new(cfg.depth)?, data.n_classes, cfg.seed)?;
    let mut attribute =
        AttributeEncoder::new(data.vocab_size, crate::dataset::MAX_TOKENS, data.n_classes, attribute_seed(cfg.seed))?;
    let init_checksum = video.params.checksum();
    let mut video_opt = Adam::new(cfg.lr, &video.params);
    let mut attr_opt = Adam::new(cfg.lr, &attribute.params);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;

    for epoch in 1..=cfg.epochs {
        let mut outs = Vec::new();
        for (step, batch) in epoch_batches(data, train_idx, cfg.batch_size, cfg.seed, epoch).iter().enumerate() {
            let mut tape = Tape::new();
            let mut vb = Binder::lend(&mut video.params);
            let mut ab = Binder::lend(&mut attribute.params);
            // Binders are finished on every path so lent values return to the stores.
            let result = forward_step(cfg, data, batch, &mut tape, (&video.net, &mut vb), (&attribute.net, &mut ab))
                .and_then(|(loss, out)| {
                let components = [Some(out.l_theta), out.l_phi, out.l_contrast, Some(out.loss)];
                if components.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step: step + 1,
                        detail: format!(
                            "L_theta={} L_phi={:?} L_c={:?} L={}",
                            out.l_theta, out.l_phi, out.l_contrast, out.loss
                        ),
                    });
                }
                tape.backward(loss)?;
                Ok(out)
            });
            let vgrads = vb.finish(&mut tape);
            let agrads = ab.finish(&mut tape);
            let out = result.map_err(|e| match e {
                Error::Num(numcore::NumError::NonFinite { op }) => Error::NonFiniteLoss {
                    epoch,
                    step: step + 1,
                    detail: format!("{op} produced a non-finite value before L_theta, L_phi, L_c and L were formed"),
                },
                other => other,
            })?;
            video_opt.step(&mut video.params, vgrads);
            if cfg.loss_mode == LossMode::Full {
                attr_opt.step(&mut attribute.params, agrads);
            }
            steps += 1;
            outs.push((batch.len(), out));
        }
        let stats = EpochStats {
            epoch,
            l_theta: mean(outs.iter().map(|o| o.1.l_theta)),
            l_phi: outs.iter().map(|o| o.1.l_phi).collect::<Option<Vec<_>>>().map(|v| mean(v.into_iter())),
            l_contrast: outs.iter().map(|o| o.1.l_contrast).collect::<Option<Vec<_>>>().map(|v| mean(v.into_iter())),
            loss: mean(outs.iter().map(|o| o.1.loss)),
            train_accuracy: outs.iter().map(|o| o.1.correct).sum::<usize>() as f64 / train_idx.len() as f64,
        };
        log::info!(
            "epoch {epoch}/{}: L={:.4} L_theta={:.4} acc={:.3}",
            cfg.epochs,
            stats.loss,
            stats.l_theta,
            stats.train_accuracy
        );
        epochs.push(stats);
    }

    let final_train_accuracy = evaluate(&video, data, train_idx)?.accuracy;
    let report = RunReport {
        seed: cfg.seed,
        config: cfg.clone(),
        epochs,
        steps,
        final_train_accuracy,
        test_accuracy: None,
        train_ids: train_idx.iter().map(|&i| data.clips[i].sample_id).collect(),
        test_ids: Vec::new(),
        init_checksum,
        final_checksum: video.params.checksum(),
    };
    Ok(Trained { video, attribute, report })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub predictions: Vec<usize>,
}

/// Samples per forward pass during evaluation.
const EVAL_BATCH: usize = 8;

/// Argmax accuracy of the video branch alone. Batch normalization uses the
/// running estimates, so predictions do not depend on how samples are grouped.
pub fn evaluate(video: &VideoEncoder, data: &Dataset, idx: &[usize]) -> Result<Evaluation> {
    if idx.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty set".into()));
    }
    let n = video.n_classes();
    let chunks: Vec<Vec<usize>> = idx
        .par_chunks(EVAL_BATCH)
        .map(|chunk| {
            let clips: Vec<_> = chunk.iter().map(|&i| &data.clips[i]).collect();
            let (rgb, flow) = stack_clips(&clips)?;
            let probs = video.predict_batch(&rgb, &flow)?;
            Ok(probs.data().chunks(n).map(argmax).collect())
        })
        .collect::<Result<_>>()?;
    let predictions: Vec<usize> = chunks.into_iter().flatten().collect();
    let correct = predictions.iter().zip(idx).filter(|(p, &i)| **p == data.clips[i].class_id).count();
    Ok(Evaluation { accuracy: correct as f64 / idx.len() as f64, correct, total: idx.len(), predictions })
}

/// Evaluate a saved model. Only the video checkpoint files are opened.
pub fn evaluate_checkpoint(dir: &std::path::Path, data: &Dataset, idx: &[usize]) -> Result<Evaluation> {
    let video = crate::encoders::load_video(dir)?;
    if video.n_classes() != data.n_classes {
        return Err(Error::Contract(format!(
            "checkpoint has {} classes, dataset has {}",
            video.n_classes(),
            data.n_classes
        )));
    }
    evaluate(&video, data, idx)
}

/// Split by subject with the run's seed, train on one side and evaluate on the other.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<Trained> {
    cfg.validate()?;
    let split = split_by_subject(&data.subjects(), cfg.split_ratio, cfg.seed)?;
    let (train_idx, test_idx) = (data.indices(&split.train)?, data.indices(&split.test)?);
    let mut trained = train(cfg, data, &train_idx)?;
    trained.report.test_accuracy = Some(evaluate(&trained.video, data, &test_idx)?.accuracy);
    trained.report.test_ids = split.test;
    Ok(trained)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Repeated {
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub runs: Vec<RunReport>,
}

impl Repeated {
    /// `mean±std` in percent with two decimals, e.g. `77.82±3.65`.
    pub fn summary(&self) -> String {
        format!("{:.2}±{:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

/// Seeds `base, base + 1, ...` for `n` runs.
pub fn repeat_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

/// One experiment per seed; runs differ only in their seed.
pub fn run_seeds(cfg: &ExperimentConfig, data: &Dataset, seeds: &[u64]) -> Result<Repeated> {
    if seeds.len() < 2 {
        return Err(Error::Config(format!("repeated runs need n >= 2, got {}", seeds.len())));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        log::info!("run {}/{} (seed {seed})", i + 1, seeds.len());
        let trained = run_experiment(&ExperimentConfig { seed, ..cfg.clone() }, data)?;
        runs.push(trained.report);
    }
    let accuracies: Vec<f64> = runs.iter().map(|r| r.test_accuracy.unwrap_or(0.0)).collect();
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let std = (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(Repeated { seeds: seeds.to_vec(), accuracies, mean, std, runs })
}

pub fn run_repeated(cfg: &ExperimentConfig, data: &Dataset, n: usize) -> Result<Repeated> {
    run_seeds(cfg, data, &repeat_seeds(cfg.seed, n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub mean: f64,
    pub std: f64,
}

/// One repeated run per distinct alpha, in increasing order.
pub fn sweep_alpha(cfg: &ExperimentConfig, data: &Dataset, alphas: &[f64]) -> Result<Vec<AlphaRow>> {
    if alphas.is_empty() {
        return Err(Error::Config("sweep needs at least one alpha".into()));
    }
    let mut sorted = alphas.to_vec();
    for &a in &sorted {
        LossWeights::new(a)?;
    }
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted
        .into_iter()
        .map(|alpha| {
            let r = run_repeated(&ExperimentConfig { alpha, loss_mode: LossMode::Full, ..cfg.clone() }, data, cfg.n_repeats)?;
            Ok(AlphaRow { alpha, mean: r.mean, std: r.std })
        })
        .collect()
}

pub fn alpha_csv(rows: &[AlphaRow]) -> String {
    let mut s = String::from("alpha,mean,std\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6}", r.alpha, r.mean, r.std);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmMode {
    /// Video classification loss only, alpha recorded as 0.
    Baseline,
    /// The configured alpha with all three loss terms.
    Full,
}

impl ArmMode {
    pub fn name(self) -> &'static str {
        match self {
            ArmMode::Baseline => "baseline",
            ArmMode::Full => "full",
        }
    }

    fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        match self {
            ArmMode::Baseline => ExperimentConfig { alpha: 0.0, loss_mode: LossMode::VideoOnly, ..cfg.clone() },
            ArmMode::Full => ExperimentConfig { loss_mode: LossMode::Full, ..cfg.clone() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub depth: usize,
    pub mode: ArmMode,
    pub alpha: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn sweep_depth(cfg: &ExperimentConfig, data: &Dataset, depths: &[usize], modes: &[ArmMode]) -> Result<Vec<DepthRow>> {
    for &d in depths {
        ResNet3DConfig::new(d)?;
    }
    let mut rows = Vec::new();
    for &depth in depths {
        for &mode in modes {
            let arm = mode.apply(&ExperimentConfig { depth, ..cfg.clone() });
            let r = run_repeated(&arm, data, cfg.n_repeats)?;
            rows.push(DepthRow { depth, mode, alpha: arm.alpha, mean: r.mean, std: r.std });
        }
    }
    Ok(rows)
}

pub fn depth_csv(rows: &[DepthRow]) -> String {
    let mut s = String::from("depth,mode,alpha,mean,std\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.6},{:.6}", r.depth, r.mode.name(), r.alpha, r.mean, r.std);
    }
    s
}

/// Published full-scale accuracies for the two ablation arms, in percent.
pub const REFERENCE_ABLATION: [(&str, f64); 2] = [("L_theta", 66.74), ("L", 77.82)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub result: Repeated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    /// Per seed: test ids and initial video checksum, identical in both arms.
    pub shared: Vec<(u64, Vec<u64>, String)>,
    pub footer: String,
}

impl Ablation {
    pub fn table(&self) -> String {
        let mut s = String::from("loss,accuracy\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{}", r.label, r.result.summary());
        }
        let _ = writeln!(s, "# {}", self.footer);
        s
    }
}

/// Video-loss-only arm against the full loss, over the same seeds and splits.
pub fn ablate(cfg: &ExperimentConfig, data: &Dataset) -> Result<Ablation> {
    let seeds = repeat_seeds(cfg.seed, cfg.n_repeats);
    let only_video = ExperimentConfig { loss_mode: LossMode::VideoOnly, ..cfg.clone() };
    let full = ExperimentConfig { loss_mode: LossMode::Full, ..cfg.clone() };
    let a = run_seeds(&only_video, data, &seeds)?;
    let b = run_seeds(&full, data, &seeds)?;
    let mut shared = Vec::new();
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        if ra.test_ids != rb.test_ids || ra.init_checksum != rb.init_checksum || ra.seed != rb.seed {
            return Err(Error::Contract(format!("ablation arms diverged for seed {}", ra.seed)));
        }
        shared.push((ra.seed, ra.test_ids.clone(), ra.init_checksum.clone()));
    }
    let reference: Vec<String> = REFERENCE_ABLATION.iter().map(|(l, v)| format!("{l} {v:.2}")).collect();
    let footer = format!(
        "published full-scale reference: {} (not reproducible on synthetic data)",
        reference.join(", ")
    );
    Ok(Ablation {
        rows: vec![
            AblationRow { label: "L_theta".into(), result: a },
            AblationRow { label: "L".into(), result: b },
        ],
        shared,
        footer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowprep::PrepConfig;
    use crate::synthdata::SynthSpec;

    fn tiny() -> Dataset {
        let spec = SynthSpec { n_classes: 2, samples_per_class: 5, n_subjects: 5, size: 16, frames: 8, seed: 1, ..Default::default() };
        Dataset::synthetic(&spec, &PrepConfig { frames: 8, size: 16, ..Default::default() }).unwrap()
    }

    fn quick() -> ExperimentConfig {
        ExperimentConfig { epochs: 1, batch_size: 4, k: 2, n_repeats: 2, ..Default::default() }
    }

    #[test]
    fn split_examples() {
        let samples: Vec<(u64, u32)> = (0..20).map(|i| (i, (i % 5) as u32 + 1)).collect();
        let s = split_by_subject(&samples, [3, 2], 4).unwrap();
        assert_eq!((s.train_subjects.len(), s.test_subjects.len()), (3, 2));
        assert!(s.train_subjects.iter().all(|x| !s.test_subjects.contains(x)));
        let mut all: Vec<u64> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(s, split_by_subject(&samples, [3, 2], 4).unwrap());
        // 7 subjects: 4.2 rounds up to 5.
        let seven: Vec<(u64, u32)> = (0..7).map(|i| (i, i as u32)).collect();
        assert_eq!(split_by_subject(&seven, [3, 2], 0).unwrap().train_subjects.len(), 5);
        let four: Vec<(u64, u32)> = (0..8).map(|i| (i, (i % 4) as u32)).collect();
        assert!(matches!(split_by_subject(&four, [3, 2], 0), Err(Error::Config(_))));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[3], vec![1.0, 1.0, 1.0]).unwrap(), true);
        let mut opt = Adam::new(0.1, &store);
        opt.step(&mut store, vec![(id, Tensor::new(&[3], vec![2.0, -0.5, 0.0]).unwrap())]);
        let p = store.get(id).data();
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] - 1.1).abs() < 1e-6 && p[2] == 1.0);
    }

    #[test]
    fn batches_interleave_classes() {
        let d = tiny();
        let idx: Vec<usize> = (0..10).collect();
        let b = epoch_batches(&d, &idx, 4, 0, 1);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let sizes: Vec<usize> = epoch_batches(&d, &idx, 3, 0, 1).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 4]);
        for batch in &b {
            let classes: BTreeSet<usize> = batch.iter().map(|&i| d.clips[i].class_id).collect();
            assert_eq!(classes.len(), 2);
        }
        let mut flat: Vec<usize> = b.concat();
        flat.sort_unstable();
        assert_eq!(flat, idx);
        assert_eq!(b, epoch_batches(&d, &idx, 4, 0, 1));
        assert_ne!(b, epoch_batches(&d, &idx, 4, 0, 2));
    }

    #[test]
    fn training_is_deterministic_and_reports_all_losses() {
        let d = tiny();
        let a = run_experiment(&quick(), &d).unwrap();
        let b = run_experiment(&quick(), &d).unwrap();
        assert_eq!(a.video.params, b.video.params);
        assert_eq!(a.report, b.report);
        let e = &a.report.epochs[0];
        assert!(e.l_phi.is_some() && e.l_contrast.is_some());
        assert_ne!(a.report.init_checksum, a.report.final_checksum);
        let acc = a.report.test_accuracy.unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn video_only_leaves_attribute_untouched() {
        let d = tiny();
        let cfg = ExperimentConfig { loss_mode: LossMode::VideoOnly, ..quick() };
        let t = run_experiment(&cfg, &d).unwrap();
        let fresh = AttributeEncoder::new(d.vocab_size, crate::dataset::MAX_TOKENS, 2, attribute_seed(cfg.seed)).unwrap();
        assert_eq!(t.attribute.params, fresh.params);
        assert!(t.report.epochs[0].l_phi.is_none());
    }

    #[test]
    fn non_finite_inputs_abort_with_diagnostic() {
        let mut d = tiny();
        d.clips[0].rgb.data_mut()[0] = f32::NAN;
        let idx: Vec<usize> = (0..d.len()).collect();
        match train(&quick(), &d, &idx) {
            Err(Error::NonFiniteLoss { epoch: 1, detail, .. }) => assert!(detail.contains("L_theta")),
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("expected an abort"),
        }
    }

    #[test]
    fn evaluate_rejects_empty_sets() {
        let d = tiny();
        let v = VideoEncoder::new(&ResNet3DConfig::new(10).unwrap(), 2, 0).unwrap();
        assert!(matches!(evaluate(&v, &d, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn forced_equal_seeds_give_zero_std() {
        let d = tiny();
        let r = run_seeds(&quick(), &d, &[3, 3]).unwrap();
        assert_eq!(r.std, 0.0);
        assert!(r.summary().contains('±'));
        assert!(run_seeds(&quick(), &d, &[3]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        assert!(ExperimentConfig { depth: 50, ..Default::default() }.validate().is_err());
        assert!(ExperimentConfig { alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(ExperimentConfig { batch_size: 1, ..Default::default() }.validate().is_err());
        let p = ExperimentConfig::full_scale();
        assert_eq!((p.epochs, p.batch_size, p.lr), (200, 32, 1e-4));
        let json = r#"{"depth": 18, "bogus": 1}"#;
        let err = serde_json::from_str::<ExperimentConfig>(json).unwrap_err().to_string();
        assert!(err.contains("bogus"));
    }
}
