//! Named self-verification checks: gradients, loss identities, stage shapes,
//! optical flow and the action-unit codebook.

use std::f64::consts::E;

use numcore::gradcheck::{check_function, CheckConfig};
use numcore::ops::Conv3dSpec;
use numcore::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::{shape_probe, ResNet3DConfig};
use crate::facs::{describe, parse_au_string};
use crate::flowprep::{farneback_flow, FarnebackParams, Plane};
use crate::losses::{
    contrastive_from_distances, contrastive_loss, cross_entropy, pair_distance, total_loss_value, LossWeights,
    NegativeMode, PairBatch,
};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct Options {
    /// Stem stride used by the shape probes; only set to inject faults.
    pub conv1_stride: Option<[usize; 3]>,
}

/// Finite-difference step; inputs are O(1), so truncation and rounding error both stay near 1e-10.
const STEP: f64 = 1e-5;
const OP_TOL: f64 = 1e-3;
const LOSS_TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> numcore::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(tape.value(y).shape(), &mut rng));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn grad_check<B>(name: &str, inputs: &[Tensor<f64>], tol: f64, build: B) -> CheckResult
where
    B: Fn(&mut Tape<f64>, &[Var]) -> numcore::Result<Var>,
{
    let cfg = CheckConfig { probes: 20, step: STEP, seed: 7 };
    match check_function(inputs, build, cfg) {
        Ok(r) => CheckResult {
            name: name.into(),
            passed: r.passed(tol),
            detail: format!("max relative error {:.2e} over {} probes (tol {tol:e})", r.max_rel_err(), r.probes.len()),
        },
        Err(e) => CheckResult { name: name.into(), passed: false, detail: e.to_string() },
    }
}

pub fn gradient_checks() -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    let x = random(&[2, 2, 4, 5, 5], &mut rng);
    let w = random(&[3, 2, 3, 3, 3], &mut rng);
    out.push(grad_check("grad.conv3d", &[x, w], OP_TOL, |t, v| {
        let y = t.conv3d(v[0], v[1], Conv3dSpec::new([2, 2, 2], [1, 1, 1]))?;
        project(t, y, 2)
    }));
    let lin = [random(&[3, 4], &mut rng), random(&[4, 5], &mut rng), random(&[5], &mut rng)];
    out.push(grad_check("grad.linear", &lin, OP_TOL, |t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        project(t, y, 3)
    }));
    let bn = [random(&[3, 2, 2, 3, 3], &mut rng), random(&[2], &mut rng), random(&[2], &mut rng)];
    out.push(grad_check("grad.batch_norm", &bn, OP_TOL, |t, v| {
        let (y, _) = t.batch_norm(v[0], v[1], v[2])?;
        project(t, y, 4)
    }));
    out.push(grad_check("grad.softmax_cross_entropy", &[random(&[4, 5], &mut rng)], LOSS_TOL, |t, v| {
        let p = t.softmax(v[0])?;
        cross_entropy(t, p, &[0, 3, 1, 4]).map_err(to_num)
    }));
    let cos = [random(&[3, 8], &mut rng), random(&[3, 8], &mut rng)];
    out.push(grad_check("grad.cosine", &cos, OP_TOL, |t, v| {
        let y = t.cosine_rows(v[0], v[1])?;
        project(t, y, 5)
    }));
    let pd = [random(&[1, 8], &mut rng), random(&[1, 8], &mut rng)];
    out.push(grad_check("grad.pair_distance", &pd, LOSS_TOL, |t, v| {
        let c = t.cosine_rows(v[0], v[1])?;
        let e = t.exp(c)?;
        t.sum(e)
    }));
    let batch = PairBatch::build(&[1, 2, 3, 4, 5], &[0, 1, 2, 0, 1], 3, NegativeMode::DifferentClass).expect("batch");
    let con = [random(&[5, 6], &mut rng), random(&[5, 6], &mut rng)];
    out.push(grad_check("grad.contrastive_loss", &con, LOSS_TOL, |t, v| {
        contrastive_loss(t, v[0], v[1], &batch).map_err(to_num)
    }));
    out
}

fn to_num(e: crate::Error) -> numcore::NumError {
    match e {
        crate::Error::Num(n) => n,
        other => numcore::NumError::Contract(other.to_string()),
    }
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name: name.into(), passed, detail }
}

pub fn loss_identities() -> Vec<CheckResult> {
    let v = |d: &[f64]| Tensor::new(&[d.len()], d.to_vec()).expect("shape");
    let z = v(&[0.4, -1.1, 2.5, 0.3]);
    let same = pair_distance(&z, &z).unwrap_or(f64::NAN);
    let anti = pair_distance(&z, &z.map(|x| -x)).unwrap_or(f64::NAN);
    let orth = pair_distance(&v(&[1.0, 2.0, 0.0]), &v(&[-2.0, 1.0, 5.0])).unwrap_or(f64::NAN);
    let mut out = vec![check(
        "loss.pair_distance",
        (same - E).abs() < 1e-6 && (anti - 1.0 / E).abs() < 1e-6 && (orth - 1.0).abs() < 1e-6,
        format!("same {same:.9}, antipodal {anti:.9}, orthogonal {orth:.9}"),
    )];
    let mut worst: f64 = 0.0;
    for k in [1usize, 2, 3, 7] {
        let l = contrastive_from_distances(&[1.7], &[vec![1.7; k]]).unwrap_or(f64::NAN);
        worst = worst.max((l - ((k + 1) as f64).ln()).abs());
    }
    out.push(check("loss.equal_distances", worst < 1e-6, format!("max |L - ln(k+1)| = {worst:.2e}")));
    let zero = contrastive_from_distances(&[E], &[vec![]]).unwrap_or(f64::NAN);
    out.push(check("loss.k_zero", zero == 0.0, format!("L = {zero}")));
    let f = |a: f64| LossWeights::new(a).and_then(|w| total_loss_value(0.8, 1.3, 2.1, w)).unwrap_or(f64::NAN);
    let gap = (f(0.3) - (0.7 * f(0.0) + 0.3 * f(1.0))).abs();
    out.push(check("loss.alpha_affine", gap < 1e-7, format!("collinearity gap {gap:.2e}")));
    out
}

/// Stage output shapes for a 16 x 112 x 112 clip, without the batch axis.
pub fn expected_stage_shapes() -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("conv1", vec![64, 8, 56, 56]),
        ("conv2_x", vec![64, 8, 56, 56]),
        ("conv3_x", vec![128, 4, 28, 28]),
        ("conv4_x", vec![256, 2, 14, 14]),
        ("conv5_x", vec![512, 1, 7, 7]),
        ("fc", vec![128]),
    ]
}

pub fn shape_checks(opts: &Options) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for depth in [10, 18, 34] {
        let name = format!("shapes.depth{depth}");
        let mut cfg = ResNet3DConfig::new(depth).expect("valid depth");
        if let Some(s) = opts.conv1_stride {
            cfg.conv1_stride = s;
        }
        let trace = match shape_probe(&cfg, 16, 112) {
            Ok(t) => t,
            Err(e) => {
                out.push(check(&name, false, e.to_string()));
                continue;
            }
        };
        let mut want: Vec<(String, Vec<usize>)> = Vec::new();
        for stream in ["rgb", "flow"] {
            for (stage, shape) in expected_stage_shapes() {
                want.push((format!("{stream}.{stage}"), shape));
            }
        }
        want.push(("fused".into(), vec![256]));
        let mismatch = want.iter().find(|w| !trace.contains(w));
        out.push(match mismatch {
            None if trace.len() == want.len() => check(&name, true, format!("{} stage shapes match", want.len())),
            None => check(&name, false, format!("{} stages traced, expected {}", trace.len(), want.len())),
            Some((stage, shape)) => {
                let got = trace.iter().find(|t| &t.0 == stage).map(|t| format!("{:?}", t.1));
                check(&name, false, format!("{stage}: expected {shape:?}, got {}", got.unwrap_or("nothing".into())))
            }
        });
    }
    out
}

const BLOB_SIZE: usize = 64;

fn blob(cy: f64, cx: f64) -> Plane {
    Plane::from_fn(BLOB_SIZE, BLOB_SIZE, |y, x| {
        let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
        0.1 + 0.8 * (-r2 / 72.0).exp()
    })
}

/// Integer shift minimizing the sum of squared differences over a `[-8, 8]^2` search.
pub fn ssd_shift(prev: &Plane, next: &Plane) -> (i32, i32) {
    let (h, w) = (prev.h, prev.w);
    let mut best = (f64::INFINITY, (0, 0));
    for dy in -8i32..=8 {
        for dx in -8i32..=8 {
            let mut ssd = 0.0;
            for y in 8..h - 8 {
                for x in 8..w - 8 {
                    let p = prev.at((y as i32 - dy) as usize, (x as i32 - dx) as usize);
                    ssd += (next.at(y, x) - p).powi(2);
                }
            }
            if ssd < best.0 {
                best = (ssd, (dx, dy));
            }
        }
    }
    best.1
}

pub fn flow_checks() -> Vec<CheckResult> {
    let params = FarnebackParams::default();
    let c = BLOB_SIZE as f64 / 2.0;
    let prev = blob(c, c);
    let n = BLOB_SIZE * BLOB_SIZE;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let shifts = (1..=4).flat_map(|s| [(s, 0), (-s, 0), (0, s), (0, -s)]);
    for (dx, dy) in shifts {
        let next = blob(c + dy as f64, c + dx as f64);
        let oracle = ssd_shift(&prev, &next);
        let flow = match farneback_flow(&prev, &next, &params) {
            Ok(f) => f,
            Err(e) => return vec![check("flow.oracle", false, e.to_string())],
        };
        let (mut sx, mut sy, mut count) = (0.0, 0.0, 0.0);
        for i in 0..n {
            if prev.data[i] >= 0.5 {
                sx += flow.data()[i] as f64;
                sy += flow.data()[n + i] as f64;
                count += 1.0;
            }
        }
        let err = (sx / count - oracle.0 as f64).abs().max((sy / count - oracle.1 as f64).abs());
        worst = worst.max(err);
        if err > 0.2 || oracle != (dx, dy) {
            failures.push(format!("({dx},{dy})"));
        }
    }
    let mut out = vec![check(
        "flow.oracle",
        failures.is_empty(),
        if failures.is_empty() {
            format!("16 shifts within {worst:.3} px of the SSD oracle")
        } else {
            format!("failed shifts {}", failures.join(" "))
        },
    )];
    let still = farneback_flow(&prev, &prev, &params).map(|f| f.data().iter().fold(0.0f32, |m, v| m.max(v.abs())));
    out.push(match still {
        Ok(m) => check("flow.static", m < 1e-3, format!("max |flow| {m:.2e}")),
        Err(e) => check("flow.static", false, e.to_string()),
    });
    out
}

pub fn facs_checks() -> Vec<CheckResult> {
    let phrase = parse_au_string("AU6+AU12").and_then(|ids| describe(&ids)).map(|p| p.text);
    vec![match phrase {
        Ok(t) => check("facs.describe", t == "check raiser and lip corner puller", format!("\"{t}\"")),
        Err(e) => check("facs.describe", false, e.to_string()),
    }]
}

pub fn run_all(opts: &Options) -> Vec<CheckResult> {
    let mut out = gradient_checks();
    out.extend(loss_identities());
    out.extend(shape_checks(opts));
    out.extend(flow_checks());
    out.extend(facs_checks());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_checks_pass() {
        for c in loss_identities().into_iter().chain(facs_checks()).chain(gradient_checks()) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
