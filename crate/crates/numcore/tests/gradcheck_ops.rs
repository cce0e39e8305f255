//! Finite-difference checks for every differentiable tape operation.

use numcore::gradcheck::{check_function, CheckConfig};
use numcore::ops::Conv3dSpec;
use numcore::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduce any output to a scalar with fixed random weights so every element matters.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(tape.value(y).shape(), &mut rng);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn assert_check<B>(name: &str, inputs: &[Tensor<f64>], build: B)
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let report = check_function(inputs, build, CheckConfig { probes: 20, step: 1e-5, seed: 7 }).unwrap();
    let worst = report.max_rel_err();
    assert!(report.passed(TOL), "{name}: max relative error {worst:e}: {:#?}", report.probes);
}

#[test]
fn conv3d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[2, 2, 4, 5, 5], &mut rng);
    let w = random(&[3, 2, 3, 3, 3], &mut rng);
    assert_check("conv3d", &[x, w], |t, v| {
        let y = t.conv3d(v[0], v[1], Conv3dSpec::new([2, 2, 2], [1, 1, 1]))?;
        project(t, y, 2)
    });
}

#[test]
fn conv3d_strided_stem_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[1, 3, 4, 9, 9], &mut rng);
    let w = random(&[2, 3, 3, 7, 7], &mut rng);
    assert_check("conv3d stem", &[x, w], |t, v| {
        let y = t.conv3d(v[0], v[1], Conv3dSpec::new([2, 2, 2], [1, 3, 3]))?;
        project(t, y, 4)
    });
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = [random(&[3, 4], &mut rng), random(&[4, 5], &mut rng), random(&[5], &mut rng)];
    assert_check("linear", &inputs, |t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        project(t, y, 6)
    });
}

#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[3, 2, 2, 3, 3], &mut rng);
    let gamma = random(&[2], &mut rng);
    let beta = random(&[2], &mut rng);
    assert_check("batch_norm", &[x, gamma, beta], |t, v| {
        let (y, _) = t.batch_norm(v[0], v[1], v[2])?;
        project(t, y, 8)
    });
}

#[test]
fn softmax_cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let logits = random(&[4, 5], &mut rng);
    assert_check("softmax+ce", &[logits], |t, v| {
        let p = t.softmax(v[0])?;
        let picked = t.pick(p, &[0, 3, 1, 4])?;
        let floored = t.clamp_min(picked, 1e-12)?;
        let l = t.log(floored)?;
        let m = t.mean(l)?;
        t.scale(m, -1.0)
    });
}

#[test]
fn softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    assert_check("softmax", &[random(&[3, 4], &mut rng)], |t, v| {
        let y = t.softmax(v[0])?;
        project(t, y, 11)
    });
}

#[test]
fn cosine_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs = [random(&[3, 8], &mut rng), random(&[3, 8], &mut rng)];
    assert_check("cosine", &inputs, |t, v| {
        let y = t.cosine_rows(v[0], v[1])?;
        project(t, y, 13)
    });
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = random(&[2, 3], &mut rng);
    let b = random(&[2, 3], &mut rng).map(|v| v.abs() + 0.5);
    assert_check("elementwise", &[a, b], |t, v| {
        let e = t.exp(v[0])?;
        let l = t.log(v[1])?;
        let s = t.sub(e, l)?;
        let m = t.mul(s, v[0])?;
        let r = t.relu(m)?;
        let q = t.add(r, v[1])?;
        let k = t.add_scalar(q, 0.25)?;
        let z = t.scale(k, 1.5)?;
        project(t, z, 15)
    });
}

#[test]
fn reduction_and_shape_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random(&[2, 3, 4], &mut rng);
    assert_check("reductions", &[x], |t, v| {
        let s = t.sum_axis(v[0], 1)?; // [2,4]
        let m = t.mean_axis(v[0], 2)?; // [2,3]
        let c = t.concat(s, m)?; // [2,7]
        let sl = t.slice_cols(c, 2, 4)?; // [2,4]
        let r = t.reshape(sl, &[4, 2])?;
        let g = t.gather_rows(r, &[3, 0, 3])?;
        project(t, g, 17)
    });
}

#[test]
fn pooling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = random(&[2, 3, 2, 2, 3], &mut rng);
    assert_check("global_avg_pool", &[x], |t, v| {
        let y = t.global_avg_pool(v[0])?;
        project(t, y, 19)
    });
}

#[test]
fn embedding_and_masked_mean_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let table = random(&[6, 4], &mut rng);
    let ids = [2, 5, 0, 2, 1, 0];
    let mask: Vec<bool> = ids.iter().map(|&i| i != 0).collect();
    assert_check("embedding+masked_mean", &[table], |t, v| {
        let e = t.embedding(v[0], &ids, &[2, 3])?;
        let m = t.masked_mean(e, &mask)?;
        project(t, m, 21)
    });
}

#[test]
fn channel_affine_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = random(&[2, 3, 2, 2], &mut rng);
    assert_check("channel_affine", &[x], |t, v| {
        let y = t.channel_affine(v[0], &[0.5, -1.5, 2.0], &[0.1, 0.2, 0.3])?;
        project(t, y, 23)
    });
}

#[test]
fn f32_and_f64_gradients_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let x = random(&[2, 2, 3, 5, 5], &mut rng);
    let w = random(&[3, 2, 3, 3, 3], &mut rng);
    fn grads<F: numcore::Float>(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
        let mut t = Tape::<F>::new();
        let xv = t.constant(x.cast());
        let wv = t.leaf(w.cast(), true);
        let y = t.conv3d(xv, wv, Conv3dSpec::new([1, 1, 1], [1, 1, 1])).unwrap();
        let s = t.mul(y, y).unwrap();
        let l = t.sum(s).unwrap();
        t.backward(l).unwrap();
        t.grad(wv).unwrap().cast()
    }
    let a = grads::<f32>(&x, &w);
    let b = grads::<f64>(&x, &w);
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() <= 1e-4 * q.abs().max(1.0), "{p} vs {q}");
    }
}
