//! Whole-model gradients against central finite differences, in f64.

use numcore::gradcheck::{central_difference, relative_error};
use numcore::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xmodal_core::encoders::{AttributeEncoder, Binder, ParamId, ParamStore, ResNet3DConfig, VideoEncoder};
use xmodal_core::facs::{describe, tokenize, Vocabulary};
use xmodal_core::losses::{contrastive_loss, cross_entropy, total_loss, LossWeights, NegativeMode, PairBatch};
use xmodal_core::Result;

/// Parameters have magnitudes near 0.05, so larger steps cross ReLU kinks.
const STEP: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

struct Setup {
    video: VideoEncoder,
    attr: AttributeEncoder,
    rgb: Tensor<f64>,
    flow: Tensor<f64>,
    tokens: Vec<Vec<u32>>,
    classes: Vec<usize>,
}

fn setup() -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let vocab = Vocabulary::from_codebook();
    let tokens = vec![
        tokenize(&describe(&[6, 12]).unwrap(), &vocab, 8),
        tokenize(&describe(&[1, 4]).unwrap(), &vocab, 8),
    ];
    Setup {
        video: VideoEncoder::new(&ResNet3DConfig::new(10).unwrap(), 2, 3).unwrap(),
        attr: AttributeEncoder::new(vocab.len(), 8, 2, 4).unwrap(),
        rgb: random(&[2, 3, 4, 16, 16], &mut rng),
        flow: random(&[2, 2, 4, 16, 16], &mut rng),
        tokens,
        classes: vec![0, 1],
    }
}

/// Total training loss with both encoders in train mode; returns the loss and
/// gradients of every bound trainable parameter.
#[allow(clippy::type_complexity)]
fn loss(
    s: &Setup,
    vp: &mut ParamStore<f64>,
    ap: &mut ParamStore<f64>,
) -> Result<(f64, Vec<(ParamId, Tensor<f64>)>, Vec<(ParamId, Tensor<f64>)>)> {
    let mut tape = Tape::<f64>::new();
    let mut vb = Binder::lend(vp);
    let mut ab = Binder::lend(ap);
    let out = (|| {
        let r = tape.constant(s.rgb.clone());
        let f = tape.constant(s.flow.clone());
        let zm = s.video.net.features(&mut tape, &mut vb, r, f)?;
        let pv = s.video.net.head.probabilities(&mut tape, &mut vb, zm)?;
        use xmodal_core::encoders::TextEncoder;
        let za = s.attr.net.text.encode(&mut tape, &mut ab, &s.tokens)?;
        let pa = s.attr.net.head.probabilities(&mut tape, &mut ab, za)?;
        let lt = cross_entropy(&mut tape, pv, &s.classes)?;
        let lp = cross_entropy(&mut tape, pa, &s.classes)?;
        let batch = PairBatch::build(&[0, 1], &s.classes, 4, NegativeMode::DifferentClass)?;
        let lc = contrastive_loss(&mut tape, zm, za, &batch)?;
        let l = total_loss(&mut tape, lt, lp, lc, LossWeights::new(0.5)?)?;
        tape.backward(l)?;
        Ok::<_, xmodal_core::Error>(tape.value(l).item()?)
    })();
    let vg = vb.finish(&mut tape);
    let ag = ab.finish(&mut tape);
    Ok((out?, vg, ag))
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let s = setup();
    let mut vp = s.video.params.cast::<f64>();
    let mut ap = s.attr.params.cast::<f64>();
    let (_, vg, ag) = loss(&s, &mut vp, &mut ap).unwrap();

    // 20 probes: 14 video parameters, 6 attribute parameters.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for probe in 0..20 {
        let video_side = probe < 14;
        let grads = if video_side { &vg } else { &ag };
        let (id, g) = &grads[rng.gen_range(0..grads.len())];
        let k = rng.gen_range(0..g.numel());
        let analytic = g.data()[k];
        let numeric = central_difference(
            |delta| {
                let (mut v2, mut a2) = (vp.clone(), ap.clone());
                let target = if video_side { &mut v2 } else { &mut a2 };
                target.get_mut(*id).data_mut()[k] += delta;
                Ok(loss(&s, &mut v2, &mut a2).map_err(|e| numcore::NumError::Contract(e.to_string()))?.0)
            },
            STEP,
        )
        .unwrap();
        let err = relative_error(analytic, numeric);
        let name = if video_side { vp.name(*id) } else { ap.name(*id) };
        assert!(err < 1e-3, "{name}[{k}]: analytic {analytic:e} numeric {numeric:e} rel {err:e}");
        worst = worst.max(err);
    }
    eprintln!("worst relative error {worst:e}");
}

#[test]
fn video_feature_gradient_on_ten_parameters() {
    let s = setup();
    let mut vp = s.video.params.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let proj = random(&[2, 256], &mut rng);
    let run = |vp: &mut ParamStore<f64>| -> Result<(f64, Vec<(ParamId, Tensor<f64>)>)> {
        let mut tape = Tape::<f64>::new();
        let mut b = Binder::lend(vp);
        let out = (|| {
            let r = tape.constant(s.rgb.clone());
            let f = tape.constant(s.flow.clone());
            let z = s.video.net.features(&mut tape, &mut b, r, f)?;
            let w = tape.constant(proj.clone());
            let p = tape.mul(z, w)?;
            let l = tape.sum(p)?;
            tape.backward(l)?;
            Ok::<_, xmodal_core::Error>(tape.value(l).item()?)
        })();
        let g = b.finish(&mut tape);
        Ok((out?, g))
    };
    let (_, grads) = run(&mut vp).unwrap();
    for _ in 0..10 {
        let (id, g) = &grads[rng.gen_range(0..grads.len())];
        let k = rng.gen_range(0..g.numel());
        let numeric = central_difference(
            |delta| {
                let mut v2 = vp.clone();
                v2.get_mut(*id).data_mut()[k] += delta;
                Ok(run(&mut v2).map_err(|e| numcore::NumError::Contract(e.to_string()))?.0)
            },
            STEP,
        )
        .unwrap();
        let err = relative_error(g.data()[k], numeric);
        assert!(err < 1e-3, "{}[{k}]: rel {err:e}", vp.name(*id));
    }
}
