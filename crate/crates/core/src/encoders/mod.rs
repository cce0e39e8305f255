//! Video and attribute encoders with their softmax heads.
//!
//! Models are split into a structure (`*Net`, parameter ids only) and a
//! [`ParamStore`] so a forward pass can borrow the store through a [`Binder`]
//! while the structure stays shared.

mod attribute;
mod checkpoint;
mod params;
mod resnet;

use numcore::{Float, Tape, Tensor, Var};

pub use attribute::{MeanPoolEncoder, TextEncoder, ATTR_DIM, TOKEN_DIM};
pub use checkpoint::{
    load_attribute, load_video, save_attribute, save_video, ATTRIBUTE_FILES, VIDEO_FILES,
};
pub use params::{Binder, Mode, ParamId, ParamStore, BN_MOMENTUM};
pub use resnet::{
    ResNet3DConfig, Stream, EMBED_DIM, FLOW_CHANNELS, RGB_CHANNELS, STAGE_CHANNELS, STAGE_NAMES,
};

use crate::flowprep::ClipTensors;
use crate::{Error, Result};
use resnet::{build_stream, Builder};

/// Width of the fused video feature.
pub const FUSED_DIM: usize = 2 * EMBED_DIM;

/// One sample's network inputs with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipPair {
    pub rgb: Tensor,
    pub flow: Tensor,
    pub sample_id: u64,
    pub subject_id: u32,
    pub class_id: usize,
    pub au_string: String,
}

impl ClipPair {
    pub fn new(streams: ClipTensors, sample_id: u64, subject_id: u32, class_id: usize, au_string: String) -> Result<Self> {
        let (r, f) = (streams.rgb.shape(), streams.flow.shape());
        if r.len() != 4 || f.len() != 4 || r[0] != RGB_CHANNELS || f[0] != FLOW_CHANNELS || r[1..] != f[1..] {
            return Err(Error::Contract(format!("clip streams must be [3,T,H,W] and [2,T,H,W], got {r:?} and {f:?}")));
        }
        Ok(ClipPair { rgb: streams.rgb, flow: streams.flow, sample_id, subject_id, class_id, au_string })
    }
}

/// Stack clips into `[N, 3, T, H, W]` and `[N, 2, T, H, W]` batches.
pub fn stack_clips(clips: &[&ClipPair]) -> Result<(Tensor, Tensor)> {
    let rgb: Vec<&Tensor> = clips.iter().map(|c| &c.rgb).collect();
    let flow: Vec<&Tensor> = clips.iter().map(|c| &c.flow).collect();
    Ok((Tensor::stack(&rgb)?, Tensor::stack(&flow)?))
}

/// Linear layer followed by softmax over `n_classes`.
#[derive(Clone, Debug)]
pub struct Head {
    w: ParamId,
    b: ParamId,
    n_classes: usize,
}

impl Head {
    fn build(builder: &mut Builder, prefix: &str, in_dim: usize, n_classes: usize) -> Self {
        Head {
            w: builder.weight(format!("{prefix}.head.weight"), &[in_dim, n_classes], in_dim),
            b: builder.constant(format!("{prefix}.head.bias"), &[n_classes], 0.0, true),
            n_classes,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn weight_id(&self) -> ParamId {
        self.w
    }

    pub fn bias_id(&self) -> ParamId {
        self.b
    }

    /// Class probabilities `[B, n]` for features `[B, D]`.
    pub fn probabilities<F: Float>(&self, tape: &mut Tape<F>, b: &mut Binder<F>, x: Var) -> Result<Var> {
        let (w, bias) = (b.var(tape, self.w), b.var(tape, self.b));
        let logits = tape.linear(x, w, bias)?;
        Ok(tape.softmax(logits)?)
    }
}

fn check_classes(n_classes: usize) -> Result<()> {
    if n_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
    }
    Ok(())
}

/// Parameter-free structure of the two-stream encoder.
#[derive(Clone, Debug)]
pub struct VideoNet {
    pub config: ResNet3DConfig,
    pub rgb: Stream,
    pub flow: Stream,
    pub head: Head,
}

impl VideoNet {
    /// Fused feature `z_m = [z_rgb, z_flow]`, `[N, 256]`.
    pub fn features<F: Float>(&self, tape: &mut Tape<F>, b: &mut Binder<F>, rgb: Var, flow: Var) -> Result<Var> {
        let z_rgb = self.rgb.forward(tape, b, rgb)?;
        let z_flow = self.flow.forward(tape, b, flow)?;
        let z = tape.concat(z_rgb, z_flow)?;
        b.record("fused", &tape.value(z).shape()[1..]);
        Ok(z)
    }
}

pub struct VideoEncoder {
    pub net: VideoNet,
    pub params: ParamStore,
    pub seed: u64,
}

impl VideoEncoder {
    /// Deterministic initialization from `seed`; the two streams draw from disjoint init streams.
    pub fn new(config: &ResNet3DConfig, n_classes: usize, seed: u64) -> Result<Self> {
        check_classes(n_classes)?;
        let mut params = ParamStore::new();
        let mut b = Builder { store: &mut params, seed };
        let rgb = build_stream(&mut b, "rgb", config, RGB_CHANNELS)?;
        let flow = build_stream(&mut b, "flow", config, FLOW_CHANNELS)?;
        let head = Head::build(&mut b, "video", FUSED_DIM, n_classes);
        Ok(VideoEncoder { net: VideoNet { config: config.clone(), rgb, flow, head }, params, seed })
    }

    pub fn n_classes(&self) -> usize {
        self.net.head.n_classes
    }

    /// Fused features of a batch in eval mode, `[N, 256]`.
    pub fn encode_batch(&self, rgb: &Tensor, flow: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut b = Binder::shared(&self.params);
        let (r, f) = (tape.constant(rgb.clone()), tape.constant(flow.clone()));
        let z = self.net.features(&mut tape, &mut b, r, f)?;
        Ok(tape.take_value(z))
    }

    /// Class probabilities of a batch in eval mode, `[N, n]`.
    pub fn predict_batch(&self, rgb: &Tensor, flow: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut b = Binder::shared(&self.params);
        let (r, f) = (tape.constant(rgb.clone()), tape.constant(flow.clone()));
        let z = self.net.features(&mut tape, &mut b, r, f)?;
        let p = self.net.head.probabilities(&mut tape, &mut b, z)?;
        Ok(tape.take_value(p))
    }

    /// Probabilities for one feature vector.
    pub fn classify(&self, feature: &Tensor) -> Result<Tensor> {
        classify(feature, &self.net.head, &self.params)
    }
}

/// `z_m` of one clip, `[256]`.
pub fn encode_video(pair: &ClipPair, enc: &VideoEncoder) -> Result<Tensor> {
    let (rgb, flow) = stack_clips(&[pair])?;
    Ok(enc.encode_batch(&rgb, &flow)?.reshape(&[FUSED_DIM])?)
}

/// Probability vector of a single `[D]` feature under `head`, whose parameters live in `store`.
pub fn classify(feature: &Tensor, head: &Head, store: &ParamStore) -> Result<Tensor> {
    let d = feature.numel();
    let mut tape = Tape::new();
    let mut b = Binder::shared(store);
    let x = tape.constant(feature.clone().reshape(&[1, d])?);
    let p = head.probabilities(&mut tape, &mut b, x)?;
    Ok(tape.take_value(p).reshape(&[head.n_classes])?)
}

/// Parameter-free structure of the attribute encoder.
#[derive(Clone, Debug)]
pub struct AttributeNet {
    pub text: MeanPoolEncoder,
    pub head: Head,
    pub max_len: usize,
}

pub struct AttributeEncoder {
    pub net: AttributeNet,
    pub params: ParamStore,
    pub seed: u64,
}

impl AttributeEncoder {
    pub fn new(vocab_size: usize, max_len: usize, n_classes: usize, seed: u64) -> Result<Self> {
        check_classes(n_classes)?;
        if max_len == 0 || vocab_size < 2 {
            return Err(Error::Config("attribute encoder needs max_len >= 1 and a vocabulary".into()));
        }
        let mut params = ParamStore::new();
        let mut b = Builder { store: &mut params, seed };
        let text = MeanPoolEncoder::build(&mut b, vocab_size);
        let head = Head::build(&mut b, "attr", ATTR_DIM, n_classes);
        Ok(AttributeEncoder { net: AttributeNet { text, head, max_len }, params, seed })
    }

    pub fn n_classes(&self) -> usize {
        self.net.head.n_classes
    }

    pub fn encode_batch(&self, tokens: &[Vec<u32>]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut b = Binder::shared(&self.params);
        let z = self.net.text.encode(&mut tape, &mut b, tokens)?;
        Ok(tape.take_value(z))
    }

    pub fn classify(&self, feature: &Tensor) -> Result<Tensor> {
        classify(feature, &self.net.head, &self.params)
    }
}

/// `z_a` of one padded token sequence, `[256]`.
pub fn encode_attr(tokens: &[u32], enc: &AttributeEncoder) -> Result<Tensor> {
    Ok(enc.encode_batch(&[tokens.to_vec()])?.reshape(&[ATTR_DIM])?)
}

/// Activation shapes (without the batch axis) of one forward pass on a zero
/// clip of `frames x size x size`, keyed by stage name.
pub fn shape_probe(config: &ResNet3DConfig, frames: usize, size: usize) -> Result<Vec<(String, Vec<usize>)>> {
    let enc = VideoEncoder::new(config, 2, 0)?;
    let mut tape = Tape::<f32>::new();
    let mut b = Binder::shared(&enc.params).with_trace();
    let r = tape.constant(Tensor::zeros(&[1, RGB_CHANNELS, frames, size, size]));
    let f = tape.constant(Tensor::zeros(&[1, FLOW_CHANNELS, frames, size, size]));
    enc.net.features(&mut tape, &mut b, r, f)?;
    Ok(b.trace().to_vec())
}
