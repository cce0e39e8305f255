//! Two-stream 3D residual video encoder.

use numcore::ops::Conv3dSpec;
use numcore::{Float, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::params::{uniform_init, Binder, Mode, ParamId, ParamStore};
use crate::{Error, Result};

pub const STAGE_CHANNELS: [usize; 4] = [64, 128, 256, 512];
pub const STAGE_NAMES: [&str; 4] = ["conv2_x", "conv3_x", "conv4_x", "conv5_x"];
pub const EMBED_DIM: usize = 128;
pub const RGB_CHANNELS: usize = 3;
pub const FLOW_CHANNELS: usize = 2;

fn default_conv1_stride() -> [usize; 3] {
    [2, 2, 2]
}

fn is_default_stride(s: &[usize; 3]) -> bool {
    *s == default_conv1_stride()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResNet3DConfig {
    pub depth: usize,
    /// Stride of the stem convolution. Only altered by fault-injection tests.
    #[doc(hidden)]
    #[serde(default = "default_conv1_stride", skip_serializing_if = "is_default_stride")]
    pub conv1_stride: [usize; 3],
}

impl ResNet3DConfig {
    pub fn new(depth: usize) -> Result<Self> {
        let c = ResNet3DConfig { depth, conv1_stride: default_conv1_stride() };
        c.blocks_per_stage()?;
        Ok(c)
    }

    pub fn blocks_per_stage(&self) -> Result<[usize; 4]> {
        match self.depth {
            10 => Ok([1, 1, 1, 1]),
            18 => Ok([2, 2, 2, 2]),
            34 => Ok([3, 4, 6, 3]),
            d => Err(Error::Config(format!("unsupported depth {d}; expected 10, 18 or 34"))),
        }
    }
}

#[derive(Clone, Debug)]
struct ConvBn {
    weight: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    spec: Conv3dSpec,
}

/// Allocates parameters with one init stream per tensor.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub seed: u64,
}

impl Builder<'_> {
    fn next_stream(&self) -> u64 {
        self.store.len() as u64
    }

    /// Fan-in-scaled uniform weights, `bound = sqrt(6 / fan_in)`.
    pub fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let t = uniform_init(shape, (6.0 / fan_in as f64).sqrt(), self.seed, self.next_stream());
        self.store.add(name, t, true)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f32, trainable: bool) -> ParamId {
        self.store.add(name, Tensor::full(shape, value), trainable)
    }

    fn conv_bn(&mut self, name: &str, c_in: usize, c_out: usize, k: [usize; 3], spec: Conv3dSpec) -> ConvBn {
        let fan_in = c_in * k.iter().product::<usize>();
        ConvBn {
            weight: self.weight(format!("{name}.weight"), &[c_out, c_in, k[0], k[1], k[2]], fan_in),
            gamma: self.constant(format!("{name}.bn.gamma"), &[c_out], 1.0, true),
            beta: self.constant(format!("{name}.bn.beta"), &[c_out], 0.0, true),
            running_mean: self.constant(format!("{name}.bn.running_mean"), &[c_out], 0.0, false),
            running_var: self.constant(format!("{name}.bn.running_var"), &[c_out], 1.0, false),
            spec,
        }
    }
}

impl ConvBn {
    fn forward<F: Float>(&self, tape: &mut Tape<F>, b: &mut Binder<F>, x: Var, relu: bool) -> Result<Var> {
        let w = b.var(tape, self.weight);
        let y = tape.conv3d(x, w, self.spec)?;
        let y = match b.mode() {
            Mode::Train => {
                let (g, be) = (b.var(tape, self.gamma), b.var(tape, self.beta));
                let (y, stats) = tape.batch_norm(y, g, be)?;
                b.update_running(self.running_mean, self.running_var, &stats.mean, &stats.var_unbiased);
                y
            }
            Mode::Eval => {
                let s = b.store();
                let (g, be) = (s.get(self.gamma).data(), s.get(self.beta).data());
                let (m, v) = (s.get(self.running_mean).data(), s.get(self.running_var).data());
                let mut scale = Vec::with_capacity(g.len());
                let mut shift = Vec::with_capacity(g.len());
                for c in 0..g.len() {
                    let k = g[c].as_f64() / (v[c].as_f64() + numcore::ops::BN_EPS).sqrt();
                    scale.push(F::of(k));
                    shift.push(F::of(be[c].as_f64() - m[c].as_f64() * k));
                }
                tape.channel_affine(y, &scale, &shift)?
            }
        };
        Ok(if relu { tape.relu(y)? } else { y })
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    a: ConvBn,
    b: ConvBn,
    shortcut: Option<ConvBn>,
}

impl BasicBlock {
    fn forward<F: Float>(&self, tape: &mut Tape<F>, bind: &mut Binder<F>, x: Var) -> Result<Var> {
        let y = self.a.forward(tape, bind, x, true)?;
        let y = self.b.forward(tape, bind, y, false)?;
        let s = match &self.shortcut {
            Some(p) => p.forward(tape, bind, x, false)?,
            None => x,
        };
        let y = tape.add(y, s)?;
        Ok(tape.relu(y)?)
    }
}

/// One 3D-ResNet stream: stem, four residual stages, global pool, projection.
#[derive(Clone, Debug)]
pub struct Stream {
    name: String,
    in_channels: usize,
    conv1: ConvBn,
    stages: Vec<Vec<BasicBlock>>,
    fc_w: ParamId,
    fc_b: ParamId,
}

pub(crate) fn build_stream(
    builder: &mut Builder,
    name: &str,
    config: &ResNet3DConfig,
    in_channels: usize,
) -> Result<Stream> {
    let blocks = config.blocks_per_stage()?;
    if config.conv1_stride.contains(&0) {
        return Err(Error::Config("conv1 stride components must be >= 1".into()));
    }
    let conv1 = builder.conv_bn(
        &format!("{name}.conv1"),
        in_channels,
        STAGE_CHANNELS[0],
        [3, 7, 7],
        Conv3dSpec::new(config.conv1_stride, [1, 3, 3]),
    );
    let mut c_in = STAGE_CHANNELS[0];
    let mut stages = Vec::new();
    for (s, (&n, &c_out)) in blocks.iter().zip(&STAGE_CHANNELS).enumerate() {
        let mut stage = Vec::new();
        for i in 0..n {
            let stride = if s > 0 && i == 0 { 2 } else { 1 };
            let p = format!("{name}.{}.{i}", STAGE_NAMES[s]);
            let a = builder.conv_bn(&format!("{p}.conv_a"), c_in, c_out, [3; 3], Conv3dSpec::new([stride; 3], [1; 3]));
            let b = builder.conv_bn(&format!("{p}.conv_b"), c_out, c_out, [3; 3], Conv3dSpec::new([1; 3], [1; 3]));
            let shortcut = (stride != 1 || c_in != c_out).then(|| {
                builder.conv_bn(&format!("{p}.shortcut"), c_in, c_out, [1; 3], Conv3dSpec::new([stride; 3], [0; 3]))
            });
            stage.push(BasicBlock { a, b, shortcut });
            c_in = c_out;
        }
        stages.push(stage);
    }
    let fc_w = builder.weight(format!("{name}.fc.weight"), &[c_in, EMBED_DIM], c_in);
    let fc_b = builder.constant(format!("{name}.fc.bias"), &[EMBED_DIM], 0.0, true);
    Ok(Stream { name: name.to_string(), in_channels, conv1, stages, fc_w, fc_b })
}

impl Stream {
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// `x [N, C, T, H, W] -> [N, 128]`.
    pub fn forward<F: Float>(&self, tape: &mut Tape<F>, b: &mut Binder<F>, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 5 || shape[1] != self.in_channels {
            return Err(Error::Num(numcore::NumError::Dimension {
                op: "video stream",
                detail: format!("{} expects [N, {}, T, H, W], got {shape:?}", self.name, self.in_channels),
            }));
        }
        let mut y = self.conv1.forward(tape, b, x, true)?;
        b.record(&format!("{}.conv1", self.name), &tape.value(y).shape()[1..]);
        for (s, stage) in self.stages.iter().enumerate() {
            for block in stage {
                y = block.forward(tape, b, y)?;
            }
            b.record(&format!("{}.{}", self.name, STAGE_NAMES[s]), &tape.value(y).shape()[1..]);
        }
        let pooled = tape.global_avg_pool(y)?;
        let (w, bias) = (b.var(tape, self.fc_w), b.var(tape, self.fc_b));
        let z = tape.linear(pooled, w, bias)?;
        b.record(&format!("{}.fc", self.name), &tape.value(z).shape()[1..]);
        Ok(z)
    }
}
