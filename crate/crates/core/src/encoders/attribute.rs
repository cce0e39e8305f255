//! Reference attribute encoder: token embeddings, masked mean pool and a
//! two-layer perceptron.

use numcore::{Float, Tape, Var};

use super::params::{Binder, ParamId};
use super::resnet::Builder;
use crate::facs::PAD_ID;
use crate::{Error, Result};

pub const TOKEN_DIM: usize = 64;
pub const ATTR_DIM: usize = 256;

/// Anything that maps padded token sequences to feature rows on a tape.
pub trait TextEncoder {
    fn output_dim(&self) -> usize;

    /// `tokens[i]` is one padded sequence; returns `[B, output_dim]`.
    fn encode<F: Float>(&self, tape: &mut Tape<F>, b: &mut Binder<F>, tokens: &[Vec<u32>]) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct MeanPoolEncoder {
    vocab_size: usize,
    table: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl MeanPoolEncoder {
    pub(crate) fn build(builder: &mut Builder, vocab_size: usize) -> Self {
        MeanPoolEncoder {
            vocab_size,
            table: builder.weight("attr.embedding".into(), &[vocab_size, TOKEN_DIM], 6),
            w1: builder.weight("attr.mlp1.weight".into(), &[TOKEN_DIM, ATTR_DIM], TOKEN_DIM),
            b1: builder.constant("attr.mlp1.bias".into(), &[ATTR_DIM], 0.0, true),
            w2: builder.weight("attr.mlp2.weight".into(), &[ATTR_DIM, ATTR_DIM], ATTR_DIM),
            b2: builder.constant("attr.mlp2.bias".into(), &[ATTR_DIM], 0.0, true),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

impl TextEncoder for MeanPoolEncoder {
    fn output_dim(&self) -> usize {
        ATTR_DIM
    }

    fn encode<F: Float>(&self, tape: &mut Tape<F>, b: &mut Binder<F>, tokens: &[Vec<u32>]) -> Result<Var> {
        let len = tokens.first().map(Vec::len).unwrap_or(0);
        if len == 0 || tokens.iter().any(|t| t.len() != len) {
            return Err(Error::Contract("token sequences must be non-empty and equally padded".into()));
        }
        if let Some(i) = tokens.iter().position(|t| t.iter().all(|&id| id == PAD_ID)) {
            return Err(Error::Degenerate(format!("token sequence {i} contains only padding")));
        }
        let ids: Vec<usize> = tokens.iter().flatten().map(|&i| i as usize).collect();
        let mask: Vec<bool> = tokens.iter().flatten().map(|&i| i != PAD_ID).collect();
        let table = b.var(tape, self.table);
        let e = tape.embedding(table, &ids, &[tokens.len(), len])?;
        let pooled = tape.masked_mean(e, &mask)?;
        let (w1, b1) = (b.var(tape, self.w1), b.var(tape, self.b1));
        let h = tape.linear(pooled, w1, b1)?;
        let h = tape.relu(h)?;
        let (w2, b2) = (b.var(tape, self.w2), b.var(tape, self.b2));
        Ok(tape.linear(h, w2, b2)?)
    }
}
