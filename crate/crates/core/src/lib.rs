//! Cross-modal contrastive training of two-stream 3D CNNs for
//! micro-expression recognition, with FACS attribute embeddings.

mod error;

pub mod facs;
pub mod flowprep;
pub mod encoders;
pub mod losses;
pub mod synthdata;
pub mod dataset;
pub mod trainer;
pub mod selftest;

pub use error::{Error, Result};
