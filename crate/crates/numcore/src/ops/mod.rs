//! Forward and backward kernels. The [`crate::Tape`] records these; the free
//! functions here can also be called directly on tensors when no gradient is
//! needed.

pub mod conv;
pub mod dense;
pub mod norm;

pub use conv::{conv3d, conv3d_direct, conv_out_len, Conv3dSpec};
pub use dense::{concat_cols, cosine_similarity, linear, slice_cols, softmax};
pub use norm::BN_EPS;
