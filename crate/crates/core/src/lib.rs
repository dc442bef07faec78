//! Low-precision bitserial linear algebra.
//!
//! Quantized tensors are split into bitplanes and packed into machine words
//! ([`bitpack`]); dot products, matrix products and convolutions are then
//! evaluated with AND/XNOR and popcount ([`kernels`]) and checked against
//! plain integer arithmetic ([`oracle`]). [`autotune`] searches loop
//! schedules for the kernels.

pub mod autotune;
pub mod bitpack;
pub mod error;
pub mod kernels;
pub mod oracle;
pub mod tensor;
pub mod word;

pub use bitpack::{bitpack, bitunpack, repack_tiles, BitPlacement, PackedTensor};
pub use error::{Error, Result};
pub use kernels::{
    binary_dot, bitserial_conv2d, bitserial_dot, bitserial_matmul, conv2d, lower_to_matmul_conv2d,
    pack_activations, pack_weights, staged_accumulate, AccumPlan, ConvStrategy, DotSpec,
    KernelOutput, KernelStats, StagedSum, TileConfig,
};
pub use oracle::{oracle_conv2d, oracle_conv2d_at, oracle_matmul};
pub use tensor::{quantize, value_range, ConvParams, Encoding, Layout, QuantTensor, Tensor};
pub use word::{Word, WordBuf, WordWidth};
