//! Seeded operand fixtures for the criterion benches.

use bitserial::{
    bitpack, pack_activations, pack_weights, BitPlacement, ConvParams, DotSpec, PackedTensor,
    QuantTensor, Tensor, WordWidth,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_quant(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    layout: &str,
    bits: u8,
    signed: bool,
) -> QuantTensor {
    let n: usize = shape.iter().product();
    let (lo, hi) = bitserial::value_range(bits, signed);
    let vals = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
    QuantTensor::from_values(
        &Tensor::new(shape, layout, vals).expect("shape matches"),
        bits,
        signed,
    )
    .expect("values in range")
}

/// Packed `n x n` activation and weight matrices.
pub struct MatmulFixture {
    pub spec: DotSpec,
    pub act: PackedTensor,
    pub wt: PackedTensor,
}

impl MatmulFixture {
    pub fn square(n: usize, spec: DotSpec, width: WordWidth, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_quant(
            &mut rng,
            &[n, n],
            "MK",
            spec.activation_bits,
            spec.activation_signed,
        );
        let w = random_quant(
            &mut rng,
            &[n, n],
            "NK",
            spec.weight_bits,
            spec.weight_signed,
        );
        MatmulFixture {
            spec,
            act: bitpack(&a, 'K', 0, width).expect("packable"),
            wt: bitpack(&w, 'K', 0, width).expect("packable"),
        }
    }
}

/// A convolution with unpacked activations (packing is part of the timed
/// work) and pre-packed weights.
pub struct ConvFixture {
    pub spec: DotSpec,
    pub params: ConvParams,
    pub act: QuantTensor,
    pub wt: PackedTensor,
    pub width: WordWidth,
}

impl ConvFixture {
    pub fn new(params: ConvParams, spec: DotSpec, width: WordWidth, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = random_quant(
            &mut rng,
            &[1, params.height, params.width, params.in_channels],
            "NHWC",
            spec.activation_bits,
            spec.activation_signed,
        );
        let wt = random_quant(
            &mut rng,
            &[
                params.out_channels,
                params.kernel,
                params.kernel,
                params.in_channels,
            ],
            "OHWI",
            spec.weight_bits,
            spec.weight_signed,
        );
        ConvFixture {
            spec,
            params,
            act,
            wt: pack_weights(&wt, BitPlacement::Outermost, width).expect("packable"),
            width,
        }
    }

    pub fn pack_act(&self) -> PackedTensor {
        pack_activations(&self.act, BitPlacement::Outermost, self.width).expect("packable")
    }
}

/// ResNet-18 layer 9 with its channels divided by `scale`.
pub fn layer9(scale: usize) -> ConvParams {
    ConvParams {
        height: 14,
        width: 14,
        in_channels: 256 / scale,
        out_channels: 256 / scale,
        kernel: 3,
        stride: 1,
        pad: 1,
    }
}
