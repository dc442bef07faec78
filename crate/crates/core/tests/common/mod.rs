#![allow(dead_code)]

use bitserial::{Encoding, QuantTensor, Tensor};
use rand::Rng;

pub fn random_quant<R: Rng>(
    rng: &mut R,
    shape: &[usize],
    layout: &str,
    bits: u8,
    signed: bool,
) -> QuantTensor {
    let n: usize = shape.iter().product();
    let (lo, hi) = bitserial::value_range(bits, signed);
    let vals = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
    QuantTensor::from_values(&Tensor::new(shape, layout, vals).unwrap(), bits, signed).unwrap()
}

pub fn random_bipolar<R: Rng>(rng: &mut R, shape: &[usize], layout: &str) -> QuantTensor {
    let n: usize = shape.iter().product();
    let vals = (0..n)
        .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
        .collect();
    QuantTensor::from_bipolar(&Tensor::new(shape, layout, vals).unwrap()).unwrap()
}

pub fn random_operand<R: Rng>(
    rng: &mut R,
    shape: &[usize],
    layout: &str,
    bits: u8,
    signed: bool,
    encoding: Encoding,
) -> QuantTensor {
    match encoding {
        Encoding::Bipolar => random_bipolar(rng, shape, layout),
        Encoding::Unipolar => random_quant(rng, shape, layout, bits, signed),
    }
}

pub fn widen(t: &Tensor<i32>) -> Vec<i64> {
    t.data().iter().map(|&v| v as i64).collect()
}
