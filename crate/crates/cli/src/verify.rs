//! Randomized oracle checks behind the `verify` subcommand.

use std::fmt;

use bitserial::{
    bitpack, bitserial_dot, bitserial_matmul, bitunpack, conv2d, oracle_conv2d, oracle_matmul,
    pack_activations, pack_weights, staged_accumulate, AccumPlan, BitPlacement, ConvParams,
    ConvStrategy, DotSpec, Encoding, QuantTensor, Tensor, TileConfig, WordWidth,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    /// First failing case, if any.
    pub failure: Option<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.failure {
            None => write!(f, "PASS {:<24} {} cases", self.name, self.cases),
            Some(why) => write!(f, "FAIL {:<24} {why}", self.name),
        }
    }
}

const WIDTHS: [WordWidth; 4] = WordWidth::ALL;

fn random_spec(rng: &mut ChaCha8Rng, max_bits: u8) -> DotSpec {
    if rng.gen_ratio(1, 8) {
        return DotSpec::bipolar();
    }
    DotSpec::new(rng.gen_range(1..=max_bits), rng.gen_range(1..=max_bits))
        .expect("bits in range")
        .with_signed(rng.gen_bool(0.5), rng.gen_bool(0.5))
}

pub fn random_operand(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    layout: &str,
    bits: u8,
    signed: bool,
    enc: Encoding,
) -> Result<QuantTensor> {
    let n: usize = shape.iter().product();
    Ok(match enc {
        Encoding::Bipolar => {
            let vals = (0..n)
                .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
                .collect();
            QuantTensor::from_bipolar(&Tensor::new(shape, layout, vals)?)?
        }
        Encoding::Unipolar => {
            let (lo, hi) = bitserial::value_range(bits, signed);
            let vals = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
            QuantTensor::from_values(&Tensor::new(shape, layout, vals)?, bits, signed)?
        }
    })
}

/// Random schedule for `[a, b, c]` tiled axes.
pub fn random_tile(rng: &mut ChaCha8Rng) -> TileConfig {
    let mut order = vec![0, 1, 2];
    order.shuffle(rng);
    let splits: Vec<usize> = (0..3)
        .map(|_| *[1, 2, 3, 4, 8, 16, usize::MAX].choose(rng).unwrap())
        .collect();
    TileConfig::new(&splits, &order)
        .with_unroll(rng.gen_bool(0.5))
        .with_vector(rng.gen_range(1..=8))
}

fn widen(v: &[i32]) -> Vec<i64> {
    v.iter().map(|&x| x as i64).collect()
}

fn run(
    name: &str,
    cases: usize,
    mut case: impl FnMut(usize) -> Result<Option<String>>,
) -> Result<Check> {
    for i in 0..cases {
        if let Some(why) = case(i)? {
            return Ok(Check {
                name: name.into(),
                cases,
                failure: Some(format!("case {i}: {why}")),
            });
        }
    }
    Ok(Check {
        name: name.into(),
        cases,
        failure: None,
    })
}

/// Random matmul against the oracle; shapes up to `max_dim` per axis.
pub fn check_matmul(rng: &mut ChaCha8Rng, cases: usize, max_dim: usize) -> Result<Check> {
    run("matmul", cases, |_| {
        let spec = random_spec(rng, 4);
        let width = *WIDTHS.choose(rng).unwrap();
        let (r, c, k) = (
            rng.gen_range(1..=max_dim),
            rng.gen_range(1..=max_dim),
            rng.gen_range(1..=max_dim),
        );
        let a = random_operand(
            rng,
            &[r, k],
            "MK",
            spec.activation_bits,
            spec.activation_signed,
            spec.encoding,
        )?;
        let w = random_operand(
            rng,
            &[c, k],
            "NK",
            spec.weight_bits,
            spec.weight_signed,
            spec.encoding,
        )?;
        let pa = bitpack(
            &a,
            'K',
            BitPlacement::ALL.choose(rng).unwrap().position(2, 1),
            width,
        )?;
        let pw = bitpack(
            &w,
            'K',
            BitPlacement::ALL.choose(rng).unwrap().position(2, 1),
            width,
        )?;
        let tile = random_tile(rng);
        let threads = rng.gen_range(1..=4);
        let out = bitserial_matmul(
            &pa,
            &pw,
            &spec,
            &tile,
            &AccumPlan::default_for(width),
            threads,
        )?;
        let expected = oracle_matmul(&a, &w)?;
        Ok((widen(out.output.data()) != expected.data())
            .then(|| format!("{spec} {width} {r}x{c}x{k} {tile}")))
    })
}

/// Random convolutions through both strategies against the oracle.
pub fn check_conv(
    rng: &mut ChaCha8Rng,
    cases: usize,
    max_hw: usize,
    max_c: usize,
) -> Result<Check> {
    run("conv2d direct+lowered", cases, |_| {
        let spec = random_spec(rng, 4);
        let width = *WIDTHS.choose(rng).unwrap();
        let k = *[1usize, 3].choose(rng).unwrap();
        let p = ConvParams {
            height: rng.gen_range(k..=max_hw.max(k)),
            width: rng.gen_range(k..=max_hw.max(k)),
            in_channels: rng.gen_range(1..=max_c),
            out_channels: rng.gen_range(1..=max_c),
            kernel: k,
            stride: rng.gen_range(1..=2),
            pad: if spec.encoding == Encoding::Bipolar {
                0
            } else {
                (k - 1) / 2
            },
        };
        let act = random_operand(
            rng,
            &[1, p.height, p.width, p.in_channels],
            "NHWC",
            spec.activation_bits,
            spec.activation_signed,
            spec.encoding,
        )?;
        let wt = random_operand(
            rng,
            &[p.out_channels, k, k, p.in_channels],
            "OHWI",
            spec.weight_bits,
            spec.weight_signed,
            spec.encoding,
        )?;
        let expected = oracle_conv2d(&act, &wt, &p)?;
        let pa = pack_activations(&act, *BitPlacement::ALL.choose(rng).unwrap(), width)?;
        let pw = pack_weights(&wt, *BitPlacement::ALL.choose(rng).unwrap(), width)?;
        let tile = random_tile(rng);
        let plan = AccumPlan::default_for(width);
        for strategy in [ConvStrategy::Direct, ConvStrategy::Lowered] {
            let out = conv2d(
                &pa,
                &pw,
                &p,
                &spec,
                &tile,
                &plan,
                rng.gen_range(1..=4),
                strategy,
            )?;
            if widen(out.output.data()) != expected.data() {
                return Ok(Some(format!("{strategy} {spec} {width} {p:?} {tile}")));
            }
        }
        Ok(None)
    })
}

/// Packed dot products against a plain sum.
pub fn check_dot(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    run("bitserial_dot", cases, |_| {
        let spec = random_spec(rng, 8);
        let width = *WIDTHS.choose(rng).unwrap();
        let k = rng.gen_range(1..300);
        let x = random_operand(
            rng,
            &[k],
            "K",
            spec.activation_bits,
            spec.activation_signed,
            spec.encoding,
        )?;
        let y = random_operand(
            rng,
            &[k],
            "K",
            spec.weight_bits,
            spec.weight_signed,
            spec.encoding,
        )?;
        let expected: i64 = x
            .values()
            .data()
            .iter()
            .zip(y.values().data())
            .map(|(a, b)| a * b)
            .sum();
        let got = bitserial_dot(
            &bitpack(&x, 'K', 0, width)?,
            &bitpack(&y, 'K', 0, width)?,
            &spec,
        )?;
        Ok((got != expected).then(|| format!("{spec} {width} k={k}: {got} != {expected}")))
    })
}

/// Pack then unpack is the identity.
pub fn check_round_trip(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    run("bitpack round trip", cases, |_| {
        let rank = rng.gen_range(1..=4);
        let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=9)).collect();
        let layout: String = "ABCD".chars().take(rank).collect();
        let bits = rng.gen_range(1..=8);
        let signed = rng.gen_bool(0.5);
        let q = random_operand(rng, &shape, &layout, bits, signed, Encoding::Unipolar)?;
        let red = rng.gen_range(0..rank);
        let place = *BitPlacement::ALL.choose(rng).unwrap();
        let width = *WIDTHS.choose(rng).unwrap();
        let axis = layout.chars().nth(red).unwrap();
        let p = bitpack(&q, axis, place.position(rank, red), width)?;
        Ok((bitunpack(&p)? != q).then(|| format!("{shape:?} axis {axis} {place:?} {width}")))
    })
}

/// Staged accumulation against a wide fold.
pub fn check_staged(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    run("staged accumulation", cases, |_| {
        let width = *WIDTHS.choose(rng).unwrap();
        let plan = if rng.gen_bool(0.5) {
            AccumPlan::new(8, 32, width)?
        } else {
            AccumPlan::default_for(width)
        };
        let len = rng.gen_range(0..2000);
        let terms: Vec<u32> = (0..len).map(|_| rng.gen_range(0..=width.bits())).collect();
        let got = staged_accumulate(terms.iter().copied(), &plan)?.total;
        let expected: u64 = terms.iter().map(|&t| t as u64).sum();
        Ok((got != expected)
            .then(|| format!("{width} narrow {}: {got} != {expected}", plan.narrow_bits)))
    })
}

/// All suites with `cases` cases each.
pub fn run_verify(seed: u64, cases: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        check_round_trip(&mut rng, cases)?,
        check_dot(&mut rng, cases)?,
        check_staged(&mut rng, cases)?,
        check_matmul(&mut rng, cases, 32)?,
        check_conv(&mut rng, cases, 10, 40)?,
    ])
}
