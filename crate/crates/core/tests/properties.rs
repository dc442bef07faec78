mod common;

use bitserial::{
    binary_dot, bitpack, bitserial_dot, bitserial_matmul, bitunpack, quantize, staged_accumulate,
    AccumPlan, BitPlacement, DotSpec, Encoding, QuantTensor, Tensor, TileConfig, WordWidth,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn width() -> impl Strategy<Value = WordWidth> {
    prop::sample::select(WordWidth::ALL.to_vec())
}

fn placement() -> impl Strategy<Value = BitPlacement> {
    prop::sample::select(BitPlacement::ALL.to_vec())
}

fn tile() -> impl Strategy<Value = TileConfig> {
    (
        prop::collection::vec(1usize..20, 3),
        Just(vec![0usize, 1, 2]).prop_shuffle(),
        any::<bool>(),
        any::<bool>(),
        1usize..=8,
    )
        .prop_map(|(splits, order, unroll, parallel, vector)| {
            TileConfig::new(&splits, &order)
                .with_unroll(unroll)
                .with_parallel(parallel)
                .with_vector(vector)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantize_is_monotone_and_in_range(
        mut xs in prop::collection::vec(-3.0f64..3.0, 1..40),
        bits in 1u8..=8,
    ) {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let t = Tensor::new(&[xs.len()], "K", xs.clone()).unwrap();
        let q = quantize(&t, -1.0, 1.0, bits).unwrap();
        let codes = q.codes().data();
        prop_assert!(codes.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(codes.iter().all(|&c| (c as u32) < (1u32 << bits)));
    }

    #[test]
    fn pack_round_trip(
        seed in any::<u64>(),
        shape in prop::collection::vec(1usize..9, 1..4),
        red in 0usize..3,
        bits in 1u8..=8,
        signed in any::<bool>(),
        place in placement(),
        w in width(),
    ) {
        let rank = shape.len();
        let red = red % rank;
        let layout: String = "ABC".chars().take(rank).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = common::random_quant(&mut rng, &shape, &layout, bits, signed);
        let axis = layout.chars().nth(red).unwrap();
        let p = bitpack(&q, axis, place.position(rank, red), w).unwrap();
        prop_assert_eq!(bitunpack(&p).unwrap(), q);
    }

    #[test]
    fn matmul_equals_oracle(
        seed in any::<u64>(),
        (r, c, k) in (1usize..10, 1usize..10, 1usize..=128),
        (mb, nb) in (1u8..=4, 1u8..=4),
        (ws, as_) in (any::<bool>(), any::<bool>()),
        w in width(),
        t in tile(),
        threads in 1usize..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::random_quant(&mut rng, &[r, k], "MK", nb, as_);
        let b = common::random_quant(&mut rng, &[c, k], "NK", mb, ws);
        let spec = DotSpec::new(mb, nb).unwrap().with_signed(ws, as_);
        let pa = bitpack(&a, 'K', 0, w).unwrap();
        let pb = bitpack(&b, 'K', 2, w).unwrap();
        let out = bitserial_matmul(&pa, &pb, &spec, &t, &AccumPlan::default_for(w), threads).unwrap();
        let expected = bitserial::oracle_matmul(&a, &b).unwrap();
        prop_assert_eq!(common::widen(&out.output), expected.data());
        let ops = (r * c * mb as usize * nb as usize * w.words_for(k)) as u64;
        prop_assert_eq!(out.stats.popcount_word_ops, ops);
    }

    #[test]
    fn schedule_and_plan_do_not_change_results(
        seed in any::<u64>(),
        t1 in tile(),
        t2 in tile(),
        narrow8 in any::<bool>(),
        depth in 1usize..8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::random_quant(&mut rng, &[13, 90], "MK", 3, false);
        let b = common::random_quant(&mut rng, &[11, 90], "NK", 2, true);
        let spec = DotSpec::new(2, 3).unwrap().with_signed(true, false);
        let w = WordWidth::W16;
        let pa = bitpack(&a, 'K', 1, w).unwrap();
        let pb = bitpack(&b, 'K', 0, w).unwrap();
        let base = AccumPlan::default_for(w);
        let other = if narrow8 { AccumPlan::narrow8(w) } else { base.with_safe_depth(depth) };
        let x = bitserial_matmul(&pa, &pb, &spec, &t1, &base, 1).unwrap();
        let y = bitserial_matmul(&pa, &pb, &spec, &t2, &other, 4).unwrap();
        prop_assert_eq!(x.output, y.output);
        prop_assert_eq!(x.stats.popcount_word_ops, y.stats.popcount_word_ops);
    }

    #[test]
    fn signed_and_unsigned_agree_on_small_values(
        vals in prop::collection::vec((0i64..8, 0i64..4), 1..100),
        w in width(),
    ) {
        // values fit in B - 1 bits for activations (B = 4) and weights (B = 3)
        let (xs, ys): (Vec<i64>, Vec<i64>) = vals.into_iter().unzip();
        let pack = |v: &[i64], bits, signed| {
            let t = Tensor::new(&[v.len()], "K", v.to_vec()).unwrap();
            bitpack(&QuantTensor::from_values(&t, bits, signed).unwrap(), 'K', 0, w).unwrap()
        };
        let u = bitserial_dot(&pack(&xs, 4, false), &pack(&ys, 3, false), &DotSpec::new(3, 4).unwrap()).unwrap();
        let s = bitserial_dot(
            &pack(&xs, 4, true),
            &pack(&ys, 3, true),
            &DotSpec::new(3, 4).unwrap().with_signed(true, true),
        )
        .unwrap();
        prop_assert_eq!(u, s);
        prop_assert_eq!(u, xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<i64>());
    }

    #[test]
    fn bipolar_self_dot_is_length(bits in prop::collection::vec(any::<bool>(), 1..300), w in width()) {
        let vals: Vec<i64> = bits.iter().map(|&b| if b { 1 } else { -1 }).collect();
        let t = Tensor::new(&[vals.len()], "K", vals.clone()).unwrap();
        let p = bitpack(&QuantTensor::from_bipolar(&t).unwrap(), 'K', 0, w).unwrap();
        prop_assert_eq!(binary_dot(&p, &p, Encoding::Bipolar).unwrap(), vals.len() as i64);
    }

    #[test]
    fn staged_equals_fold(
        w in width(),
        narrow8 in any::<bool>(),
        raw in prop::collection::vec(any::<u32>(), 0..500),
    ) {
        let plan = if narrow8 { AccumPlan::new(8, 32, w).unwrap() } else { AccumPlan::default_for(w) };
        let terms: Vec<u32> = raw.iter().map(|t| t % (w.bits() + 1)).collect();
        let s = staged_accumulate(terms.iter().copied(), &plan).unwrap();
        prop_assert_eq!(s.total, terms.iter().map(|&t| t as u64).sum::<u64>());
        prop_assert_eq!(s.widenings as usize, terms.len().div_ceil(plan.safe_depth));
    }
}
