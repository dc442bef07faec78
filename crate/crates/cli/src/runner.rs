//! Timed comparisons of the bitserial kernels against the integer baselines.

use std::time::Instant;

use bitserial::autotune::{
    enumerate_space, random_search, ConfigStore, KernelEvaluator, SearchOutcome, Workload,
};
use bitserial::{
    bitpack, bitserial_matmul, conv2d, oracle_conv2d, oracle_conv2d_at, oracle_matmul,
    pack_activations, pack_weights, AccumPlan, BitPlacement, ConvParams, ConvStrategy, DotSpec,
    Encoding, KernelOutput, QuantTensor, Tensor, TileConfig, WordWidth,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baseline::{int_conv2d, int_matmul, Baseline, IntData};
use crate::error::{BenchError, Result};
use crate::layers::{layer, Layer};
use crate::report::{BenchReport, BenchRow};

/// Settings shared by all benchmark runs.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Channel divisor.
    pub scale: usize,
    pub threads: usize,
    pub warmup: usize,
    pub repeats: usize,
    pub seed: u64,
    pub strategy: ConvStrategy,
    pub width: WordWidth,
    pub store: Option<ConfigStore>,
    pub machine: String,
    /// Largest allowed working set.
    pub max_bytes: u64,
    /// Output points compared with the oracle when a full check is too
    /// expensive.
    pub sample_points: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            scale: 4,
            threads: 1,
            warmup: 1,
            repeats: 10,
            seed: 0,
            strategy: ConvStrategy::Direct,
            width: WordWidth::W64,
            store: None,
            machine: bitserial::autotune::machine_tag(),
            max_bytes: 4 << 30,
            sample_points: 256,
        }
    }
}

/// Scales at or above this divisor are checked against the oracle at every
/// output point.
pub const FULL_CHECK_SCALE: usize = 4;

/// Square matmuls above this size are spot-checked.
const FULL_CHECK_MATMUL: usize = 256;

fn random_values(
    rng: &mut ChaCha8Rng,
    n: usize,
    bits: u8,
    signed: bool,
    enc: Encoding,
) -> Vec<i64> {
    match enc {
        Encoding::Bipolar => (0..n)
            .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
            .collect(),
        Encoding::Unipolar => {
            let (lo, hi) = bitserial::value_range(bits, signed);
            (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
        }
    }
}

fn operand(
    values: Vec<i64>,
    shape: &[usize],
    layout: &str,
    bits: u8,
    signed: bool,
    enc: Encoding,
) -> Result<QuantTensor> {
    let t = Tensor::new(shape, layout, values)?;
    Ok(match enc {
        Encoding::Bipolar => QuantTensor::from_bipolar(&t)?,
        Encoding::Unipolar => QuantTensor::from_values(&t, bits, signed)?,
    })
}

fn case_seed(base: u64, tag: &str) -> u64 {
    tag.bytes().fold(base ^ 0x9e37_79b9_7f4a_7c15, |h, b| {
        h.rotate_left(7) ^ b as u64
    })
}

fn time_min<T>(
    warmup: usize,
    repeats: usize,
    mut f: impl FnMut() -> Result<T>,
) -> Result<(u64, T)> {
    for _ in 0..warmup {
        f()?;
    }
    let mut best = u64::MAX;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let v = f()?;
        best = best.min(start.elapsed().as_nanos() as u64);
        last = Some(v);
    }
    Ok((best, last.expect("at least one repeat")))
}

fn check_size(bytes: u64, opts: &BenchOptions) -> Result<()> {
    if bytes > opts.max_bytes {
        return Err(BenchError::TooLarge {
            bytes,
            limit: opts.max_bytes,
        });
    }
    Ok(())
}

/// Rough working set of one convolution benchmark.
pub fn conv_bytes(p: &ConvParams, strategy: ConvStrategy, baseline: Baseline) -> u64 {
    let elem = match baseline {
        Baseline::Int8 => 1,
        Baseline::Int16 => 2,
        Baseline::Int32 => 4,
    };
    let act = (p.height * p.width * p.in_channels) as u64;
    let wt = (p.out_channels * p.kernel * p.kernel * p.in_channels) as u64;
    let out = (p.out_height() * p.out_width() * p.out_channels) as u64;
    // values as i64 and codes, both baseline copies, two i32 outputs, oracle
    let mut bytes = (act + wt) * (8 + 1 + elem) + out * (4 + 4 + 8);
    if strategy == ConvStrategy::Lowered {
        // patch matrix: up to 8 planes of one bit per element
        bytes += (p.out_height() * p.out_width() * p.kernel * p.kernel * p.in_channels) as u64;
    }
    bytes
}

fn tile_for(workload: &Workload, opts: &BenchOptions) -> Result<TileConfig> {
    let fallback = enumerate_space(workload)?.default_config();
    Ok(match &opts.store {
        Some(store) => store.load_best(workload, &opts.machine, fallback),
        None => fallback,
    })
}

/// Tuner workload of one convolution benchmark.
pub fn conv_workload(p: &ConvParams, spec: &DotSpec, opts: &BenchOptions) -> Workload {
    Workload::Conv {
        batch: 1,
        params: *p,
        spec: *spec,
        width: opts.width,
        strategy: opts.strategy,
    }
}

fn oracle_agrees_conv(
    act: &QuantTensor,
    wt: &QuantTensor,
    p: &ConvParams,
    got: &[i32],
    full: bool,
    points: usize,
    seed: u64,
) -> Result<bool> {
    if full {
        let expected = oracle_conv2d(act, wt, p)?;
        return Ok(expected
            .data()
            .iter()
            .zip(got)
            .all(|(&e, &g)| e == g as i64));
    }
    let (av, wv) = (act.values(), wt.values());
    let (oh, ow, oc) = (p.out_height(), p.out_width(), p.out_channels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..points {
        let at = [
            0,
            rng.gen_range(0..oh),
            rng.gen_range(0..ow),
            rng.gen_range(0..oc),
        ];
        let e = oracle_conv2d_at(&av, &wv, p, at)?;
        if e != got[(at[1] * ow + at[2]) * oc + at[3]] as i64 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Benchmarks one layer at one precision.
pub fn run_conv_case(
    layer: &Layer,
    spec: &DotSpec,
    baseline: Baseline,
    opts: &BenchOptions,
) -> Result<BenchRow> {
    let p = layer.params(opts.scale)?;
    check_size(conv_bytes(&p, opts.strategy, baseline), opts)?;
    let tag = spec.tag();
    let seed = case_seed(opts.seed, &format!("{}{tag}", layer.name));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ashape = [1, p.height, p.width, p.in_channels];
    let wshape = [p.out_channels, p.kernel, p.kernel, p.in_channels];
    let avals = random_values(
        &mut rng,
        ashape.iter().product(),
        spec.activation_bits,
        spec.activation_signed,
        spec.encoding,
    );
    let wvals = random_values(
        &mut rng,
        wshape.iter().product(),
        spec.weight_bits,
        spec.weight_signed,
        spec.encoding,
    );
    let act = operand(
        avals.clone(),
        &ashape,
        "NHWC",
        spec.activation_bits,
        spec.activation_signed,
        spec.encoding,
    )?;
    let wt = operand(
        wvals.clone(),
        &wshape,
        "OHWI",
        spec.weight_bits,
        spec.weight_signed,
        spec.encoding,
    )?;

    // weights are packed ahead of time; activation packing is timed
    let pw = pack_weights(&wt, BitPlacement::Outermost, opts.width)?;
    let workload = conv_workload(&p, spec, opts);
    let tile = tile_for(&workload, opts)?;
    let plan = AccumPlan::default_for(opts.width);
    let (bitserial_ns, out): (u64, KernelOutput) = time_min(opts.warmup, opts.repeats, || {
        let pa = pack_activations(&act, BitPlacement::Outermost, opts.width)?;
        Ok(conv2d(
            &pa,
            &pw,
            &p,
            spec,
            &tile,
            &plan,
            opts.threads,
            opts.strategy,
        )?)
    })?;

    let (ba, bw) = (
        IntData::new(baseline, &avals)?,
        IntData::new(baseline, &wvals)?,
    );
    let (baseline_ns, base_out) = time_min(opts.warmup, opts.repeats, || {
        int_conv2d(&ba, &bw, 1, &p, opts.threads)
    })?;

    let full = opts.scale >= FULL_CHECK_SCALE;
    let ok = base_out == out.output.data()
        && oracle_agrees_conv(
            &act,
            &wt,
            &p,
            out.output.data(),
            full,
            opts.sample_points,
            seed,
        )?;
    if !ok {
        log::error!(
            "layer {} {tag}: output disagrees with the reference",
            layer.name
        );
    }
    log::info!(
        "layer {} {tag} ({}): bitserial {:.3} ms, {baseline} {:.3} ms",
        layer.name,
        tile,
        bitserial_ns as f64 / 1e6,
        baseline_ns as f64 / 1e6
    );
    Ok(BenchRow {
        layer: layer.name.to_string(),
        precision: tag,
        baseline: baseline.to_string(),
        baseline_ns,
        bitserial_ns,
        popcount_word_ops: out.stats.popcount_word_ops,
        checksum_ok: ok,
    })
}

/// Every listed layer at every listed precision.
pub fn run_layer_bench(
    layers: &[u8],
    specs: &[DotSpec],
    baseline: Baseline,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    for &name in layers {
        let l = layer(name)?;
        for spec in specs {
            report.push(run_conv_case(&l, spec, baseline, opts)?);
        }
    }
    Ok(report)
}

/// The 16 unsigned precisions `W1A1` to `W4A4`.
pub fn limit_study_specs() -> Vec<DotSpec> {
    (1..=4u8)
        .flat_map(|w| (1..=4u8).map(move |a| DotSpec::new(w, a).expect("1..=4 bits are valid")))
        .collect()
}

/// All combinations of 1 to 4 bit weights and activations on one layer.
pub fn run_limit_study(name: u8, baseline: Baseline, opts: &BenchOptions) -> Result<BenchReport> {
    run_layer_bench(&[name], &limit_study_specs(), baseline, opts)
}

/// Square `size x size x size` products.
pub fn run_matmul_bench(
    sizes: &[usize],
    specs: &[DotSpec],
    baseline: Baseline,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    for &n in sizes {
        if n == 0 {
            return Err(BenchError::InvalidArgument(
                "matrix size must be positive".into(),
            ));
        }
        check_size((3 * n * n * 16) as u64, opts)?;
        for spec in specs {
            report.push(run_matmul_case(n, spec, baseline, opts)?);
        }
    }
    Ok(report)
}

fn run_matmul_case(
    n: usize,
    spec: &DotSpec,
    baseline: Baseline,
    opts: &BenchOptions,
) -> Result<BenchRow> {
    let tag = spec.tag();
    let seed = case_seed(opts.seed, &format!("mm{n}{tag}"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let avals = random_values(
        &mut rng,
        n * n,
        spec.activation_bits,
        spec.activation_signed,
        spec.encoding,
    );
    let wvals = random_values(
        &mut rng,
        n * n,
        spec.weight_bits,
        spec.weight_signed,
        spec.encoding,
    );
    let a = operand(
        avals.clone(),
        &[n, n],
        "MK",
        spec.activation_bits,
        spec.activation_signed,
        spec.encoding,
    )?;
    let w = operand(
        wvals.clone(),
        &[n, n],
        "NK",
        spec.weight_bits,
        spec.weight_signed,
        spec.encoding,
    )?;
    let pw = bitpack(&w, 'K', 0, opts.width)?;
    let workload = Workload::Matmul {
        rows: n,
        cols: n,
        depth: n,
        spec: *spec,
        width: opts.width,
    };
    let tile = tile_for(&workload, opts)?;
    let plan = AccumPlan::default_for(opts.width);
    let (bitserial_ns, out) = time_min(opts.warmup, opts.repeats, || {
        let pa = bitpack(&a, 'K', 0, opts.width)?;
        Ok(bitserial_matmul(
            &pa,
            &pw,
            spec,
            &tile,
            &plan,
            opts.threads,
        )?)
    })?;
    let (ba, bw) = (
        IntData::new(baseline, &avals)?,
        IntData::new(baseline, &wvals)?,
    );
    let (baseline_ns, base_out) = time_min(opts.warmup, opts.repeats, || {
        int_matmul(&ba, &bw, n, n, n, opts.threads)
    })?;

    let got = out.output.data();
    let oracle_ok = if n <= FULL_CHECK_MATMUL {
        oracle_matmul(&a, &w)?
            .data()
            .iter()
            .zip(got)
            .all(|(&e, &g)| e == g as i64)
    } else {
        (0..opts.sample_points).all(|_| {
            let (r, c) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let e: i64 = (0..n).map(|k| avals[r * n + k] * wvals[c * n + k]).sum();
            e == got[r * n + c] as i64
        })
    };
    let ok = oracle_ok && base_out == got;
    Ok(BenchRow {
        layer: format!("mm{n}"),
        precision: tag,
        baseline: baseline.to_string(),
        baseline_ns,
        bitserial_ns,
        popcount_word_ops: out.stats.popcount_word_ops,
        checksum_ok: ok,
    })
}

/// Tunes every (layer, precision) convolution and records the winners in
/// `store`.
pub fn tune_layers(
    layers: &[u8],
    specs: &[DotSpec],
    budget: usize,
    store: &mut ConfigStore,
    opts: &BenchOptions,
) -> Result<Vec<(Workload, SearchOutcome)>> {
    let mut results = Vec::new();
    for &name in layers {
        let p = layer(name)?.params(opts.scale)?;
        for spec in specs {
            let workload = conv_workload(&p, spec, opts);
            let space = enumerate_space(&workload)?;
            let mut eval = KernelEvaluator::new(&workload, opts.seed, opts.threads)?
                .with_repeats(opts.warmup, opts.repeats);
            let outcome = random_search(&space, budget, opts.seed, &mut eval)?;
            log::info!(
                "{workload}: best {} at {} ns after {} of {} configs",
                outcome.best.config,
                outcome.best.min_ns,
                outcome.trace.len(),
                space.len()
            );
            store.persist_best(&workload, &opts.machine, &outcome.best);
            results.push((workload, outcome));
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> BenchOptions {
        BenchOptions {
            scale: 16,
            warmup: 0,
            repeats: 1,
            machine: "test".into(),
            ..BenchOptions::default()
        }
    }

    #[test]
    fn small_layer_rows_check_out() {
        let specs = [DotSpec::new(1, 1).unwrap(), DotSpec::new(2, 3).unwrap()];
        let r = run_layer_bench(&[12, 3], &specs, Baseline::Int16, &quick()).unwrap();
        assert_eq!(r.rows().len(), 4);
        assert!(r.all_ok());
        assert_eq!(r.rows()[0].layer, "3");
    }

    #[test]
    fn lowered_strategy_and_sampled_check() {
        let opts = BenchOptions {
            strategy: ConvStrategy::Lowered,
            scale: 2,
            sample_points: 32,
            ..quick()
        };
        let row = run_conv_case(
            &layer(12).unwrap(),
            &DotSpec::new(2, 2).unwrap(),
            Baseline::Int8,
            &opts,
        )
        .unwrap();
        assert!(row.checksum_ok);
    }

    #[test]
    fn too_large_is_rejected() {
        let opts = BenchOptions {
            max_bytes: 1000,
            ..quick()
        };
        let err = run_conv_case(
            &layer(2).unwrap(),
            &DotSpec::new(1, 1).unwrap(),
            Baseline::Int8,
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, BenchError::TooLarge { .. }));
    }

    #[test]
    fn matmul_rows() {
        let r = run_matmul_bench(
            &[64],
            &[DotSpec::new(1, 1).unwrap()],
            Baseline::Int8,
            &quick(),
        )
        .unwrap();
        assert_eq!(r.rows()[0].layer, "mm64");
        assert_eq!(r.rows()[0].popcount_word_ops, 64 * 64);
        assert!(r.all_ok());
    }

    #[test]
    fn limit_specs() {
        let s = limit_study_specs();
        assert_eq!(s.len(), 16);
        assert_eq!(s[0].tag(), "w1a1");
        assert_eq!(s[15].tag(), "w4a4");
    }
}
