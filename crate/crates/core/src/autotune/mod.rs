//! Schedule search for the bitserial kernels.
//!
//! A [`ConfigSpace`] enumerates tile splits, loop orders and micro-kernel
//! options for one [`Workload`]. [`random_search`] and [`grid_search`] time
//! points of the space through an [`Evaluator`], discard any trial whose
//! output checksum differs from the oracle's, and rank the rest by minimum
//! time. Winners are kept in a [`ConfigStore`].

mod search;
mod space;
mod store;

use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use search::{grid_search, random_search, SearchOutcome, TrialOutcome, TrialRecord};
pub use space::{enumerate_space, ConfigSpace};
pub use store::{machine_tag, ConfigStore, Lookup, StoredConfig, MACHINE_TAG_ENV};

use crate::bitpack::{bitpack, BitPlacement, PackedTensor};
use crate::error::{Error, Result};
use crate::kernels::{
    bitserial_matmul, conv2d, pack_activations, pack_weights, AccumPlan, ConvStrategy, DotSpec,
    KernelOutput, KernelStats, TileConfig,
};
use crate::oracle::{oracle_conv2d, oracle_matmul};
use crate::tensor::{ConvParams, Encoding, QuantTensor, Tensor};
use crate::word::WordWidth;

/// A kernel invocation to tune.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Workload {
    Matmul {
        rows: usize,
        cols: usize,
        depth: usize,
        spec: DotSpec,
        width: WordWidth,
    },
    Conv {
        batch: usize,
        params: ConvParams,
        spec: DotSpec,
        width: WordWidth,
        strategy: ConvStrategy,
    },
}

impl Workload {
    pub fn op(&self) -> String {
        match self {
            Workload::Matmul { .. } => "matmul".into(),
            Workload::Conv { strategy, .. } => format!("conv-{strategy}"),
        }
    }

    pub fn spec(&self) -> &DotSpec {
        match self {
            Workload::Matmul { spec, .. } | Workload::Conv { spec, .. } => spec,
        }
    }

    pub fn width(&self) -> WordWidth {
        match self {
            Workload::Matmul { width, .. } | Workload::Conv { width, .. } => *width,
        }
    }

    /// Extents of the three tiled axes.
    pub fn tiled_extents(&self) -> [usize; 3] {
        match self {
            Workload::Matmul {
                rows, cols, depth, ..
            } => [*rows, *cols, *depth],
            Workload::Conv { params, .. } => {
                [params.out_height(), params.out_width(), params.out_channels]
            }
        }
    }

    pub fn shape_tag(&self) -> String {
        match self {
            Workload::Matmul {
                rows, cols, depth, ..
            } => format!("{rows}x{cols}x{depth}"),
            Workload::Conv {
                batch, params: p, ..
            } => format!(
                "n{batch}h{}w{}c{}o{}k{}s{}p{}",
                p.height, p.width, p.in_channels, p.out_channels, p.kernel, p.stride, p.pad
            ),
        }
    }

    pub fn precision_tag(&self) -> String {
        self.spec().tag()
    }

    /// Store key `op|shape|precision|word|machine`.
    pub fn key(&self, machine: &str) -> String {
        format!(
            "{}|{}|{}|{}|{machine}",
            self.op(),
            self.shape_tag(),
            self.precision_tag(),
            self.width()
        )
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.op(),
            self.shape_tag(),
            self.precision_tag(),
            self.width()
        )
    }
}

/// One timed run of a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub config: TileConfig,
    pub min_ns: u64,
    pub median_ns: u64,
    pub checksum: u64,
    pub stats: KernelStats,
}

/// Runs trials for a search.
pub trait Evaluator {
    fn evaluate(&mut self, config: &TileConfig) -> Result<TrialResult>;

    /// Checksum of the correct output.
    fn expected_checksum(&self) -> u64;
}

/// Order-sensitive hash of a kernel output.
pub fn checksum<T: Hash>(data: &[T]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    data.hash(&mut h);
    h.finish()
}

/// Oracle output narrowed to the kernels' `i32`, hashed.
fn oracle_checksum(t: &Tensor<i64>) -> Result<u64> {
    let narrowed: Vec<i32> = t
        .data()
        .iter()
        .map(|&v| {
            i32::try_from(v)
                .map_err(|_| Error::AccumulatorOverflow(format!("oracle value {v} exceeds i32")))
        })
        .collect::<Result<_>>()?;
    Ok(checksum(&narrowed))
}

/// Minimum and median of a non-empty sample.
pub fn min_median(samples: &mut [u64]) -> (u64, u64) {
    samples.sort_unstable();
    (samples[0], samples[samples.len() / 2])
}

/// Times the real kernel on random operands of the workload's shape.
pub struct KernelEvaluator {
    workload: Workload,
    act: PackedTensor,
    wt: PackedTensor,
    plan: AccumPlan,
    threads: usize,
    warmup: usize,
    repeats: usize,
    expected: u64,
}

/// Repeats per trial after one warm-up run.
pub const DEFAULT_REPEATS: usize = 10;

fn random_operand(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    layout: &str,
    bits: u8,
    signed: bool,
    enc: Encoding,
) -> Result<QuantTensor> {
    use rand::Rng;
    let n: usize = shape.iter().product();
    match enc {
        Encoding::Bipolar => {
            let vals = (0..n)
                .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
                .collect();
            QuantTensor::from_bipolar(&Tensor::new(shape, layout, vals)?)
        }
        Encoding::Unipolar => {
            let (lo, hi) = crate::tensor::value_range(bits, signed);
            let vals = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
            QuantTensor::from_values(&Tensor::new(shape, layout, vals)?, bits, signed)
        }
    }
}

impl KernelEvaluator {
    pub fn new(workload: &Workload, seed: u64, threads: usize) -> Result<Self> {
        let spec = *workload.spec();
        spec.validate()?;
        let width = workload.width();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ab, asg, wb, wsg, enc) = (
            spec.activation_bits,
            spec.activation_signed,
            spec.weight_bits,
            spec.weight_signed,
            spec.encoding,
        );
        let (act, wt, expected) = match workload {
            Workload::Matmul {
                rows, cols, depth, ..
            } => {
                let a = random_operand(&mut rng, &[*rows, *depth], "MK", ab, asg, enc)?;
                let w = random_operand(&mut rng, &[*cols, *depth], "NK", wb, wsg, enc)?;
                let expected = oracle_checksum(&oracle_matmul(&a, &w)?)?;
                (
                    bitpack(&a, 'K', 0, width)?,
                    bitpack(&w, 'K', 0, width)?,
                    expected,
                )
            }
            Workload::Conv {
                batch, params: p, ..
            } => {
                let a = random_operand(
                    &mut rng,
                    &[*batch, p.height, p.width, p.in_channels],
                    "NHWC",
                    ab,
                    asg,
                    enc,
                )?;
                let w = random_operand(
                    &mut rng,
                    &[p.out_channels, p.kernel, p.kernel, p.in_channels],
                    "OHWI",
                    wb,
                    wsg,
                    enc,
                )?;
                let expected = oracle_checksum(&oracle_conv2d(&a, &w, p)?)?;
                (
                    pack_activations(&a, BitPlacement::Outermost, width)?,
                    pack_weights(&w, BitPlacement::Outermost, width)?,
                    expected,
                )
            }
        };
        Ok(KernelEvaluator {
            workload: workload.clone(),
            act,
            wt,
            plan: AccumPlan::default_for(width),
            threads: threads.max(1),
            warmup: 1,
            repeats: DEFAULT_REPEATS,
            expected,
        })
    }

    pub fn with_repeats(mut self, warmup: usize, repeats: usize) -> Self {
        self.warmup = warmup;
        self.repeats = repeats.max(1);
        self
    }

    pub fn with_plan(mut self, plan: AccumPlan) -> Self {
        self.plan = plan;
        self
    }

    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    fn run(&self, config: &TileConfig) -> Result<KernelOutput> {
        let spec = self.workload.spec();
        match &self.workload {
            Workload::Matmul { .. } => {
                bitserial_matmul(&self.act, &self.wt, spec, config, &self.plan, self.threads)
            }
            Workload::Conv {
                params, strategy, ..
            } => conv2d(
                &self.act,
                &self.wt,
                params,
                spec,
                config,
                &self.plan,
                self.threads,
                *strategy,
            ),
        }
    }
}

impl Evaluator for KernelEvaluator {
    fn evaluate(&mut self, config: &TileConfig) -> Result<TrialResult> {
        for _ in 0..self.warmup {
            self.run(config)?;
        }
        let mut times = Vec::with_capacity(self.repeats);
        let mut last = None;
        for _ in 0..self.repeats {
            let start = Instant::now();
            let out = self.run(config)?;
            times.push(start.elapsed().as_nanos() as u64);
            last = Some(out);
        }
        let out = last.expect("at least one repeat");
        let (min_ns, median_ns) = min_median(&mut times);
        Ok(TrialResult {
            config: config.clone(),
            min_ns,
            median_ns,
            checksum: checksum(out.output.data()),
            stats: out.stats,
        })
    }

    fn expected_checksum(&self) -> u64 {
        self.expected
    }
}

/// Memoizes another evaluator so that searches in one run share
/// measurements of the configurations they have in common.
pub struct CachedEvaluator<E> {
    inner: E,
    cache: HashMap<TileConfig, std::result::Result<TrialResult, Error>>,
}

impl<E: Evaluator> CachedEvaluator<E> {
    pub fn new(inner: E) -> Self {
        CachedEvaluator {
            inner,
            cache: HashMap::new(),
        }
    }

    /// Number of distinct configurations actually run.
    pub fn distinct_trials(&self) -> usize {
        self.cache.len()
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Evaluator> Evaluator for CachedEvaluator<E> {
    fn evaluate(&mut self, config: &TileConfig) -> Result<TrialResult> {
        if let Some(r) = self.cache.get(config) {
            return r.clone();
        }
        let r = self.inner.evaluate(config);
        self.cache.insert(config.clone(), r.clone());
        r
    }

    fn expected_checksum(&self) -> u64 {
        self.inner.expected_checksum()
    }
}
