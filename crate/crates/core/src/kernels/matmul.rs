use std::thread;

use super::accum::Narrow;
use super::micro::{
    accumulate, bands, dispatch_kernel, drain, for_each_tile, plane_rows, BitOp, Operand, Planes,
};
use super::{AccumPlan, DotSpec, KernelOutput, KernelStats, TileConfig};
use crate::bitpack::PackedTensor;
use crate::error::{Error, Result};
use crate::tensor::{Encoding, Tensor};
use crate::word::{Word, WordWidth};

/// Bitserial `out[r][c] = sum_k act[r][k] * wt[c][k]`.
///
/// `act` is an `R x K` activation matrix and `wt` a `C x K` weight matrix,
/// both packed along `K` with the same word width. The result is `R x C`
/// (layout `"RC"`). `threads` workers are used when `tile.parallel` is set.
pub fn bitserial_matmul(
    act: &PackedTensor,
    wt: &PackedTensor,
    spec: &DotSpec,
    tile: &TileConfig,
    plan: &AccumPlan,
    threads: usize,
) -> Result<KernelOutput> {
    spec.validate()?;
    tile.validate(3)?;
    for (name, p) in [("activation", act), ("weight", wt)] {
        if p.source_rank() != 2 {
            return Err(Error::OperandMismatch(format!(
                "{name} operand has rank {}, expected 2",
                p.source_rank()
            )));
        }
    }
    check_pair(act, wt, spec, plan)?;

    let (act, wt) = (act.untiled(), wt.untiled());
    let logical_k = act.orig_reduction_len();
    let w = act.width().bits() as usize;
    let kwords = act.reduction_words();
    check_bounds(spec, plan, logical_k, kwords * w)?;

    let rows = act.source_shape()[0];
    let cols = wt.source_shape()[0];
    let tiles = [
        tile.splits[0],
        tile.splits[1],
        tile.splits[2].div_ceil(w).max(1),
    ];
    let (out, stats) = run_typed(&act, &wt, logical_k, spec, tile, tiles, plan, threads)?;
    Ok(KernelOutput {
        output: Tensor::new(&[rows, cols], "RC", out)?,
        stats,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_typed(
    act: &PackedTensor,
    wt: &PackedTensor,
    logical_k: usize,
    spec: &DotSpec,
    tile: &TileConfig,
    tiles: [usize; 3],
    plan: &AccumPlan,
    threads: usize,
) -> Result<(Vec<i32>, KernelStats)> {
    match act.width() {
        WordWidth::W8 => run_width::<u8>(act, wt, logical_k, spec, tile, tiles, plan, threads),
        WordWidth::W16 => run_width::<u16>(act, wt, logical_k, spec, tile, tiles, plan, threads),
        WordWidth::W32 => run_width::<u32>(act, wt, logical_k, spec, tile, tiles, plan, threads),
        WordWidth::W64 => run_width::<u64>(act, wt, logical_k, spec, tile, tiles, plan, threads),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_width<W: Word>(
    act: &PackedTensor,
    wt: &PackedTensor,
    logical_k: usize,
    spec: &DotSpec,
    tile: &TileConfig,
    tiles: [usize; 3],
    plan: &AccumPlan,
    threads: usize,
) -> Result<(Vec<i32>, KernelStats)> {
    let a = Operand::<W>::from_packed(act)?;
    let b = Operand::<W>::from_packed(wt)?;
    Ok(matmul_core(MatmulJob {
        act: a,
        wt: b,
        logical_k,
        spec: *spec,
        tile: tile.clone(),
        tiles,
        plan: *plan,
        threads,
    }))
}

/// Operand pairing rules shared by matmul and convolution.
pub(crate) fn check_pair(
    act: &PackedTensor,
    wt: &PackedTensor,
    spec: &DotSpec,
    plan: &AccumPlan,
) -> Result<()> {
    if act.width() != wt.width() {
        return Err(Error::OperandMismatch(format!(
            "word widths differ: {} vs {}",
            act.width(),
            wt.width()
        )));
    }
    if act.orig_reduction_len() != wt.orig_reduction_len() {
        return Err(Error::OperandMismatch(format!(
            "reduction lengths differ: {} vs {}",
            act.orig_reduction_len(),
            wt.orig_reduction_len()
        )));
    }
    plan.check_word(act.width())?;
    let sides = [
        (
            "activation",
            act,
            spec.activation_bits,
            spec.activation_signed,
        ),
        ("weight", wt, spec.weight_bits, spec.weight_signed),
    ];
    for (name, p, bits, signed) in sides {
        if p.bits() != bits || p.is_signed() != signed || p.encoding() != spec.encoding {
            return Err(Error::OperandMismatch(format!(
                "{name} operand is {}-bit {} {}, spec {} wants {bits}-bit {} {}",
                p.bits(),
                if p.is_signed() { "signed" } else { "unsigned" },
                p.encoding(),
                spec,
                if signed { "signed" } else { "unsigned" },
                spec.encoding,
            )));
        }
    }
    Ok(())
}

/// Rejects reductions whose totals could overflow the accumulators. `span`
/// is the number of packed bit positions per reduction, padding included.
pub(crate) fn check_bounds(
    spec: &DotSpec,
    plan: &AccumPlan,
    logical_k: usize,
    span: usize,
) -> Result<()> {
    if span as u64 > plan.wide_max() {
        return Err(Error::AccumulatorOverflow(format!(
            "{span} packed bits per reduction exceed the {}-bit wide counter",
            plan.wide_bits
        )));
    }
    let bound = match spec.encoding {
        Encoding::Bipolar => 2 * span as i64,
        Encoding::Unipolar => (logical_k as i64).saturating_mul(spec.max_product()),
    };
    if bound > i32::MAX as i64 {
        return Err(Error::AccumulatorOverflow(format!(
            "a reduction of {logical_k} {} products can exceed i32",
            spec.name()
        )));
    }
    Ok(())
}

pub(crate) struct MatmulJob<'a, W: Word> {
    pub act: Operand<'a, W>,
    pub wt: Operand<'a, W>,
    pub logical_k: usize,
    pub spec: DotSpec,
    pub tile: TileConfig,
    /// Tile extents in rows, columns and words.
    pub tiles: [usize; 3],
    pub plan: AccumPlan,
    pub threads: usize,
}

/// Plane weights indexed `m * N + n`.
pub(crate) fn coefficients(spec: &DotSpec) -> Vec<i64> {
    let (mb, nb) = (spec.weight_bits as usize, spec.activation_bits as usize);
    (0..mb * nb)
        .map(|i| spec.plane_weight(i / nb, i % nb))
        .collect()
}

/// Constant term of a bipolar result. Padding bits are zero in both
/// operands and always match under XNOR, so with `count` matches over `span`
/// packed bits the dot product is `2 * count + logical_k - 2 * span`.
pub(crate) fn bias(spec: &DotSpec, logical_k: usize, span: usize) -> i32 {
    match spec.encoding {
        Encoding::Bipolar => (logical_k as i64 - 2 * span as i64) as i32,
        Encoding::Unipolar => 0,
    }
}

pub(crate) fn matmul_core<W: Word>(job: MatmulJob<'_, W>) -> (Vec<i32>, KernelStats) {
    dispatch_kernel!(
        matmul_drive,
        narrow8 = job.plan.narrow_bits == 8,
        unroll = job.tile.unroll,
        xnor = job.spec.encoding == Encoding::Bipolar,
        planes = (job.wt.planes, job.act.planes);
        &job,
    )
}

fn matmul_drive<W: Word, A: Narrow, PM: Planes, PN: Planes, O: BitOp>(
    job: &MatmulJob<'_, W>,
    pm: PM,
    pn: PN,
) -> (Vec<i32>, KernelStats) {
    let rows = job.act.rows;
    let cols = job.wt.rows;
    let span = job.act.kwords * W::BITS as usize;
    let mut out = vec![bias(&job.spec, job.logical_k, span); rows * cols];
    if rows == 0 || cols == 0 {
        return (out, KernelStats::default());
    }
    let workers = if job.tile.parallel {
        job.threads.max(1)
    } else {
        1
    };
    let band = bands(rows, workers);
    let mut stats = KernelStats::default();
    if band >= rows {
        stats = band_run::<W, A, PM, PN, O>(job, 0, rows, &mut out, pm, pn);
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = out
                .chunks_mut(band * cols)
                .enumerate()
                .map(|(i, chunk)| {
                    let lo = i * band;
                    let hi = (lo + band).min(rows);
                    s.spawn(move || band_run::<W, A, PM, PN, O>(job, lo, hi, chunk, pm, pn))
                })
                .collect();
            for h in handles {
                stats += h.join().expect("matmul worker panicked");
            }
        });
    }
    (out, stats)
}

fn band_run<W: Word, A: Narrow, PM: Planes, PN: Planes, O: BitOp>(
    job: &MatmulJob<'_, W>,
    lo: usize,
    hi: usize,
    out: &mut [i32],
    pm: PM,
    pn: PN,
) -> KernelStats {
    let cols = job.wt.rows;
    let kwords = job.act.kwords;
    let (mb, nb) = (pm.get(), pn.get());
    let per_col = mb * nb;
    let v = job.tile.vector;
    let coef = coefficients(&job.spec);
    let extents = [hi - lo, cols, kwords];
    let tiles: Vec<usize> = (0..3)
        .map(|i| job.tiles[i].min(extents[i]).max(1))
        .collect();
    let counts = [0, 1, 2].map(|i| extents[i].div_ceil(tiles[i]));
    let mut wide = vec![0u32; v * per_col];
    let mut wcols = Vec::new();
    let mut stats = KernelStats::default();

    for_each_tile(counts, &job.tile.order, |idx| {
        let r0 = lo + idx[0] * tiles[0];
        let r1 = (r0 + tiles[0]).min(hi);
        let c0 = idx[1] * tiles[1];
        let c1 = (c0 + tiles[1]).min(cols);
        let k0 = idx[2] * tiles[2];
        let k1 = (k0 + tiles[2]).min(kwords);
        let words = (k1 - k0) as u64;
        wcols.clear();
        wcols.extend((c0..c1).map(|c| plane_rows(&job.wt, c, k0, k1)));
        for r in r0..r1 {
            let arows = plane_rows(&job.act, r, k0, k1);
            let out_row = &mut out[(r - lo) * cols..(r - lo + 1) * cols];
            let mut cb = c0;
            while cb < c1 {
                let ce = (cb + v).min(c1);
                let nc = ce - cb;
                stats.widenings += accumulate::<W, A, PM, PN, O>(
                    &arows,
                    &wcols[cb - c0..ce - c0],
                    job.plan.safe_depth,
                    pm,
                    pn,
                    &mut wide,
                );
                drain(
                    &mut wide[..nc * per_col],
                    per_col,
                    &coef,
                    &mut out_row[cb..ce],
                );
                stats.popcount_word_ops += (nc * per_col) as u64 * words;
                stats.words_loaded += (nb + nc * mb) as u64 * words;
                cb = ce;
            }
        }
    });
    stats
}
