use std::fmt;
use std::str::FromStr;
use std::thread;

use super::accum::Narrow;
use super::matmul::{bias, check_bounds, check_pair, coefficients, matmul_core, MatmulJob};
use super::micro::{
    accumulate, bands, dispatch_kernel, drain, for_each_tile, plane_rows, BitOp, Operand,
    PlaneRows, Planes,
};
use super::{AccumPlan, DotSpec, KernelOutput, KernelStats, TileConfig};
use crate::bitpack::{bitpack, BitPlacement, PackedTensor};
use crate::error::{Error, Result};
use crate::tensor::{ConvParams, Encoding, QuantTensor, Tensor, MAX_BITS};
use crate::word::{Word, WordWidth};

/// How a convolution is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvStrategy {
    /// Sliding window over the packed activations.
    Direct,
    /// Patch extraction into a packed matrix, then matmul.
    Lowered,
}

impl fmt::Display for ConvStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvStrategy::Direct => "direct",
            ConvStrategy::Lowered => "lowered",
        })
    }
}

impl FromStr for ConvStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(ConvStrategy::Direct),
            "lowered" => Ok(ConvStrategy::Lowered),
            other => Err(Error::InvalidLayout(format!(
                "unknown convolution strategy {other:?}"
            ))),
        }
    }
}

fn move_last(q: &QuantTensor, axis: char) -> Result<QuantTensor> {
    let axes = q.layout().axes();
    if !axes.contains(&axis) {
        return Err(Error::UnknownAxis(axis));
    }
    if axes.last() == Some(&axis) {
        return Ok(q.clone());
    }
    let order: String = axes
        .iter()
        .filter(|&&a| a != axis)
        .chain(std::iter::once(&axis))
        .collect();
    q.reshape_layout(&order)
}

fn pack_conv_operand(
    q: &QuantTensor,
    axis: char,
    placement: BitPlacement,
    width: WordWidth,
) -> Result<PackedTensor> {
    if q.shape().len() != 4 {
        return Err(Error::OperandMismatch(format!(
            "convolution operands have rank 4, got {}",
            q.shape().len()
        )));
    }
    let q = move_last(q, axis)?;
    bitpack(&q, axis, placement.position(4, 3), width)
}

/// Packs activations along their channel axis `C`, first moving it
/// innermost (so `NCHW` input is packed as `NHWC`).
pub fn pack_activations(
    q: &QuantTensor,
    placement: BitPlacement,
    width: WordWidth,
) -> Result<PackedTensor> {
    pack_conv_operand(q, 'C', placement, width)
}

/// Packs `O, H, W, I` filters along their input-channel axis `I`, first
/// moving it innermost (so `OIHW` filters are packed as `OHWI`).
pub fn pack_weights(
    q: &QuantTensor,
    placement: BitPlacement,
    width: WordWidth,
) -> Result<PackedTensor> {
    pack_conv_operand(q, 'I', placement, width)
}

fn check_conv(
    act: &PackedTensor,
    wt: &PackedTensor,
    p: &ConvParams,
    spec: &DotSpec,
    plan: &AccumPlan,
) -> Result<()> {
    spec.validate()?;
    p.validate()?;
    for (name, t) in [("activation", act), ("weight", wt)] {
        if t.source_rank() != 4 || t.source_reduction_axis() != 3 {
            return Err(Error::OperandMismatch(format!(
                "{name} must be a rank-4 tensor packed along its last axis, got {}",
                t.layout_tag()
            )));
        }
    }
    let a = act.source_shape();
    if a[1..] != [p.height, p.width, p.in_channels] {
        return Err(Error::OperandMismatch(format!(
            "activation shape {a:?} does not match {}x{}x{}",
            p.height, p.width, p.in_channels
        )));
    }
    let w = wt.source_shape();
    if w != [p.out_channels, p.kernel, p.kernel, p.in_channels] {
        return Err(Error::OperandMismatch(format!(
            "weight shape {w:?} does not match {}x{}x{}x{}",
            p.out_channels, p.kernel, p.kernel, p.in_channels
        )));
    }
    check_pair(act, wt, spec, plan)?;
    if spec.encoding == Encoding::Bipolar && p.pad > 0 {
        return Err(Error::BipolarPadding(p.pad));
    }
    Ok(())
}

/// Direct bitserial convolution (cross-correlation with zero padding).
///
/// `act` is `N x H x W x IC` and `wt` is `OC x K x K x IC`, both packed
/// along the channel axis. The result is `N x OH x OW x OC` (`"NHWC"`).
/// Tiled axes are `[out_h, out_w, out_c]`; `threads` workers split the output
/// rows when `tile.parallel` is set. Bipolar operands need `pad == 0`.
#[allow(clippy::too_many_arguments)]
pub fn bitserial_conv2d(
    act: &PackedTensor,
    wt: &PackedTensor,
    p: &ConvParams,
    spec: &DotSpec,
    tile: &TileConfig,
    plan: &AccumPlan,
    threads: usize,
) -> Result<KernelOutput> {
    tile.validate(3)?;
    check_conv(act, wt, p, spec, plan)?;
    let (act, wt) = (act.untiled(), wt.untiled());
    let taps = p.kernel * p.kernel;
    let span = taps * act.reduction_words() * act.width().bits() as usize;
    check_bounds(spec, plan, taps * p.in_channels, span)?;
    let batch = act.source_shape()[0];
    let (out, stats) = match act.width() {
        WordWidth::W8 => direct_width::<u8>(&act, &wt, p, batch, spec, tile, plan, threads)?,
        WordWidth::W16 => direct_width::<u16>(&act, &wt, p, batch, spec, tile, plan, threads)?,
        WordWidth::W32 => direct_width::<u32>(&act, &wt, p, batch, spec, tile, plan, threads)?,
        WordWidth::W64 => direct_width::<u64>(&act, &wt, p, batch, spec, tile, plan, threads)?,
    };
    Ok(KernelOutput {
        output: Tensor::new(
            &[batch, p.out_height(), p.out_width(), p.out_channels],
            "NHWC",
            out,
        )?,
        stats,
    })
}

struct ConvJob<'a, W: Word> {
    act: Operand<'a, W>,
    /// Filters as `OC` rows of `K * K * IC'` words.
    wt: Operand<'a, W>,
    p: ConvParams,
    batch: usize,
    spec: DotSpec,
    tile: TileConfig,
    plan: AccumPlan,
    threads: usize,
}

#[allow(clippy::too_many_arguments)]
fn direct_width<W: Word>(
    act: &PackedTensor,
    wt: &PackedTensor,
    p: &ConvParams,
    batch: usize,
    spec: &DotSpec,
    tile: &TileConfig,
    plan: &AccumPlan,
    threads: usize,
) -> Result<(Vec<i32>, KernelStats)> {
    let f = Operand::<W>::from_packed(wt)?;
    let filters = filter_matrix(&f, p);
    let job = ConvJob {
        act: Operand::<W>::from_packed(act)?,
        wt: Operand::new(
            &filters,
            p.out_channels,
            f.planes,
            p.kernel * p.kernel * f.kwords,
            BitPlacement::BeforeReduction,
        ),
        p: *p,
        batch,
        spec: *spec,
        tile: tile.clone(),
        plan: *plan,
        threads,
    };
    Ok(dispatch_kernel!(
        conv_drive,
        narrow8 = plan.narrow_bits == 8,
        unroll = tile.unroll,
        xnor = spec.encoding == Encoding::Bipolar,
        planes = (job.wt.planes, job.act.planes);
        &job,
    ))
}

fn conv_drive<W: Word, A: Narrow, PM: Planes, PN: Planes, O: BitOp>(
    job: &ConvJob<'_, W>,
    pm: PM,
    pn: PN,
) -> (Vec<i32>, KernelStats) {
    let p = &job.p;
    let (oh, ow, oc) = (p.out_height(), p.out_width(), p.out_channels);
    let span = p.kernel * p.kernel * job.act.kwords * W::BITS as usize;
    let mut out =
        vec![bias(&job.spec, p.kernel * p.kernel * p.in_channels, span); job.batch * oh * ow * oc];
    let lines = job.batch * oh;
    if lines == 0 {
        return (out, KernelStats::default());
    }
    let line_len = ow * oc;
    let workers = if job.tile.parallel {
        job.threads.max(1)
    } else {
        1
    };
    let band = bands(lines, workers);
    let mut stats = KernelStats::default();
    if band >= lines {
        stats = conv_band::<W, A, PM, PN, O>(job, 0, lines, &mut out, pm, pn);
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = out
                .chunks_mut(band * line_len)
                .enumerate()
                .map(|(i, chunk)| {
                    let lo = i * band;
                    let hi = (lo + band).min(lines);
                    s.spawn(move || conv_band::<W, A, PM, PN, O>(job, lo, hi, chunk, pm, pn))
                })
                .collect();
            for h in handles {
                stats += h.join().expect("convolution worker panicked");
            }
        });
    }
    (out, stats)
}

/// Filters laid out as `OC` rows with bitplane-major `K * K * IC'` words.
fn filter_matrix<W: Word>(f: &Operand<'_, W>, p: &ConvParams) -> Vec<W> {
    let taps = p.kernel * p.kernel;
    let cw = f.kwords;
    let mut filters = Vec::with_capacity(p.out_channels * f.planes * taps * cw);
    for oc in 0..p.out_channels {
        for plane in 0..f.planes {
            for t in 0..taps {
                filters.extend_from_slice(f.plane_row(oc * taps + t, plane));
            }
        }
    }
    filters
}

/// Writes the receptive field of output pixel `(n, oy, ox)` into `patch` as
/// bitplane-major `K * K * IC'` words, zero where the window hangs over the
/// border.
fn gather_patch<W: Word>(
    act: &Operand<'_, W>,
    p: &ConvParams,
    n: usize,
    oy: usize,
    ox: usize,
    patch: &mut [W],
) {
    let k = p.kernel;
    let cw = act.kwords;
    let depth = k * k * cw;
    for ky in 0..k {
        let iy = (oy * p.stride + ky) as isize - p.pad as isize;
        for kx in 0..k {
            let ix = (ox * p.stride + kx) as isize - p.pad as isize;
            let t = (ky * k + kx) * cw;
            let inside = iy >= 0 && ix >= 0 && iy < p.height as isize && ix < p.width as isize;
            for plane in 0..act.planes {
                let dst = &mut patch[plane * depth + t..plane * depth + t + cw];
                if inside {
                    let arow = (n * p.height + iy as usize) * p.width + ix as usize;
                    dst.copy_from_slice(act.plane_row(arow, plane));
                } else {
                    dst.fill(W::ZERO);
                }
            }
        }
    }
}

/// Output lines `lo..hi` of the flattened `(n, oy)` axis.
fn conv_band<W: Word, A: Narrow, PM: Planes, PN: Planes, O: BitOp>(
    job: &ConvJob<'_, W>,
    lo: usize,
    hi: usize,
    out: &mut [i32],
    pm: PM,
    pn: PN,
) -> KernelStats {
    let p = &job.p;
    let (oh, ow, oc) = (p.out_height(), p.out_width(), p.out_channels);
    let depth = job.wt.kwords;
    let (mb, nb) = (pm.get(), pn.get());
    let per_col = mb * nb;
    let v = job.tile.vector;
    let coef = coefficients(&job.spec);
    let mut wide = vec![0u32; v * per_col];
    let wcols: Vec<_> = (0..oc).map(|c| plane_rows(&job.wt, c, 0, depth)).collect();
    let mut patch = vec![W::ZERO; nb * depth];
    let mut stats = KernelStats::default();

    for n in lo / oh..=(hi - 1) / oh {
        let y_lo = lo.max(n * oh) - n * oh;
        let y_hi = hi.min((n + 1) * oh) - n * oh;
        let extents = [y_hi - y_lo, ow, oc];
        let tiles = [0, 1, 2].map(|i| job.tile.splits[i].min(extents[i]).max(1));
        let counts = [0, 1, 2].map(|i| extents[i].div_ceil(tiles[i]));
        for_each_tile(counts, &job.tile.order, |idx| {
            let y0 = y_lo + idx[0] * tiles[0];
            let y1 = (y0 + tiles[0]).min(y_hi);
            let x0 = idx[1] * tiles[1];
            let x1 = (x0 + tiles[1]).min(ow);
            let c0 = idx[2] * tiles[2];
            let c1 = (c0 + tiles[2]).min(oc);
            for oy in y0..y1 {
                let line = n * oh + oy - lo;
                for ox in x0..x1 {
                    gather_patch(&job.act, p, n, oy, ox, &mut patch);
                    let mut arows: PlaneRows<'_, W> = [&[]; MAX_BITS as usize];
                    for (slot, plane) in arows.iter_mut().zip(patch.chunks_exact(depth)) {
                        *slot = plane;
                    }
                    let out_px = &mut out[(line * ow + ox) * oc..(line * ow + ox + 1) * oc];
                    let mut cb = c0;
                    while cb < c1 {
                        let ce = (cb + v).min(c1);
                        let nc = ce - cb;
                        stats.widenings += accumulate::<W, A, PM, PN, O>(
                            &arows,
                            &wcols[cb..ce],
                            job.plan.safe_depth,
                            pm,
                            pn,
                            &mut wide,
                        );
                        drain(
                            &mut wide[..nc * per_col],
                            per_col,
                            &coef,
                            &mut out_px[cb..ce],
                        );
                        stats.popcount_word_ops += (nc * per_col * depth) as u64;
                        stats.words_loaded += ((nb + nc * mb) * depth) as u64;
                        cb = ce;
                    }
                }
            }
        });
    }
    stats
}

/// Convolution by lowering: every output pixel's receptive field is gathered
/// into one packed row of `K * K * IC'` words (zero words for padding taps)
/// and the filters are viewed as a matrix with the same reduction order.
///
/// Tiling maps `[out_h, out_w, out_c]` onto matmul `[rows, cols, depth]` as
/// rows `= splits[0] * splits[1]` pixels, cols `= splits[2]` and the full
/// depth, with output channels outermost only if `out_c` leads `order`.
#[allow(clippy::too_many_arguments)]
pub fn lower_to_matmul_conv2d(
    act: &PackedTensor,
    wt: &PackedTensor,
    p: &ConvParams,
    spec: &DotSpec,
    tile: &TileConfig,
    plan: &AccumPlan,
    threads: usize,
) -> Result<KernelOutput> {
    tile.validate(3)?;
    check_conv(act, wt, p, spec, plan)?;
    let (act, wt) = (act.untiled(), wt.untiled());
    let taps = p.kernel * p.kernel;
    let span = taps * act.reduction_words() * act.width().bits() as usize;
    check_bounds(spec, plan, taps * p.in_channels, span)?;
    let batch = act.source_shape()[0];
    let mtile = TileConfig {
        splits: vec![
            tile.splits[0].saturating_mul(tile.splits[1]),
            tile.splits[2],
            usize::MAX,
        ],
        order: if tile.order[0] == 2 {
            vec![1, 0, 2]
        } else {
            vec![0, 1, 2]
        },
        ..tile.clone()
    };
    let (out, stats) = match act.width() {
        WordWidth::W8 => lowered_width::<u8>(&act, &wt, p, batch, spec, &mtile, plan, threads)?,
        WordWidth::W16 => lowered_width::<u16>(&act, &wt, p, batch, spec, &mtile, plan, threads)?,
        WordWidth::W32 => lowered_width::<u32>(&act, &wt, p, batch, spec, &mtile, plan, threads)?,
        WordWidth::W64 => lowered_width::<u64>(&act, &wt, p, batch, spec, &mtile, plan, threads)?,
    };
    Ok(KernelOutput {
        output: Tensor::new(
            &[batch, p.out_height(), p.out_width(), p.out_channels],
            "NHWC",
            out,
        )?,
        stats,
    })
}

#[allow(clippy::too_many_arguments)]
fn lowered_width<W: Word>(
    act: &PackedTensor,
    wt: &PackedTensor,
    p: &ConvParams,
    batch: usize,
    spec: &DotSpec,
    tile: &TileConfig,
    plan: &AccumPlan,
    threads: usize,
) -> Result<(Vec<i32>, KernelStats)> {
    let a = Operand::<W>::from_packed(act)?;
    let f = Operand::<W>::from_packed(wt)?;
    let (oh, ow, k) = (p.out_height(), p.out_width(), p.kernel);
    let taps = k * k;
    let cw = a.kwords;
    let depth = taps * cw;

    let rows = batch * oh * ow;
    let mut patches = vec![W::ZERO; rows * a.planes * depth];
    for n in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let r = (n * oh + oy) * ow + ox;
                for ky in 0..k {
                    let iy = (oy * p.stride + ky) as isize - p.pad as isize;
                    for kx in 0..k {
                        let ix = (ox * p.stride + kx) as isize - p.pad as isize;
                        if iy < 0 || ix < 0 || iy >= p.height as isize || ix >= p.width as isize {
                            continue;
                        }
                        let arow = (n * p.height + iy as usize) * p.width + ix as usize;
                        let t = ky * k + kx;
                        for plane in 0..a.planes {
                            let base = (r * a.planes + plane) * depth + t * cw;
                            for j in 0..cw {
                                patches[base + j] = a.at(arow, plane, j);
                            }
                        }
                    }
                }
            }
        }
    }

    let filters = filter_matrix(&f, p);

    Ok(matmul_core(MatmulJob {
        act: Operand::new(
            &patches,
            rows,
            a.planes,
            depth,
            BitPlacement::BeforeReduction,
        ),
        wt: Operand::new(
            &filters,
            p.out_channels,
            f.planes,
            depth,
            BitPlacement::BeforeReduction,
        ),
        logical_k: taps * p.in_channels,
        spec: *spec,
        tile: tile.clone(),
        tiles: [tile.splits[0], tile.splits[1], usize::MAX],
        plan: *plan,
        threads,
    }))
}

/// Runs [`bitserial_conv2d`] or [`lower_to_matmul_conv2d`].
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    act: &PackedTensor,
    wt: &PackedTensor,
    p: &ConvParams,
    spec: &DotSpec,
    tile: &TileConfig,
    plan: &AccumPlan,
    threads: usize,
    strategy: ConvStrategy,
) -> Result<KernelOutput> {
    match strategy {
        ConvStrategy::Direct => bitserial_conv2d(act, wt, p, spec, tile, plan, threads),
        ConvStrategy::Lowered => lower_to_matmul_conv2d(act, wt, p, spec, tile, plan, threads),
    }
}
