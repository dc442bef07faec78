//! Inner loops shared by the matmul and convolution drivers.

use std::borrow::Cow;

use super::accum::Narrow;
use crate::bitpack::{BitPlacement, PackedTensor};
use crate::error::{Error, Result};
use crate::word::Word;

/// View of packed reduction rows with each bitplane row contiguous: word
/// `j` of bitplane `plane` in row `row`. Innermost (bit-interleaved) storage
/// is copied into plane-major rows on construction.
#[derive(Debug, Clone)]
pub(crate) struct Operand<'a, W: Word> {
    words: Cow<'a, [W]>,
    pub rows: usize,
    pub planes: usize,
    pub kwords: usize,
    row_stride: usize,
    plane_stride: usize,
}

impl<'a, W: Word> Operand<'a, W> {
    pub fn new(
        words: &'a [W],
        rows: usize,
        planes: usize,
        kwords: usize,
        placement: BitPlacement,
    ) -> Self {
        debug_assert_eq!(words.len(), rows * planes * kwords);
        let (words, row_stride, plane_stride) = match placement {
            BitPlacement::Outermost => (Cow::Borrowed(words), kwords, rows * kwords),
            BitPlacement::BeforeReduction => (Cow::Borrowed(words), planes * kwords, kwords),
            BitPlacement::Innermost => {
                let mut v = Vec::with_capacity(words.len());
                for row in words.chunks_exact(planes * kwords) {
                    for plane in 0..planes {
                        v.extend(row.iter().skip(plane).step_by(planes));
                    }
                }
                (Cow::Owned(v), planes * kwords, kwords)
            }
        };
        Operand {
            words,
            rows,
            planes,
            kwords,
            row_stride,
            plane_stride,
        }
    }

    /// Views a row-major packed tensor whose reduction axis is its last
    /// source axis. Fails on unsupported layouts and dirty padding.
    pub fn from_packed(p: &'a PackedTensor) -> Result<Self> {
        debug_assert!(!p.is_tiled());
        let placement = match p.placement() {
            Some(pl) if p.source_reduction_axis() + 1 == p.source_rank() => pl,
            _ => return Err(Error::UnsupportedLayout(p.layout_tag())),
        };
        let words = W::slice(p.words()).ok_or_else(|| {
            Error::OperandMismatch(format!(
                "expected {}-bit words, found {}",
                W::BITS,
                p.width()
            ))
        })?;
        let kwords = p.reduction_words();
        let rows = p.source_shape()[..p.source_rank() - 1].iter().product();
        let op = Operand::new(words, rows, p.bits() as usize, kwords, placement);

        let used = (p.orig_reduction_len() % W::BITS as usize) as u32;
        if used != 0 {
            for row in 0..rows {
                for plane in 0..op.planes {
                    if op.at(row, plane, kwords - 1) >> used != W::ZERO {
                        return Err(Error::NonZeroPadding {
                            word: row * op.planes * kwords + plane * kwords + kwords - 1,
                        });
                    }
                }
            }
        }
        Ok(op)
    }

    #[inline(always)]
    pub fn plane_row(&self, row: usize, plane: usize) -> &[W] {
        let start = row * self.row_stride + plane * self.plane_stride;
        &self.words[start..start + self.kwords]
    }

    #[inline(always)]
    pub fn at(&self, row: usize, plane: usize, j: usize) -> W {
        self.words[row * self.row_stride + plane * self.plane_stride + j]
    }
}

/// A bit-plane count, either a compile-time constant (loops fully unrolled)
/// or a runtime value.
pub(crate) trait Planes: Copy + Send + Sync {
    fn get(self) -> usize;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Fixed<const P: usize>;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dyn(pub usize);

impl<const P: usize> Planes for Fixed<P> {
    #[inline(always)]
    fn get(self) -> usize {
        P
    }
}

impl Planes for Dyn {
    #[inline(always)]
    fn get(self) -> usize {
        self.0
    }
}

pub(crate) trait BitOp: Copy + Send + Sync {
    fn apply<W: Word>(a: W, b: W) -> W;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct And;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Xnor;

impl BitOp for And {
    #[inline(always)]
    fn apply<W: Word>(a: W, b: W) -> W {
        a & b
    }
}

impl BitOp for Xnor {
    #[inline(always)]
    fn apply<W: Word>(a: W, b: W) -> W {
        !(a ^ b)
    }
}

const MAX_BITS: usize = crate::tensor::MAX_BITS as usize;

/// Lanes per column for two 8-bit operands.
const MAX_LANES: usize = MAX_BITS * MAX_BITS;

/// Bitplane rows of one activation row or one weight column, restricted to
/// the words being reduced.
pub(crate) type PlaneRows<'a, W> = [&'a [W]; MAX_BITS];

pub(crate) fn plane_rows<'o, W: Word>(
    op: &'o Operand<'_, W>,
    row: usize,
    j0: usize,
    j1: usize,
) -> PlaneRows<'o, W> {
    let mut rows: PlaneRows<'o, W> = [&[]; MAX_BITS];
    for (plane, slot) in rows.iter_mut().enumerate().take(op.planes) {
        *slot = &op.plane_row(row, plane)[j0..j1];
    }
    rows
}

/// Popcounts `act` against every column in `cols`, staging at most
/// `safe_depth` words in narrow counters before widening into `wide`
/// (lane `(ci * M + m) * N + n`). Returns the number of lane widenings.
#[inline(always)]
pub(crate) fn accumulate<W: Word, A: Narrow, PM: Planes, PN: Planes, O: BitOp>(
    act: &PlaneRows<'_, W>,
    cols: &[PlaneRows<'_, W>],
    safe_depth: usize,
    pm: PM,
    pn: PN,
    wide: &mut [u32],
) -> u64 {
    if pm.get() * pn.get() <= 16 {
        accumulate_in::<W, A, PM, PN, O, 16>(act, cols, safe_depth, pm, pn, wide)
    } else {
        accumulate_in::<W, A, PM, PN, O, MAX_LANES>(act, cols, safe_depth, pm, pn, wide)
    }
}

#[inline(always)]
fn accumulate_in<W: Word, A: Narrow, PM: Planes, PN: Planes, O: BitOp, const L: usize>(
    act: &PlaneRows<'_, W>,
    cols: &[PlaneRows<'_, W>],
    safe_depth: usize,
    pm: PM,
    pn: PN,
    wide: &mut [u32],
) -> u64 {
    let (mb, nb) = (pm.get(), pn.get());
    let lanes = mb * nb;
    let len = act[0].len();
    let mut widenings = 0;
    for (wc, wide) in cols.iter().zip(wide.chunks_exact_mut(lanes)) {
        let mut s = 0;
        while s < len {
            let e = (s + safe_depth).min(len);
            let mut narrow = [A::default(); L];
            for i in s..e {
                for m in 0..mb {
                    let w = wc[m][i];
                    for n in 0..nb {
                        narrow[m * nb + n] =
                            narrow[m * nb + n].add(O::apply(act[n][i], w).popcount());
                    }
                }
            }
            for (w, c) in wide.iter_mut().zip(&narrow[..lanes]) {
                *w += c.widen();
            }
            widenings += lanes as u64;
            s = e;
        }
    }
    widenings
}

/// Adds the plane-weighted lane totals of each column to `out` and clears
/// the lanes.
#[inline(always)]
pub(crate) fn drain(wide: &mut [u32], lanes: usize, coef: &[i64], out: &mut [i32]) {
    for (o, w) in out.iter_mut().zip(wide.chunks_exact_mut(lanes)) {
        let mut total = 0i64;
        for (x, &c) in w.iter_mut().zip(coef) {
            total += c * *x as i64;
            *x = 0;
        }
        *o += total as i32;
    }
}

/// Calls `$f::<_, A, PM, PN, Op>(args.., pm, pn)` with the narrow type, plane
/// counts and bit operation selected at runtime.
macro_rules! dispatch_kernel {
    ($f:ident, narrow8 = $n8:expr, unroll = $unroll:expr, xnor = $xnor:expr, planes = ($mb:expr, $nb:expr); $($arg:expr),* $(,)?) => {{
        use $crate::kernels::micro::{And, Dyn, Fixed, Xnor};
        match ($n8, $xnor) {
            (true, true) => dispatch_kernel!(@xnor $f, u8, $unroll; $($arg),*),
            (false, true) => dispatch_kernel!(@xnor $f, u16, $unroll; $($arg),*),
            (true, false) => dispatch_kernel!(@and $f, u8, $unroll, $mb, $nb; $($arg),*),
            (false, false) => dispatch_kernel!(@and $f, u16, $unroll, $mb, $nb; $($arg),*),
        }
    }};
    (@xnor $f:ident, $A:ty, $unroll:expr; $($arg:expr),*) => {
        if $unroll {
            $f::<_, $A, Fixed<1>, Fixed<1>, Xnor>($($arg,)* Fixed::<1>, Fixed::<1>)
        } else {
            $f::<_, $A, Dyn, Dyn, Xnor>($($arg,)* Dyn(1), Dyn(1))
        }
    };
    (@and $f:ident, $A:ty, $unroll:expr, $mb:expr, $nb:expr; $($arg:expr),*) => {
        if $unroll && $mb <= 4 && $nb <= 4 {
            match $mb {
                1 => dispatch_kernel!(@n $f, $A, Fixed<1>, Fixed::<1>, $nb; $($arg),*),
                2 => dispatch_kernel!(@n $f, $A, Fixed<2>, Fixed::<2>, $nb; $($arg),*),
                3 => dispatch_kernel!(@n $f, $A, Fixed<3>, Fixed::<3>, $nb; $($arg),*),
                _ => dispatch_kernel!(@n $f, $A, Fixed<4>, Fixed::<4>, $nb; $($arg),*),
            }
        } else {
            $f::<_, $A, Dyn, Dyn, And>($($arg,)* Dyn($mb), Dyn($nb))
        }
    };
    (@n $f:ident, $A:ty, $PM:ty, $pm:expr, $nb:expr; $($arg:expr),*) => {
        match $nb {
            1 => $f::<_, $A, $PM, Fixed<1>, And>($($arg,)* $pm, Fixed::<1>),
            2 => $f::<_, $A, $PM, Fixed<2>, And>($($arg,)* $pm, Fixed::<2>),
            3 => $f::<_, $A, $PM, Fixed<3>, And>($($arg,)* $pm, Fixed::<3>),
            _ => $f::<_, $A, $PM, Fixed<4>, And>($($arg,)* $pm, Fixed::<4>),
        }
    };
}

pub(crate) use dispatch_kernel;

/// Visits tile origins of a 3-axis loop nest, `order[0]` outermost.
pub(crate) fn for_each_tile(counts: [usize; 3], order: &[usize], mut f: impl FnMut([usize; 3])) {
    let total: usize = counts.iter().product();
    for t in 0..total {
        let mut rest = t;
        let mut idx = [0usize; 3];
        for &axis in order.iter().rev() {
            idx[axis] = rest % counts[axis];
            rest /= counts[axis];
        }
        f(idx);
    }
}

/// Splits `0..len` into at most `workers` contiguous bands.
pub(crate) fn bands(len: usize, workers: usize) -> usize {
    len.div_ceil(workers.clamp(1, len.max(1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_order() {
        let mut seen = Vec::new();
        for_each_tile([2, 1, 3], &[2, 0, 1], |i| seen.push(i));
        assert_eq!(seen.len(), 6);
        // axis 2 outermost, axis 1 innermost
        assert_eq!(&seen[..3], &[[0, 0, 0], [1, 0, 0], [0, 0, 1]]);
    }

    #[test]
    fn band_sizes() {
        assert_eq!(bands(10, 4), 3);
        assert_eq!(bands(3, 8), 1);
        assert_eq!(bands(5, 1), 5);
        assert_eq!(bands(0, 4), 0);
    }

    #[test]
    fn operand_strides_agree() {
        // 2 rows, 3 planes, 2 words: word value encodes (row, plane, j)
        let enc = |r: usize, p: usize, j: usize| (r * 100 + p * 10 + j) as u16;
        for placement in BitPlacement::ALL {
            let mut words = vec![0u16; 12];
            for r in 0..2 {
                for p in 0..3 {
                    for j in 0..2 {
                        let idx = match placement {
                            BitPlacement::Outermost => (p * 2 + r) * 2 + j,
                            BitPlacement::BeforeReduction => (r * 3 + p) * 2 + j,
                            BitPlacement::Innermost => (r * 2 + j) * 3 + p,
                        };
                        words[idx] = enc(r, p, j);
                    }
                }
            }
            let op = Operand::new(&words, 2, 3, 2, placement);
            for r in 0..2 {
                for p in 0..3 {
                    for j in 0..2 {
                        assert_eq!(op.at(r, p, j), enc(r, p, j));
                    }
                }
            }
        }
    }
}
