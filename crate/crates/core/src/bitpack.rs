//! Bitplane packing.
//!
//! A `d`-dimensional [`QuantTensor`] of `B`-bit codes becomes a
//! `(d+1)`-dimensional [`PackedTensor`]: the reduction axis of extent `K`
//! shrinks to `K' = ceil(K / w)` words of `w` bits, and a new bit axis of
//! extent `B` indexes the bitplanes. Element `k` of a reduction row lives in
//! word `k / w` at bit `k % w` (LSB first). Bits past `K` in the last word are
//! always zero.

use std::borrow::Cow;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{increment, row_major_strides, Encoding, Layout, QuantTensor, Tensor};
use crate::with_words;
use crate::word::{Word, WordBuf, WordWidth};

/// Named placements of the bit axis relative to the reduction axis.
///
/// For an `M x K` matrix these are the `BMK'`, `MBK'` and `MK'B` layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BitPlacement {
    Outermost,
    BeforeReduction,
    Innermost,
}

impl BitPlacement {
    pub const ALL: [BitPlacement; 3] = [
        BitPlacement::Outermost,
        BitPlacement::BeforeReduction,
        BitPlacement::Innermost,
    ];

    /// Bit axis index in the packed tensor for a source of rank `rank`
    /// reduced along axis `reduction`.
    pub fn position(self, rank: usize, reduction: usize) -> usize {
        match self {
            BitPlacement::Outermost => 0,
            BitPlacement::BeforeReduction => reduction,
            BitPlacement::Innermost => rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedTensor {
    words: WordBuf,
    shape: Vec<usize>,
    source_layout: Layout,
    bit_axis: usize,
    reduction_axis: usize,
    orig_reduction_len: usize,
    bits: u8,
    signed: bool,
    encoding: Encoding,
    tiles: Option<Vec<usize>>,
}

/// Packs `q` along `reduction_axis` into `width`-bit words, placing the bit
/// axis at index `bit_axis` (0..=rank) of the packed shape.
pub fn bitpack(
    q: &QuantTensor,
    reduction_axis: char,
    bit_axis: usize,
    width: WordWidth,
) -> Result<PackedTensor> {
    let rank = q.shape().len();
    let red = q
        .layout()
        .position(reduction_axis)
        .ok_or(Error::UnknownAxis(reduction_axis))?;
    if bit_axis > rank {
        return Err(Error::AxisOutOfRange {
            index: bit_axis,
            rank: rank + 1,
        });
    }
    let k = q.shape()[red];
    let w = width.bits() as usize;
    let shape = packed_shape(q.shape(), red, bit_axis, width.words_for(k), q.bits());
    let total: usize = shape.iter().product();
    let strides = row_major_strides(&shape);

    // packed stride for every source axis, then the bit-axis stride
    let src_strides: Vec<usize> = (0..rank)
        .map(|i| strides[packed_index(i, bit_axis)])
        .collect();
    let plane_stride = strides[bit_axis];

    let mut words = WordBuf::zeros(width, total);
    let codes = q.codes().data();
    let src_shape = q.shape();
    let bits = q.bits();
    with_words!(&mut words, buf => {
        if red + 1 == rank {
            pack_rows(buf, codes, k, bits, &src_strides, plane_stride, src_shape);
            return Ok(PackedTensor {
                words,
                shape,
                source_layout: q.layout().clone(),
                bit_axis,
                reduction_axis: packed_index(red, bit_axis),
                orig_reduction_len: k,
                bits,
                signed: q.is_signed(),
                encoding: q.encoding(),
                tiles: None,
            });
        }
        let mut coord = vec![0usize; rank];
        for &code in codes {
            let mut base = 0;
            for i in 0..rank {
                let c = if i == red { coord[i] / w } else { coord[i] };
                base += c * src_strides[i];
            }
            let bit = (coord[red] % w) as u32;
            for p in 0..bits as usize {
                if code >> p & 1 == 1 {
                    set_bit(buf, base + p * plane_stride, bit);
                }
            }
            increment(&mut coord, src_shape);
        }
    });

    Ok(PackedTensor {
        words,
        shape,
        source_layout: q.layout().clone(),
        bit_axis,
        reduction_axis: packed_index(red, bit_axis),
        orig_reduction_len: k,
        bits,
        signed: q.is_signed(),
        encoding: q.encoding(),
        tiles: None,
    })
}

/// Inverse of [`bitpack`]; rejects tensors whose padding bits are not zero.
pub fn bitunpack(p: &PackedTensor) -> Result<QuantTensor> {
    let p = p.untiled();
    p.check_padding()?;
    let rank = p.source_rank();
    let red = p.source_reduction_axis();
    let w = p.width().bits() as usize;
    let src_shape = p.source_shape();
    let strides = row_major_strides(&p.shape);
    let src_strides: Vec<usize> = (0..rank)
        .map(|i| strides[packed_index(i, p.bit_axis)])
        .collect();
    let plane_stride = strides[p.bit_axis];
    let n: usize = src_shape.iter().product();

    let mut codes = Vec::with_capacity(n);
    with_words!(&p.words, buf => {
        let mut coord = vec![0usize; rank];
        for _ in 0..n {
            let mut base = 0;
            for i in 0..rank {
                let c = if i == red { coord[i] / w } else { coord[i] };
                base += c * src_strides[i];
            }
            let bit = (coord[red] % w) as u32;
            let mut code = 0u8;
            for plane in 0..p.bits as usize {
                let word = buf[base + plane * plane_stride].to_u64();
                code |= ((word >> bit & 1) as u8) << plane;
            }
            codes.push(code);
            increment(&mut coord, &src_shape);
        }
    });
    let codes = Tensor::new(&src_shape, &p.source_layout.to_string(), codes)?;
    Ok(QuantTensor::new(codes, p.bits, p.encoding)?.with_signed(p.signed))
}

/// Stores `p` hierarchically: tiles of `tile` extents are contiguous and laid
/// out in row-major tile order; within a tile words are row-major.
pub fn repack_tiles(p: &PackedTensor, tile: &[usize]) -> Result<PackedTensor> {
    let src = p.untiled();
    if tile.len() != src.shape.len()
        || tile
            .iter()
            .zip(&src.shape)
            .any(|(&t, &e)| t == 0 || e % t != 0)
    {
        return Err(Error::TileMismatch {
            tile: tile.to_vec(),
            shape: src.shape.clone(),
        });
    }
    let mut out = PackedTensor {
        tiles: Some(tile.to_vec()),
        ..src.clone().into_owned()
    };
    let order: Vec<usize> = logical_order(&out.shape).map(|c| out.offset(&c)).collect();
    // order[i] is the tiled offset of the i-th row-major word
    let mut inverse = vec![0usize; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inverse[o] = i;
    }
    out.words = src.words.gather(inverse.into_iter());
    Ok(out)
}

#[inline]
/// Packing when the reduction axis is the last source axis: every source
/// row of `k` codes becomes `ceil(k / w)` words per plane.
fn pack_rows<W: Word>(
    buf: &mut [W],
    codes: &[u8],
    k: usize,
    bits: u8,
    src_strides: &[usize],
    plane_stride: usize,
    src_shape: &[usize],
) {
    let rank = src_shape.len();
    let w = W::BITS as usize;
    let word_stride = src_strides[rank - 1];
    let mut coord = vec![0usize; rank];
    for row in codes.chunks_exact(k.max(1)) {
        let base: usize = (0..rank - 1).map(|i| coord[i] * src_strides[i]).sum();
        for (j, chunk) in row.chunks(w).enumerate() {
            let mut planes = [W::ZERO; crate::tensor::MAX_BITS as usize];
            for (bit, &code) in chunk.iter().enumerate() {
                for (p, plane) in planes.iter_mut().enumerate().take(bits as usize) {
                    *plane = *plane | (W::from_u64((code >> p & 1) as u64) << bit as u32);
                }
            }
            for (p, &plane) in planes.iter().enumerate().take(bits as usize) {
                buf[base + j * word_stride + p * plane_stride] = plane;
            }
        }
        coord[rank - 1] = k - 1;
        increment(&mut coord, src_shape);
    }
}

fn set_bit<W: Word>(buf: &mut [W], idx: usize, bit: u32) {
    buf[idx] = buf[idx] | (W::ONE << bit);
}

fn logical_order(shape: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let n: usize = shape.iter().product();
    let mut coord = vec![0usize; shape.len()];
    (0..n).map(move |_| {
        let c = coord.clone();
        increment(&mut coord, shape);
        c
    })
}

fn packed_shape(src: &[usize], red: usize, bit_axis: usize, kwords: usize, bits: u8) -> Vec<usize> {
    let mut shape: Vec<usize> = src.to_vec();
    shape[red] = kwords;
    shape.insert(bit_axis, bits as usize);
    shape
}

fn packed_index(src_axis: usize, bit_axis: usize) -> usize {
    if src_axis < bit_axis {
        src_axis
    } else {
        src_axis + 1
    }
}

impl PackedTensor {
    /// Assembles a packed tensor from raw words. Shapes are validated; the
    /// padding bits are not (see [`bitunpack`]).
    #[allow(clippy::too_many_arguments)]
    pub fn from_words(
        words: WordBuf,
        source_shape: &[usize],
        source_layout: &str,
        reduction_axis: char,
        bit_axis: usize,
        bits: u8,
        signed: bool,
        encoding: Encoding,
    ) -> Result<Self> {
        crate::tensor::check_bits(bits)?;
        if encoding == Encoding::Bipolar && bits != 1 {
            return Err(Error::BipolarPrecision(bits));
        }
        let layout = Layout::parse(source_layout)?;
        if layout.len() != source_shape.len() {
            return Err(Error::LayoutMismatch {
                shape: source_shape.to_vec(),
                layout: source_layout.into(),
            });
        }
        if source_shape.iter().any(|&e| e == 0) {
            return Err(Error::ZeroExtent(source_shape.to_vec()));
        }
        let red = layout
            .position(reduction_axis)
            .ok_or(Error::UnknownAxis(reduction_axis))?;
        let rank = source_shape.len();
        if bit_axis > rank {
            return Err(Error::AxisOutOfRange {
                index: bit_axis,
                rank: rank + 1,
            });
        }
        let k = source_shape[red];
        let shape = packed_shape(
            source_shape,
            red,
            bit_axis,
            words.width().words_for(k),
            bits,
        );
        let expected: usize = shape.iter().product();
        if words.len() != expected {
            return Err(Error::ElementCount {
                shape,
                expected,
                actual: words.len(),
            });
        }
        Ok(PackedTensor {
            words,
            shape,
            source_layout: layout,
            bit_axis,
            reduction_axis: packed_index(red, bit_axis),
            orig_reduction_len: k,
            bits,
            signed: signed && encoding == Encoding::Unipolar,
            encoding,
            tiles: None,
        })
    }

    pub fn words(&self) -> &WordBuf {
        &self.words
    }

    pub fn width(&self) -> WordWidth {
        self.words.width()
    }

    /// Packed extents, including the bit axis.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bit_axis(&self) -> usize {
        self.bit_axis
    }

    pub fn reduction_axis(&self) -> usize {
        self.reduction_axis
    }

    pub fn orig_reduction_len(&self) -> usize {
        self.orig_reduction_len
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn source_layout(&self) -> &Layout {
        &self.source_layout
    }

    pub fn source_rank(&self) -> usize {
        self.shape.len() - 1
    }

    pub fn source_reduction_axis(&self) -> usize {
        if self.reduction_axis > self.bit_axis {
            self.reduction_axis - 1
        } else {
            self.reduction_axis
        }
    }

    /// Shape of the unpacked source tensor.
    pub fn source_shape(&self) -> Vec<usize> {
        let mut s = self.shape.clone();
        s[self.reduction_axis] = self.orig_reduction_len;
        s.remove(self.bit_axis);
        s
    }

    /// Number of packed words along the reduction axis.
    pub fn reduction_words(&self) -> usize {
        self.shape[self.reduction_axis]
    }

    pub fn tile_extents(&self) -> Option<&[usize]> {
        self.tiles.as_deref()
    }

    pub fn is_tiled(&self) -> bool {
        self.tiles.is_some()
    }

    /// Relative placement of the bit axis, if it is one of the named ones.
    pub fn placement(&self) -> Option<BitPlacement> {
        let rank = self.source_rank();
        let red = self.source_reduction_axis();
        BitPlacement::ALL
            .into_iter()
            .find(|p| p.position(rank, red) == self.bit_axis)
    }

    /// Layout name, e.g. `MK'B` for a matrix packed along `K` with the bit
    /// axis innermost.
    pub fn layout_tag(&self) -> String {
        let red = self.source_reduction_axis();
        let mut parts: Vec<String> = self
            .source_layout
            .axes()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if i == red {
                    format!("{a}'")
                } else {
                    a.to_string()
                }
            })
            .collect();
        parts.insert(self.bit_axis, "B".into());
        parts.concat()
    }

    /// Storage offset of a packed coordinate, honouring tiling.
    pub fn offset(&self, coord: &[usize]) -> usize {
        match &self.tiles {
            None => linear(coord, &self.shape),
            Some(tile) => {
                let grid: Vec<usize> = self.shape.iter().zip(tile).map(|(e, t)| e / t).collect();
                let outer: Vec<usize> = coord.iter().zip(tile).map(|(c, t)| c / t).collect();
                let inner: Vec<usize> = coord.iter().zip(tile).map(|(c, t)| c % t).collect();
                let volume: usize = tile.iter().product();
                linear(&outer, &grid) * volume + linear(&inner, tile)
            }
        }
    }

    pub fn word_at(&self, coord: &[usize]) -> u64 {
        self.words.get(self.offset(coord))
    }

    /// Row-major copy of a tiled tensor; borrows when already row-major.
    pub fn untiled(&self) -> Cow<'_, PackedTensor> {
        if self.tiles.is_none() {
            return Cow::Borrowed(self);
        }
        let words = self
            .words
            .gather(logical_order(&self.shape).map(|c| self.offset(&c)));
        Cow::Owned(PackedTensor {
            words,
            tiles: None,
            ..self.clone()
        })
    }

    /// Checks that no bit beyond the original reduction length is set.
    pub fn check_padding(&self) -> Result<()> {
        let w = self.width().bits() as usize;
        let used = self.orig_reduction_len % w;
        if used == 0 {
            return Ok(());
        }
        let last = self.reduction_words() - 1;
        for coord in logical_order(&self.shape) {
            if coord[self.reduction_axis] == last {
                let off = self.offset(&coord);
                if self.words.get(off) >> used != 0 {
                    return Err(Error::NonZeroPadding { word: off });
                }
            }
        }
        Ok(())
    }

    /// Bitplane `plane` of the reduction row selected by `outer` (source
    /// coordinates with the reduction axis omitted), as widened words.
    pub fn plane_words(&self, outer: &[usize], plane: usize) -> Vec<u64> {
        let red = self.source_reduction_axis();
        (0..self.reduction_words())
            .map(|j| {
                let mut coord: Vec<usize> = outer.to_vec();
                coord.insert(red, j);
                coord.insert(self.bit_axis, plane);
                self.word_at(&coord)
            })
            .collect()
    }

    /// Extracts row `i` of a packed matrix (reduction axis last) as a packed
    /// vector with the bit axis outermost.
    pub fn row(&self, i: usize) -> Result<PackedTensor> {
        if self.source_rank() != 2 || self.source_reduction_axis() != 1 {
            return Err(Error::UnsupportedLayout(self.layout_tag()));
        }
        let rows = self.source_shape()[0];
        if i >= rows {
            return Err(Error::AxisOutOfRange {
                index: i,
                rank: rows,
            });
        }
        let kw = self.reduction_words();
        let mut words = WordBuf::zeros(self.width(), self.bits as usize * kw);
        for p in 0..self.bits as usize {
            for (j, w) in self.plane_words(&[i], p).into_iter().enumerate() {
                words.set(p * kw + j, w);
            }
        }
        let red = self.source_layout.axes()[1];
        PackedTensor::from_words(
            words,
            &[self.orig_reduction_len],
            &red.to_string(),
            red,
            0,
            self.bits,
            self.signed,
            self.encoding,
        )
    }
}

impl fmt::Display for PackedTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:?} {}-bit {} {}",
            self.layout_tag(),
            self.shape,
            self.bits,
            self.encoding,
            self.width()
        )
    }
}

fn linear(coord: &[usize], shape: &[usize]) -> usize {
    coord.iter().zip(shape).fold(0, |acc, (c, e)| acc * e + c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quant(shape: &[usize], layout: &str, codes: Vec<u8>, bits: u8) -> QuantTensor {
        QuantTensor::new(
            Tensor::new(shape, layout, codes).unwrap(),
            bits,
            Encoding::Unipolar,
        )
        .unwrap()
    }

    #[test]
    fn packs_worked_row() {
        let q = quant(&[1, 4], "MK", vec![3, 1, 2, 0], 2);
        let p = bitpack(&q, 'K', 2, WordWidth::W8).unwrap();
        assert_eq!(p.layout_tag(), "MK'B");
        assert_eq!(p.shape(), &[1, 1, 2]);
        assert_eq!(p.plane_words(&[0], 0), vec![0b0000_0011]);
        assert_eq!(p.plane_words(&[0], 1), vec![0b0000_0101]);
        assert_eq!(bitunpack(&p).unwrap(), q);
    }

    #[test]
    fn layout_tags() {
        let q = quant(&[2, 4], "MK", vec![0; 8], 2);
        let tags: Vec<String> = BitPlacement::ALL
            .iter()
            .map(|pl| {
                bitpack(&q, 'K', pl.position(2, 1), WordWidth::W8)
                    .unwrap()
                    .layout_tag()
            })
            .collect();
        assert_eq!(tags, ["BMK'", "MBK'", "MK'B"]);
        let q = quant(&[1, 2, 2, 3], "NHWC", vec![0; 12], 1);
        let p = bitpack(&q, 'C', 3, WordWidth::W8).unwrap();
        assert_eq!(p.layout_tag(), "NHWBC'");
        assert_eq!(p.placement(), Some(BitPlacement::BeforeReduction));
        let p = bitpack(&q, 'C', 1, WordWidth::W8).unwrap();
        assert_eq!(p.placement(), None);
    }

    #[test]
    fn single_element() {
        let q = quant(&[1], "K", vec![1], 1);
        let p = bitpack(&q, 'K', 0, WordWidth::W32).unwrap();
        assert_eq!(p.words(), &WordBuf::U32(vec![1]));
        assert_eq!(bitunpack(&p).unwrap(), q);
    }

    #[test]
    fn zeros_pack_to_zero() {
        for bits in 1..=4 {
            let q = quant(&[3, 70], "MK", vec![0; 210], bits);
            for w in WordWidth::ALL {
                for pos in 0..=2 {
                    let p = bitpack(&q, 'K', pos, w).unwrap();
                    assert_eq!(p.words().total_popcount(), 0);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_bit_axis() {
        let q = quant(&[2, 4], "MK", vec![0; 8], 2);
        assert_eq!(
            bitpack(&q, 'K', 3, WordWidth::W8).unwrap_err(),
            Error::AxisOutOfRange { index: 3, rank: 3 }
        );
        assert_eq!(
            bitpack(&q, 'Z', 0, WordWidth::W8).unwrap_err(),
            Error::UnknownAxis('Z')
        );
    }

    #[test]
    fn non_reduction_axis_packing() {
        // pack along M of an M x K matrix
        let q = quant(&[3, 2], "MK", vec![1, 2, 3, 0, 2, 1], 2);
        let p = bitpack(&q, 'M', 0, WordWidth::W8).unwrap();
        assert_eq!(p.layout_tag(), "BM'K");
        assert_eq!(p.shape(), &[2, 1, 2]);
        // column K=0 holds 1,3,2 -> lsb plane bits 1,1,0
        assert_eq!(p.plane_words(&[0], 0), vec![0b011]);
        assert_eq!(bitunpack(&p).unwrap(), q);
    }

    #[test]
    fn unpack_rejects_dirty_padding() {
        let words = WordBuf::U8(vec![0b1000_0001]);
        let p = PackedTensor::from_words(words, &[3], "K", 'K', 0, 1, false, Encoding::Unipolar)
            .unwrap();
        assert_eq!(
            bitunpack(&p).unwrap_err(),
            Error::NonZeroPadding { word: 0 }
        );
        let words = WordBuf::U8(vec![0b0000_0101]);
        let p = PackedTensor::from_words(words, &[3], "K", 'K', 0, 1, false, Encoding::Unipolar)
            .unwrap();
        assert_eq!(bitunpack(&p).unwrap().codes().data(), &[1, 0, 1]);
    }

    #[test]
    fn from_words_checks_length() {
        let words = WordBuf::U8(vec![0; 3]);
        assert!(matches!(
            PackedTensor::from_words(words, &[9], "K", 'K', 0, 2, false, Encoding::Unipolar),
            Err(Error::ElementCount { .. })
        ));
    }

    fn grid() -> PackedTensor {
        // 4 rows x 128 elements of 1 bit in u32 words: a 4 x 4 word grid
        let codes: Vec<u8> = (0..512).map(|i| ((i * 7 + i / 3) % 2) as u8).collect();
        let q = quant(&[4, 128], "MK", codes, 1);
        bitpack(&q, 'K', 2, WordWidth::W32).unwrap()
    }

    #[test]
    fn tile_offsets() {
        let p = grid();
        assert_eq!(p.shape(), &[4, 4, 1]);
        let t = repack_tiles(&p, &[2, 2, 1]).unwrap();
        assert_eq!(t.offset(&[2, 3, 0]), 13);
        // naive gather: word (row, col) must sit at its tiled offset
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(t.words().get(t.offset(&[r, c, 0])), p.word_at(&[r, c, 0]));
            }
        }
        assert_eq!(t.words().get(13), p.word_at(&[2, 3, 0]));
        assert_eq!(t.untiled().into_owned(), p);
        assert_eq!(bitunpack(&t).unwrap(), bitunpack(&p).unwrap());
    }

    #[test]
    fn full_tile_is_identity() {
        let p = grid();
        let t = repack_tiles(&p, p.shape()).unwrap();
        assert_eq!(t.words(), p.words());
    }

    #[test]
    fn tile_must_divide() {
        let p = grid();
        assert!(matches!(
            repack_tiles(&p, &[3, 2, 1]),
            Err(Error::TileMismatch { .. })
        ));
        assert!(matches!(
            repack_tiles(&p, &[2, 2]),
            Err(Error::TileMismatch { .. })
        ));
        assert!(matches!(
            repack_tiles(&p, &[0, 2, 1]),
            Err(Error::TileMismatch { .. })
        ));
    }

    #[test]
    fn row_extraction() {
        let q = quant(&[2, 5], "MK", vec![1, 2, 3, 0, 1, 3, 3, 0, 0, 2], 2);
        for pos in 0..=2 {
            let p = bitpack(&q, 'K', pos, WordWidth::W8).unwrap();
            let r = p.row(1).unwrap();
            assert_eq!(bitunpack(&r).unwrap().codes().data(), &[3, 3, 0, 0, 2]);
        }
    }
}
