//! Unsigned storage words for packed bitplanes.

use std::fmt;
use std::ops::{BitAnd, BitOr, BitXor, Not, Shl, Shr};

use crate::error::{Error, Result};

/// An unsigned machine word that holds `BITS` packed elements.
pub trait Word:
    Copy
    + Default
    + Eq
    + fmt::Debug
    + Send
    + Sync
    + 'static
    + BitAnd<Output = Self>
    + BitOr<Output = Self>
    + BitXor<Output = Self>
    + Not<Output = Self>
    + Shl<u32, Output = Self>
    + Shr<u32, Output = Self>
{
    const BITS: u32;
    const ZERO: Self;
    const ONE: Self;
    const ONES: Self;

    fn popcount(self) -> u32;
    fn to_u64(self) -> u64;
    fn from_u64(v: u64) -> Self;

    /// Typed view of `buf` when its width matches.
    fn slice(buf: &WordBuf) -> Option<&[Self]>;

    fn into_buf(words: Vec<Self>) -> WordBuf;
}

macro_rules! impl_word {
    ($($t:ty => $variant:ident),*) => {$(
        impl Word for $t {
            const BITS: u32 = <$t>::BITS;
            const ZERO: Self = 0;
            const ONE: Self = 1;
            const ONES: Self = <$t>::MAX;

            #[inline(always)]
            fn popcount(self) -> u32 {
                self.count_ones()
            }

            #[inline(always)]
            fn to_u64(self) -> u64 {
                self as u64
            }

            #[inline(always)]
            fn from_u64(v: u64) -> Self {
                v as $t
            }

            fn slice(buf: &WordBuf) -> Option<&[Self]> {
                match buf {
                    WordBuf::$variant(v) => Some(v),
                    _ => None,
                }
            }

            fn into_buf(words: Vec<Self>) -> WordBuf {
                WordBuf::$variant(words)
            }
        }
    )*};
}

impl_word!(u8 => U8, u16 => U16, u32 => U32, u64 => U64);

/// Mask with the low `n` bits set (`n <= W::BITS`).
#[inline]
pub fn low_mask<W: Word>(n: u32) -> W {
    if n >= W::BITS {
        W::ONES
    } else {
        W::from_u64((1u64 << n) - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WordWidth {
    W8,
    W16,
    W32,
    W64,
}

impl WordWidth {
    pub const ALL: [WordWidth; 4] = [
        WordWidth::W8,
        WordWidth::W16,
        WordWidth::W32,
        WordWidth::W64,
    ];

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(WordWidth::W8),
            16 => Ok(WordWidth::W16),
            32 => Ok(WordWidth::W32),
            64 => Ok(WordWidth::W64),
            _ => Err(Error::UnsupportedWordWidth(bits)),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            WordWidth::W8 => 8,
            WordWidth::W16 => 16,
            WordWidth::W32 => 32,
            WordWidth::W64 => 64,
        }
    }

    /// Number of words needed for `len` packed elements.
    pub fn words_for(self, len: usize) -> usize {
        len.div_ceil(self.bits() as usize)
    }
}

impl fmt::Display for WordWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.bits())
    }
}

/// Word storage of a packed tensor, tagged by width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WordBuf {
    U8(Vec<u8>),
    U16(Vec<u16>),
    U32(Vec<u32>),
    U64(Vec<u64>),
}

/// Runs `$body` with `$v` bound to the typed vector inside a [`WordBuf`].
#[macro_export]
#[doc(hidden)]
macro_rules! with_words {
    ($buf:expr, $v:ident => $body:expr) => {
        match $buf {
            $crate::word::WordBuf::U8($v) => $body,
            $crate::word::WordBuf::U16($v) => $body,
            $crate::word::WordBuf::U32($v) => $body,
            $crate::word::WordBuf::U64($v) => $body,
        }
    };
}

impl WordBuf {
    pub fn zeros(width: WordWidth, len: usize) -> Self {
        match width {
            WordWidth::W8 => WordBuf::U8(vec![0; len]),
            WordWidth::W16 => WordBuf::U16(vec![0; len]),
            WordWidth::W32 => WordBuf::U32(vec![0; len]),
            WordWidth::W64 => WordBuf::U64(vec![0; len]),
        }
    }

    pub fn width(&self) -> WordWidth {
        match self {
            WordBuf::U8(_) => WordWidth::W8,
            WordBuf::U16(_) => WordWidth::W16,
            WordBuf::U32(_) => WordWidth::W32,
            WordBuf::U64(_) => WordWidth::W64,
        }
    }

    pub fn len(&self) -> usize {
        with_words!(self, v => v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> u64 {
        with_words!(self, v => v[i].to_u64())
    }

    pub fn set(&mut self, i: usize, value: u64) {
        with_words!(self, v => v[i] = Word::from_u64(value))
    }

    /// All words widened to `u64`.
    pub fn to_u64_vec(&self) -> Vec<u64> {
        with_words!(self, v => v.iter().map(|w| w.to_u64()).collect())
    }

    pub fn total_popcount(&self) -> u64 {
        with_words!(self, v => v.iter().map(|w| w.popcount() as u64).sum())
    }

    /// Gathers words by index into a buffer of the same width.
    pub(crate) fn gather(&self, indices: impl Iterator<Item = usize>) -> WordBuf {
        match self {
            WordBuf::U8(v) => WordBuf::U8(indices.map(|i| v[i]).collect()),
            WordBuf::U16(v) => WordBuf::U16(indices.map(|i| v[i]).collect()),
            WordBuf::U32(v) => WordBuf::U32(indices.map(|i| v[i]).collect()),
            WordBuf::U64(v) => WordBuf::U64(indices.map(|i| v[i]).collect()),
        }
    }
}
