//! Bitserial compute kernels.
//!
//! A `WxAy` product of `x`-bit weights and `y`-bit activations is evaluated
//! as a weighted sum of `x * y` binary dot products, one per pair of
//! bitplanes, each computed with AND (or XNOR) and popcount over packed
//! words. Popcounts are summed in a narrow integer for as many words as
//! cannot overflow it, then widened.

mod accum;
mod conv;
mod dot;
mod matmul;
mod micro;

use std::fmt;
use std::ops::AddAssign;

pub use accum::{staged_accumulate, StagedSum};
pub use conv::{
    bitserial_conv2d, conv2d, lower_to_matmul_conv2d, pack_activations, pack_weights, ConvStrategy,
};
pub use dot::{binary_dot, bitserial_dot};
pub use matmul::bitserial_matmul;

use crate::error::{Error, Result};
use crate::tensor::{check_bits, Encoding, Tensor};
use crate::word::WordWidth;

/// Precisions and signedness of the two operands of a bitserial product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DotSpec {
    pub weight_bits: u8,
    pub activation_bits: u8,
    pub weight_signed: bool,
    pub activation_signed: bool,
    pub encoding: Encoding,
}

impl DotSpec {
    /// Unsigned unipolar `W{weight_bits}A{activation_bits}`.
    pub fn new(weight_bits: u8, activation_bits: u8) -> Result<Self> {
        let spec = DotSpec {
            weight_bits,
            activation_bits,
            weight_signed: false,
            activation_signed: false,
            encoding: Encoding::Unipolar,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Binary {-1, +1} operands (XNOR-popcount).
    pub fn bipolar() -> Self {
        DotSpec {
            weight_bits: 1,
            activation_bits: 1,
            weight_signed: false,
            activation_signed: false,
            encoding: Encoding::Bipolar,
        }
    }

    pub fn with_signed(mut self, weight_signed: bool, activation_signed: bool) -> Self {
        self.weight_signed = weight_signed;
        self.activation_signed = activation_signed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for bits in [self.weight_bits, self.activation_bits] {
            check_bits(bits).map_err(|e| Error::InvalidDotSpec(e.to_string()))?;
        }
        if self.encoding == Encoding::Bipolar {
            if self.weight_bits as u32 * self.activation_bits as u32 > 1 {
                return Err(Error::InvalidDotSpec(format!(
                    "bipolar encoding needs 1-bit operands, got {}",
                    self.name()
                )));
            }
            if self.weight_signed || self.activation_signed {
                return Err(Error::InvalidDotSpec(
                    "bipolar operands cannot be signed".into(),
                ));
            }
        }
        Ok(())
    }

    /// `WxAy` name, lower case.
    pub fn name(&self) -> String {
        format!("w{}a{}", self.weight_bits, self.activation_bits)
    }

    /// Name with operand flags: an `s` after a bit count marks a signed
    /// operand (`w2sa3`), a trailing `b` the bipolar case (`w1a1b`).
    pub fn tag(&self) -> String {
        let flag = |signed: bool| if signed { "s" } else { "" };
        format!(
            "w{}{}a{}{}{}",
            self.weight_bits,
            flag(self.weight_signed),
            self.activation_bits,
            flag(self.activation_signed),
            if self.encoding == Encoding::Bipolar {
                "b"
            } else {
                ""
            }
        )
    }

    /// Number of binary dot products per element pair.
    pub fn plane_pairs(&self) -> usize {
        self.weight_bits as usize * self.activation_bits as usize
    }

    /// Weight of the popcount between weight plane `m` and activation plane
    /// `n`. Signed operands give their top plane a negative weight.
    pub fn plane_weight(&self, m: usize, n: usize) -> i64 {
        if self.encoding == Encoding::Bipolar {
            return 2;
        }
        plane_sign(m, self.weight_bits, self.weight_signed)
            * plane_sign(n, self.activation_bits, self.activation_signed)
    }

    /// Largest possible magnitude of one element product.
    pub(crate) fn max_product(&self) -> i64 {
        let mag = |bits: u8, signed: bool| {
            if signed {
                1i64 << (bits - 1)
            } else {
                (1i64 << bits) - 1
            }
        };
        if self.encoding == Encoding::Bipolar {
            1
        } else {
            mag(self.weight_bits, self.weight_signed)
                * mag(self.activation_bits, self.activation_signed)
        }
    }
}

fn plane_sign(plane: usize, bits: u8, signed: bool) -> i64 {
    if signed && plane + 1 == bits as usize {
        -(1i64 << plane)
    } else {
        1i64 << plane
    }
}

impl fmt::Display for DotSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())?;
        if self.encoding == Encoding::Bipolar {
            write!(f, " bipolar")?;
        }
        if self.weight_signed || self.activation_signed {
            write!(
                f,
                " signed(w={}, a={})",
                self.weight_signed, self.activation_signed
            )?;
        }
        Ok(())
    }
}

/// Narrow-then-wide accumulation of popcounts.
///
/// At most `safe_depth` words are summed into a `narrow_bits` counter before
/// it is added to the `wide_bits` counter, with
/// `safe_depth * word_bits <= 2^narrow_bits - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AccumPlan {
    pub narrow_bits: u32,
    pub wide_bits: u32,
    pub word_bits: u32,
    pub safe_depth: usize,
}

impl AccumPlan {
    pub fn new(narrow_bits: u32, wide_bits: u32, word: WordWidth) -> Result<Self> {
        let plan = AccumPlan {
            narrow_bits,
            wide_bits,
            word_bits: word.bits(),
            safe_depth: Self::max_depth(narrow_bits, word.bits()),
        };
        plan.validate()?;
        Ok(plan)
    }

    /// 16-bit staging into 32-bit totals.
    pub fn default_for(word: WordWidth) -> Self {
        AccumPlan::new(16, 32, word).expect("16/32 plan is valid for every word width")
    }

    /// 8-bit staging into 16-bit totals.
    pub fn narrow8(word: WordWidth) -> Self {
        AccumPlan::new(8, 16, word).expect("8/16 plan is valid for every word width")
    }

    /// `floor((2^narrow_bits - 1) / word_bits)`.
    pub fn max_depth(narrow_bits: u32, word_bits: u32) -> usize {
        (((1u64 << narrow_bits) - 1) / word_bits as u64) as usize
    }

    pub fn with_safe_depth(mut self, depth: usize) -> Self {
        self.safe_depth = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.narrow_bits, 8 | 16) {
            return Err(Error::InvalidAccumPlan(format!(
                "narrow width {} not in {{8, 16}}",
                self.narrow_bits
            )));
        }
        if !matches!(self.wide_bits, 16 | 32) || self.wide_bits <= self.narrow_bits {
            return Err(Error::InvalidAccumPlan(format!(
                "wide width {} must be 16 or 32 and exceed the narrow width",
                self.wide_bits
            )));
        }
        WordWidth::from_bits(self.word_bits)?;
        if self.safe_depth == 0 {
            return Err(Error::InvalidAccumPlan(format!(
                "safe depth is 0 for {}-bit words in {}-bit counters",
                self.word_bits, self.narrow_bits
            )));
        }
        if self.safe_depth > Self::max_depth(self.narrow_bits, self.word_bits) {
            return Err(Error::InvalidAccumPlan(format!(
                "safe depth {} overflows {}-bit counters with {}-bit words",
                self.safe_depth, self.narrow_bits, self.word_bits
            )));
        }
        Ok(())
    }

    pub(crate) fn check_word(&self, word: WordWidth) -> Result<()> {
        self.validate()?;
        if self.word_bits != word.bits() {
            return Err(Error::InvalidAccumPlan(format!(
                "plan built for {}-bit words used with {}-bit operands",
                self.word_bits,
                word.bits()
            )));
        }
        Ok(())
    }

    pub(crate) fn wide_max(&self) -> u64 {
        (1u64 << self.wide_bits) - 1
    }
}

/// Instrumentation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct KernelStats {
    /// AND/XNOR + popcount operations on whole words.
    pub popcount_word_ops: u64,
    pub words_loaded: u64,
    /// Narrow to wide promotions, counted per accumulator.
    pub widenings: u64,
}

impl AddAssign for KernelStats {
    fn add_assign(&mut self, rhs: Self) {
        self.popcount_word_ops += rhs.popcount_word_ops;
        self.words_loaded += rhs.words_loaded;
        self.widenings += rhs.widenings;
    }
}

/// Loop schedule for a kernel.
///
/// `splits` and `order` refer to the kernel's tiled axes: `[rows, cols,
/// depth]` for matmul (depth in elements, rounded up to whole words) and
/// `[out_h, out_w, out_c]` for convolution. `order` lists those axes from
/// the outermost tile loop inwards. `vector` output columns share each loaded
/// activation word. With `unroll` the bit-plane loops are specialised for
/// precisions up to 4 bits. With `parallel` the outermost output axis is
/// split across the worker threads.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileConfig {
    pub splits: Vec<usize>,
    pub order: Vec<usize>,
    pub unroll: bool,
    pub parallel: bool,
    pub vector: usize,
}

/// Widest register block of output columns.
pub const MAX_VECTOR: usize = 8;

impl TileConfig {
    /// One tile covering everything, natural order.
    pub fn untiled(axes: usize) -> Self {
        TileConfig {
            splits: vec![usize::MAX; axes],
            order: (0..axes).collect(),
            unroll: true,
            parallel: true,
            vector: 1,
        }
    }

    pub fn new(splits: &[usize], order: &[usize]) -> Self {
        TileConfig {
            splits: splits.to_vec(),
            order: order.to_vec(),
            unroll: true,
            parallel: true,
            vector: 1,
        }
    }

    pub fn with_unroll(mut self, unroll: bool) -> Self {
        self.unroll = unroll;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn with_vector(mut self, vector: usize) -> Self {
        self.vector = vector;
        self
    }

    pub fn validate(&self, axes: usize) -> Result<()> {
        if self.splits.len() != axes {
            return Err(Error::InvalidTileConfig(format!(
                "{} splits for {axes} tiled axes",
                self.splits.len()
            )));
        }
        if self.splits.contains(&0) {
            return Err(Error::InvalidTileConfig(
                "split extents must be at least 1".into(),
            ));
        }
        let mut seen = vec![false; axes];
        for &a in &self.order {
            if a >= axes || std::mem::replace(&mut seen[a], true) {
                return Err(Error::InvalidTileConfig(format!(
                    "order {:?} is not a permutation",
                    self.order
                )));
            }
        }
        if self.order.len() != axes {
            return Err(Error::InvalidTileConfig(format!(
                "order {:?} is not a permutation",
                self.order
            )));
        }
        if self.vector == 0 || self.vector > MAX_VECTOR {
            return Err(Error::InvalidTileConfig(format!(
                "vector width {} not in 1..={MAX_VECTOR}",
                self.vector
            )));
        }
        Ok(())
    }
}

impl fmt::Display for TileConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let splits: Vec<String> = self
            .splits
            .iter()
            .map(|&s| {
                if s == usize::MAX {
                    "*".into()
                } else {
                    s.to_string()
                }
            })
            .collect();
        write!(
            f,
            "splits={} order={:?} unroll={} parallel={} vector={}",
            splits.join("x"),
            self.order,
            self.unroll,
            self.parallel,
            self.vector
        )
    }
}

/// Kernel result with its counters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelOutput {
    pub output: Tensor<i32>,
    pub stats: KernelStats,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn safe_depths() {
        assert_eq!(AccumPlan::new(8, 16, WordWidth::W32).unwrap().safe_depth, 7);
        assert_eq!(AccumPlan::new(8, 32, WordWidth::W64).unwrap().safe_depth, 3);
        assert_eq!(
            AccumPlan::new(16, 32, WordWidth::W8).unwrap().safe_depth,
            8191
        );
    }

    #[test]
    fn plan_rejections() {
        let plan = AccumPlan::narrow8(WordWidth::W32);
        assert!(matches!(
            plan.with_safe_depth(0).validate(),
            Err(Error::InvalidAccumPlan(_))
        ));
        assert!(matches!(
            plan.with_safe_depth(8).validate(),
            Err(Error::InvalidAccumPlan(_))
        ));
        assert!(AccumPlan::new(4, 16, WordWidth::W8).is_err());
        assert!(AccumPlan::new(16, 16, WordWidth::W8).is_err());
        assert!(plan.check_word(WordWidth::W64).is_err());
        plan.check_word(WordWidth::W32).unwrap();
    }

    #[test]
    fn dot_spec_rules() {
        assert_eq!(DotSpec::new(1, 2).unwrap().name(), "w1a2");
        assert!(DotSpec::new(0, 2).is_err());
        assert!(DotSpec::new(9, 2).is_err());
        let bad = DotSpec {
            weight_bits: 2,
            ..DotSpec::bipolar()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidDotSpec(_))));
        let s = DotSpec::new(2, 3).unwrap().with_signed(true, false);
        assert_eq!(s.plane_weight(0, 0), 1);
        assert_eq!(s.plane_weight(1, 2), -8);
        assert_eq!(s.plane_weight(0, 2), 4);
        assert_eq!(s.max_product(), 2 * 7);
    }

    #[test]
    fn tile_validation() {
        TileConfig::new(&[2, 4, 8], &[2, 0, 1]).validate(3).unwrap();
        assert!(TileConfig::new(&[2, 4], &[0, 1]).validate(3).is_err());
        assert!(TileConfig::new(&[2, 0, 8], &[0, 1, 2]).validate(3).is_err());
        assert!(TileConfig::new(&[2, 4, 8], &[0, 0, 1]).validate(3).is_err());
        assert!(TileConfig::new(&[2, 4, 8], &[0, 1]).validate(3).is_err());
        assert!(TileConfig::untiled(3).with_vector(9).validate(3).is_err());
        TileConfig::untiled(3).validate(3).unwrap();
    }
}
