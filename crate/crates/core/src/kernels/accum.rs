use super::AccumPlan;
use crate::error::{Error, Result};

/// Narrow popcount counter.
pub(crate) trait Narrow: Copy + Default + Send + Sync + 'static {
    fn add(self, count: u32) -> Self;
    fn widen(self) -> u32;
}

macro_rules! impl_narrow {
    ($($t:ty),*) => {$(
        impl Narrow for $t {
            #[inline(always)]
            fn add(self, count: u32) -> Self {
                debug_assert!(self as u32 + count <= <$t>::MAX as u32, "narrow counter overflow");
                self.wrapping_add(count as $t)
            }

            #[inline(always)]
            fn widen(self) -> u32 {
                self as u32
            }
        }
    )*};
}

impl_narrow!(u8, u16);

/// Result of [`staged_accumulate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagedSum {
    pub total: u64,
    pub widenings: u64,
}

/// Sums a stream of popcounts (each at most `plan.word_bits`) through the
/// narrow counter, widening every `plan.safe_depth` terms and once more at
/// the end if anything is pending.
pub fn staged_accumulate<I: IntoIterator<Item = u32>>(
    terms: I,
    plan: &AccumPlan,
) -> Result<StagedSum> {
    plan.validate()?;
    match plan.narrow_bits {
        8 => run::<u8, _>(terms, plan),
        _ => run::<u16, _>(terms, plan),
    }
}

fn run<A: Narrow, I: IntoIterator<Item = u32>>(terms: I, plan: &AccumPlan) -> Result<StagedSum> {
    let wide_max = plan.wide_max();
    let mut narrow = A::default();
    let mut pending = 0usize;
    let mut wide = 0u64;
    let mut widenings = 0u64;
    let flush = |narrow: &mut A, wide: &mut u64, widenings: &mut u64| -> Result<()> {
        *wide += narrow.widen() as u64;
        *narrow = A::default();
        *widenings += 1;
        if *wide > wide_max {
            return Err(Error::AccumulatorOverflow(format!(
                "total {} exceeds the {}-bit wide counter",
                wide, plan.wide_bits
            )));
        }
        Ok(())
    };
    for term in terms {
        if term > plan.word_bits {
            return Err(Error::TermTooLarge {
                term,
                max: plan.word_bits,
            });
        }
        narrow = narrow.add(term);
        pending += 1;
        if pending == plan.safe_depth {
            flush(&mut narrow, &mut wide, &mut widenings)?;
            pending = 0;
        }
    }
    if pending > 0 {
        flush(&mut narrow, &mut wide, &mut widenings)?;
    }
    Ok(StagedSum {
        total: wide,
        widenings,
    })
}
