//! Plain integer matmul and convolution used as the speed reference.
//!
//! Operands are stored as `i8`, `i16` or `i32` and accumulated in `i32`.
//! The loops are blocked over output columns so each activation row is
//! reused from cache, with the reduction innermost and contiguous.

use std::fmt;
use std::str::FromStr;
use std::thread;

use bitserial::ConvParams;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Baseline {
    Int8,
    Int16,
    Int32,
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::Int8 => "int8",
            Baseline::Int16 => "int16",
            Baseline::Int32 => "int32",
        })
    }
}

impl FromStr for Baseline {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "int8" => Ok(Baseline::Int8),
            "int16" => Ok(Baseline::Int16),
            "int32" => Ok(Baseline::Int32),
            other => Err(BenchError::InvalidArgument(format!(
                "unknown baseline {other:?}, expected int8, int16 or int32"
            ))),
        }
    }
}

/// Output columns per block.
const COL_BLOCK: usize = 16;

/// Operand storage at the baseline's width.
#[derive(Debug, Clone, PartialEq)]
pub enum IntData {
    I8(Vec<i8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
}

impl IntData {
    pub fn new(baseline: Baseline, values: &[i64]) -> Result<Self> {
        fn conv<T: TryFrom<i64>>(values: &[i64], baseline: Baseline) -> Result<Vec<T>> {
            values
                .iter()
                .map(|&v| {
                    T::try_from(v).map_err(|_| {
                        BenchError::InvalidArgument(format!(
                            "value {v} does not fit the {baseline} baseline"
                        ))
                    })
                })
                .collect()
        }
        Ok(match baseline {
            Baseline::Int8 => IntData::I8(conv(values, baseline)?),
            Baseline::Int16 => IntData::I16(conv(values, baseline)?),
            Baseline::Int32 => IntData::I32(conv(values, baseline)?),
        })
    }
}

#[inline]
fn dot<T: Copy + Into<i32>>(a: &[T], b: &[T]) -> i32 {
    a.iter().zip(b).map(|(&x, &y)| x.into() * y.into()).sum()
}

/// Runs `f(first_row, rows_out)` over bands of `rows` output rows of
/// `row_len` values.
fn par_rows(
    out: &mut [i32],
    rows: usize,
    row_len: usize,
    threads: usize,
    f: impl Fn(usize, &mut [i32]) + Sync,
) {
    let band = rows.div_ceil(threads.clamp(1, rows.max(1))).max(1);
    if band >= rows || row_len == 0 {
        f(0, out);
        return;
    }
    thread::scope(|s| {
        for (i, chunk) in out.chunks_mut(band * row_len).enumerate() {
            let f = &f;
            s.spawn(move || f(i * band, chunk));
        }
    });
}

fn matmul_typed<T: Copy + Into<i32> + Sync>(
    a: &[T],
    w: &[T],
    rows: usize,
    cols: usize,
    k: usize,
    threads: usize,
) -> Vec<i32> {
    let mut out = vec![0i32; rows * cols];
    par_rows(&mut out, rows, cols, threads, |r0, chunk| {
        for c0 in (0..cols).step_by(COL_BLOCK) {
            let c1 = (c0 + COL_BLOCK).min(cols);
            for (i, orow) in chunk.chunks_mut(cols).enumerate() {
                let arow = &a[(r0 + i) * k..(r0 + i + 1) * k];
                for c in c0..c1 {
                    orow[c] = dot(arow, &w[c * k..(c + 1) * k]);
                }
            }
        }
    });
    out
}

/// `R x K` times `(C x K)^T`.
pub fn int_matmul(
    a: &IntData,
    w: &IntData,
    rows: usize,
    cols: usize,
    k: usize,
    threads: usize,
) -> Result<Vec<i32>> {
    Ok(match (a, w) {
        (IntData::I8(a), IntData::I8(w)) => matmul_typed(a, w, rows, cols, k, threads),
        (IntData::I16(a), IntData::I16(w)) => matmul_typed(a, w, rows, cols, k, threads),
        (IntData::I32(a), IntData::I32(w)) => matmul_typed(a, w, rows, cols, k, threads),
        _ => {
            return Err(BenchError::InvalidArgument(
                "baseline operands differ in width".into(),
            ))
        }
    })
}

fn conv_typed<T: Copy + Into<i32> + Sync>(
    act: &[T],
    wt: &[T],
    batch: usize,
    p: &ConvParams,
    threads: usize,
) -> Vec<i32> {
    let (oh, ow, oc, ic, k) = (
        p.out_height(),
        p.out_width(),
        p.out_channels,
        p.in_channels,
        p.kernel,
    );
    let mut out = vec![0i32; batch * oh * ow * oc];
    par_rows(&mut out, batch * oh, ow * oc, threads, |line0, chunk| {
        for (li, oline) in chunk.chunks_mut(ow * oc).enumerate() {
            let (n, oy) = ((line0 + li) / oh, (line0 + li) % oh);
            for ox in 0..ow {
                let opx = &mut oline[ox * oc..(ox + 1) * oc];
                for c0 in (0..oc).step_by(COL_BLOCK) {
                    let c1 = (c0 + COL_BLOCK).min(oc);
                    for ky in 0..k {
                        let iy = (oy * p.stride + ky) as isize - p.pad as isize;
                        if iy < 0 || iy >= p.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * p.stride + kx) as isize - p.pad as isize;
                            if ix < 0 || ix >= p.width as isize {
                                continue;
                            }
                            let base = ((n * p.height + iy as usize) * p.width + ix as usize) * ic;
                            let arow = &act[base..base + ic];
                            for c in c0..c1 {
                                let wbase = ((c * k + ky) * k + kx) * ic;
                                opx[c] += dot(arow, &wt[wbase..wbase + ic]);
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Direct NHWC convolution with `OHWI` filters.
pub fn int_conv2d(
    act: &IntData,
    wt: &IntData,
    batch: usize,
    p: &ConvParams,
    threads: usize,
) -> Result<Vec<i32>> {
    Ok(match (act, wt) {
        (IntData::I8(a), IntData::I8(w)) => conv_typed(a, w, batch, p, threads),
        (IntData::I16(a), IntData::I16(w)) => conv_typed(a, w, batch, p, threads),
        (IntData::I32(a), IntData::I32(w)) => conv_typed(a, w, batch, p, threads),
        _ => {
            return Err(BenchError::InvalidArgument(
                "baseline operands differ in width".into(),
            ))
        }
    })
}
