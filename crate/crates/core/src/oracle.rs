//! Naive integer reference implementations.
//!
//! These work on logical values straight from [`QuantTensor`]s, with no
//! packing, tiling or narrow accumulators. Any disagreement with the kernels
//! is a kernel bug.

use crate::error::{Error, Result};
use crate::tensor::{ConvParams, QuantTensor, Tensor};

/// `out[r][c] = sum_k a[r][k] * wt[c][k]` for `a: R x K` and `wt: C x K`.
pub fn oracle_matmul(a: &QuantTensor, wt: &QuantTensor) -> Result<Tensor<i64>> {
    if a.shape().len() != 2 || wt.shape().len() != 2 {
        return Err(Error::OperandMismatch(
            "matmul operands must be matrices".into(),
        ));
    }
    let (rows, k) = (a.shape()[0], a.shape()[1]);
    let (cols, k2) = (wt.shape()[0], wt.shape()[1]);
    if k != k2 {
        return Err(Error::OperandMismatch(format!(
            "inner extents {k} and {k2} differ"
        )));
    }
    let av = a.values();
    let wv = wt.values();
    let (av, wv) = (av.data(), wv.data());
    let mut out = vec![0i64; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0i64;
            for i in 0..k {
                acc += av[r * k + i] * wv[c * k + i];
            }
            out[r * cols + c] = acc;
        }
    }
    Tensor::new(&[rows, cols], "RC", out)
}

/// Cross-correlation of `act: N x H x W x IC` with `wt: OC x K x K x IC`,
/// zero padded, giving `N x OH x OW x OC`.
pub fn oracle_conv2d(act: &QuantTensor, wt: &QuantTensor, p: &ConvParams) -> Result<Tensor<i64>> {
    check_conv_operands(act.shape(), wt.shape(), p)?;
    let batch = act.shape()[0];
    let (oh, ow) = (p.out_height(), p.out_width());
    let av = act.values();
    let wv = wt.values();
    let mut out = Vec::with_capacity(batch * oh * ow * p.out_channels);
    for n in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for oc in 0..p.out_channels {
                    out.push(point(av.data(), wv.data(), p, n, oy, ox, oc));
                }
            }
        }
    }
    Tensor::new(&[batch, oh, ow, p.out_channels], "NHWC", out)
}

/// A single output of [`oracle_conv2d`], for spot checks of large layers.
pub fn oracle_conv2d_at(
    act: &Tensor<i64>,
    wt: &Tensor<i64>,
    p: &ConvParams,
    at: [usize; 4],
) -> Result<i64> {
    check_conv_operands(act.shape(), wt.shape(), p)?;
    let [n, oy, ox, oc] = at;
    if n >= act.shape()[0] || oy >= p.out_height() || ox >= p.out_width() || oc >= p.out_channels {
        return Err(Error::InvalidGeometry(format!(
            "output coordinate {at:?} out of range"
        )));
    }
    Ok(point(act.data(), wt.data(), p, n, oy, ox, oc))
}

fn point(av: &[i64], wv: &[i64], p: &ConvParams, n: usize, oy: usize, ox: usize, oc: usize) -> i64 {
    let (h, w, ic, k) = (p.height as isize, p.width as isize, p.in_channels, p.kernel);
    let mut acc = 0i64;
    for ky in 0..k {
        for kx in 0..k {
            let iy = (oy * p.stride + ky) as isize - p.pad as isize;
            let ix = (ox * p.stride + kx) as isize - p.pad as isize;
            if iy < 0 || ix < 0 || iy >= h || ix >= w {
                continue;
            }
            let abase = ((n * p.height + iy as usize) * p.width + ix as usize) * ic;
            let wbase = ((oc * k + ky) * k + kx) * ic;
            for c in 0..ic {
                acc += av[abase + c] * wv[wbase + c];
            }
        }
    }
    acc
}

fn check_conv_operands(act: &[usize], wt: &[usize], p: &ConvParams) -> Result<()> {
    p.validate()?;
    if act.len() != 4 || act[1] != p.height || act[2] != p.width || act[3] != p.in_channels {
        return Err(Error::OperandMismatch(format!(
            "activation shape {act:?} does not match {}x{}x{}",
            p.height, p.width, p.in_channels
        )));
    }
    if wt != [p.out_channels, p.kernel, p.kernel, p.in_channels] {
        return Err(Error::OperandMismatch(format!(
            "weight shape {wt:?} does not match {}x{}x{}x{}",
            p.out_channels, p.kernel, p.kernel, p.in_channels
        )));
    }
    Ok(())
}
