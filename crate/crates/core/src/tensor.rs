//! Dense tensors, n-bit quantized tensors and convolution geometry.
//!
//! Every tensor stores its elements row-major in the order of its layout.
//! Axis names are single characters (`"NHWC"`, `"MK"`, ...), so a layout is
//! written as a short string.

use std::fmt;

use crate::error::{Error, Result};

/// Largest supported precision for quantized data.
pub const MAX_BITS: u8 = 8;

/// Axis names of a tensor, outermost first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Layout(Vec<char>);

impl Layout {
    pub fn parse(s: &str) -> Result<Self> {
        let axes: Vec<char> = s.chars().collect();
        if axes.is_empty() {
            return Err(Error::InvalidLayout("empty layout".into()));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].contains(a) {
                return Err(Error::InvalidLayout(format!(
                    "axis '{a}' repeated in \"{s}\""
                )));
            }
        }
        Ok(Layout(axes))
    }

    pub fn axes(&self) -> &[char] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, axis: char) -> Option<usize> {
        self.0.iter().position(|&a| a == axis)
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.0 {
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// Row-major strides for `shape`.
pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// A dense n-dimensional array with named axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    layout: Layout,
    data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    pub fn new(shape: &[usize], layout: &str, data: Vec<T>) -> Result<Self> {
        let layout = Layout::parse(layout)?;
        if layout.len() != shape.len() {
            return Err(Error::LayoutMismatch {
                shape: shape.to_vec(),
                layout: layout.to_string(),
            });
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::ZeroExtent(shape.to_vec()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ElementCount {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            layout,
            data,
        })
    }

    pub fn filled(shape: &[usize], layout: &str, value: T) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, layout, vec![value; n])
    }

    /// Builds a tensor by evaluating `f` at every coordinate in row-major order.
    pub fn from_fn(
        shape: &[usize],
        layout: &str,
        mut f: impl FnMut(&[usize]) -> T,
    ) -> Result<Self> {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut coord = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&coord));
            increment(&mut coord, shape);
        }
        Self::new(shape, layout, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.shape)
    }

    pub fn offset(&self, coord: &[usize]) -> usize {
        debug_assert_eq!(coord.len(), self.shape.len());
        let mut off = 0;
        for (c, e) in coord.iter().zip(&self.shape) {
            debug_assert!(c < e);
            off = off * e + c;
        }
        off
    }

    pub fn get(&self, coord: &[usize]) -> T {
        self.data[self.offset(coord)]
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Physically permutes the storage so that axes appear in `new_order`.
    ///
    /// `new_order` names every axis of the current layout exactly once.
    pub fn reshape_layout(&self, new_order: &str) -> Result<Tensor<T>> {
        let target: Vec<char> = new_order.chars().collect();
        let mut perm = Vec::with_capacity(target.len());
        for &a in &target {
            perm.push(self.layout.position(a).ok_or(Error::UnknownAxis(a))?);
        }
        if target.len() != self.rank() {
            return Err(Error::InvalidLayout(format!(
                "\"{new_order}\" is not a permutation of \"{}\"",
                self.layout
            )));
        }
        let layout = Layout::parse(new_order)?;
        let src_strides = self.strides();
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();

        let mut data = Vec::with_capacity(self.data.len());
        let mut coord = vec![0usize; shape.len()];
        for _ in 0..self.data.len() {
            let off: usize = coord.iter().zip(&strides).map(|(c, s)| c * s).sum();
            data.push(self.data[off]);
            increment(&mut coord, &shape);
        }
        Ok(Tensor {
            shape,
            layout,
            data,
        })
    }

    /// Reinterprets the storage with a new shape of equal element count.
    pub fn reshape(self, shape: &[usize], layout: &str) -> Result<Tensor<T>> {
        Tensor::new(shape, layout, self.data)
    }
}

/// Odometer increment of `coord` within `shape`, last axis fastest.
pub(crate) fn increment(coord: &mut [usize], shape: &[usize]) {
    for i in (0..coord.len()).rev() {
        coord[i] += 1;
        if coord[i] < shape[i] {
            return;
        }
        coord[i] = 0;
    }
}

/// How the stored codes of a [`QuantTensor`] are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Encoding {
    /// Codes are the values themselves (or their two's-complement pattern).
    Unipolar,
    /// 1-bit codes where 0 means -1 and 1 means +1.
    Bipolar,
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Encoding::Unipolar => write!(f, "unipolar"),
            Encoding::Bipolar => write!(f, "bipolar"),
        }
    }
}

/// An n-bit integer tensor stored as raw codes in `0..2^bits`.
///
/// With `signed` set the codes are read as two's complement, so a 2-bit code
/// `0b10` is the value -2. Bipolar tensors are always 1-bit and unsigned.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    codes: Tensor<u8>,
    bits: u8,
    signed: bool,
    encoding: Encoding,
}

impl QuantTensor {
    pub fn new(codes: Tensor<u8>, bits: u8, encoding: Encoding) -> Result<Self> {
        check_bits(bits)?;
        if encoding == Encoding::Bipolar && bits != 1 {
            return Err(Error::BipolarPrecision(bits));
        }
        let max = max_code(bits);
        if let Some(index) = codes.data().iter().position(|&c| c > max) {
            return Err(Error::CodeOutOfRange {
                index,
                value: codes.data()[index] as i64,
                bits,
            });
        }
        Ok(QuantTensor {
            codes,
            bits,
            signed: false,
            encoding,
        })
    }

    /// Encodes logical integer values; `signed` selects two's complement.
    pub fn from_values(values: &Tensor<i64>, bits: u8, signed: bool) -> Result<Self> {
        check_bits(bits)?;
        let (lo, hi) = value_range(bits, signed);
        let mask = max_code(bits) as i64;
        let mut codes = Vec::with_capacity(values.len());
        for (index, &v) in values.data().iter().enumerate() {
            if v < lo || v > hi {
                return Err(Error::CodeOutOfRange {
                    index,
                    value: v,
                    bits,
                });
            }
            codes.push((v & mask) as u8);
        }
        let codes = Tensor::new(values.shape(), &values.layout().to_string(), codes)?;
        Ok(QuantTensor {
            codes,
            bits,
            signed,
            encoding: Encoding::Unipolar,
        })
    }

    /// Encodes a tensor of -1/+1 values.
    pub fn from_bipolar(values: &Tensor<i64>) -> Result<Self> {
        let mut codes = Vec::with_capacity(values.len());
        for (index, &v) in values.data().iter().enumerate() {
            codes.push(match v {
                -1 => 0,
                1 => 1,
                _ => {
                    return Err(Error::CodeOutOfRange {
                        index,
                        value: v,
                        bits: 1,
                    })
                }
            });
        }
        let codes = Tensor::new(values.shape(), &values.layout().to_string(), codes)?;
        QuantTensor::new(codes, 1, Encoding::Bipolar)
    }

    /// Marks the codes as two's complement. Ignored for bipolar data.
    pub fn with_signed(mut self, signed: bool) -> Self {
        self.signed = signed && self.encoding == Encoding::Unipolar;
        self
    }

    pub fn codes(&self) -> &Tensor<u8> {
        &self.codes
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

    pub fn shape(&self) -> &[usize] {
        self.codes.shape()
    }

    pub fn layout(&self) -> &Layout {
        self.codes.layout()
    }

    pub fn decode(&self, code: u8) -> i64 {
        decode(code, self.bits, self.signed, self.encoding)
    }

    /// Logical integer values.
    pub fn values(&self) -> Tensor<i64> {
        let (bits, signed, enc) = (self.bits, self.signed, self.encoding);
        self.codes.map(|c| decode(c, bits, signed, enc))
    }

    pub fn reshape_layout(&self, new_order: &str) -> Result<QuantTensor> {
        Ok(QuantTensor {
            codes: self.codes.reshape_layout(new_order)?,
            ..self.clone()
        })
    }
}

pub(crate) fn decode(code: u8, bits: u8, signed: bool, encoding: Encoding) -> i64 {
    match encoding {
        Encoding::Bipolar => 2 * code as i64 - 1,
        Encoding::Unipolar if signed && code >> (bits - 1) & 1 == 1 => code as i64 - (1i64 << bits),
        Encoding::Unipolar => code as i64,
    }
}

pub(crate) fn check_bits(bits: u8) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::UnsupportedPrecision(bits));
    }
    Ok(())
}

pub(crate) fn max_code(bits: u8) -> u8 {
    ((1u16 << bits) - 1) as u8
}

/// Inclusive range of logical values for a precision.
pub fn value_range(bits: u8, signed: bool) -> (i64, i64) {
    if signed {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    } else {
        (0, (1i64 << bits) - 1)
    }
}

/// Uniform floor quantization of reals in `[lo, hi)` to `bits`-bit codes.
///
/// `x` maps to `clamp(floor((x - lo) / (hi - lo) * 2^bits), 0, 2^bits - 1)`.
pub fn quantize<T: Copy + Into<f64>>(
    t: &Tensor<T>,
    lo: f64,
    hi: f64,
    bits: u8,
) -> Result<QuantTensor> {
    check_bits(bits)?;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::InvalidRange { lo, hi });
    }
    let levels = (1u32 << bits) as f64;
    let top = max_code(bits) as f64;
    let mut codes = Vec::with_capacity(t.len());
    for (index, &x) in t.data().iter().enumerate() {
        let x: f64 = x.into();
        if !x.is_finite() {
            return Err(Error::NonFinite { index });
        }
        let q = ((x - lo) / (hi - lo) * levels).floor().clamp(0.0, top);
        codes.push(q as u8);
    }
    let codes = Tensor::new(t.shape(), &t.layout().to_string(), codes)?;
    QuantTensor::new(codes, bits, Encoding::Unipolar)
}

/// Convolution geometry: input `height x width x in_channels`, `out_channels`
/// square filters of side `kernel`, applied with `stride` and `pad` zeros on
/// each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvParams {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidGeometry(format!("zero extent in {self:?}")));
        }
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::InvalidGeometry(
                "kernel and stride must be positive".into(),
            ));
        }
        if self.height + 2 * self.pad < self.kernel || self.width + 2 * self.pad < self.kernel {
            return Err(Error::InvalidGeometry(format!(
                "kernel {} larger than padded input {}x{}",
                self.kernel,
                self.height + 2 * self.pad,
                self.width + 2 * self.pad
            )));
        }
        Ok(())
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }
}
