//! ResNet-18 convolution layers 2 to 12.

use std::fmt;

use bitserial::{ConvParams, DotSpec};

use crate::error::{BenchError, Result};

/// One row of the layer table: input `h x w x ic`, `oc` filters of side `k`,
/// stride `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub name: u8,
    pub h: usize,
    pub w: usize,
    pub ic: usize,
    pub oc: usize,
    pub k: usize,
    pub s: usize,
}

const fn row(name: u8, h: usize, w: usize, ic: usize, oc: usize, k: usize, s: usize) -> Layer {
    Layer {
        name,
        h,
        w,
        ic,
        oc,
        k,
        s,
    }
}

/// Layer 1 is left out: its 3 input channels are too shallow to pack.
pub const LAYER_TABLE: [Layer; 11] = [
    row(2, 56, 56, 64, 64, 3, 1),
    row(3, 56, 56, 64, 64, 1, 1),
    row(4, 56, 56, 64, 128, 3, 2),
    row(5, 56, 56, 64, 128, 1, 2),
    row(6, 28, 28, 128, 128, 3, 1),
    row(7, 28, 28, 128, 256, 3, 2),
    row(8, 28, 28, 128, 256, 1, 2),
    row(9, 14, 14, 256, 256, 3, 1),
    row(10, 14, 14, 256, 512, 3, 2),
    row(11, 14, 14, 256, 512, 1, 2),
    row(12, 7, 7, 512, 512, 3, 1),
];

pub fn layer(name: u8) -> Result<Layer> {
    LAYER_TABLE
        .iter()
        .find(|l| l.name == name)
        .copied()
        .ok_or(BenchError::UnknownLayer(name))
}

impl Layer {
    /// Geometry with both channel counts divided by `scale` and "same"
    /// padding `(k - 1) / 2`.
    pub fn params(&self, scale: usize) -> Result<ConvParams> {
        if scale == 0 || self.ic % scale != 0 || self.oc % scale != 0 {
            return Err(BenchError::InvalidArgument(format!(
                "scale {scale} does not divide the channels {}->{} of layer {}",
                self.ic, self.oc, self.name
            )));
        }
        Ok(ConvParams {
            height: self.h,
            width: self.w,
            in_channels: self.ic / scale,
            out_channels: self.oc / scale,
            kernel: self.k,
            stride: self.s,
            pad: (self.k - 1) / 2,
        })
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "layer {:>2}: {}x{}x{} -> {}, k={} s={}",
            self.name, self.h, self.w, self.ic, self.oc, self.k, self.s
        )
    }
}

/// Parses `2..12` (inclusive), `9`, or comma lists of either.
pub fn parse_layers(s: &str) -> Result<Vec<u8>> {
    let bad = || BenchError::InvalidArgument(format!("bad layer list {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u8 = a.trim().parse().map_err(|_| bad())?;
            let b: u8 = b
                .trim()
                .trim_start_matches('=')
                .parse()
                .map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    for &n in &out {
        layer(n)?;
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Parses `w1a2` style precisions. An `s` after a bit count marks that
/// operand signed (`w2sa2`); `w1a1b` is the bipolar binary case.
pub fn parse_precision(s: &str) -> Result<DotSpec> {
    let bad = || BenchError::InvalidArgument(format!("bad precision {s:?}, expected e.g. w1a2"));
    let t = s.trim().to_ascii_lowercase();
    if t == "w1a1b" {
        return Ok(DotSpec::bipolar());
    }
    let rest = t.strip_prefix('w').ok_or_else(bad)?;
    let (wpart, apart) = rest.split_once('a').ok_or_else(bad)?;
    let split = |p: &str| -> Result<(u8, bool)> {
        let (digits, signed) = match p.strip_suffix('s') {
            Some(d) => (d, true),
            None => (p, false),
        };
        Ok((digits.parse().map_err(|_| bad())?, signed))
    };
    let (wb, ws) = split(wpart)?;
    let (ab, as_) = split(apart)?;
    Ok(DotSpec::new(wb, ab)?.with_signed(ws, as_))
}

pub fn parse_precisions(s: &str) -> Result<Vec<DotSpec>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(parse_precision)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_scale() {
        let l = layer(9).unwrap();
        assert_eq!((l.h, l.w, l.ic, l.oc, l.k, l.s), (14, 14, 256, 256, 3, 1));
        let p = l.params(4).unwrap();
        assert_eq!(
            (p.height, p.width, p.in_channels, p.out_channels, p.pad),
            (14, 14, 64, 64, 1)
        );
        assert!(l.params(3).is_err());
        assert!(layer(1).is_err());
        assert_eq!(layer(3).unwrap().params(1).unwrap().pad, 0);
    }

    #[test]
    fn layer_lists() {
        assert_eq!(
            parse_layers("2..12").unwrap(),
            (2..=12).collect::<Vec<u8>>()
        );
        assert_eq!(parse_layers("9").unwrap(), vec![9]);
        assert_eq!(parse_layers("5, 2..3").unwrap(), vec![2, 3, 5]);
        assert!(parse_layers("1..3").is_err());
        assert!(parse_layers("x").is_err());
        assert!(parse_layers("").is_err());
    }

    #[test]
    fn precisions() {
        let p = parse_precisions("w1a2,W2A2,w2sa3s,w1a1b").unwrap();
        assert_eq!(p[0], DotSpec::new(1, 2).unwrap());
        assert_eq!(p[1], DotSpec::new(2, 2).unwrap());
        assert_eq!(p[2], DotSpec::new(2, 3).unwrap().with_signed(true, true));
        assert_eq!(p[3], DotSpec::bipolar());
        for s in &p {
            assert_eq!(parse_precision(&s.tag()).unwrap(), *s);
        }
        assert!(parse_precision("w9a1").is_err());
        assert!(parse_precision("a1w1").is_err());
    }
}
