use super::DotSpec;
use crate::bitpack::PackedTensor;
use crate::error::{Error, Result};
use crate::tensor::Encoding;

fn check_vector(p: &PackedTensor) -> Result<()> {
    if p.source_rank() != 1 {
        return Err(Error::OperandMismatch(format!(
            "dot operands must be packed vectors, got rank {}",
            p.source_rank()
        )));
    }
    p.check_padding()
}

fn check_compatible(x: &PackedTensor, y: &PackedTensor) -> Result<()> {
    check_vector(x)?;
    check_vector(y)?;
    if x.orig_reduction_len() != y.orig_reduction_len() {
        return Err(Error::OperandMismatch(format!(
            "vector lengths differ: {} vs {}",
            x.orig_reduction_len(),
            y.orig_reduction_len()
        )));
    }
    if x.width() != y.width() {
        return Err(Error::OperandMismatch(format!(
            "word widths differ: {} vs {}",
            x.width(),
            y.width()
        )));
    }
    Ok(())
}

/// Dot product of two 1-bit packed vectors.
///
/// Unipolar: `popcount(x & y)`. Bipolar ({-1, +1} with bit 1 meaning +1):
/// `2 * popcount(!(x ^ y)) - K`, with the padding bits masked off.
pub fn binary_dot(x: &PackedTensor, y: &PackedTensor, encoding: Encoding) -> Result<i64> {
    check_compatible(x, y)?;
    for p in [x, y] {
        if p.bits() != 1 || p.encoding() != encoding {
            return Err(Error::OperandMismatch(format!(
                "binary dot needs 1-bit {encoding} operands, got {}-bit {}",
                p.bits(),
                p.encoding()
            )));
        }
    }
    let k = x.orig_reduction_len();
    let w = x.width().bits() as usize;
    let (xs, ys) = (x.plane_words(&[], 0), y.plane_words(&[], 0));
    let count: u64 = match encoding {
        Encoding::Unipolar => xs
            .iter()
            .zip(&ys)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum(),
        Encoding::Bipolar => xs
            .iter()
            .zip(&ys)
            .enumerate()
            .map(|(j, (a, b))| {
                let valid = (k - j * w).min(w);
                let mask = if valid == 64 {
                    u64::MAX
                } else {
                    (1u64 << valid) - 1
                };
                (!(a ^ b) & mask).count_ones() as u64
            })
            .sum(),
    };
    Ok(match encoding {
        Encoding::Unipolar => count as i64,
        Encoding::Bipolar => 2 * count as i64 - k as i64,
    })
}

/// `sum_k x[k] * y[k]` for a packed activation vector `x` and weight vector
/// `y`, as the plane-weighted sum of binary dots over all plane pairs.
pub fn bitserial_dot(x: &PackedTensor, y: &PackedTensor, spec: &DotSpec) -> Result<i64> {
    spec.validate()?;
    check_compatible(x, y)?;
    let sides = [
        (
            "activation",
            x,
            spec.activation_bits,
            spec.activation_signed,
        ),
        ("weight", y, spec.weight_bits, spec.weight_signed),
    ];
    for (name, p, bits, signed) in sides {
        if p.bits() != bits || p.is_signed() != signed || p.encoding() != spec.encoding {
            return Err(Error::OperandMismatch(format!(
                "{name} vector is {}-bit (signed={}, {}), spec {spec} disagrees",
                p.bits(),
                p.is_signed(),
                p.encoding()
            )));
        }
    }
    if spec.encoding == Encoding::Bipolar {
        return binary_dot(x, y, Encoding::Bipolar);
    }
    let xplanes: Vec<Vec<u64>> = (0..x.bits() as usize)
        .map(|n| x.plane_words(&[], n))
        .collect();
    let yplanes: Vec<Vec<u64>> = (0..y.bits() as usize)
        .map(|m| y.plane_words(&[], m))
        .collect();
    let mut total = 0i64;
    for (m, yp) in yplanes.iter().enumerate() {
        for (n, xp) in xplanes.iter().enumerate() {
            let count: u64 = xp
                .iter()
                .zip(yp)
                .map(|(a, b)| (a & b).count_ones() as u64)
                .sum();
            total += spec.plane_weight(m, n) * count as i64;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitpack::bitpack;
    use crate::tensor::{QuantTensor, Tensor};
    use crate::word::WordWidth;

    fn vector(values: &[i64], bits: u8, signed: bool, width: WordWidth) -> PackedTensor {
        let t = Tensor::new(&[values.len()], "K", values.to_vec()).unwrap();
        bitpack(
            &QuantTensor::from_values(&t, bits, signed).unwrap(),
            'K',
            0,
            width,
        )
        .unwrap()
    }

    fn bipolar(values: &[i64], width: WordWidth) -> PackedTensor {
        let t = Tensor::new(&[values.len()], "K", values.to_vec()).unwrap();
        bitpack(&QuantTensor::from_bipolar(&t).unwrap(), 'K', 0, width).unwrap()
    }

    #[test]
    fn worked_example() {
        let x = vector(&[3, 1, 2, 0], 2, false, WordWidth::W8);
        let y = vector(&[1, 0, 1, 1], 1, false, WordWidth::W8);
        let spec = DotSpec::new(1, 2).unwrap();
        assert_eq!(bitserial_dot(&x, &y, &spec).unwrap(), 5);
    }

    #[test]
    fn binary_examples() {
        let x = vector(&[1, 0, 1, 1, 0], 1, false, WordWidth::W32);
        let y = vector(&[1, 1, 1, 0, 0], 1, false, WordWidth::W32);
        assert_eq!(binary_dot(&x, &y, Encoding::Unipolar).unwrap(), 2);

        let x = bipolar(&[1, -1, 1, 1, -1], WordWidth::W8);
        let y = bipolar(&[1, 1, 1, -1, -1], WordWidth::W8);
        // 1 - 1 + 1 - 1 + 1
        assert_eq!(binary_dot(&x, &y, Encoding::Bipolar).unwrap(), 1);
    }

    #[test]
    fn listed_examples() {
        let x = vector(&[1, 0, 1, 1], 1, false, WordWidth::W8);
        let y = vector(&[1, 1, 0, 1], 1, false, WordWidth::W8);
        assert_eq!(x.words().get(0), 0b1101);
        assert_eq!(y.words().get(0), 0b1011);
        assert_eq!(binary_dot(&x, &y, Encoding::Unipolar).unwrap(), 2);

        let ones = vector(&[1; 64], 1, false, WordWidth::W64);
        assert_eq!(binary_dot(&ones, &ones, Encoding::Unipolar).unwrap(), 64);

        let x = bipolar(&[1, -1, 1], WordWidth::W8);
        let y = bipolar(&[1, 1, 1], WordWidth::W8);
        assert_eq!((x.words().get(0), y.words().get(0)), (0b101, 0b111));
        assert_eq!(binary_dot(&x, &y, Encoding::Bipolar).unwrap(), 1);

        let x = vector(&[-2, 1], 2, true, WordWidth::W8);
        let y = vector(&[1, 1], 1, false, WordWidth::W8);
        let spec = DotSpec::new(1, 2).unwrap().with_signed(false, true);
        assert_eq!(bitserial_dot(&x, &y, &spec).unwrap(), -1);

        let x = vector(&[5, 7, 1], 3, false, WordWidth::W16);
        let zero = vector(&[0, 0, 0], 2, false, WordWidth::W16);
        assert_eq!(
            bitserial_dot(&x, &zero, &DotSpec::new(2, 3).unwrap()).unwrap(),
            0
        );
    }

    #[test]
    fn bipolar_tail_masked() {
        // 70 elements span two u64 words; all -1 against all -1 is +70
        let x = bipolar(&[-1; 70], WordWidth::W64);
        assert_eq!(binary_dot(&x, &x, Encoding::Bipolar).unwrap(), 70);
        let y = bipolar(&[1; 70], WordWidth::W64);
        assert_eq!(binary_dot(&x, &y, Encoding::Bipolar).unwrap(), -70);
    }

    #[test]
    fn signed_dot() {
        let x = vector(&[-2, 1, 0, -1], 2, true, WordWidth::W16);
        let y = vector(&[3, -4, 1, 2], 3, true, WordWidth::W16);
        let spec = DotSpec::new(3, 2).unwrap().with_signed(true, true);
        assert_eq!(bitserial_dot(&x, &y, &spec).unwrap(), -6 - 4 - 2);
    }

    #[test]
    fn mismatches_rejected() {
        let x = vector(&[1, 0, 1], 1, false, WordWidth::W8);
        let y = vector(&[1, 0], 1, false, WordWidth::W8);
        assert!(matches!(
            binary_dot(&x, &y, Encoding::Unipolar),
            Err(Error::OperandMismatch(_))
        ));
        let z = vector(&[1, 0, 1], 1, false, WordWidth::W16);
        assert!(matches!(
            binary_dot(&x, &z, Encoding::Unipolar),
            Err(Error::OperandMismatch(_))
        ));
        let spec = DotSpec::new(2, 1).unwrap();
        assert!(matches!(
            bitserial_dot(&x, &x, &spec),
            Err(Error::OperandMismatch(_))
        ));
    }
}
