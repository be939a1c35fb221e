//! Variable-precision storage of operator entries.
//!
//! An entry stored with `p3` bytes, `2 <= p3 < 8`, holds one sign bit,
//! `m = 8 (p3 - 1) - 1` mantissa bits (the fraction of `1.f`, truncated
//! toward zero) and a trailing two's-complement exponent byte. The bit
//! layout is big-endian: the sign is the most significant bit of byte 0,
//! mantissa bits follow MSB-first and the exponent is the final byte.
//! `p3 = 8` stores the raw IEEE-754 bytes, `p3 = 0` stores nothing and
//! decodes to zero.

use crate::error::{Error, Result};

/// Smallest and largest exponent representable by the exponent byte.
pub const MIN_EXPONENT: i32 = -128;
pub const MAX_EXPONENT: i32 = 127;

/// Admissible precisions in increasing order.
pub const PRECISIONS: [u8; 8] = [0, 2, 3, 4, 5, 6, 7, 8];

/// Number of mantissa bits kept for `p3` bytes per entry (`2..=7`).
pub fn mantissa_bits(p3: u8) -> u32 {
    8 * (u32::from(p3) - 1) - 1
}

fn check_precision(p3: u8) -> Result<()> {
    if p3 == 0 || (2..=8).contains(&p3) {
        Ok(())
    } else {
        Err(Error::Protocol(format!("unsupported precision p3={p3}")))
    }
}

/// Splits a finite, non-zero double into sign, unbiased exponent and the
/// 52 fraction bits of its normalised mantissa.
fn split(x: f64) -> (u64, i32, u64) {
    let bits = x.to_bits();
    let sign = bits >> 63;
    let biased = ((bits >> 52) & 0x7ff) as i32;
    let mut frac = bits & ((1u64 << 52) - 1);
    let exp = if biased == 0 {
        // subnormal: shift the leading one out of the fraction
        let shift = frac.leading_zeros() as i32 - 11;
        frac = (frac << shift) & ((1u64 << 52) - 1);
        -1022 - shift
    } else {
        biased - 1023
    };
    (sign, exp, frac)
}

/// Appends the encoding of `x` with `p3` bytes to `out`.
pub fn encode_into(x: f64, p3: u8, out: &mut Vec<u8>) -> Result<()> {
    check_precision(p3)?;
    if !x.is_finite() {
        return Err(Error::Protocol(format!("cannot encode non-finite value {x}")));
    }
    match p3 {
        0 => {}
        8 => out.extend_from_slice(&x.to_be_bytes()),
        _ => {
            let m = mantissa_bits(p3);
            let width = 8 * u32::from(p3);
            let (sign, exponent, mantissa) = if x == 0.0 {
                ((x.to_bits() >> 63), MIN_EXPONENT, 0u64)
            } else {
                let (s, e, f) = split(x);
                (s, e.clamp(MIN_EXPONENT, MAX_EXPONENT), f >> (52 - m))
            };
            let word = (sign << (width - 1)) | (mantissa << 8) | u64::from(exponent as i8 as u8);
            out.extend_from_slice(&word.to_be_bytes()[(8 - p3 as usize)..]);
        }
    }
    Ok(())
}

/// Encodes a single value into a fresh buffer of length `p3`.
pub fn encode_value(x: f64, p3: u8) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(usize::from(p3));
    encode_into(x, p3, &mut out)?;
    Ok(out)
}

/// Decodes one entry. `bytes.len()` must equal `p3`.
pub fn decode_value(bytes: &[u8], p3: u8) -> Result<f64> {
    check_precision(p3)?;
    if bytes.len() != usize::from(p3) {
        return Err(Error::Corrupt(format!(
            "entry has {} bytes, precision says {p3}",
            bytes.len()
        )));
    }
    Ok(match p3 {
        0 => 0.0,
        8 => f64::from_be_bytes(bytes.try_into().expect("length checked")),
        _ => {
            let m = mantissa_bits(p3);
            let width = 8 * u32::from(p3);
            let word = bytes.iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b));
            let sign = word >> (width - 1);
            let exponent = i32::from(word as u8 as i8);
            let mantissa = (word >> 8) & ((1u64 << m) - 1);
            if mantissa == 0 && exponent == MIN_EXPONENT {
                if sign == 1 {
                    -0.0
                } else {
                    0.0
                }
            } else {
                let biased = (exponent + 1023) as u64;
                f64::from_bits((sign << 63) | (biased << 52) | (mantissa << (52 - m)))
            }
        }
    })
}

/// Value actually stored for `x` with `p3` bytes.
pub fn round_trip(x: f64, p3: u8) -> Result<f64> {
    let bytes = encode_value(x, p3)?;
    decode_value(&bytes, p3)
}

/// Largest absolute round-trip error over `values` at precision `p3`.
pub fn max_round_trip_error(values: &[f64], p3: u8) -> Result<f64> {
    values.iter().try_fold(0.0f64, |acc, &v| {
        Ok(acc.max((round_trip(v, p3)? - v).abs()))
    })
}

/// Smallest precision whose absolute round-trip error stays within
/// `threshold` on every entry. Precisions below `floor` are skipped, which
/// gives the ratcheting policy; pass `0` for a fresh choice.
pub fn choose_precision(values: &[f64], threshold: f64, floor: u8) -> Result<u8> {
    for &p3 in PRECISIONS.iter().filter(|&&p| p >= floor) {
        if max_round_trip_error(values, p3)? <= threshold {
            return Ok(p3);
        }
    }
    Ok(8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_with_two_bytes_is_all_zero() {
        assert_eq!(encode_value(1.0, 2).unwrap(), vec![0x00, 0x00]);
        assert_eq!(decode_value(&[0, 0], 2).unwrap(), 1.0);
    }

    #[test]
    fn negative_three_quarters() {
        // s=1, fraction .1000000, exponent -1
        let bytes = encode_value(-0.75, 2).unwrap();
        assert_eq!(bytes, vec![0xC0, 0xFF]);
        assert_eq!(decode_value(&bytes, 2).unwrap(), -0.75);
    }

    #[test]
    fn zero_and_signed_zero() {
        for p3 in 2..=8 {
            assert_eq!(round_trip(0.0, p3).unwrap().to_bits(), 0.0f64.to_bits());
            assert_eq!(round_trip(-0.0, p3).unwrap().to_bits(), (-0.0f64).to_bits());
        }
        assert!(encode_value(0.0, 0).unwrap().is_empty());
    }

    #[test]
    fn non_finite_is_rejected() {
        assert!(matches!(encode_value(f64::NAN, 4), Err(Error::Protocol(_))));
        assert!(matches!(encode_value(f64::INFINITY, 8), Err(Error::Protocol(_))));
    }

    #[test]
    fn length_mismatch_is_corruption() {
        assert!(matches!(decode_value(&[0, 0, 0], 2), Err(Error::Corrupt(_))));
        assert!(matches!(encode_value(1.0, 1), Err(Error::Protocol(_))));
    }

    #[test]
    fn clamped_exponents() {
        // outside the exponent byte the magnitude saturates
        let big = 2f64.powi(200) * 1.5;
        assert_eq!(round_trip(big, 3).unwrap(), 2f64.powi(127) * 1.5);
        let tiny = 2f64.powi(-200) * 1.25;
        assert_eq!(round_trip(tiny, 3).unwrap(), 2f64.powi(-128) * 1.25);
        // subnormals are normalised before clamping
        let sub = f64::from_bits(3);
        assert!(round_trip(sub, 4).unwrap() > 0.0);
    }

    #[test]
    fn precision_choice_examples() {
        assert_eq!(choose_precision(&[0.0; 16], 1e-8, 0).unwrap(), 0);
        assert_eq!(choose_precision(&[1e-12, -3e-12], 1e-8, 0).unwrap(), 0);
        // magnitude ~1 with 1e-8 absolute accuracy needs m >= 27
        let v = [0.987_654_321_012_345_6, -0.912_345_678_901_234_5];
        assert_eq!(choose_precision(&v, 1e-8, 0).unwrap(), 5);
        // ratchet never goes below its floor
        assert_eq!(choose_precision(&[0.0], 1e-8, 4).unwrap(), 4);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn finite() -> impl Strategy<Value = f64> {
            (any::<bool>(), -100i32..=100, 0u64..(1u64 << 52)).prop_map(|(neg, e, frac)| {
                let v = f64::from_bits(((e + 1023) as u64) << 52 | frac);
                if neg {
                    -v
                } else {
                    v
                }
            })
        }

        proptest! {
            #[test]
            fn relative_error_is_bounded(x in finite(), p3 in 2u8..=7) {
                let y = round_trip(x, p3).unwrap();
                let bound = 2f64.powi(-(mantissa_bits(p3) as i32));
                prop_assert!(((y - x) / x).abs() <= bound);
            }

            #[test]
            fn truncates_toward_zero(x in finite(), p3 in 2u8..=7) {
                let y = round_trip(x, p3).unwrap();
                prop_assert!(y.abs() <= x.abs());
                prop_assert_eq!(y.is_sign_negative(), x.is_sign_negative());
            }

            #[test]
            fn full_precision_is_exact(x in finite()) {
                prop_assert_eq!(round_trip(x, 8).unwrap().to_bits(), x.to_bits());
            }

            #[test]
            fn error_shrinks_with_precision(x in finite(), p3 in 2u8..=7) {
                let lo = (round_trip(x, p3).unwrap() - x).abs();
                let hi = (round_trip(x, p3 + 1).unwrap() - x).abs();
                prop_assert!(hi <= lo);
            }

            #[test]
            fn chosen_precision_is_minimal(
                values in proptest::collection::vec(finite(), 1..16),
                t in -12i32..0,
            ) {
                let threshold = 10f64.powi(t);
                let p = choose_precision(&values, threshold, 0).unwrap();
                prop_assert!(max_round_trip_error(&values, p).unwrap() <= threshold);
                let i = PRECISIONS.iter().position(|&q| q == p).unwrap();
                if i > 0 {
                    prop_assert!(max_round_trip_error(&values, PRECISIONS[i - 1]).unwrap() > threshold);
                }
            }
        }
    }
}
