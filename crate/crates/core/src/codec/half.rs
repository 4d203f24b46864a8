//! IEEE-754 binary16 conversion with round-to-nearest-even.
//!
//! Subnormals are kept, overflow saturates to infinity and every NaN encodes
//! as the canonical quiet pattern `0x7E00`.

pub const CANONICAL_NAN: u16 = 0x7E00;
pub const POS_INFINITY: u16 = 0x7C00;
pub const MAX_FINITE: f32 = 65504.0;

/// Rounds `value >> shift` to nearest, ties to even.
#[inline]
fn shift_round_even(value: u32, shift: u32) -> u32 {
    let q = value >> shift;
    let rem = value & ((1 << shift) - 1);
    let half = 1 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

pub fn encode_f16(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let mant = bits & 0x7F_FFFF;

    if exp == 0xFF {
        return if mant != 0 { CANONICAL_NAN } else { sign | POS_INFINITY };
    }
    let e = exp - 127;
    if e > 15 {
        return sign | POS_INFINITY;
    }
    if e >= -14 {
        // Normal range. A mantissa carry rolls into the exponent, and out of
        // exponent 30 it lands exactly on the infinity pattern.
        let biased = ((e + 15) as u32) << 10;
        let rounded = shift_round_even(mant, 13);
        return sign | (biased + rounded) as u16;
    }
    if exp == 0 {
        // f32 subnormals are far below half the smallest f16 subnormal.
        return sign;
    }
    // Subnormal result: magnitude = (1.mant) * 2^e = q * 2^-24.
    let shift = (-e - 1) as u32;
    if shift > 24 {
        return sign;
    }
    let full = mant | 0x80_0000;
    sign | shift_round_even(full, shift) as u16
}

pub fn decode_f16(h: u16) -> f32 {
    let sign = ((h & 0x8000) as u32) << 16;
    let exp = ((h >> 10) & 0x1F) as u32;
    let mant = (h & 0x3FF) as u32;
    match exp {
        0 => {
            // Subnormal or zero: mant * 2^-24 is exact in f32.
            let mag = mant as f32 * f32::from_bits(0x3380_0000);
            f32::from_bits(sign | mag.to_bits())
        }
        0x1F => f32::from_bits(sign | 0x7F80_0000 | (mant << 13)),
        _ => f32::from_bits(sign | ((exp + 127 - 15) << 23) | (mant << 13)),
    }
}

pub fn encode_slice(values: &[f32]) -> Vec<u16> {
    values.iter().map(|&v| encode_f16(v)).collect()
}

pub fn decode_slice(values: &[u16]) -> Vec<f32> {
    values.iter().map(|&h| decode_f16(h)).collect()
}

/// Rounds through binary16 and back, as the wire does.
pub fn quantize(values: &[f32]) -> Vec<f32> {
    values.iter().map(|&v| decode_f16(encode_f16(v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_patterns() {
        assert_eq!(encode_f16(1.0), 0x3C00);
        assert_eq!(encode_f16(-2.0), 0xC000);
        assert_eq!(encode_f16(0.1), 0x2E66);
        assert_eq!(encode_f16(70000.0), 0x7C00);
        assert_eq!(encode_f16(-70000.0), 0xFC00);
        assert_eq!(encode_f16(MAX_FINITE), 0x7BFF);
        assert_eq!(encode_f16(0.0), 0x0000);
        assert_eq!(encode_f16(-0.0), 0x8000);
        assert_eq!(encode_f16(f32::INFINITY), 0x7C00);
        assert_eq!(encode_f16(f32::NAN), CANONICAL_NAN);
        assert_eq!(encode_f16(-f32::NAN), CANONICAL_NAN);
    }

    #[test]
    fn overflow_boundary_ties_to_even() {
        // 65520 is halfway between 65504 (odd mantissa 0x3FF) and 65536 (inf).
        assert_eq!(encode_f16(65520.0), 0x7C00);
        assert_eq!(encode_f16(65519.996), 0x7BFF);
    }

    #[test]
    fn subnormals() {
        let tiny = 2f32.powi(-24);
        assert_eq!(encode_f16(tiny), 0x0001);
        assert_eq!(decode_f16(0x0001), tiny);
        // exactly half the smallest subnormal ties to zero (even)
        assert_eq!(encode_f16(tiny / 2.0), 0x0000);
        assert_eq!(encode_f16(tiny * 0.75), 0x0001);
        assert_eq!(encode_f16(tiny * 1.5), 0x0002);
        assert_eq!(decode_f16(0x03FF), 1023.0 * tiny);
        assert_eq!(encode_f16(f32::from_bits(1)), 0);
        // largest subnormal rounds up into the smallest normal
        assert_eq!(encode_f16(2f32.powi(-14) * (1.0 - 2f32.powi(-12))), 0x0400);
    }

    #[test]
    fn decode_specials() {
        assert_eq!(decode_f16(0x7C00), f32::INFINITY);
        assert_eq!(decode_f16(0xFC00), f32::NEG_INFINITY);
        assert!(decode_f16(0x7E00).is_nan());
        assert_eq!(decode_f16(0x3C00), 1.0);
    }

    proptest! {
        #[test]
        fn relative_error_bound(x in -65000.0f32..65000.0) {
            prop_assume!(x.abs() >= 2f32.powi(-14));
            let y = decode_f16(encode_f16(x));
            prop_assert!(((y - x) as f64).abs() <= 2f64.powi(-11) * (x as f64).abs());
        }
    }
}
