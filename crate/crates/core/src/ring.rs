//! Arithmetic over `Z_{2^l}` for runtime-chosen bit width `l`.
//!
//! Every protocol value lives in a power-of-two ring. The width is a
//! session parameter (1 for boolean shares, 8..64 for arithmetic), so
//! elements carry their width and all operations wrap modulo `2^l`.

use crate::{Error, Result};

/// Supported ring widths in bits. Width 1 doubles as the boolean ring.
pub const SUPPORTED_WIDTHS: [u8; 5] = [1, 8, 16, 32, 64];

/// One element of `Z_{2^l}`, stored in the low `l` bits of a `u64`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct RingElem {
    v: u64,
    ell: u8,
}

impl std::fmt::Debug for RingElem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}r{}", self.v, self.ell)
    }
}

#[inline]
pub(crate) fn width_mask(ell: u8) -> u64 {
    debug_assert!(ell >= 1 && ell <= 64);
    if ell == 64 {
        u64::MAX
    } else {
        (1u64 << ell) - 1
    }
}

impl RingElem {
    /// Builds an element, reducing `v` modulo `2^ell`.
    #[inline]
    pub fn new(v: u64, ell: u8) -> Self {
        assert!(
            SUPPORTED_WIDTHS.contains(&ell),
            "unsupported ring width {ell}"
        );
        RingElem {
            v: v & width_mask(ell),
            ell,
        }
    }

    #[inline]
    pub fn zero(ell: u8) -> Self {
        RingElem::new(0, ell)
    }

    #[inline]
    pub fn one(ell: u8) -> Self {
        RingElem::new(1, ell)
    }

    /// Reduces a signed integer into the ring (two's complement).
    #[inline]
    pub fn from_i64(v: i64, ell: u8) -> Self {
        RingElem::new(v as u64, ell)
    }

    #[inline]
    pub fn raw(self) -> u64 {
        self.v
    }

    #[inline]
    pub fn width(self) -> u8 {
        self.ell
    }

    /// Signed interpretation: values with the top bit set are negative.
    #[inline]
    pub fn to_signed(self) -> i64 {
        let m = width_mask(self.ell);
        if self.ell == 64 {
            self.v as i64
        } else if self.v >> (self.ell - 1) & 1 == 1 {
            (self.v | !m) as i64
        } else {
            self.v as i64
        }
    }

    #[inline]
    fn check_width(self, rhs: Self) {
        assert_eq!(self.ell, rhs.ell, "mixed ring widths");
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.v == 0
    }

    /// Most significant bit of the `l`-bit representation.
    #[inline]
    pub fn msb(self) -> u64 {
        self.v >> (self.ell - 1) & 1
    }

    /// Bit `i` of the representation.
    #[inline]
    pub fn bit(self, i: u8) -> u64 {
        debug_assert!(i < self.ell);
        self.v >> i & 1
    }

    /// Little-endian encoding in `ceil(l/8)` bytes.
    pub fn to_le_bytes(self) -> Vec<u8> {
        let n = byte_len(self.ell);
        self.v.to_le_bytes()[..n].to_vec()
    }

    pub fn from_le_bytes(bytes: &[u8], ell: u8) -> Result<Self> {
        let n = byte_len(ell);
        if bytes.len() != n {
            return Err(Error::Serial(format!(
                "ring element needs {n} bytes, got {}",
                bytes.len()
            )));
        }
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(bytes);
        Ok(RingElem::new(u64::from_le_bytes(buf), ell))
    }
}

/// Serialized size of one element of `Z_{2^l}`.
#[inline]
pub fn byte_len(ell: u8) -> usize {
    ((ell as usize) + 7) / 8
}

impl std::ops::Add for RingElem {
    type Output = RingElem;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self.check_width(rhs);
        RingElem::new(self.v.wrapping_add(rhs.v), self.ell)
    }
}

impl std::ops::Sub for RingElem {
    type Output = RingElem;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self.check_width(rhs);
        RingElem::new(self.v.wrapping_sub(rhs.v), self.ell)
    }
}

impl std::ops::Mul for RingElem {
    type Output = RingElem;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.check_width(rhs);
        RingElem::new(self.v.wrapping_mul(rhs.v), self.ell)
    }
}

impl std::ops::Neg for RingElem {
    type Output = RingElem;
    #[inline]
    fn neg(self) -> Self {
        RingElem::new(self.v.wrapping_neg(), self.ell)
    }
}

impl std::ops::AddAssign for RingElem {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::ops::SubAssign for RingElem {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

/// Multiplies by the public power `2^d`.
#[inline]
pub fn shl_pow2(x: RingElem, d: u8) -> RingElem {
    assert!(d < x.width());
    RingElem::new(x.raw() << d, x.width())
}

/// Arithmetic right shift by `d`: divides the signed value by `2^d`,
/// rounding toward negative infinity, and reduces back into the ring.
pub fn arith_shift_trunc(x: RingElem, d: u8) -> RingElem {
    assert!(d < x.width(), "shift must be below the ring width");
    let ell = x.width();
    let shifted = if ell == 64 {
        ((x.raw() as i64) >> d) as u64
    } else {
        // Sign-extend to 64 bits, shift, reduce.
        (x.to_signed() >> d) as u64
    };
    RingElem::new(shifted, ell)
}

/// Splits `x` into (logical shift by `d`, low `d` bits): `x = 2^d * hi + lo`.
pub fn logical_split(x: RingElem, d: u8) -> (RingElem, RingElem) {
    assert!(d < x.width());
    let hi = RingElem::new(x.raw() >> d, x.width());
    let lo = RingElem::new(x.raw() & ((1u64 << d) - 1), x.width());
    (hi, lo)
}

/// A fixed-point rational: `raw` holds `value * 2^frac_bits` in the ring.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedPoint {
    pub raw: RingElem,
    pub frac_bits: u8,
}

impl FixedPoint {
    /// Encodes `q` with `frac_bits` fractional bits, rounding half away
    /// from zero. Fails if the scaled value leaves the signed range.
    pub fn encode(q: f64, frac_bits: u8, ell: u8) -> Result<Self> {
        assert!(ell >= 2 && frac_bits < ell - 1);
        let scaled = q * (1u64 << frac_bits) as f64;
        if !scaled.is_finite() {
            return Err(Error::Range(format!("{q} is not encodable")));
        }
        let rounded = scaled.abs().floor() + if scaled.abs().fract() >= 0.5 { 1.0 } else { 0.0 };
        let rounded = rounded.copysign(scaled);
        let limit = (1u64 << (ell - 1)) as f64;
        if rounded >= limit || rounded < -limit {
            return Err(Error::Range(format!(
                "{q} overflows {ell}-bit fixed point with {frac_bits} fractional bits"
            )));
        }
        Ok(FixedPoint {
            raw: RingElem::from_i64(rounded as i64, ell),
            frac_bits,
        })
    }

    pub fn from_raw(raw: RingElem, frac_bits: u8) -> Self {
        FixedPoint { raw, frac_bits }
    }

    /// Decodes back to a float via the signed interpretation.
    pub fn decode(self) -> f64 {
        self.raw.to_signed() as f64 / (1u64 << self.frac_bits) as f64
    }
}
