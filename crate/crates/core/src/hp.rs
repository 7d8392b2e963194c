//! Fixed-mantissa binary floating point on top of `BigInt`, just enough for
//! trace-map orbits whose invariant must be checked after heavy cancellation.

use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{ToPrimitive, Zero};

/// Mantissa bits kept after every operation.
pub(crate) const PRECISION: u64 = 1216;

/// `mant · 2^exp`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BigFloat {
    mant: BigInt,
    exp: i64,
}

fn ldexp(x: f64, e: i64) -> f64 {
    let e = e.clamp(-2200, 2200) as i32;
    let half = e / 2;
    x * 2f64.powi(half) * 2f64.powi(e - half)
}

impl BigFloat {
    pub fn zero() -> Self {
        Self {
            mant: BigInt::zero(),
            exp: 0,
        }
    }

    /// Exact conversion.
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite(), "non-finite input to BigFloat");
        if x == 0.0 {
            return Self::zero();
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1 } else { 1 };
        let raw_exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if raw_exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), raw_exp - 1075)
        };
        Self {
            mant: BigInt::from(m) * sign,
            exp: e,
        }
    }

    fn normalized(mut self) -> Self {
        let b = self.mant.bits();
        if b > PRECISION {
            let s = b - PRECISION;
            self.mant >>= s as usize;
            self.exp += s as i64;
        }
        self
    }

    pub fn is_zero(&self) -> bool {
        self.mant.is_zero()
    }

    /// Position of the leading bit, `⌊log₂|x|⌋ + 1`.
    fn top(&self) -> i64 {
        self.mant.bits() as i64 + self.exp
    }

    pub fn add(&self, other: &Self) -> Self {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        let gap = self.top() - other.top();
        if gap > PRECISION as i64 + 4 {
            return self.clone();
        }
        if -gap > PRECISION as i64 + 4 {
            return other.clone();
        }
        let (hi, lo) = if self.exp >= other.exp {
            (self, other)
        } else {
            (other, self)
        };
        let shift = (hi.exp - lo.exp) as usize;
        Self {
            mant: (&hi.mant << shift) + &lo.mant,
            exp: lo.exp,
        }
        .normalized()
    }

    pub fn neg(&self) -> Self {
        Self {
            mant: -&self.mant,
            exp: self.exp,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self {
            mant: &self.mant * &other.mant,
            exp: self.exp + other.exp,
        }
        .normalized()
    }

    /// Multiplication by `2^k`.
    pub fn scale2(&self, k: i64) -> Self {
        Self {
            mant: self.mant.clone(),
            exp: self.exp + k,
        }
    }

    /// Value times `2^-shift` as `f64`.
    fn to_f64_scaled(&self, shift: i64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let b = self.mant.bits();
        let (m, e) = if b > 64 {
            (&self.mant >> (b - 64) as usize, self.exp + (b - 64) as i64)
        } else {
            (self.mant.clone(), self.exp)
        };
        ldexp(m.to_f64().unwrap_or(0.0), e - shift)
    }

    pub fn to_f64(&self) -> f64 {
        self.to_f64_scaled(0)
    }
}

/// Complex number with [`BigFloat`] parts.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BigComplex {
    pub re: BigFloat,
    pub im: BigFloat,
}

impl BigComplex {
    pub fn from_c64(z: Complex64) -> Self {
        Self {
            re: BigFloat::from_f64(z.re),
            im: BigFloat::from_f64(z.im),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            re: self.re.add(&o.re),
            im: self.im.add(&o.im),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self {
            re: self.re.sub(&o.re),
            im: self.im.sub(&o.im),
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self {
            re: self.re.mul(&o.re).sub(&self.im.mul(&o.im)),
            im: self.re.mul(&o.im).add(&self.im.mul(&o.re)),
        }
    }

    pub fn scale2(&self, k: i64) -> Self {
        Self {
            re: self.re.scale2(k),
            im: self.im.scale2(k),
        }
    }

    fn top(&self) -> Option<i64> {
        match (self.re.is_zero(), self.im.is_zero()) {
            (true, true) => None,
            (false, true) => Some(self.re.top()),
            (true, false) => Some(self.im.top()),
            (false, false) => Some(self.re.top().max(self.im.top())),
        }
    }

    /// Principal complex logarithm, valid far beyond the `f64` range.
    pub fn ln(&self) -> Complex64 {
        match self.top() {
            None => Complex64::new(f64::NEG_INFINITY, 0.0),
            Some(e) => {
                let re = self.re.to_f64_scaled(e);
                let im = self.im.to_f64_scaled(e);
                Complex64::new(re.hypot(im).ln() + e as f64 * std::f64::consts::LN_2, im.atan2(re))
            }
        }
    }

    /// `log |z|`.
    pub fn ln_abs(&self) -> f64 {
        self.ln().re
    }

    /// Nearest `f64` value (may be infinite).
    pub fn to_c64(&self) -> Complex64 {
        Complex64::new(self.re.to_f64(), self.im.to_f64())
    }

    /// `|z|` as an `f64` (may be infinite).
    pub fn abs_f64(&self) -> f64 {
        self.ln_abs().exp()
    }
}
