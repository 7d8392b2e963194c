//! Potential families on `ℤ` and their exact sampling.
//!
//! Phases `nθ + ω mod 1` are carried as 128-bit fixed-point fractions, so the
//! Sturmian indicator is decided by integer comparison and stays correct far
//! beyond the range where `f64` arithmetic wraps near interval endpoints.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// A point of `ℝ/ℤ` as a 128-bit binary fraction.
pub type Phase = u128;

/// Converts a phase to a float in `[0, 1]`.
pub fn phase_to_f64(x: Phase) -> f64 {
    x as f64 * 2f64.powi(-128)
}

/// Converts a float to a phase; exact for binary64 inputs (after reduction mod 1).
pub fn phase_from_f64(x: f64) -> Phase {
    let frac = x - x.floor();
    let scaled = frac * 2f64.powi(128);
    if scaled >= 2f64.powi(128) {
        0
    } else {
        scaled as u128
    }
}

/// Integer coefficient times a frequency, used by [`Frequency::Combination`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTerm {
    pub coefficient: i64,
    pub frequency: Frequency,
}

/// A real number (frequency or phase) given symbolically or with enough digits
/// to be expanded exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Frequency {
    /// The inverse golden mean `(√5 − 1)/2`.
    Golden,
    /// The quadratic irrational `(a + b√d)/c`.
    Surd { a: i64, b: i64, d: u64, c: i64 },
    /// A decimal expansion such as `"0.41421356237309504880..."`, trusted up to
    /// one unit in its last digit.
    Decimal { digits: String },
    /// The exact value of a binary64 number.
    Float { value: f64 },
    /// An integer combination `Σ cᵢ θᵢ`.
    Combination { terms: Vec<FrequencyTerm> },
}

/// A closed rational interval known to contain a real number.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalBracket {
    pub lo: BigRational,
    pub hi: BigRational,
}

impl RationalBracket {
    fn point(x: BigRational) -> Self {
        Self {
            lo: x.clone(),
            hi: x,
        }
    }

    /// Whether the bracket pins the value down exactly.
    pub fn is_exact(&self) -> bool {
        self.lo == self.hi
    }
}

impl Frequency {
    /// Zero, as a phase.
    pub fn zero() -> Self {
        Frequency::Float { value: 0.0 }
    }

    /// `√2 − 1`, whose continued fraction is `[0; 2, 2, 2, …]`.
    pub fn silver() -> Self {
        Frequency::Surd {
            a: -1,
            b: 1,
            d: 2,
            c: 1,
        }
    }

    /// Whether [`Frequency::bracket`] improves without bound as `bits` grows.
    pub fn is_symbolic(&self) -> bool {
        match self {
            Frequency::Golden | Frequency::Surd { .. } => true,
            Frequency::Decimal { .. } | Frequency::Float { .. } => false,
            Frequency::Combination { terms } => terms.iter().all(|t| t.frequency.is_symbolic()),
        }
    }

    /// Encloses the value in a rational interval of width about `2^-bits`
    /// (symbolic inputs) or as narrow as the supplied digits allow.
    pub fn bracket(&self, bits: u32) -> Result<RationalBracket> {
        match self {
            Frequency::Golden => surd_bracket(-1, 1, 5, 2, bits),
            Frequency::Surd { a, b, d, c } => surd_bracket(*a, *b, *d, *c, bits),
            Frequency::Decimal { digits } => decimal_bracket(digits),
            Frequency::Float { value } => {
                let exact = BigRational::from_float(*value)
                    .ok_or_else(|| param("frequency", "float value must be finite"))?;
                Ok(RationalBracket::point(exact))
            }
            Frequency::Combination { terms } => {
                let mut lo = BigRational::zero();
                let mut hi = BigRational::zero();
                for term in terms {
                    let inner = term.frequency.bracket(bits + 64)?;
                    let c = BigRational::from_integer(BigInt::from(term.coefficient));
                    if term.coefficient >= 0 {
                        lo += &c * &inner.lo;
                        hi += &c * &inner.hi;
                    } else {
                        lo += &c * &inner.hi;
                        hi += &c * &inner.lo;
                    }
                }
                Ok(RationalBracket { lo, hi })
            }
        }
    }

    /// Fractional part as a 128-bit phase (truncated; at least 64 correct bits
    /// for decimal inputs with 20 or more digits).
    pub fn to_phase(&self) -> Result<Phase> {
        let bracket = self.bracket(192)?;
        let lo = &bracket.lo;
        let frac = lo - BigRational::from_integer(lo.floor().to_integer());
        let scaled = (frac * BigRational::from_integer(BigInt::one() << 128u32))
            .floor()
            .to_integer();
        Ok(scaled.to_u128().unwrap_or(u128::MAX))
    }

    /// Approximate value as `f64`.
    pub fn to_f64(&self) -> Result<f64> {
        let bracket = self.bracket(128)?;
        Ok(rational_to_f64(&bracket.lo))
    }
}

pub(crate) fn rational_to_f64(x: &BigRational) -> f64 {
    let numer = x.numer();
    let denom = x.denom();
    let shift = numer.bits() as i64 - denom.bits() as i64;
    // scale so the quotient carries 64 significant bits
    let extra = 64 - shift;
    let q = if extra >= 0 {
        (numer << extra as u32).div_floor(denom)
    } else {
        numer.div_floor(&(denom << (-extra) as u32))
    };
    q.to_f64().unwrap_or(f64::NAN) * 2f64.powi(-extra as i32)
}

fn surd_bracket(a: i64, b: i64, d: u64, c: i64, bits: u32) -> Result<RationalBracket> {
    if c == 0 {
        return Err(param("frequency", "surd denominator c must be nonzero"));
    }
    let root = num_integer::Roots::sqrt(&d);
    if root * root == d || b == 0 {
        return Err(param("frequency", "surd must be irrational (b ≠ 0, d not a square)"));
    }
    let scale = BigInt::one() << bits;
    let radicand = BigInt::from(b).pow(2) * BigInt::from(d) * &scale * &scale;
    let s = radicand.sqrt();
    let base = BigInt::from(a) * &scale;
    let (lo_num, hi_num) = if b > 0 {
        (&base + &s, &base + &s + 1)
    } else {
        (&base - &s - 1, &base - &s)
    };
    let den = BigInt::from(c) * &scale;
    let lo = BigRational::new(lo_num, den.clone());
    let hi = BigRational::new(hi_num, den);
    Ok(if lo <= hi {
        RationalBracket { lo, hi }
    } else {
        RationalBracket { lo: hi, hi: lo }
    })
}

fn decimal_bracket(digits: &str) -> Result<RationalBracket> {
    let text = digits.trim();
    let (negative, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    let all_digits = |s: &str| s.chars().all(|ch| ch.is_ascii_digit());
    if (int_part.is_empty() && frac_part.is_empty()) || !all_digits(int_part) || !all_digits(frac_part) {
        return Err(param("frequency", format!("`{digits}` is not a decimal number")));
    }
    let joined = format!("{int_part}{frac_part}");
    let mut numer: BigInt = joined.parse().unwrap_or_default();
    if negative {
        numer = -numer;
    }
    let den = BigInt::from(10u32).pow(frac_part.len() as u32);
    let value = BigRational::new(numer, den.clone());
    let ulp = BigRational::new(BigInt::one(), den);
    Ok(RationalBracket {
        lo: &value - &ulp,
        hi: &value + &ulp,
    })
}

/// Trigonometric polynomial `f(x) = c₀ + Σₕ (aₕ cos 2πhx + bₕ sin 2πhx)`;
/// `cosines[h-1]` and `sines[h-1]` hold the coefficients of harmonic `h`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigPolynomial {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub cosines: Vec<f64>,
    #[serde(default)]
    pub sines: Vec<f64>,
}

impl TrigPolynomial {
    /// `amplitude · cos(2πx)`, the almost Mathieu sampling function.
    pub fn cosine(amplitude: f64) -> Self {
        Self {
            constant: 0.0,
            cosines: vec![amplitude],
            sines: vec![],
        }
    }

    /// Largest harmonic with a nonzero coefficient.
    pub fn degree(&self) -> usize {
        let top = |v: &[f64]| v.iter().rposition(|c| *c != 0.0).map_or(0, |i| i + 1);
        top(&self.cosines).max(top(&self.sines))
    }

    /// Evaluates `f` at a phase; each harmonic reduces `h·x mod 1` exactly.
    pub fn eval_phase(&self, x: Phase) -> f64 {
        let mut value = self.constant;
        for h in 1..=self.degree() {
            let t = phase_to_f64((h as u128).wrapping_mul(x));
            let (s, c) = (TAU * t).sin_cos();
            if let Some(a) = self.cosines.get(h - 1) {
                value += a * c;
            }
            if let Some(b) = self.sines.get(h - 1) {
                value += b * s;
            }
        }
        value
    }

    /// Evaluates `f` at a real argument.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_phase(phase_from_f64(x))
    }

    /// `‖f‖_∞`: exact for a single harmonic term, otherwise a dense grid scan
    /// refined by golden-section search around each local maximum of `|f|`.
    pub fn sup_norm(&self) -> f64 {
        let d = self.degree();
        let nonzero: Vec<f64> = self
            .cosines
            .iter()
            .chain(self.sines.iter())
            .copied()
            .filter(|c| *c != 0.0)
            .collect();
        if d == 0 {
            return self.constant.abs();
        }
        if nonzero.len() == 1 {
            return self.constant.abs() + nonzero[0].abs();
        }
        let points = 2048 * d;
        let h = 1.0 / points as f64;
        let values: Vec<f64> = (0..points).map(|i| self.eval(i as f64 * h).abs()).collect();
        let mut best = values.iter().cloned().fold(0.0, f64::max);
        for i in 0..points {
            let prev = values[(i + points - 1) % points];
            let next = values[(i + 1) % points];
            if values[i] >= prev && values[i] >= next {
                let center = i as f64 * h;
                best = best.max(golden_max(|x| self.eval(x).abs(), center - h, center + h));
            }
        }
        best
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-14 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd).max(f(0.5 * (a + b)))
}

/// A site/value pair in explicit potential tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SiteValue {
    site: i64,
    value: f64,
}

mod site_map {
    use super::SiteValue;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(map: &BTreeMap<i64, f64>, ser: S) -> Result<S::Ok, S::Error> {
        let list: Vec<SiteValue> = map
            .iter()
            .map(|(&site, &value)| SiteValue { site, value })
            .collect();
        list.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<BTreeMap<i64, f64>, D::Error> {
        let list = Vec::<SiteValue>::deserialize(de)?;
        Ok(list.into_iter().map(|sv| (sv.site, sv.value)).collect())
    }
}

/// Declarative description of a real potential `V: ℤ → ℝ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// `V ≡ 0`.
    Free,
    /// `V(n) = λ χ_[1−θ,1)(nθ mod 1)` with `θ = (√5 − 1)/2`.
    Fibonacci { lambda: f64 },
    /// `V(n) = λ χ_[1−θ,1)(nθ + ω mod 1)`.
    Sturmian {
        lambda: f64,
        theta: Frequency,
        omega: Frequency,
    },
    /// `V(n) = f(nθ + ω)` for a trigonometric polynomial `f`.
    QuasiPeriodicTrig {
        poly: TrigPolynomial,
        theta: Frequency,
        omega: Frequency,
    },
    /// Finitely supported table, zero elsewhere.
    Explicit {
        #[serde(with = "site_map", default)]
        samples: BTreeMap<i64, f64>,
    },
    /// `base` with the listed sites replaced.
    Perturbed {
        base: Box<PotentialSpec>,
        #[serde(with = "site_map", default)]
        overrides: BTreeMap<i64, f64>,
    },
}

impl PotentialSpec {
    /// Almost Mathieu family `V(n) = amplitude · cos 2π(nθ + ω)`.
    pub fn almost_mathieu(amplitude: f64, theta: Frequency, omega: Frequency) -> Self {
        PotentialSpec::QuasiPeriodicTrig {
            poly: TrigPolynomial::cosine(amplitude),
            theta,
            omega,
        }
    }

    /// Validates the declaration and builds the sampler.
    pub fn compile(&self) -> Result<Potential> {
        Potential::new(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Sturmian { lambda: f64, theta: Phase, omega: Phase },
    Trig { poly: TrigPolynomial, theta: Phase, omega: Phase },
    Table(BTreeMap<i64, f64>),
}

/// Compiled, immutable potential; cheap to sample from many threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    shape: Shape,
    overrides: BTreeMap<i64, f64>,
    sup_norm: f64,
}

fn check_finite(name: &'static str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(param(name, format!("{x} is not finite")))
    }
}

fn frequency_in_unit_interval(theta: &Frequency) -> Result<Phase> {
    let value = theta.to_f64()?;
    if !(value > 0.0 && value < 1.0) {
        return Err(param("theta", format!("must lie in (0, 1), got {value}")));
    }
    theta.to_phase()
}

impl Potential {
    pub fn new(spec: &PotentialSpec) -> Result<Self> {
        let (shape, overrides) = match spec {
            PotentialSpec::Free => (Shape::Table(BTreeMap::new()), BTreeMap::new()),
            PotentialSpec::Fibonacci { lambda } => {
                if !(*lambda > 0.0) || !lambda.is_finite() {
                    return Err(param("lambda", format!("must be positive and finite, got {lambda}")));
                }
                let theta = Frequency::Golden.to_phase()?;
                (
                    Shape::Sturmian {
                        lambda: *lambda,
                        theta,
                        omega: 0,
                    },
                    BTreeMap::new(),
                )
            }
            PotentialSpec::Sturmian { lambda, theta, omega } => {
                if !(*lambda > 0.0) || !lambda.is_finite() {
                    return Err(param("lambda", format!("must be positive and finite, got {lambda}")));
                }
                let theta = frequency_in_unit_interval(theta)?;
                (
                    Shape::Sturmian {
                        lambda: *lambda,
                        theta,
                        omega: omega.to_phase()?,
                    },
                    BTreeMap::new(),
                )
            }
            PotentialSpec::QuasiPeriodicTrig { poly, theta, omega } => {
                check_finite("poly.constant", poly.constant)?;
                for c in poly.cosines.iter().chain(poly.sines.iter()) {
                    check_finite("poly", *c)?;
                }
                let theta = frequency_in_unit_interval(theta)?;
                (
                    Shape::Trig {
                        poly: poly.clone(),
                        theta,
                        omega: omega.to_phase()?,
                    },
                    BTreeMap::new(),
                )
            }
            PotentialSpec::Explicit { samples } => {
                for v in samples.values() {
                    check_finite("samples", *v)?;
                }
                (Shape::Table(samples.clone()), BTreeMap::new())
            }
            PotentialSpec::Perturbed { base, overrides } => {
                for v in overrides.values() {
                    check_finite("overrides", *v)?;
                }
                let inner = Potential::new(base)?;
                let mut merged = inner.overrides.clone();
                merged.extend(overrides.iter().map(|(k, v)| (*k, *v)));
                (inner.shape, merged)
            }
        };
        let base_sup = match &shape {
            Shape::Sturmian { lambda, .. } => lambda.abs(),
            Shape::Trig { poly, .. } => poly.sup_norm(),
            Shape::Table(map) => map.values().fold(0.0f64, |m, v| m.max(v.abs())),
        };
        let sup_norm = overrides.values().fold(base_sup, |m, v| m.max(v.abs()));
        Ok(Self {
            shape,
            overrides,
            sup_norm,
        })
    }

    /// `V(n)`.
    pub fn sample(&self, n: i64) -> f64 {
        if !self.overrides.is_empty() {
            if let Some(v) = self.overrides.get(&n) {
                return *v;
            }
        }
        match &self.shape {
            Shape::Sturmian { lambda, theta, omega } => {
                let x = phase_at(n, *theta, *omega);
                if x >= theta.wrapping_neg() {
                    *lambda
                } else {
                    0.0
                }
            }
            Shape::Trig { poly, theta, omega } => poly.eval_phase(phase_at(n, *theta, *omega)),
            Shape::Table(map) => map.get(&n).copied().unwrap_or(0.0),
        }
    }

    /// `V(lo), …, V(hi)` inclusive.
    pub fn samples(&self, lo: i64, hi: i64) -> Vec<f64> {
        (lo..=hi).map(|n| self.sample(n)).collect()
    }

    /// `‖V‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// `K = max(‖V‖_∞ + 3, 4)`; the spectrum lies in `[−K+1, K−1]`.
    pub fn energy_bound(&self) -> f64 {
        (self.sup_norm + 3.0).max(4.0)
    }

    /// `(θ, ω)` for the quasi-periodic families.
    pub fn phases(&self) -> Option<(Phase, Phase)> {
        match &self.shape {
            Shape::Sturmian { theta, omega, .. } | Shape::Trig { theta, omega, .. } => Some((*theta, *omega)),
            Shape::Table(_) => None,
        }
    }

    /// Degree of the sampling trigonometric polynomial (`None` for other families).
    pub fn trig_degree(&self) -> Option<usize> {
        match &self.shape {
            Shape::Trig { poly, .. } => Some(poly.degree()),
            _ => None,
        }
    }

    /// The sampling polynomial of a trigonometric family.
    pub fn trig_polynomial(&self) -> Option<&TrigPolynomial> {
        match &self.shape {
            Shape::Trig { poly, .. } => Some(poly),
            _ => None,
        }
    }

    /// Whether this potential is a phase family `n ↦ g(nθ + ω)`.
    pub fn is_quasi_periodic(&self) -> bool {
        self.phases().is_some()
    }

    /// Same family with `(θ, ω)` replaced; site overrides are kept.
    pub fn with_phases(&self, theta: Phase, omega: Phase) -> Result<Self> {
        let shape = match &self.shape {
            Shape::Sturmian { lambda, .. } => Shape::Sturmian {
                lambda: *lambda,
                theta,
                omega,
            },
            Shape::Trig { poly, .. } => Shape::Trig {
                poly: poly.clone(),
                theta,
                omega,
            },
            Shape::Table(_) => return Err(param("potential", "phase change needs a quasi-periodic family")),
        };
        Ok(Self {
            shape,
            overrides: self.overrides.clone(),
            sup_norm: self.sup_norm,
        })
    }

    /// Same family with phase `ω` replaced.
    pub fn with_omega(&self, omega: Phase) -> Result<Self> {
        let (theta, _) = self
            .phases()
            .ok_or_else(|| param("potential", "phase change needs a quasi-periodic family"))?;
        self.with_phases(theta, omega)
    }

    /// The family at `(−θ, θ + ω)`, whose samples satisfy `V'(m) = V(1 − m)`.
    pub fn mirrored(&self) -> Result<Self> {
        if !self.overrides.is_empty() {
            return Err(param("potential", "mirroring is defined for unperturbed phase families"));
        }
        let (theta, omega) = self
            .phases()
            .ok_or_else(|| param("potential", "mirroring needs a quasi-periodic family"))?;
        self.with_phases(theta.wrapping_neg(), theta.wrapping_add(omega))
    }

    /// Sites where this potential is overridden.
    pub fn override_sites(&self) -> impl Iterator<Item = (&i64, &f64)> {
        self.overrides.iter()
    }
}

/// `nθ + ω mod 1` in 128-bit fixed point; exact modular arithmetic for every `n`.
pub fn phase_at(n: i64, theta: Phase, omega: Phase) -> Phase {
    (n as i128 as u128).wrapping_mul(theta).wrapping_add(omega)
}

/// Whether `V(−n) = V(n−1)` for all `2 ≤ n ≤ n_max`.
pub fn reflection_check(potential: &Potential, n_max: i64) -> Result<bool> {
    if n_max < 2 {
        return Err(param("n_max", "must be at least 2"));
    }
    Ok((2..=n_max).all(|n| potential.sample(-n) == potential.sample(n - 1)))
}

/// [`reflection_check`] for the Fibonacci potential with coupling `lambda`.
pub fn fibonacci_reflection_check(lambda: f64, n_max: i64) -> Result<bool> {
    let potential = PotentialSpec::Fibonacci { lambda }.compile()?;
    reflection_check(&potential, n_max)
}
