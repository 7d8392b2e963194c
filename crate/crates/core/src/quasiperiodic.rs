//! Quasi-periodic potentials `V(n) = f(nθ + ω)`: continued fractions of the
//! frequency, the weak Brjuno profile, the Herman floor for the Lyapunov
//! exponent, the large-norm sets `A_n`, growth sites `j_k` near the
//! denominators `q_k`, and the decay of the norm integrals `I_r`, `I_l`.

use std::fmt::Write as _;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{log_integral_term, EnergyGrid};
use crate::error::{param, Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::potentials::{Frequency, Potential, RationalBracket, TrigPolynomial};
use crate::transfer::{
    grid_phase, lyapunov_log_norms, step_matrix, transfer_scaled, Direction, Mat2, ScaledMat2,
};
use crate::Complex64 as C64;

/// Natural logarithm of a positive big integer, accurate to about 1 ulp.
pub fn big_ln(x: &BigInt) -> f64 {
    let bits = x.bits();
    let shift = bits.saturating_sub(64);
    let top = (x >> shift).to_f64().unwrap_or(f64::NAN);
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Continued fraction `θ = a₀ + 1/(a₁ + 1/(a₂ + …))` with convergents
/// `p_k/q_k`; `p_{−1} = 1`, `q_{−1} = 0`, `p₀ = a₀`, `q₀ = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuedFraction {
    pub integer_part: BigInt,
    /// `a₁, a₂, …` (index `k − 1` holds `a_k`).
    pub quotients: Vec<BigInt>,
    /// `p₀, p₁, …`
    pub p: Vec<BigInt>,
    /// `q₀, q₁, …`
    pub q: Vec<BigInt>,
    /// Interval known to contain `θ` (`None` for a constructed expansion).
    pub bracket: Option<RationalBracket>,
}

impl ContinuedFraction {
    /// Builds the convergents of `[a₀; a₁, a₂, …]` from given quotients (all ≥ 1).
    pub fn from_quotients(integer_part: BigInt, quotients: Vec<BigInt>) -> Result<Self> {
        if quotients.iter().any(|a| !a.is_positive()) {
            return Err(param("quotients", "partial quotients must be at least 1"));
        }
        let mut p = vec![integer_part.clone()];
        let mut q = vec![BigInt::one()];
        let (mut p_prev, mut q_prev) = (BigInt::one(), BigInt::zero());
        for a in &quotients {
            let p_next = a * p.last().unwrap() + &p_prev;
            let q_next = a * q.last().unwrap() + &q_prev;
            p_prev = p.last().unwrap().clone();
            q_prev = q.last().unwrap().clone();
            p.push(p_next);
            q.push(q_next);
        }
        Ok(Self {
            integer_part,
            quotients,
            p,
            q,
            bracket: None,
        })
    }

    /// The prefix `a_{k+1} = q_k` (starting from `a₁ = 2`), whose denominators
    /// grow doubly exponentially.
    pub fn liouville_like(levels: usize) -> Self {
        let mut quotients = Vec::with_capacity(levels);
        let (mut q_prev, mut q) = (BigInt::zero(), BigInt::one());
        for k in 0..levels {
            let a = if k == 0 { BigInt::from(2) } else { q.clone() };
            let next = &a * &q + &q_prev;
            q_prev = std::mem::replace(&mut q, next);
            quotients.push(a);
        }
        Self::from_quotients(BigInt::zero(), quotients).expect("quotients are positive")
    }

    /// Number of partial quotients `a₁, …, a_K`.
    pub fn levels(&self) -> usize {
        self.quotients.len()
    }

    /// `q_k` as a float (infinite beyond the `f64` range).
    pub fn q_f64(&self, k: usize) -> f64 {
        self.q[k].to_f64().unwrap_or(f64::INFINITY)
    }

    /// Whether the recursions `p_{k+1} = a_{k+1}p_k + p_{k−1}`, the same for `q`,
    /// strict growth of `q_k` from `k ≥ 1`, and `|θ − p_k/q_k| < 1/(q_k q_{k+1})`
    /// (at both ends of the bracket, hence at `θ`) hold in exact arithmetic.
    pub fn verify(&self) -> bool {
        let mut ok = self.p[0] == self.integer_part && self.q[0].is_one();
        for k in 0..self.levels() {
            let (pp, qp) = if k == 0 {
                (BigInt::one(), BigInt::zero())
            } else {
                (self.p[k - 1].clone(), self.q[k - 1].clone())
            };
            let a = &self.quotients[k];
            ok &= self.p[k + 1] == a * &self.p[k] + pp;
            ok &= self.q[k + 1] == a * &self.q[k] + qp;
            if k >= 1 {
                ok &= self.q[k + 1] > self.q[k];
            }
        }
        if let Some(bracket) = &self.bracket {
            for k in 0..self.levels() {
                let conv = BigRational::new(self.p[k].clone(), self.q[k].clone());
                let radius = BigRational::new(BigInt::one(), &self.q[k] * &self.q[k + 1]);
                for x in [&bracket.lo, &bracket.hi] {
                    ok &= (x - &conv).abs() < radius;
                }
            }
        }
        ok
    }

    /// CSV with header `k,a,p,q` (`a` is `a₀` on the first row).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,a,p,q\n");
        for k in 0..=self.levels() {
            let a = if k == 0 {
                &self.integer_part
            } else {
                &self.quotients[k - 1]
            };
            let _ = writeln!(out, "{k},{a},{},{}", self.p[k], self.q[k]);
        }
        out
    }
}

/// Partial quotients that the rational endpoints `lo ≤ hi` agree on, with the
/// integer part. Every real between them shares these quotients.
fn common_expansion(bracket: &RationalBracket, k_max: usize) -> (BigInt, Vec<BigInt>) {
    let mut lo = (bracket.lo.numer().clone(), bracket.lo.denom().clone());
    let mut hi = (bracket.hi.numer().clone(), bracket.hi.denom().clone());
    let a0_lo = lo.0.div_floor(&lo.1);
    let a0_hi = hi.0.div_floor(&hi.1);
    let integer_part = a0_lo.clone();
    let mut quotients = Vec::new();
    if a0_lo != a0_hi {
        return (integer_part, quotients);
    }
    lo.0 -= &a0_lo * &lo.1;
    hi.0 -= &a0_hi * &hi.1;
    while quotients.len() < k_max {
        if lo.0.is_zero() || hi.0.is_zero() {
            break;
        }
        // complete quotient x = den / rem
        let a_lo = lo.1.div_floor(&lo.0);
        let a_hi = hi.1.div_floor(&hi.0);
        if a_lo != a_hi {
            break;
        }
        let rem_lo = &lo.1 - &a_lo * &lo.0;
        let rem_hi = &hi.1 - &a_hi * &hi.0;
        lo = (rem_lo, std::mem::take(&mut lo.0));
        hi = (rem_hi, std::mem::take(&mut hi.0));
        quotients.push(a_lo);
    }
    (integer_part, quotients)
}

/// Expands `θ` to `k_max` partial quotients by exact Euclidean division on both
/// ends of a rational bracket. Symbolic inputs are re-bracketed with doubled
/// precision until the ends agree; decimal inputs that run out of digits fail
/// with the number of trustworthy quotients.
pub fn cf_expand(theta: &Frequency, k_max: usize) -> Result<ContinuedFraction> {
    let mut bits = 64 + 8 * k_max as u32;
    loop {
        let bracket = theta.bracket(bits)?;
        let (integer_part, quotients) = common_expansion(&bracket, k_max);
        let found = quotients.len();
        if found >= k_max {
            let mut cf = ContinuedFraction::from_quotients(integer_part, quotients)?;
            cf.bracket = Some(bracket);
            return Ok(cf);
        }
        if bracket.is_exact() {
            return Err(param(
                "theta",
                format!("rational value with only {found} partial quotients"),
            ));
        }
        if !theta.is_symbolic() || bits >= 1 << 20 {
            return Err(Error::PrecisionExhausted { trustworthy: found });
        }
        bits *= 2;
    }
}

/// The sequence `γ_k = log q_{k+1} / q_k` for `k ≥ 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BrjunoProfile {
    /// `k` values of the entries below.
    pub ks: Vec<usize>,
    pub gamma: Vec<f64>,
    /// `log γ_k`, finite even when `γ_k` underflows.
    pub log_gamma: Vec<f64>,
    /// `sup_{j ≥ k} γ_j` over the computed range (proxy for the limsup).
    pub trailing_max: Vec<f64>,
    /// `log q_{k+1} / log q_k` (`∞` while `q_k = 1`).
    pub jump_ratio: Vec<f64>,
    /// Levels with `q_k ≥ 16` and a jump `q_{k+1} ≥ q_k^{3/2}`.
    pub flagged: Vec<usize>,
}

/// Jump ratio `log q_{k+1}/log q_k` above which a level is flagged.
pub const JUMP_FLAG: f64 = 1.5;

/// Smallest `q_k` considered for flagging; early denominators of any
/// expansion jump by large ratios.
pub const JUMP_FLAG_MIN_Q: u32 = 16;

impl BrjunoProfile {
    /// Whether `γ_k` is strictly decreasing over the computed range.
    pub fn is_decreasing(&self) -> bool {
        self.log_gamma.windows(2).all(|w| w[1] < w[0])
    }

    /// CSV with header `k,gamma,log_gamma,trailing_max,jump_ratio`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,gamma,log_gamma,trailing_max,jump_ratio\n");
        for i in 0..self.ks.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.ks[i], self.gamma[i], self.log_gamma[i], self.trailing_max[i], self.jump_ratio[i]
            );
        }
        out
    }
}

/// `γ_k = log q_{k+1}/q_k` for `1 ≤ k < K`, its trailing maximum and the
/// levels with unusually large jumps of the denominators.
pub fn weak_brjuno_profile(cf: &ContinuedFraction) -> Result<BrjunoProfile> {
    if cf.levels() < 3 {
        return Err(param("cf", "need at least three levels"));
    }
    let ks: Vec<usize> = (1..cf.levels()).collect();
    let mut gamma = Vec::new();
    let mut log_gamma = Vec::new();
    let mut jump_ratio = Vec::new();
    let mut flagged = Vec::new();
    for &k in &ks {
        let ln_next = big_ln(&cf.q[k + 1]);
        let ln_q = big_ln(&cf.q[k]);
        let lg = ln_next.ln() - ln_q;
        log_gamma.push(lg);
        gamma.push(lg.exp());
        let ratio = if ln_q > 0.0 { ln_next / ln_q } else { f64::INFINITY };
        if cf.q[k] >= BigInt::from(JUMP_FLAG_MIN_Q) && ratio >= JUMP_FLAG {
            flagged.push(k);
        }
        jump_ratio.push(ratio);
    }
    let mut trailing_max = gamma.clone();
    for i in (0..trailing_max.len().saturating_sub(1)).rev() {
        trailing_max[i] = trailing_max[i].max(trailing_max[i + 1]);
    }
    Ok(BrjunoProfile {
        ks,
        gamma,
        log_gamma,
        trailing_max,
        jump_ratio,
        flagged,
    })
}

/// Herman's lower bound `log(|λ|/2)` for the Lyapunov exponent of `λ cos`;
/// a positivity certificate only when `|λ| > 2`.
pub fn herman_floor(lambda: f64) -> Result<f64> {
    if lambda == 0.0 || !lambda.is_finite() {
        return Err(param("lambda", format!("must be nonzero and finite, got {lambda}")));
    }
    Ok((lambda.abs() / 2.0).ln())
}

/// Herman's bound for a trigonometric polynomial of degree `d ≥ 1`:
/// `log |c_d|` with `c_d = (a_d − i b_d)/2` the top Fourier coefficient.
pub fn trig_herman_floor(poly: &TrigPolynomial) -> Result<f64> {
    let d = poly.degree();
    if d == 0 {
        return Err(param("poly", "constant sampling function has no Herman bound"));
    }
    let a = poly.cosines.get(d - 1).copied().unwrap_or(0.0);
    let b = poly.sines.get(d - 1).copied().unwrap_or(0.0);
    herman_floor(a.hypot(b))
}

fn trig_family(potential: &Potential) -> Result<(&TrigPolynomial, usize)> {
    let poly = potential
        .trig_polynomial()
        .ok_or_else(|| param("potential", "needs a trigonometric quasi-periodic family"))?;
    let d = poly.degree();
    if d == 0 {
        return Err(param("potential", "sampling polynomial must have degree at least 1"));
    }
    Ok((poly, d))
}

/// Explicit a-priori growth rate `Γ̂′ = log(2 + ‖f‖_∞ + K)`: every one-step
/// matrix on `{|Re z| ≤ K, 0 ≤ Im z ≤ 1}` has norm at most `e^{Γ̂′}`.
pub fn gamma_prime(potential: &Potential) -> f64 {
    (2.0 + potential.sup_norm() + potential.energy_bound()).ln()
}

/// `ĉ = Γ̂/(2Γ̂′ − Γ̂)`.
pub fn measure_constant(gamma_hat: f64, gamma_prime: f64) -> f64 {
    gamma_hat / (2.0 * gamma_prime - gamma_hat)
}

/// One grid point of the Lyapunov sandwich.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SandwichPoint {
    pub re: f64,
    pub im: f64,
    pub gamma: f64,
}

/// `Γ̂ ≤ γ̂(z) ≤ Γ̂′` on a grid of `{|Re z| ≤ K, 0 ≤ Im z ≤ 1}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SandwichReport {
    pub points: Vec<SandwichPoint>,
    /// Herman's bound for the sampling polynomial.
    pub floor: f64,
    /// `Γ̂ = min γ̂(z)` over the grid.
    pub lower: f64,
    pub gamma_prime: f64,
    /// Allowed shortfall of `γ̂` below the floor.
    pub tolerance: f64,
}

impl SandwichReport {
    /// `floor − tolerance ≤ γ̂(z) ≤ Γ̂′` at every point and `Γ̂ > 0`.
    pub fn holds(&self) -> bool {
        self.lower > 0.0
            && self
                .points
                .iter()
                .all(|p| p.gamma >= self.floor - self.tolerance && p.gamma <= self.gamma_prime)
    }
}

/// Lyapunov estimates on a `re_points × im_points` grid of
/// `[−K, K] × [0, 1]` (both ends included), each averaged over `samples` phases.
pub fn lyapunov_sandwich(
    potential: &Potential,
    n: i64,
    samples: usize,
    re_points: usize,
    im_points: usize,
    tolerance: f64,
) -> Result<SandwichReport> {
    let (poly, _) = trig_family(potential)?;
    if re_points < 2 || im_points < 2 {
        return Err(param("grid", "need at least two points per axis"));
    }
    let k = potential.energy_bound();
    let mut points = Vec::new();
    for i in 0..re_points {
        for j in 0..im_points {
            let re = -k + 2.0 * k * i as f64 / (re_points - 1) as f64;
            let im = j as f64 / (im_points - 1) as f64;
            let logs = lyapunov_log_norms(potential, n, C64::new(re, im), samples)?;
            let gamma = logs.iter().sum::<f64>() / (samples as f64 * n as f64);
            points.push(SandwichPoint { re, im, gamma });
        }
    }
    let lower = points.iter().map(|p| p.gamma).fold(f64::INFINITY, f64::min);
    Ok(SandwichReport {
        points,
        floor: trig_herman_floor(poly)?,
        lower,
        gamma_prime: gamma_prime(potential),
        tolerance,
    })
}

/// Sampled structure of `A_n = {ω : ‖Φ(n, z, θ, ω)‖ > exp(nγ̂/2)}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnReport {
    pub n: usize,
    pub degree: usize,
    pub omega_points: usize,
    /// Same-grid average `γ̂ = (1/n)·mean log ‖Φ(n, z, θ, ω_j)‖`.
    pub gamma_hat: f64,
    pub gamma_prime: f64,
    /// `ĉ = γ̂/(2Γ̂′ − γ̂)`.
    pub c_hat: f64,
    /// Fraction of grid phases in `A_n` (Hilbert-Schmidt norm test).
    pub measure: f64,
    /// Maximal runs of consecutive grid phases in `A_n`, circularly.
    pub interval_count: usize,
    /// Length of the longest run (points × step).
    pub longest_interval: f64,
    /// Start phases `j/M` and lengths of the runs.
    pub intervals: Vec<(f64, f64)>,
}

impl AnReport {
    /// `4nd`.
    pub fn max_intervals(&self) -> usize {
        4 * self.n * self.degree
    }

    /// Measure `≥ ĉ`, at most `4nd` runs and a run of length `≥ ĉ/(4nd)`.
    pub fn holds(&self) -> bool {
        self.measure >= self.c_hat
            && self.interval_count <= self.max_intervals()
            && self.longest_interval >= self.c_hat / self.max_intervals() as f64
    }
}

/// Samples `A_n` on the phase grid `ω_j = j/M`, `M = omega_points ≥ 16nd`.
///
/// The threshold uses the Lyapunov estimate averaged over the same grid, so the
/// measure bound `|A_n| ≥ ĉ` follows from the pointwise bound `‖Φ‖ ≤ e^{nΓ̂′}`
/// alone; membership is decided with the Hilbert-Schmidt norm.
pub fn an_measure_estimate(potential: &Potential, n: usize, z: C64, omega_points: usize) -> Result<AnReport> {
    let (_, d) = trig_family(potential)?;
    if n == 0 {
        return Err(param("n", "must be at least 1"));
    }
    if omega_points < 16 * n * d {
        return Err(param(
            "omega_points",
            format!("grid step must be ≤ 1/(16nd): need at least {} points, got {omega_points}", 16 * n * d),
        ));
    }
    let products: Vec<ScaledMat2> = (0..omega_points)
        .into_par_iter()
        .map(|j| Ok(transfer_scaled(&potential.with_omega(grid_phase(j, omega_points))?, n as i64, z)))
        .collect::<Result<_>>()?;
    let mean_log = products.iter().map(|m| m.log_norm()).sum::<f64>() / omega_points as f64;
    let gamma_hat = mean_log / n as f64;
    let gp = gamma_prime(potential);
    let c_hat = measure_constant(gamma_hat, gp);
    let threshold = n as f64 * gamma_hat / 2.0;
    let inside: Vec<bool> = products.iter().map(|m| m.log_hs_norm() > threshold).collect();
    let step = 1.0 / omega_points as f64;
    let count = inside.iter().filter(|b| **b).count();
    let intervals: Vec<(f64, f64)> = circular_runs(&inside)
        .into_iter()
        .map(|(start, len)| (start as f64 * step, len as f64 * step))
        .collect();
    Ok(AnReport {
        n,
        degree: d,
        omega_points,
        gamma_hat,
        gamma_prime: gp,
        c_hat,
        measure: count as f64 * step,
        interval_count: intervals.len(),
        longest_interval: intervals.iter().map(|r| r.1).fold(0.0, f64::max),
        intervals,
    })
}

/// Maximal runs of `true` on a circle as `(start, length)`.
fn circular_runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let m = flags.len();
    if flags.iter().all(|b| *b) {
        return vec![(0, m)];
    }
    // start scanning right after a `false` so no run wraps
    let origin = flags.iter().position(|b| !*b).unwrap_or(0) + 1;
    let mut runs = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for t in 0..m {
        let i = (origin + t) % m;
        if flags[i] {
            current = Some(match current {
                Some((s, l)) => (s, l + 1),
                None => (i, 1),
            });
        } else if let Some(run) = current.take() {
            runs.push(run);
        }
    }
    runs.extend(current);
    runs.sort_unstable();
    runs
}

/// Constants of the growth-site construction at one energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CocycleConstants {
    /// `γ̂(z)`, also used as `Γ̂`.
    pub gamma_hat: f64,
    pub gamma_prime: f64,
    pub c_hat: f64,
    pub degree: usize,
}

/// `γ̂(z)` from [`lyapunov_log_norms`] with `n` steps and `samples` phases,
/// `Γ̂′` and `ĉ`.
pub fn cocycle_constants(potential: &Potential, z: C64, n: i64, samples: usize) -> Result<CocycleConstants> {
    let (_, degree) = trig_family(potential)?;
    let logs = lyapunov_log_norms(potential, n, z, samples)?;
    let gamma_hat = logs.iter().sum::<f64>() / (samples as f64 * n as f64);
    if !(gamma_hat > 0.0) {
        return Err(Error::CheckFailed(format!(
            "Lyapunov estimate {gamma_hat} is not positive"
        )));
    }
    let gp = gamma_prime(potential);
    Ok(CocycleConstants {
        gamma_hat,
        gamma_prime: gp,
        c_hat: measure_constant(gamma_hat, gp),
        degree,
    })
}

/// The first site `j_k` where `‖Φ(j, z, θ, ω)‖` exceeds `exp(n_k γ̂/4)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthSite {
    pub k: usize,
    pub q: u64,
    /// `n_k = ⌊ĉ q_k/(4d)⌋ + 1`.
    pub n_k: usize,
    pub j_k: usize,
    /// `log ‖Φ(j_k)‖`.
    pub log_norm: f64,
    /// `n_k γ̂/4`.
    pub log_threshold: f64,
    /// `n_k Γ̂/(4Γ̂′)`, a lower bound for `j_k`.
    pub lower_bound: f64,
    /// First `j ≤ q_k + q_{k−1} − 1` with `‖Φ(n_k, z, θ, jθ + ω)‖ > exp(n_k γ̂/2)`.
    pub block_site: Option<usize>,
    /// At the block site, `‖Φ(j + n_k)‖` or `‖Φ(j)‖` exceeds `exp(n_k γ̂/4)`.
    pub dichotomy: Option<bool>,
}

impl GrowthSite {
    pub fn ratio(&self) -> f64 {
        self.j_k as f64 / self.q as f64
    }
}

/// Scans `j = 0, …, q_k + q_{k−1} − 1 + n_k` for the first
/// `‖Φ(j, z, θ, ω)‖ > exp(n_k γ̂/4)`; fails when no such `j` exists, which
/// signals an overestimated `γ̂`.
pub fn growth_site_scan(
    potential: &Potential,
    z: C64,
    cf: &ContinuedFraction,
    k: usize,
    constants: &CocycleConstants,
) -> Result<GrowthSite> {
    trig_family(potential)?;
    if k == 0 || k > cf.levels() {
        return Err(param("k", format!("must lie in 1..={}", cf.levels())));
    }
    let q = cf.q[k].to_u64().ok_or_else(|| Error::Overflow(format!("q_{k} exceeds 64 bits")))?;
    let q_prev = cf.q[k - 1].to_u64().unwrap_or(0);
    let n_k = (constants.c_hat * q as f64 / (4.0 * constants.degree as f64)).floor() as usize + 1;
    let last = (q + q_prev) as usize - 1 + n_k;
    let samples = potential.samples(1, (last + n_k) as i64);
    let log_quarter = n_k as f64 * constants.gamma_hat / 4.0;

    // log ‖Φ(j)‖ for j = 0..=last + n_k
    let mut logs = Vec::with_capacity(samples.len() + 1);
    let mut acc = ScaledMat2::identity();
    logs.push(0.0);
    for &v in &samples {
        acc.push_left(step_matrix(v, z));
        logs.push(acc.log_norm());
    }
    let j_k = (0..=last)
        .find(|&j| logs[j] > log_quarter)
        .ok_or_else(|| Error::CheckFailed(format!("no growth site up to j = {last} at level {k}")))?;

    let log_half = n_k as f64 * constants.gamma_hat / 2.0;
    let block_site = (0..(q + q_prev) as usize).find(|&j| block_log_norm(&samples[j..j + n_k], z) > log_half);
    let dichotomy = block_site.map(|j| logs[j].max(logs[j + n_k]) > log_quarter);
    Ok(GrowthSite {
        k,
        q,
        n_k,
        j_k,
        log_norm: logs[j_k],
        log_threshold: log_quarter,
        lower_bound: n_k as f64 * constants.gamma_hat / (4.0 * constants.gamma_prime),
        block_site,
        dichotomy,
    })
}

fn block_log_norm(samples: &[f64], z: C64) -> f64 {
    let mut acc = ScaledMat2::identity();
    for &v in samples {
        acc.push_left(step_matrix(v, z));
    }
    acc.log_norm()
}

/// Fitted constants of `C₁q_k ≤ j_k ≤ C₂q_k` and `‖Φ(j_k)‖ > exp(C₃q_k)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// `C₁ = min j_k/q_k`, `C₂ = max j_k/q_k`, `C₃ = min log‖Φ(j_k)‖/q_k`.
pub fn fit_growth_constants(sites: &[GrowthSite]) -> Result<GrowthConstants> {
    if sites.is_empty() {
        return Err(param("sites", "need at least one growth site"));
    }
    let ratios = sites.iter().map(GrowthSite::ratio);
    Ok(GrowthConstants {
        c1: ratios.clone().fold(f64::INFINITY, f64::min),
        c2: ratios.fold(0.0, f64::max),
        c3: sites
            .iter()
            .map(|s| s.log_norm / s.q as f64)
            .fold(f64::INFINITY, f64::min),
    })
}

/// Time `T_k = (C₂q_k)^{1/α}` paired with the radius `N_k = C₂q_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TkPoint {
    pub k: usize,
    pub q: f64,
    pub radius: f64,
    pub time: f64,
}

/// `T_k = (C₂q_k)^{1/α}` for `k = 1..=K`.
pub fn tk_sequence(cf: &ContinuedFraction, alpha: f64, c2: f64) -> Result<Vec<TkPoint>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(param("alpha", format!("must be positive, got {alpha}")));
    }
    if !(c2 > 0.0) || !c2.is_finite() {
        return Err(param("c2", format!("must be positive, got {c2}")));
    }
    Ok((1..=cf.levels())
        .map(|k| {
            let q = cf.q_f64(k);
            let radius = c2 * q;
            TkPoint {
                k,
                q,
                radius,
                time: radius.powf(1.0 / alpha),
            }
        })
        .collect())
}

/// `log I_r` and `log I_l` at one level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IrPoint {
    pub k: usize,
    pub q: f64,
    /// `N = ⌈C₂q_k⌉`.
    pub n: usize,
    pub time: f64,
    pub log_ir: f64,
    pub log_il: f64,
    /// `log I_r` of the mirrored family `(−θ, θ + ω)`.
    pub log_il_mirror: f64,
}

/// Decay of `I_r(C₂q_k, T_k)` in `q_k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IrDecayReport {
    /// `false` when Herman's floor is not positive; no assertion is made then.
    pub applicable: bool,
    pub alpha: f64,
    pub c2: f64,
    pub points: Vec<IrPoint>,
    /// Line fit of `log I_r` against `q_k`.
    pub fit: LinearFit,
    /// `C₃ = −slope/2`.
    pub c3: f64,
    /// `max |log I_l − log I_r(mirror)|`.
    pub mirror_defect: f64,
    /// `2αC₃/γ_k` at the levels of `points` (decay exponent in `T`).
    pub exponents: Vec<f64>,
}

impl IrDecayReport {
    /// Whether the exponents `2αC₃/γ_k` increase from level to level.
    pub fn exponents_increasing(&self) -> bool {
        self.exponents.windows(2).all(|w| w[1] > w[0])
    }

    /// Applicable, negative slope, `R² ≥ min_r2`, increasing exponents and a
    /// mirror defect at most `mirror_tol`.
    pub fn holds(&self, min_r2: f64, mirror_tol: f64) -> bool {
        self.applicable
            && self.c3 > 0.0
            && self.fit.r_squared >= min_r2
            && self.exponents_increasing()
            && self.mirror_defect <= mirror_tol
    }

    /// CSV with header `k,q,N,T,log_ir,log_il,log_il_mirror`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,q,N,T,log_ir,log_il,log_il_mirror\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.k, p.q, p.n, p.time, p.log_ir, p.log_il, p.log_il_mirror
            );
        }
        out
    }
}

/// Computes `log I_r(⌈C₂q_k⌉, T_k)` for `k ∈ ks` (log domain, so the
/// integrals never underflow), fits `C₃` from the decay in `q_k`, and checks
/// `I_l` against `I_r` of the mirrored family. `grid` overrides the default
/// energy step `min(1/(4T_k), 0.01)`.
pub fn ir_decay_check(
    potential: &Potential,
    cf: &ContinuedFraction,
    ks: &[usize],
    alpha: f64,
    c2: f64,
    grid: Option<EnergyGrid>,
) -> Result<IrDecayReport> {
    let (poly, _) = trig_family(potential)?;
    if ks.len() < 3 {
        return Err(param("ks", "need at least three levels"));
    }
    let applicable = trig_herman_floor(poly)? > 0.0;
    let seq = tk_sequence(cf, alpha, c2)?;
    let profile = weak_brjuno_profile(cf)?;
    let mirror = potential.mirrored()?;
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let tk = seq
            .get(k.wrapping_sub(1))
            .ok_or_else(|| param("ks", format!("level {k} outside 1..={}", cf.levels())))?;
        let time = tk.time.max(1.0);
        let n = tk.radius.ceil() as usize;
        let grid = grid.unwrap_or_else(|| EnergyGrid::for_time(time));
        points.push(IrPoint {
            k,
            q: tk.q,
            n,
            time,
            log_ir: log_integral_term(potential, n, time, Direction::Right, &grid)?,
            log_il: log_integral_term(potential, n, time, Direction::Left, &grid)?,
            log_il_mirror: log_integral_term(&mirror, n, time, Direction::Right, &grid)?,
        });
    }
    let qs: Vec<f64> = points.iter().map(|p| p.q).collect();
    let logs: Vec<f64> = points.iter().map(|p| p.log_ir).collect();
    let fit = linear_fit(&qs, &logs)?;
    let c3 = -fit.slope / 2.0;
    let mirror_defect = points
        .iter()
        .map(|p| (p.log_il - p.log_il_mirror).abs())
        .fold(0.0, f64::max);
    let exponents = ks
        .iter()
        .map(|&k| {
            let i = profile.ks.iter().position(|&j| j == k);
            i.map_or(f64::NAN, |i| 2.0 * alpha * c3 / profile.gamma[i])
        })
        .collect();
    Ok(IrDecayReport {
        applicable,
        alpha,
        c2,
        points,
        fit,
        c3,
        mirror_defect,
        exponents,
    })
}

/// `max_{1 ≤ |n| ≤ n_max} ‖Φ(n, z, θ, ω) − P Φ(−n, z, −θ, θ + ω) P‖ / ‖Φ(n)‖`,
/// with `P` the coordinate swap; norms compared in scaled form.
pub fn symmetry_defect(potential: &Potential, n_max: i64, z: C64) -> Result<f64> {
    let mirror = potential.mirrored()?;
    if n_max < 1 {
        return Err(param("n_max", "must be at least 1"));
    }
    let ns: Vec<i64> = (1..=n_max).flat_map(|n| [n, -n]).collect();
    let defects: Vec<f64> = ns
        .par_iter()
        .map(|&n| {
            let a = transfer_scaled(potential, n, z);
            let b = transfer_scaled(&mirror, -n, z);
            let rescale = (b.log_scale - a.log_scale).exp();
            let b = b.mat.swap_conjugate().scale(rescale);
            let diff = Mat2::new(
                a.mat.a11 - b.a11,
                a.mat.a12 - b.a12,
                a.mat.a21 - b.a21,
                a.mat.a22 - b.a22,
            );
            diff.operator_norm() / a.mat.operator_norm()
        })
        .collect();
    Ok(defects.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::PotentialSpec;
    use crate::tracemap::fib;

    fn amo(amplitude: f64) -> Potential {
        PotentialSpec::almost_mathieu(amplitude, Frequency::Golden, Frequency::zero())
            .compile()
            .unwrap()
    }

    #[test]
    fn golden_and_silver_expansions() {
        let cf = cf_expand(&Frequency::Golden, 40).unwrap();
        assert!(cf.integer_part.is_zero());
        assert!(cf.quotients.iter().all(|a| a.is_one()));
        for k in 0..=20 {
            assert_eq!(cf.q[k], BigInt::from(fib(k as u32).unwrap()));
        }
        assert!(cf.verify());

        let cf = cf_expand(&Frequency::silver(), 40).unwrap();
        assert!(cf.quotients.iter().all(|a| *a == BigInt::from(2)));
        assert!(cf.verify());
    }

    #[test]
    fn decimal_precision_runs_out() {
        let digits = Frequency::Decimal {
            digits: "0.618033988749".into(),
        };
        match cf_expand(&digits, 40) {
            Err(Error::PrecisionExhausted { trustworthy }) => {
                assert!((10..40).contains(&trustworthy), "{trustworthy}");
                let cf = cf_expand(&digits, trustworthy).unwrap();
                assert!(cf.quotients.iter().all(|a| a.is_one()));
            }
            other => panic!("expected precision error, got {other:?}"),
        }
        assert!(cf_expand(&Frequency::Float { value: 0.5 }, 3).is_err());
    }

    #[test]
    fn brjuno_profiles() {
        let golden = weak_brjuno_profile(&cf_expand(&Frequency::Golden, 30).unwrap()).unwrap();
        assert!(golden.is_decreasing());
        assert!(golden.gamma.iter().all(|g| *g > 0.0));
        assert!(*golden.gamma.last().unwrap() < 1e-3);
        assert!(golden.flagged.is_empty());

        let wild = ContinuedFraction::liouville_like(8);
        assert!(wild.verify());
        assert_eq!(wild.quotients[2], wild.q[2]);
        let profile = weak_brjuno_profile(&wild).unwrap();
        assert!(profile.gamma.iter().all(|g| *g >= 0.0));
        assert!(profile.log_gamma.iter().all(|g| g.is_finite()));
        assert_eq!(profile.flagged, (3..8).collect::<Vec<_>>());
    }

    #[test]
    fn herman_values() {
        assert_eq!(herman_floor(2.0).unwrap(), 0.0);
        assert!((herman_floor(4.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((herman_floor(2.0 * std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        assert!(herman_floor(0.0).is_err());
    }

    #[test]
    fn tk_examples() {
        let cf = cf_expand(&Frequency::Golden, 12).unwrap();
        let seq = tk_sequence(&cf, 1.0, 1.0).unwrap();
        assert!(seq.iter().all(|p| p.time == p.q));
        assert!(seq.windows(2).skip(1).all(|w| w[1].time > w[0].time));
        let seq = tk_sequence(&cf, 0.5, 1.0).unwrap();
        assert!(seq.iter().all(|p| (p.time - p.q * p.q).abs() < 1e-9 * p.time));
    }

    #[test]
    fn one_step_set_and_runs() {
        assert_eq!(circular_runs(&[true, false, true, true]), vec![(2, 3)]);
        assert_eq!(circular_runs(&[false, true, false, true]), vec![(1, 1), (3, 1)]);
        assert_eq!(circular_runs(&[true; 3]), vec![(0, 3)]);

        let v = amo(4.0);
        let report = an_measure_estimate(&v, 1, C64::new(0.0, 0.0), 64).unwrap();
        // ‖T‖_HS² = v² + 2 with v = 4cos(2π(θ + ω)); compare with the closed form
        let theta = Frequency::Golden.to_f64().unwrap();
        let closed: usize = (0..64)
            .filter(|j| {
                let x = 4.0 * (std::f64::consts::TAU * (theta + *j as f64 / 64.0)).cos();
                0.5 * (x * x + 2.0).ln() > report.gamma_hat / 2.0
            })
            .count();
        assert_eq!((report.measure * 64.0).round() as usize, closed);
        assert!(report.interval_count <= 4);
        assert!(report.holds());
        assert!(an_measure_estimate(&v, 10, C64::new(0.0, 0.0), 100).is_err());
    }

    #[test]
    fn an_sets_for_longer_blocks() {
        let v = amo(4.0);
        for n in [50, 100] {
            let report = an_measure_estimate(&v, n, C64::new(0.0, 0.0), 16 * n).unwrap();
            assert!((0.0..=1.0).contains(&report.measure));
            assert!(report.holds(), "{report:?}");
        }
    }

    #[test]
    fn sandwich_and_growth_sites() {
        let v = amo(4.0);
        let sandwich = lyapunov_sandwich(&v, 400, 40, 5, 3, 0.05).unwrap();
        assert!(sandwich.holds(), "{sandwich:?}");

        let z = C64::new(0.0, 0.1);
        let cf = cf_expand(&Frequency::Golden, 14).unwrap();
        let constants = cocycle_constants(&v, z, 1000, 100).unwrap();
        let sites: Vec<GrowthSite> = (8..=12)
            .map(|k| growth_site_scan(&v, z, &cf, k, &constants).unwrap())
            .collect();
        for site in &sites {
            assert!(site.j_k as f64 >= site.lower_bound);
            if let Some(ok) = site.dichotomy {
                assert!(ok);
            }
        }
        let fitted = fit_growth_constants(&sites).unwrap();
        assert!(fitted.c1 > 0.0 && fitted.c1 <= fitted.c2 && fitted.c3 > 0.0);
    }

    #[test]
    fn mirror_identity() {
        let v = amo(4.0);
        assert!(symmetry_defect(&v, 1000, C64::new(0.3, 0.05)).unwrap() <= 1e-12);
    }

    #[test]
    fn ir_decay_for_cosine_families() {
        let cf = cf_expand(&Frequency::Golden, 12).unwrap();
        let grid = Some(EnergyGrid { step: 0.01 });
        let report = ir_decay_check(&amo(4.0), &cf, &[5, 6, 7, 8, 9], 1.0, 1.0, grid).unwrap();
        assert!(report.applicable);
        assert!(report.c3 > 0.0, "{report:?}");
        assert!(report.mirror_defect <= 1e-12);
        let weak = ir_decay_check(&amo(1.0), &cf, &[5, 6, 7], 1.0, 1.0, grid).unwrap();
        assert!(!weak.applicable);
    }
}
