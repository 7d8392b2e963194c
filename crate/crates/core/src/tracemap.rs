//! The Fibonacci trace map `x_{k+1} = 2 x_k x_{k−1} − x_{k−2}` for the
//! half-traces `x_k(z) = Tr Φ(F_k, z)/2` of the Fibonacci potential.
//!
//! Orbits are seeded with `(x₋₁, x₀, x₁) = (1, z/2, (z−λ)/2)` and computed in
//! 1216-bit arithmetic, so the conserved quantity
//! `x_{k+1}² + x_k² + x_{k−1}² − 2x_{k+1}x_kx_{k−1} − 1 = λ²/4`
//! can be checked after the heavy cancellation it involves. Real band
//! structures and Koebe-type distance checks work in double precision.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{param, Error, Result};
use crate::hp::BigComplex;
use crate::potentials::PotentialSpec;

type C64 = Complex64;

/// Orbit entries with `|x_k|` above this value are reported by log-magnitude only.
pub const OVERFLOW_GUARD: f64 = 1e150;
/// Default iteration depth for escape detection.
pub const DEFAULT_K_MAX: usize = 60;
/// Bisection tolerance (absolute) for zeros, critical points and band edges.
pub const BISECTION_TOL: f64 = 1e-12;

/// Inverse-free golden ratio `η = (√5 + 1)/2`.
pub fn golden_ratio() -> f64 {
    (5f64.sqrt() + 1.0) / 2.0
}

/// Fibonacci numbers with `F₀ = F₁ = 1`.
pub fn fib(k: u32) -> Result<u64> {
    let (mut a, mut b) = (1u64, 1u64);
    for _ in 0..k {
        let next = a
            .checked_add(b)
            .ok_or_else(|| Error::Overflow(format!("F_{k} exceeds 64 bits")))?;
        a = b;
        b = next;
    }
    Ok(a)
}

/// `(x₋₁, x₀, x₁) = (1, z/2, (z − λ)/2)`.
pub fn seed(z: C64, lambda: f64) -> (C64, C64, C64) {
    (C64::new(1.0, 0.0), z / 2.0, (z - lambda) / 2.0)
}

/// `x_{k+1}² + x_k² + x_{k−1}² − 2x_{k+1}x_kx_{k−1} − 1 − λ²/4` in `f64`.
pub fn invariant_residual(next: C64, cur: C64, prev: C64, lambda: f64) -> C64 {
    next * next + cur * cur + prev * prev - 2.0 * next * cur * prev - 1.0 - lambda * lambda / 4.0
}

/// `λ₀(δ) = √(12(1+δ)² + 8(1+δ)³ + 4)`.
pub fn lambda0(delta: f64) -> f64 {
    let a = 1.0 + delta;
    (12.0 * a * a + 8.0 * a * a * a + 4.0).sqrt()
}

/// `ξ(λ) = (λ − 4 + √((λ−4)² − 12))/2`, defined for `λ > 4 + √3`.
pub fn xi(lambda: f64) -> Result<f64> {
    let disc = (lambda - 4.0).powi(2) - 12.0;
    if !(lambda > 4.0 + 3f64.sqrt()) || disc <= 0.0 {
        return Err(param("lambda", format!("ξ(λ) needs λ > 4 + √3, got {lambda}")));
    }
    Ok((lambda - 4.0 + disc.sqrt()) / 2.0)
}

/// `p(λ) = 6 log η / log ξ(λ)`.
pub fn p_kkl(lambda: f64) -> Result<f64> {
    let x = xi(lambda)?;
    if x <= 1.0 {
        return Err(param("lambda", "p(λ) needs ξ(λ) > 1"));
    }
    Ok(6.0 * golden_ratio().ln() / x.ln())
}

/// `α(λ) = 2 log η / log ξ(λ)` for `λ ≥ 8`.
pub fn alpha(lambda: f64) -> Result<f64> {
    if !(lambda >= 8.0) {
        return Err(param("lambda", format!("α(λ) needs λ ≥ 8, got {lambda}")));
    }
    let a = 2.0 * golden_ratio().ln() / xi(lambda)?.ln();
    let p = p_kkl(lambda)?;
    if !(a < p) {
        return Err(Error::CheckFailed(format!("α({lambda}) = {a} is not below p = {p}")));
    }
    Ok(a)
}

/// `γ(λ) = log ξ(λ) / (2(1+ν) log η)`.
pub fn gamma_exponent(lambda: f64, nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(param("nu", "must be positive"));
    }
    Ok(xi(lambda)?.ln() / (2.0 * (1.0 + nu) * golden_ratio().ln()))
}

/// Outcome of escape detection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Escape {
    /// `|x_{N−1}| ≤ 1+δ < |x_N|, |x_{N+1}|` holds at this `N`.
    Escaped(usize),
    /// No escape and the orbit ends inside `{|x| ≤ 1+δ}`.
    Bounded,
    /// No escape, but the last value lies above `1+δ`, so one more step
    /// could still meet the escape condition.
    Undetermined,
}

impl Escape {
    pub fn index(&self) -> Option<usize> {
        match self {
            Escape::Escaped(n) => Some(*n),
            _ => None,
        }
    }
}

/// Post-escape growth checks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthCheck {
    /// `n` with `|x_{N+n}| < (1+δ)^{F_n}`.
    pub expgrowth_violations: Vec<usize>,
    /// `n ≥ N` with `|x_{n+2}| ≤ |x_{n+1} x_n|`.
    pub supmult_violations: Vec<usize>,
    /// Number of indices checked for each property.
    pub checked: usize,
}

impl GrowthCheck {
    pub fn passed(&self) -> bool {
        self.expgrowth_violations.is_empty() && self.supmult_violations.is_empty()
    }
}

/// A trace-map orbit `x₋₁, x₀, …, x_{k_max}`.
#[derive(Clone, Debug)]
pub struct TraceOrbit {
    pub lambda: f64,
    pub z: C64,
    pub delta: f64,
    values: Vec<BigComplex>,
    /// Escape classification.
    pub escape: Escape,
    /// First index `k` with `|x_k| > 10¹⁵⁰`.
    pub saturated_at: Option<usize>,
    /// Growth checks after escape.
    pub growth: Option<GrowthCheck>,
}

impl TraceOrbit {
    /// Largest computed index.
    pub fn k_max(&self) -> usize {
        self.values.len() - 2
    }

    fn slot(&self, k: i64) -> &BigComplex {
        &self.values[(k + 1) as usize]
    }

    /// `x_k` in double precision, or `None` past the overflow guard.
    pub fn value(&self, k: i64) -> Option<C64> {
        match self.saturated_at {
            Some(s) if k >= s as i64 => None,
            _ => Some(self.slot(k).to_c64()),
        }
    }

    /// Principal complex logarithm of `x_k`, available at every index.
    pub fn ln_value(&self, k: i64) -> C64 {
        self.slot(k).ln()
    }

    /// `log |x_k|`.
    pub fn ln_abs(&self, k: i64) -> f64 {
        self.slot(k).ln_abs()
    }

    /// Invariant residuals `|I(x_{k+1}, x_k, x_{k−1}) − λ²/4|` for every
    /// `k ≥ 0` whose triple lies before the overflow guard; evaluated in
    /// 1216-bit arithmetic and rounded at the end.
    pub fn invariant_residuals(&self) -> Vec<(usize, f64)> {
        let limit = self.saturated_at.unwrap_or(self.k_max() + 1);
        let target = BigComplex::from_c64(C64::new(1.0 + self.lambda * self.lambda / 4.0, 0.0));
        let mut out = Vec::new();
        for k in 0..self.k_max() {
            if k + 1 >= limit {
                break;
            }
            let next = self.slot(k as i64 + 1);
            let cur = self.slot(k as i64);
            let prev = self.slot(k as i64 - 1);
            let sum = next
                .mul(next)
                .add(&cur.mul(cur))
                .add(&prev.mul(prev))
                .sub(&next.mul(cur).mul(prev).scale2(1))
                .sub(&target);
            out.push((k, sum.abs_f64()));
        }
        out
    }

    /// CSV with header `k,re,im,log_abs`; `re`/`im` are empty past the guard.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,re,im,log_abs\n");
        for k in -1..=self.k_max() as i64 {
            match self.value(k) {
                Some(v) => {
                    let _ = writeln!(out, "{k},{},{},{}", v.re, v.im, self.ln_abs(k));
                }
                None => {
                    let _ = writeln!(out, "{k},,,{}", self.ln_abs(k));
                }
            }
        }
        out
    }
}

/// Iterates the trace map through index `k_max`, detecting escape with
/// threshold `1 + δ` and verifying post-escape growth.
pub fn iterate(z: C64, lambda: f64, k_max: usize, delta: f64) -> Result<TraceOrbit> {
    if k_max < 1 {
        return Err(param("k_max", "must be at least 1"));
    }
    if !(delta >= 0.0) {
        return Err(param("delta", "must be nonnegative"));
    }
    if !(z.re.is_finite() && z.im.is_finite() && lambda.is_finite()) {
        return Err(param("z", "energy and coupling must be finite"));
    }
    let (xm1, x0, x1) = seed(z, lambda);
    let mut values = vec![BigComplex::from_c64(xm1), BigComplex::from_c64(x0), BigComplex::from_c64(x1)];
    for k in 1..k_max {
        let cur = &values[k + 1];
        let prev = &values[k];
        let prev2 = &values[k - 1];
        let next = cur.mul(prev).scale2(1).sub(prev2);
        values.push(next);
    }
    let guard = OVERFLOW_GUARD.ln();
    let logs: Vec<f64> = values.iter().map(|v| v.ln_abs()).collect();
    let saturated_at = logs.iter().skip(1).position(|l| *l > guard);
    let threshold = (1.0 + delta).ln();
    let above = |k: usize| logs[k + 1] > threshold;
    let mut escape = None;
    for n in 0..k_max {
        // logs[n] holds x_{n−1}
        let before = logs[n] <= threshold;
        if before && above(n) && above(n + 1) {
            escape = Some(n);
            break;
        }
    }
    let escape = match escape {
        Some(n) => Escape::Escaped(n),
        None if logs[k_max + 1] > threshold => Escape::Undetermined,
        None => Escape::Bounded,
    };
    let mut orbit = TraceOrbit {
        lambda,
        z,
        delta,
        values,
        escape,
        saturated_at,
        growth: None,
    };
    if let Escape::Escaped(n) = escape {
        orbit.growth = Some(growth_check(&orbit, n)?);
    }
    Ok(orbit)
}

fn growth_check(orbit: &TraceOrbit, n_escape: usize) -> Result<GrowthCheck> {
    let k_max = orbit.k_max();
    let log_one_delta = (1.0 + orbit.delta).ln();
    let mut expgrowth = Vec::new();
    let mut supmult = Vec::new();
    for n in 0..=(k_max - n_escape) {
        let bound = fib(n as u32)? as f64 * log_one_delta;
        if orbit.ln_abs((n_escape + n) as i64) < bound {
            expgrowth.push(n);
        }
    }
    for n in n_escape..k_max.saturating_sub(1) {
        let lhs = orbit.ln_abs(n as i64 + 2);
        let rhs = orbit.ln_abs(n as i64 + 1) + orbit.ln_abs(n as i64);
        if !(lhs > rhs) {
            supmult.push(n);
        }
    }
    Ok(GrowthCheck {
        expgrowth_violations: expgrowth,
        supmult_violations: supmult,
        checked: k_max - n_escape + 1,
    })
}

/// Escape classification with `k_max = 60`.
pub fn escape_index(z: C64, lambda: f64, delta: f64) -> Result<Escape> {
    Ok(iterate(z, lambda, DEFAULT_K_MAX, delta)?.escape)
}

/// `x₋₁, …, x_k` and their `z`-derivatives in double precision.
pub fn trace_with_derivative(k: usize, lambda: f64, z: C64) -> (Vec<C64>, Vec<C64>) {
    let (xm1, x0, x1) = seed(z, lambda);
    let mut x = vec![xm1, x0, x1];
    let mut dx = vec![C64::new(0.0, 0.0), C64::new(0.5, 0.0), C64::new(0.5, 0.0)];
    for j in 1..k.max(1) {
        let (c, p, p2) = (x[j + 1], x[j], x[j - 1]);
        let (dc, dp, dp2) = (dx[j + 1], dx[j], dx[j - 1]);
        x.push(2.0 * c * p - p2);
        dx.push(2.0 * (dc * p + c * dp) - dp2);
    }
    x.truncate(k + 2);
    dx.truncate(k + 2);
    (x, dx)
}

/// `(x_k(z), x_k'(z))` in double precision.
pub fn trace_at(k: usize, lambda: f64, z: C64) -> (C64, C64) {
    let (x, dx) = trace_with_derivative(k, lambda, z);
    (x[k + 1], dx[k + 1])
}

/// Magnitude above which `real_trace` continues in sign/log form.
const LOG_SWITCH: f64 = 1e100;

/// `(x_k(e), x_k'(e))` for real `e`, never `NaN`.
///
/// Once the orbit grows past `LOG_SWITCH` each value is carried as a sign,
/// `ln|x_j|` and `r_j = x_j'/x_j`. With `t = x_{j−2}/(2x_jx_{j−1})` the
/// recursion reads `x_{j+1} = 2x_jx_{j−1}(1 − t)` and
/// `r_{j+1} = (r_j + r_{j−1} − t r_{j−2})/(1 − t)`, which is exact, so values
/// beyond the `f64` range come back as signed infinities.
fn real_trace(k: usize, lambda: f64, e: f64) -> (f64, f64) {
    let mut x = [1.0, e / 2.0, (e - lambda) / 2.0];
    let mut dx = [0.0, 0.5, 0.5];
    let mut j = 1;
    while j < k {
        if x.iter().any(|v| v.abs() > LOG_SWITCH) && x[1] != 0.0 && x[2] != 0.0 {
            break;
        }
        let next = 2.0 * x[2] * x[1] - x[0];
        let dnext = 2.0 * (dx[2] * x[1] + x[2] * dx[1]) - dx[0];
        x = [x[1], x[2], next];
        dx = [dx[1], dx[2], dnext];
        j += 1;
    }
    if j >= k {
        return (x[2], dx[2]);
    }
    let ratio = |v: f64, d: f64| if v == 0.0 { 0.0 } else { d / v };
    let mut sign = x.map(f64::signum);
    let mut log = x.map(|v| v.abs().ln());
    let mut r = [ratio(x[0], dx[0]), ratio(x[1], dx[1]), ratio(x[2], dx[2])];
    while j < k {
        let (lead_sign, lead_log) = (sign[2] * sign[1], std::f64::consts::LN_2 + log[2] + log[1]);
        let t = sign[0] * lead_sign * (log[0] - lead_log).exp();
        let factor = 1.0 - t;
        let next_r = (r[2] + r[1] - t * r[0]) / factor;
        sign = [sign[1], sign[2], lead_sign * factor.signum()];
        log = [log[1], log[2], lead_log + factor.abs().ln()];
        r = [r[1], r[2], next_r];
        j += 1;
    }
    let value = sign[2] * log[2].exp();
    let slope = if r[2] == 0.0 {
        0.0
    } else {
        sign[2] * r[2].signum() * (log[2] + r[2].abs().ln()).exp()
    };
    (value, slope)
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Structural(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..200 {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Eigenvalues of the Dirichlet block `V(1), …, V(len)` of the Fibonacci
/// operator (zeros of `u₀(len + 1)`), by Sturm-sequence bisection.
fn dirichlet_eigenvalues(lambda: f64, len: usize) -> Result<Vec<f64>> {
    if len == 0 {
        return Ok(Vec::new());
    }
    let potential = PotentialSpec::Fibonacci { lambda }.compile()?;
    let diag = potential.samples(1, len as i64);
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut d = 1.0;
        for (i, v) in diag.iter().enumerate() {
            d = if i == 0 { v - x } else { v - x - 1.0 / d };
            if d == 0.0 {
                d = -f64::EPSILON;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let (lo0, hi0) = (-2.5 - lambda.abs(), lambda.abs() + 2.5);
    let eig: Vec<f64> = (0..len)
        .map(|j| {
            let (mut lo, mut hi) = (lo0, hi0);
            while hi - lo > 1e-15 * (1.0 + lo.abs().max(hi.abs())) {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if count_below(mid) > j {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect();
    Ok(eig)
}

/// Real slice of `σ_k^δ = {z : |x_k(z)| ≤ 1+δ}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandSet {
    pub k: usize,
    pub lambda: f64,
    pub delta: f64,
    /// Disjoint closed intervals ordered by left endpoint.
    pub bands: Vec<(f64, f64)>,
    /// The zero of `x_k` inside each band.
    pub zeros: Vec<f64>,
    /// The critical point of `x_k` in each gap between consecutive bands.
    pub critical_points: Vec<f64>,
}

impl BandSet {
    /// CSV with header `k,j,left,right,zero`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,j,left,right,zero\n");
        for (j, ((l, r), z)) in self.bands.iter().zip(&self.zeros).enumerate() {
            let _ = writeln!(out, "{},{j},{l},{r},{z}", self.k);
        }
        out
    }

    /// Whether `e` lies in one of the bands.
    pub fn contains(&self, e: f64) -> bool {
        let idx = self.bands.partition_point(|(l, _)| *l <= e);
        idx > 0 && e <= self.bands[idx - 1].1
    }
}

/// The `F_k` bands of `σ_k^δ ∩ ℝ`, each with its zero of `x_k`.
///
/// Zeros are bracketed by the Dirichlet eigenvalues of the period-`F_k`
/// block (one per closed gap), critical points by bisection on `x_k'`
/// between consecutive zeros, and band edges by bisection on `|x_k| − (1+δ)`.
pub fn band_structure(k: usize, lambda: f64, delta: f64) -> Result<BandSet> {
    if k < 1 {
        return Err(param("k", "must be at least 1"));
    }
    if !(delta >= 0.0) {
        return Err(param("delta", "must be nonnegative"));
    }
    if !(lambda > lambda0(delta)) {
        return Err(param(
            "lambda",
            format!("band structure needs λ > λ₀(δ) = {}, got {lambda}", lambda0(delta)),
        ));
    }
    if k > 24 {
        return Err(param("k", "band computations are limited to k ≤ 24"));
    }
    let q = fib(k as u32)? as usize;
    let level = 1.0 + delta;
    let value = |e: f64| real_trace(k, lambda, e).0;
    let slope = |e: f64| real_trace(k, lambda, e).1;
    let mut fences = vec![-3.0 - lambda.abs()];
    fences.extend(dirichlet_eigenvalues(lambda, q - 1)?);
    fences.push(lambda.abs() + 3.0);
    let zeros: Vec<f64> = (0..q)
        .into_par_iter()
        .map(|j| bisect(fences[j], fences[j + 1], value))
        .collect::<Result<_>>()?;
    let critical_points: Vec<f64> = (0..q.saturating_sub(1))
        .into_par_iter()
        .map(|j| bisect(zeros[j], zeros[j + 1], slope))
        .collect::<Result<_>>()?;
    for (j, c) in critical_points.iter().enumerate() {
        let v = value(*c).abs();
        if !(v > level) {
            return Err(Error::Structural(format!(
                "|x_{k}| = {v} ≤ 1+δ at the critical point between zeros {j} and {}",
                j + 1
            )));
        }
    }
    let edge = |e: f64| value(e).abs() - level;
    let outward = |zero: f64, dir: f64| -> Result<f64> {
        let mut step = 1e-3;
        while edge(zero + dir * step) <= 0.0 {
            step *= 2.0;
            if step > 1e6 {
                return Err(Error::Structural("outer band edge not found".into()));
            }
        }
        Ok(zero + dir * step)
    };
    let bands: Vec<(f64, f64)> = (0..q)
        .into_par_iter()
        .map(|j| {
            let left_fence = if j == 0 { outward(zeros[0], -1.0)? } else { critical_points[j - 1] };
            let right_fence = if j + 1 == q {
                outward(zeros[q - 1], 1.0)?
            } else {
                critical_points[j]
            };
            let left = bisect(left_fence, zeros[j], edge)?;
            let right = bisect(zeros[j], right_fence, edge)?;
            Ok((left, right))
        })
        .collect::<Result<_>>()?;
    for w in bands.windows(2) {
        if !(w[0].1 < w[1].0) {
            return Err(Error::Structural(format!("bands {:?} and {:?} overlap", w[0], w[1])));
        }
    }
    if bands.len() != q {
        return Err(Error::Structural(format!("found {} bands, expected F_{k} = {q}", bands.len())));
    }
    Ok(BandSet {
        k,
        lambda,
        delta,
        bands,
        zeros,
        critical_points,
    })
}

fn in_level_set(k: usize, lambda: f64, delta: f64, e: f64) -> bool {
    real_trace(k, lambda, e).0.abs() <= 1.0 + delta
}

/// Number of points of an `points`-point grid on `[lo, hi]` lying in
/// `σ_k^δ ∩ σ_{k+1}^δ ∩ σ_{k+2}^δ` (expected: none for `λ > λ₀(δ)`).
pub fn triple_intersection_count(k: usize, lambda: f64, delta: f64, lo: f64, hi: f64, points: usize) -> usize {
    grid(lo, hi, points)
        .filter(|&e| (0..3).all(|j| in_level_set(k + j, lambda, delta, e)))
        .count()
}

/// Number of grid points violating
/// `σ_{k+1}^δ ∪ σ_k^δ ⊆ σ_k^δ ∪ σ_{k−1}^δ` on the real line.
pub fn inclusion_chain_violations(k: usize, lambda: f64, delta: f64, lo: f64, hi: f64, points: usize) -> usize {
    assert!(k >= 1, "inclusion chain needs k ≥ 1");
    grid(lo, hi, points)
        .filter(|&e| {
            let upper = in_level_set(k + 1, lambda, delta, e) || in_level_set(k, lambda, delta, e);
            let lower = in_level_set(k, lambda, delta, e) || in_level_set(k - 1, lambda, delta, e);
            upper && !lower
        })
        .count()
}

fn grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    let h = if points > 1 { (hi - lo) / (points - 1) as f64 } else { 0.0 };
    (0..points).map(move |i| lo + h * i as f64)
}

/// `|x_k'|` at the zeros of `x_k` against `ξ^{k/2}` and `(2λ+22)^k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub k: usize,
    pub lambda: f64,
    pub min_abs_derivative: f64,
    pub max_abs_derivative: f64,
    /// `ξ(λ)^{k/2}`.
    pub lower_bound: f64,
    /// Smallest `C` with `|x_k'| ≤ C (2λ+22)^k` at every zero.
    pub upper_constant: f64,
}

/// Evaluates `x_k'` at every zero of `x_k` and enforces `|x_k'| ≥ ξ(λ)^{k/2}`.
pub fn derivative_check(k: usize, lambda: f64) -> Result<DerivativeReport> {
    if !(lambda > 8.0) {
        return Err(param("lambda", "derivative bounds need λ > 8"));
    }
    if k < 3 {
        return Err(param("k", "derivative bounds need k ≥ 3"));
    }
    let bands = band_structure(k, lambda, 0.0)?;
    let derivs: Vec<f64> = bands
        .zeros
        .iter()
        .map(|z| trace_at(k, lambda, C64::new(*z, 0.0)).1.norm())
        .collect();
    let min = derivs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = derivs.iter().cloned().fold(0.0, f64::max);
    let lower = xi(lambda)?.powf(k as f64 / 2.0);
    if !(min >= lower) {
        return Err(Error::CheckFailed(format!(
            "min |x_{k}'| = {min} below ξ^(k/2) = {lower} at λ = {lambda}"
        )));
    }
    Ok(DerivativeReport {
        k,
        lambda,
        min_abs_derivative: min,
        max_abs_derivative: max,
        lower_bound: lower,
        upper_constant: max / (2.0 * lambda + 22.0).powi(k as i32),
    })
}

/// Boundary distances of the components of `{|x_k| ≤ 1+δ}` around each zero.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KoebeLevel {
    pub k: usize,
    /// Smallest and largest boundary distance per zero.
    pub per_zero: Vec<(f64, f64)>,
    pub min_distance: f64,
    pub max_distance: f64,
    /// Largest `|ρ(φ) − ρ(−φ)|` over sampled directions.
    pub symmetry_defect: f64,
    /// Largest `|Im|` over sampled boundary points.
    pub max_imag: f64,
}

fn boundary_distance(k: usize, lambda: f64, level: f64, zero: f64, slope: f64, phi: f64) -> Result<f64> {
    let dir = C64::from_polar(1.0, phi);
    let outside = |r: f64| trace_at(k, lambda, C64::new(zero, 0.0) + dir * r).0.norm() > level;
    let mut r = 1e-3 * level / slope.max(1e-300);
    if outside(r) {
        return Err(Error::Structural(format!("start radius {r} already outside near zero {zero}")));
    }
    let mut inside = r;
    loop {
        r *= 1.1;
        if outside(r) {
            break;
        }
        inside = r;
        if r > 100.0 {
            return Err(Error::Structural(format!("no boundary found from zero {zero}")));
        }
    }
    let (mut lo, mut hi) = (inside, r);
    for _ in 0..100 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if outside(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Samples the boundary of the component of `{|x_k| ≤ 1+δ}` around each zero of
/// `x_k` along `samples` directions in the upper half-plane (and their mirror
/// images), by radial marching followed by bisection.
pub fn koebe_level(k: usize, lambda: f64, delta: f64, samples: usize) -> Result<KoebeLevel> {
    if samples == 0 {
        return Err(param("samples", "must be positive"));
    }
    let bands = band_structure(k, lambda, delta)?;
    let level = 1.0 + delta;
    let rows: Vec<(f64, f64, f64, f64)> = bands
        .zeros
        .par_iter()
        .map(|&zero| {
            let slope = trace_at(k, lambda, C64::new(zero, 0.0)).1.norm();
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            let mut defect: f64 = 0.0;
            let mut imag: f64 = 0.0;
            for i in 0..samples {
                let phi = std::f64::consts::PI * (i as f64 + 0.5) / samples as f64;
                let up = boundary_distance(k, lambda, level, zero, slope, phi)?;
                let down = boundary_distance(k, lambda, level, zero, slope, -phi)?;
                lo = lo.min(up).min(down);
                hi = hi.max(up).max(down);
                defect = defect.max((up - down).abs());
                imag = imag.max(up * phi.sin());
            }
            Ok((lo, hi, defect, imag))
        })
        .collect::<Result<_>>()?;
    Ok(KoebeLevel {
        k,
        per_zero: rows.iter().map(|r| (r.0, r.1)).collect(),
        min_distance: rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        max_distance: rows.iter().map(|r| r.1).fold(0.0, f64::max),
        symmetry_defect: rows.iter().map(|r| r.2).fold(0.0, f64::max),
        max_imag: rows.iter().map(|r| r.3).fold(0.0, f64::max),
    })
}

/// Annulus check across levels with constants frozen at the first level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KoebeReport {
    pub lambda: f64,
    pub delta: f64,
    /// `c_δ` with `r_k = c_δ (2λ+22)^{−k}`.
    pub c_delta: f64,
    /// `d_δ` with `R_k = d_δ ξ(λ)^{−k/2}`.
    pub d_delta: f64,
    pub levels: Vec<KoebeLevel>,
    /// `(k, r_k, R_k)` per level.
    pub radii: Vec<(usize, f64, f64)>,
    /// Levels whose sampled distances leave `[r_k, R_k]`.
    pub violations: Vec<usize>,
    pub max_symmetry_defect: f64,
}

impl KoebeReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Fits `c_δ`, `d_δ` at the smallest `k` and checks every later level.
pub fn koebe_annulus_check(ks: &[usize], lambda: f64, delta: f64, samples: usize) -> Result<KoebeReport> {
    if !(lambda > lambda0(2.0 * delta)) {
        return Err(param("lambda", format!("needs λ > λ₀(2δ) = {}", lambda0(2.0 * delta))));
    }
    let first = *ks.iter().min().ok_or_else(|| param("ks", "need at least one level"))?;
    if first < 3 {
        return Err(param("ks", "levels must satisfy k ≥ 3"));
    }
    let x = xi(lambda)?;
    let small = |k: usize| (2.0 * lambda + 22.0).powi(-(k as i32));
    let large = |k: usize| x.powf(-(k as f64) / 2.0);
    let mut sorted = ks.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let levels: Vec<KoebeLevel> = sorted
        .iter()
        .map(|&k| koebe_level(k, lambda, delta, samples))
        .collect::<Result<_>>()?;
    let c_delta = levels[0].min_distance / small(first);
    let d_delta = levels[0].max_distance / large(first);
    let mut radii = Vec::new();
    let mut violations = Vec::new();
    for lvl in &levels {
        let r = c_delta * small(lvl.k);
        let big_r = d_delta * large(lvl.k);
        radii.push((lvl.k, r, big_r));
        // relative slack absorbs the rounding of the fitted equality at the first level
        if lvl.min_distance < r * (1.0 - 1e-12) || lvl.max_distance > big_r * (1.0 + 1e-12) || lvl.max_imag > big_r * (1.0 + 1e-12) {
            violations.push(lvl.k);
        }
    }
    Ok(KoebeReport {
        lambda,
        delta,
        c_delta,
        d_delta,
        max_symmetry_defect: levels.iter().map(|l| l.symmetry_defect).fold(0.0, f64::max),
        levels,
        radii,
        violations,
    })
}

/// The level `k(T)` and radius `N(T) = F_{k(T)+⌊√k(T)⌋}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Schedule {
    pub time: f64,
    pub k: u32,
    pub n: u64,
    pub gamma: f64,
}

/// `k(T)` with `F_{k−1}^γ/d_δ ≤ T < F_k^γ/d_δ`, `γ = γ(λ, ν)`, and
/// `N(T) = F_{k+⌊√k⌋}`.
pub fn schedule(time: f64, lambda: f64, delta: f64, nu: f64, d_delta: f64) -> Result<Schedule> {
    if !(time > 1.0) {
        return Err(param("T", "must exceed 1"));
    }
    if !(lambda >= 8.0) {
        return Err(param("lambda", "schedule needs λ ≥ 8"));
    }
    if !(lambda > lambda0(2.0 * delta)) {
        return Err(param("delta", "schedule needs λ > λ₀(2δ)"));
    }
    if !(d_delta > 0.0) {
        return Err(param("d_delta", "must be positive"));
    }
    let gamma = gamma_exponent(lambda, nu)?;
    let target = time * d_delta;
    if target < 1.0 {
        return Err(param("T", format!("T·d_δ = {target} < 1 has no level k(T)")));
    }
    let mut k = 2u32;
    loop {
        let lo = (fib(k - 1)? as f64).powf(gamma);
        let hi = (fib(k)? as f64).powf(gamma);
        if lo <= target && target < hi {
            break;
        }
        k += 1;
        if k > 80 {
            return Err(Error::Overflow("k(T) beyond F_80".into()));
        }
    }
    let n = fib(k + (k as f64).sqrt().floor() as u32)?;
    Ok(Schedule { time, k, n, gamma })
}

/// `max_T N(T) / T^{1/γ + ν̃}` over the given times.
pub fn schedule_growth_constant(times: &[f64], lambda: f64, delta: f64, nu: f64, nu_tilde: f64, d_delta: f64) -> Result<f64> {
    let mut best: f64 = 0.0;
    for &t in times {
        let s = schedule(t, lambda, delta, nu, d_delta)?;
        best = best.max(s.n as f64 / t.powf(1.0 / s.gamma + nu_tilde));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::transfer_scaled;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn fibonacci_numbers() {
        assert_eq!(fib(0).unwrap(), 1);
        assert_eq!(fib(1).unwrap(), 1);
        assert_eq!(fib(5).unwrap(), 8);
        assert_eq!(fib(10).unwrap(), 89);
        assert!(fib(91).is_ok());
        assert!(fib(93).is_err());
    }

    #[test]
    fn seeds() {
        assert_eq!(seed(c(0.0, 0.0), 0.0), (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)));
        let (a, b, x1) = seed(c(2.0, 0.0), 8.0);
        assert_eq!((a, b, x1), (c(1.0, 0.0), c(1.0, 0.0), c(-3.0, 0.0)));
        assert_eq!(invariant_residual(x1, b, a, 8.0), c(0.0, 0.0));
        let (a, b, x1) = seed(c(1.75, -0.5), 3.25);
        assert_eq!(invariant_residual(x1, b, a, 3.25), c(0.0, 0.0));
    }

    #[test]
    fn closed_forms() {
        assert!((lambda0(0.0) - 24f64.sqrt()).abs() < 1e-12);
        assert!((lambda0(1.0) - 116f64.sqrt()).abs() < 1e-12);
        assert_eq!(xi(8.0).unwrap(), 3.0);
        assert!((alpha(8.0).unwrap() - 0.876).abs() < 5e-4);
        let r = xi(1000.0).unwrap() / 1000.0;
        assert!((0.99..=1.0).contains(&r));
        assert!(alpha(7.9).is_err());
        assert!(xi(5.0).is_err());
    }

    #[test]
    fn orbit_matches_matrix_traces() {
        let fib8 = PotentialSpec::Fibonacci { lambda: 8.0 }.compile().unwrap();
        for z in [c(0.3, 0.2), c(-1.7, 0.05), c(9.1, 0.7)] {
            let orbit = iterate(z, 8.0, 12, 0.1).unwrap();
            for k in 1..=12 {
                let m = transfer_scaled(&fib8, fib(k as u32).unwrap() as i64, z);
                let expected = m.log_trace() - C64::new(2f64.ln(), 0.0);
                let got = orbit.ln_value(k);
                let diff = (got - expected).exp() - 1.0;
                // compare exp of the log difference, phases modulo 2π included
                assert!(diff.norm() < 1e-9, "z = {z}, k = {k}: {diff}");
            }
        }
    }

    #[test]
    fn free_orbit_stays_bounded() {
        let orbit = iterate(c(1.0, 0.0), 0.0, 30, 0.0).unwrap();
        for k in -1..=30 {
            assert!(orbit.value(k).unwrap().norm() <= 1.0 + 1e-12);
        }
        assert_eq!(orbit.escape, Escape::Bounded);
    }

    #[test]
    fn escape_at_complex_energy() {
        let orbit = iterate(c(0.0, 1.0), 8.0, 40, 0.1).unwrap();
        assert_eq!(orbit.escape, Escape::Escaped(1));
        assert!(orbit.growth.as_ref().unwrap().passed());
        let esc = escape_index(c(0.0, 0.1), 8.0, 0.1).unwrap();
        assert!(esc.index().is_some());
    }

    #[test]
    fn invariant_holds_in_high_precision() {
        let orbit = iterate(c(3.3, 0.004), 20.0, 25, 0.1).unwrap();
        for (k, r) in orbit.invariant_residuals() {
            assert!(r <= 1e-9 * 100.0, "k = {k}: {r}");
        }
    }

    #[test]
    fn small_band_structures() {
        let b1 = band_structure(1, 8.0, 0.0).unwrap();
        assert_eq!(b1.bands.len(), 1);
        assert!((b1.bands[0].0 - 6.0).abs() < 1e-11 && (b1.bands[0].1 - 10.0).abs() < 1e-11);
        assert!((b1.zeros[0] - 8.0).abs() < 1e-11);
        let b2 = band_structure(2, 8.0, 0.0).unwrap();
        assert_eq!(b2.bands.len(), 2);
        let r = 18f64.sqrt();
        assert!((b2.zeros[0] - (4.0 - r)).abs() < 1e-11);
        assert!((b2.zeros[1] - (4.0 + r)).abs() < 1e-11);
        let b8 = band_structure(8, 8.0, 0.1).unwrap();
        assert_eq!(b8.bands.len(), 34);
    }

    #[test]
    fn band_structure_rejects_small_coupling() {
        assert!(band_structure(3, 4.0, 0.0).is_err());
    }

    #[test]
    fn derivative_lower_bound_from_level_four() {
        for k in 4..=8 {
            let report = derivative_check(k, 9.0).unwrap();
            assert!(report.min_abs_derivative >= xi(9.0).unwrap().powf(k as f64 / 2.0));
            assert!(report.upper_constant.is_finite() && report.upper_constant > 0.0);
        }
        assert!(derivative_check(2, 9.0).is_err());
    }

    #[test]
    fn derivative_lower_bound_fails_at_level_three() {
        // closed form: x₃ = (a²z − 2a − z)/2 and x₃' = (2az + a² − 3)/2, a = z − λ
        let lambda = 9.0;
        let bands = band_structure(3, lambda, 0.0).unwrap();
        let mut min_slope = f64::INFINITY;
        for &z in &bands.zeros {
            let a = z - lambda;
            assert!(((a * a * z - 2.0 * a - z) / 2.0).abs() < 1e-9);
            let slope = ((2.0 * a * z + a * a - 3.0) / 2.0).abs();
            assert!((slope - trace_at(3, lambda, C64::new(z, 0.0)).1.norm()).abs() < 1e-9);
            min_slope = min_slope.min(slope);
        }
        assert!((min_slope - 8.286000716963).abs() < 1e-8);
        assert!(min_slope < xi(lambda).unwrap().powf(1.5));
        assert!(matches!(derivative_check(3, lambda), Err(Error::CheckFailed(_))));
    }

    #[test]
    fn schedule_double_inequality() {
        let d = 0.3;
        let s = schedule(1e3, 8.0, 0.1, 0.05, d).unwrap();
        let lo = (fib(s.k - 1).unwrap() as f64).powf(s.gamma) / d;
        let hi = (fib(s.k).unwrap() as f64).powf(s.gamma) / d;
        assert!(lo <= 1e3 && 1e3 < hi);
        let k_sqrt = (s.k as f64).sqrt().floor() as u32;
        assert_eq!(s.n, fib(s.k + k_sqrt).unwrap());
        let mut last = 0;
        for t in [2.0, 5.0, 10.0, 50.0, 1e3, 1e5] {
            let k = schedule(t, 8.0, 0.1, 0.05, 1.0).unwrap().k;
            assert!(k >= last);
            last = k;
        }
    }

    #[test]
    fn log_form_trace_matches_direct_recursion() {
        for k in [8, 12, 14] {
            for i in 0..200 {
                let e = -11.0 + 22.0 * i as f64 / 199.0;
                let (v, d) = real_trace(k, 8.0, e);
                let (w, dw) = trace_at(k, 8.0, C64::new(e, 0.0));
                if !(w.re.is_finite() && dw.re.is_finite()) {
                    assert!(v.is_infinite() && v.signum() == w.re.signum());
                    continue;
                }
                assert!((v - w.re).abs() <= 1e-9 * w.re.abs().max(1.0), "k={k} e={e}: {v} vs {}", w.re);
                assert!((d - dw.re).abs() <= 1e-9 * dw.re.abs().max(1.0));
            }
        }
        for i in 0..400 {
            let (v, d) = real_trace(20, 8.0, -11.0 + 22.0 * i as f64 / 399.0);
            assert!(!v.is_nan() && !d.is_nan());
        }
    }

    #[test]
    fn band_structure_at_level_sixteen() {
        let set = band_structure(16, 8.0, 0.1).unwrap();
        assert_eq!(set.bands.len() as u64, fib(16).unwrap());
    }
}
