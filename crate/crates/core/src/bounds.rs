//! Upper and lower bounds on outside probabilities in terms of transfer-matrix
//! norms at complex energies, and reports comparing them with measured dynamics.
//!
//! All implicit constants are fitted on a calibration point and then frozen;
//! reports keep the raw numbers (mostly as logarithms, since the integrals
//! involved fall far below the `f64` range).

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{amplitude_parseval, decay_rate, outside_probability, resolvent_row, resolvent_row_from_samples, BoxSpec, EnergyQuadrature, Geometry};
use crate::error::{param, Result};
use crate::fit::{log_sum_exp, linear_fit};
use crate::potentials::Potential;
use crate::transfer::{running_log_max_norm_sq, step_matrix, step_matrix_inverse, sweep_samples, transfer, transfer_scaled, Direction, ScaledMat2};

type C64 = Complex64;

/// Relative slack for comparisons against constants fitted at the same point.
const FIT_SLACK: f64 = 1e-9;

/// Midpoint grid on `[−K, K]` with a given step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    pub step: f64,
}

impl EnergyGrid {
    /// Step `min(1/(4T), 0.01)`.
    pub fn for_time(time: f64) -> Self {
        Self {
            step: (0.25 / time).min(0.01),
        }
    }

    /// Midpoints and the actual (slightly reduced) step covering `[−K, K]`.
    pub fn nodes(&self, k: f64) -> Result<(Vec<f64>, f64)> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(param("grid.step", format!("must be positive, got {}", self.step)));
        }
        let count = ((2.0 * k) / self.step).ceil().max(1.0) as usize;
        let h = 2.0 * k / count as f64;
        Ok(((0..count).map(|j| -k + (j as f64 + 0.5) * h).collect(), h))
    }
}

fn check_time(time: f64) -> Result<()> {
    if !(time >= 1.0) || !time.is_finite() {
        return Err(param("T", format!("must be a finite number ≥ 1, got {time}")));
    }
    Ok(())
}

/// `log ∫_{−K}^{K} (max_{1≤n≤N} ‖Φ(±n, E + i/T)‖²)⁻¹ dE`, evaluated in the log domain.
pub fn log_integral_term(potential: &Potential, n: usize, time: f64, side: Direction, grid: &EnergyGrid) -> Result<f64> {
    if n == 0 {
        return Err(param("N", "must be at least 1"));
    }
    check_time(time)?;
    let (nodes, h) = grid.nodes(potential.energy_bound())?;
    let samples = sweep_samples(potential, n, side);
    let terms: Vec<f64> = nodes
        .par_iter()
        .map(|&e| {
            let running = running_log_max_norm_sq(&samples, C64::new(e, 1.0 / time), side);
            h.ln() - running[n - 1]
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// `∫_{−K}^{K} (max_{1≤n≤N} ‖Φ(±n, E + i/T)‖²)⁻¹ dE`; underflows to `0` when
/// the norms are astronomically large.
pub fn integral_term(potential: &Potential, n: usize, time: f64, side: Direction, grid: &EnergyGrid) -> Result<f64> {
    Ok(log_integral_term(potential, n, time, side, grid)?.exp())
}

/// `log I(N, T)` with `I(N,T) = ∫_{−K}^{K} ‖Φ(N, E+i/T)‖⁻² + ‖Φ(−N, E+i/T)‖⁻² dE`.
pub fn log_i_functional(potential: &Potential, n: usize, time: f64, grid: &EnergyGrid) -> Result<f64> {
    if n == 0 {
        return Err(param("N", "must be at least 1"));
    }
    check_time(time)?;
    let (nodes, h) = grid.nodes(potential.energy_bound())?;
    let n = n as i64;
    let terms: Vec<f64> = nodes
        .par_iter()
        .flat_map_iter(|&e| {
            let z = C64::new(e, 1.0 / time);
            [
                h.ln() - 2.0 * transfer_scaled(potential, n, z).log_norm(),
                h.ln() - 2.0 * transfer_scaled(potential, -n, z).log_norm(),
            ]
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// `I(N, T)` (may underflow to `0`).
pub fn i_functional(potential: &Potential, n: usize, time: f64, grid: &EnergyGrid) -> Result<f64> {
    Ok(log_i_functional(potential, n, time, grid)?.exp())
}

/// Measured outside probabilities and the right-hand sides of the upper bound
/// `P_± ≲ exp(−cN) + T³·(integral term)` and the lower bound `P ≳ T⁻³ I(N,T)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub time: f64,
    pub n: usize,
    pub side: Direction,
    pub lhs_right: f64,
    pub lhs_left: f64,
    pub lhs_total: f64,
    /// `−cN`.
    pub log_rhs_exp: f64,
    /// `log` of the integral term on `side`.
    pub log_integral: f64,
    /// `3 log T + log_integral`.
    pub log_rhs_int: f64,
    /// `log(exp(−cN) + T³·integral)`.
    pub log_rhs: f64,
    /// `log I(N, T)`.
    pub log_i: f64,
}

impl BoundReport {
    /// Measured outside probability on the report's side.
    pub fn lhs(&self) -> f64 {
        match self.side {
            Direction::Right => self.lhs_right,
            Direction::Left => self.lhs_left,
        }
    }

    /// `exp(−cN)`.
    pub fn rhs_exp(&self) -> f64 {
        self.log_rhs_exp.exp()
    }

    /// `T³ × integral term`.
    pub fn rhs_int(&self) -> f64 {
        self.log_rhs_int.exp()
    }
}

/// Decay constant `c` of `exp(−cN)`: the smaller fitted decay rate of
/// `|⟨R(z)δ₁, δ_n⟩|` at `z = ±K + i/T`, where the distance to the spectrum is
/// at least one.
pub fn fit_decay_constant(potential: &Potential, time: f64) -> Result<f64> {
    check_time(time)?;
    let k = potential.energy_bound();
    let boxed = BoxSpec::whole_line(64)?;
    let mut c = f64::INFINITY;
    for e in [-k, k] {
        let row = resolvent_row(potential, C64::new(e, 1.0 / time), &boxed)?;
        c = c.min(decay_rate(&row, 40)?.slope);
    }
    Ok(c)
}

/// Assembles one [`BoundReport`]: `a(n, T)` by the Parseval route on a box with
/// `L = max(8T, N + 16)`, and both right-hand sides on [`EnergyGrid::for_time`].
pub fn theorem_main_report(potential: &Potential, n: usize, time: f64, side: Direction, decay: f64) -> Result<BoundReport> {
    check_time(time)?;
    if n == 0 {
        return Err(param("N", "must be at least 1"));
    }
    let boxed = BoxSpec::for_time(time, n, Geometry::WholeLine)?;
    let profile = amplitude_parseval(potential, time, &boxed, &EnergyQuadrature::for_time(time))?;
    let outside = outside_probability(&profile, n as i64);
    let grid = EnergyGrid::for_time(time);
    let log_integral = log_integral_term(potential, n, time, side, &grid)?;
    let log_rhs_exp = -decay * n as f64;
    let log_rhs_int = 3.0 * time.ln() + log_integral;
    Ok(BoundReport {
        time,
        n,
        side,
        lhs_right: outside.right,
        lhs_left: outside.left,
        lhs_total: outside.total,
        log_rhs_exp,
        log_integral,
        log_rhs_int,
        log_rhs: log_sum_exp(&[log_rhs_exp, log_rhs_int]),
        log_i: log_i_functional(potential, n, time, &grid)?,
    })
}

/// Upper and lower bounds over a `(T, N)` grid with constants calibrated at the first point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MainSuite {
    pub side: Direction,
    pub decay: f64,
    /// `log C` with `lhs = C·rhs` at the calibration point.
    pub log_constant: f64,
    /// `log C'` with `P = C'·T⁻³·I(N,T)` at the calibration point.
    pub log_lower_constant: f64,
    pub reports: Vec<BoundReport>,
    /// Points (by index) where `lhs > C·rhs`.
    pub upper_violations: Vec<usize>,
    /// Points where `P < C'·T⁻³·I`.
    pub lower_violations: Vec<usize>,
    /// `lhs` strictly decreasing along the grid.
    pub lhs_decreasing: bool,
    /// `log lhs / log T` strictly decreasing along the grid.
    pub log_ratio_decreasing: bool,
}

impl MainSuite {
    pub fn upper_holds(&self) -> bool {
        self.upper_violations.is_empty()
    }

    pub fn lower_holds(&self) -> bool {
        self.lower_violations.is_empty()
    }
}

/// Runs [`theorem_main_report`] on `points = [(T, N), …]`, calibrating both
/// constants at the first point; `c` comes from [`fit_decay_constant`] there.
pub fn theorem_main_suite(potential: &Potential, points: &[(f64, usize)], side: Direction) -> Result<MainSuite> {
    let (t0, _) = *points.first().ok_or_else(|| param("points", "need at least one (T, N) point"))?;
    let decay = fit_decay_constant(potential, t0)?;
    let reports: Vec<BoundReport> = points
        .iter()
        .map(|&(t, n)| theorem_main_report(potential, n, t, side, decay))
        .collect::<Result<_>>()?;
    let cal = &reports[0];
    let log_constant = cal.lhs().ln() - cal.log_rhs;
    let log_lower_constant = cal.lhs_total.ln() + 3.0 * cal.time.ln() - cal.log_i;
    let mut upper_violations = Vec::new();
    let mut lower_violations = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        if r.lhs().ln() > log_constant + r.log_rhs + FIT_SLACK {
            upper_violations.push(i);
        }
        if r.lhs_total.ln() < log_lower_constant - 3.0 * r.time.ln() + r.log_i - FIT_SLACK {
            lower_violations.push(i);
        }
    }
    let ratio: Vec<f64> = reports.iter().map(|r| r.lhs().ln() / r.time.ln()).collect();
    Ok(MainSuite {
        side,
        decay,
        log_constant,
        log_lower_constant,
        lhs_decreasing: reports.windows(2).all(|w| w[1].lhs() < w[0].lhs()),
        log_ratio_decreasing: ratio.windows(2).all(|w| w[1] < w[0]),
        reports,
        upper_violations,
        lower_violations,
    })
}

/// Finite-time proxies for `W^±(α)` and `γ^±`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaReport {
    pub alphas: Vec<f64>,
    pub times: Vec<f64>,
    /// `log I(max(⌊T^α − 2⌋, 1), T)`, indexed `[α][T]`.
    pub log_i: Vec<Vec<f64>>,
    /// Largest `−log I / log T` over the larger-`T` half (proxy for `W⁻`).
    pub w_minus: Vec<f64>,
    /// Smallest `−log I / log T` over the larger-`T` half (proxy for `W⁺`).
    pub w_plus: Vec<f64>,
    pub cutoff: f64,
    /// Largest `α` with `Ŵ⁻(α) < cutoff` (0 if none).
    pub gamma_minus: f64,
    /// Largest `α` with `Ŵ⁺(α) < cutoff` (0 if none).
    pub gamma_plus: f64,
}

/// Estimates `Ŵ^±(α)` on the given grids and `γ̂^±` with cutoff 50. Estimates only.
pub fn gamma_exponent_estimate(potential: &Potential, alphas: &[f64], times: &[f64]) -> Result<GammaReport> {
    if alphas.is_empty() || times.len() < 2 {
        return Err(param("grid", "need at least one α and two times"));
    }
    if alphas.iter().any(|a| !(*a >= 0.0)) {
        return Err(param("alphas", "must be nonnegative"));
    }
    let mut times = times.to_vec();
    times.sort_by(f64::total_cmp);
    if times[0] <= 1.0 {
        return Err(param("times", "must exceed 1 (the ratios divide by log T)"));
    }
    let cutoff = 50.0;
    let mut log_i = Vec::new();
    let mut w_minus = Vec::new();
    let mut w_plus = Vec::new();
    for &a in alphas {
        let row: Vec<f64> = times
            .iter()
            .map(|&t| {
                let n = (t.powf(a) - 2.0).floor().max(1.0) as usize;
                log_i_functional(potential, n, t, &EnergyGrid::for_time(t))
            })
            .collect::<Result<_>>()?;
        let half = times.len() / 2;
        let ratios: Vec<f64> = times[half..].iter().zip(&row[half..]).map(|(t, l)| -l / t.ln()).collect();
        w_minus.push(ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        w_plus.push(ratios.iter().copied().fold(f64::INFINITY, f64::min));
        log_i.push(row);
    }
    let largest = |w: &[f64]| {
        alphas
            .iter()
            .zip(w)
            .filter(|(_, w)| **w < cutoff)
            .map(|(a, _)| *a)
            .fold(0.0f64, f64::max)
    };
    Ok(GammaReport {
        gamma_minus: largest(&w_minus),
        gamma_plus: largest(&w_plus),
        alphas: alphas.to_vec(),
        times,
        log_i,
        w_minus,
        w_plus,
        cutoff,
    })
}

/// Norm ratios at one `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StabilityLevel {
    pub eps: f64,
    pub n_max: usize,
    /// Largest and smallest `log(‖Φ₂(n)‖/‖Φ₁(n)‖)` over `E ∈ [−K,K]`, `1 ≤ |n| ≤ 1/ε`.
    pub max_log_ratio: f64,
    pub min_log_ratio: f64,
    /// `max |log ratio| / log(1/ε)`.
    pub exponent: f64,
}

/// Comparison of transfer-matrix norms of two potentials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub levels: Vec<StabilityLevel>,
    /// Smallest `A` with `ε^A ‖Φ₁‖ ≤ ‖Φ₂‖ ≤ ε^{−A} ‖Φ₁‖` on the grid (constant 1).
    pub exponent: f64,
    /// `max_ε max |log ratio|`: log of the smallest `ε`-independent constant.
    pub log_uniform_constant: f64,
    /// Sites with `V₁ ≠ V₂` in the scanned window `|n| ≤ max 1/ε + 1`.
    pub differing_sites: Vec<i64>,
    /// A-priori `log` bound on the ratio for differences on at most
    /// [`MAX_FINITE_SUPPORT`] sites; `None` otherwise.
    pub log_a_priori_constant: Option<f64>,
    /// Whether every level stays within the a-priori constant (when applicable).
    pub bounded: Option<bool>,
}

/// Differences are treated as finitely supported when they occupy at most this
/// many sites of the scanned window and none of the ring out to eight times its width.
pub const MAX_FINITE_SUPPORT: usize = 32;

/// Compares `‖Φ₂(n, E+iε)‖` with `‖Φ₁(n, E+iε)‖` over `E` on a midpoint grid of
/// `energies` points in `[−K, K]` (`K` the larger energy bound), `1 ≤ |n| ≤ 1/ε`.
///
/// For potentials that differ at finitely many sites `m`, `Φ₂(n) = Φ₁(n)·X`
/// with `X` a product of conjugates `Φ₁(m−1)⁻¹ D_m^{±1} Φ₁(m−1)`,
/// `D_m = [[1,0],[ΔV(m),1]]`, so the ratio is at most
/// `Π_m (1 + |ΔV(m)|)·s^{2|m−1|}` in either direction, `s = K + ‖V₁‖ + 2`.
pub fn stability_compare(first: &Potential, second: &Potential, eps_grid: &[f64], energies: usize) -> Result<StabilityReport> {
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(param("eps", "grid values must lie in (0, 1)"));
    }
    if energies == 0 {
        return Err(param("energies", "must be positive"));
    }
    let k = first.energy_bound().max(second.energy_bound());
    let window = eps_grid.iter().map(|e| (1.0 / e).floor() as i64).max().unwrap_or(1) + 1;
    let differing_sites: Vec<i64> = (-window..=window).filter(|&m| first.sample(m) != second.sample(m)).collect();
    let outer = 8 * window + 256;
    let differs_outside = (window + 1..=outer).any(|m| first.sample(m) != second.sample(m) || first.sample(-m) != second.sample(-m));
    let finite = !differs_outside && differing_sites.len() <= MAX_FINITE_SUPPORT;
    let log_a_priori_constant = finite.then(|| {
        let s = k + first.sup_norm() + 2.0;
        differing_sites
            .iter()
            .map(|&m| (1.0 + (second.sample(m) - first.sample(m)).abs()).ln() + 2.0 * (m - 1).unsigned_abs() as f64 * s.ln())
            .sum::<f64>()
    });
    let h = 2.0 * k / energies as f64;
    let mut levels = Vec::new();
    for &eps in eps_grid {
        let n_max = (1.0 / eps).floor() as usize;
        let (hi, lo) = (0..energies)
            .into_par_iter()
            .map(|j| {
                let z = C64::new(-k + (j as f64 + 0.5) * h, eps);
                let mut hi = f64::NEG_INFINITY;
                let mut lo = f64::INFINITY;
                for side in [Direction::Right, Direction::Left] {
                    let a = sweep_samples(first, n_max, side);
                    let b = sweep_samples(second, n_max, side);
                    let mut pa = ScaledMat2::identity();
                    let mut pb = ScaledMat2::identity();
                    for (va, vb) in a.iter().zip(&b) {
                        let (ma, mb) = match side {
                            Direction::Right => (step_matrix(*va, z), step_matrix(*vb, z)),
                            Direction::Left => (step_matrix_inverse(*va, z), step_matrix_inverse(*vb, z)),
                        };
                        pa.push_left(ma);
                        pb.push_left(mb);
                        let r = pb.log_norm() - pa.log_norm();
                        hi = hi.max(r);
                        lo = lo.min(r);
                    }
                }
                (hi, lo)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((f64::NEG_INFINITY, f64::INFINITY), |(h0, l0), (h1, l1)| (h0.max(h1), l0.min(l1)));
        levels.push(StabilityLevel {
            eps,
            n_max,
            max_log_ratio: hi,
            min_log_ratio: lo,
            exponent: hi.abs().max(lo.abs()) / (1.0 / eps).ln(),
        });
    }
    let log_uniform_constant = levels.iter().map(|l| l.max_log_ratio.abs().max(l.min_log_ratio.abs())).fold(0.0, f64::max);
    Ok(StabilityReport {
        exponent: levels.iter().map(|l| l.exponent).fold(0.0, f64::max),
        bounded: log_a_priori_constant.map(|c| log_uniform_constant <= c * (1.0 + 1e-12) + 1e-12),
        levels,
        log_uniform_constant,
        differing_sites,
        log_a_priori_constant,
    })
}

/// `(λ₁, λ₂)` with `λ + 1/λ = z ∓ 2K` and `|λ₁| ≤ |λ₂|`; `sign = +1` selects `z − 2K`.
pub fn truncation_eigenvalues(z: C64, k: f64, sign: f64) -> (C64, C64) {
    let w = z - sign * 2.0 * k;
    let root = (w * w - 4.0).sqrt();
    let (a, b) = ((w + root) / 2.0, (w - root) / 2.0);
    if a.norm() <= b.norm() {
        (a, b)
    } else {
        (b, a)
    }
}

/// Constants of the two-sided comparison at one `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TruncationLevel {
    pub eps: f64,
    /// Smallest `C` with `ε² S^± ≤ C·M_r` on the sampled energies.
    pub lower_constant: f64,
    /// Smallest `C` with `M_r ≤ C·ε⁻² S^±`.
    pub upper_constant: f64,
}

/// Comparison of `M_r(N, z) = ‖χ_N R(z)δ₁‖²` with `S^±(N, z) = ‖χ_N R_N^±(z)δ₁‖²`,
/// where `R_N^±` is the resolvent with `V` replaced by `±2K` beyond `N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncationReport {
    pub n: usize,
    pub k: f64,
    pub levels: Vec<TruncationLevel>,
    /// `max |λ₁^±(z)|` over the sampled `z` (a value for `b(K)`).
    pub max_small_root: f64,
    /// `min |λ₁⁺(z) − λ₁⁻(z)|` (a value for `c(K)`).
    pub min_root_gap: f64,
    /// `max ||λ₁λ₂| − 1|`.
    pub max_product_defect: f64,
    /// `M_r(n, z)` nonincreasing in `n ≤ N` at every sampled `z`.
    pub tail_monotone: bool,
    /// Constants at each `ε` stay within a factor 10 of those at the first `ε`.
    pub stable: bool,
}

/// Fits the constants of `ε² S^± ≲ M_r ≲ ε⁻² S^±` for each `ε` over `energies`
/// midpoints in `[−K, K]`, on a whole-line box of half-width `N + ⌈80/ε⌉`.
pub fn truncated_operator_check(potential: &Potential, n: usize, eps_grid: &[f64], energies: usize) -> Result<TruncationReport> {
    if n == 0 {
        return Err(param("N", "must be at least 1"));
    }
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(param("eps", "grid values must lie in (0, 1)"));
    }
    if energies == 0 {
        return Err(param("energies", "must be positive"));
    }
    let k = potential.energy_bound();
    let h = 2.0 * k / energies as f64;
    let mut levels = Vec::new();
    let mut max_small_root: f64 = 0.0;
    let mut min_root_gap = f64::INFINITY;
    let mut max_product_defect: f64 = 0.0;
    let mut tail_monotone = true;
    for &eps in eps_grid {
        let boxed = BoxSpec::whole_line(n + (80.0 / eps).ceil() as usize)?;
        let (first, _) = boxed.sites();
        let base = boxed.samples(potential);
        let cut = (n as i64 - first + 1) as usize;
        let truncated = |sign: f64| -> Vec<f64> { base.iter().enumerate().map(|(i, v)| if i < cut { *v } else { sign * 2.0 * k }).collect() };
        let plus = truncated(1.0);
        let minus = truncated(-1.0);
        let rows: Vec<Result<(f64, f64, f64, f64, f64, bool)>> = (0..energies)
            .into_par_iter()
            .map(|j| {
                let z = C64::new(-k + (j as f64 + 0.5) * h, eps);
                let full = resolvent_row_from_samples(&base, &boxed, z)?;
                let m_r = full.right_tail_sq(n as i64);
                let monotone = (1..n as i64).all(|m| full.right_tail_sq(m + 1) <= full.right_tail_sq(m));
                let (mut lower, mut upper): (f64, f64) = (0.0, 0.0);
                for trunc in [&plus, &minus] {
                    let s = resolvent_row_from_samples(trunc, &boxed, z)?.right_tail_sq(n as i64);
                    lower = lower.max(eps * eps * s / m_r);
                    upper = upper.max(eps * eps * m_r / s);
                }
                let (p1, p2) = truncation_eigenvalues(z, k, 1.0);
                let (q1, q2) = truncation_eigenvalues(z, k, -1.0);
                let defect = ((p1 * p2).norm() - 1.0).abs().max(((q1 * q2).norm() - 1.0).abs());
                Ok((lower, upper, p1.norm().max(q1.norm()), (p1 - q1).norm(), defect, monotone))
            })
            .collect();
        let mut level = TruncationLevel {
            eps,
            lower_constant: 0.0,
            upper_constant: 0.0,
        };
        for row in rows {
            let (lower, upper, root, gap, defect, monotone) = row?;
            level.lower_constant = level.lower_constant.max(lower);
            level.upper_constant = level.upper_constant.max(upper);
            max_small_root = max_small_root.max(root);
            min_root_gap = min_root_gap.min(gap);
            max_product_defect = max_product_defect.max(defect);
            tail_monotone &= monotone;
        }
        levels.push(level);
    }
    let base = levels[0];
    let stable = levels
        .iter()
        .all(|l| l.lower_constant <= 10.0 * base.lower_constant && l.upper_constant <= 10.0 * base.upper_constant);
    Ok(TruncationReport {
        n,
        k,
        levels,
        max_small_root,
        min_root_gap,
        max_product_defect,
        tail_monotone,
        stable,
    })
}

/// Pointwise resolvent inequalities over a `(T, E, n)` grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolventCheck {
    pub points: usize,
    /// `(T, E, n)` where `|φ(n+1)|² + |φ(n)|² < ‖Φ(n,z)‖⁻² |d(z)|²`.
    pub lower_bound_violations: Vec<(f64, f64, i64)>,
    /// `(T, E)` where `|d| ≤ 1/ε`, `|c| ≤ 1/ε` or `|b| ≤ 2/ε` fails.
    pub coefficient_violations: Vec<(f64, f64)>,
    /// `min T·Im d(E + i/T)`; the bound `Im d ≥ C/T` holds with this `C` when positive.
    pub im_d_constant: f64,
    /// Largest relative defect of `(φ(n+1), φ(n)) = Φ(n)(d, b or c)`.
    pub max_representation_defect: f64,
}

impl ResolventCheck {
    pub fn passed(&self) -> bool {
        self.lower_bound_violations.is_empty() && self.coefficient_violations.is_empty() && self.im_d_constant > 0.0
    }
}

/// Checks, at `z = E + i/T` for `E` on `energies` midpoints of `[−K, K]` and
/// `|n| ≤ n_max`: `|φ(n+1)|² + |φ(n)|² ≥ ‖Φ(n,z)‖⁻²|d|²`, the coefficient bounds
/// `|d|, |c| ≤ 1/ε`, `|b| ≤ 2/ε`, and positivity of `T·Im d`.
pub fn resolvent_inequality_check(potential: &Potential, times: &[f64], energies: usize, n_max: i64) -> Result<ResolventCheck> {
    if energies == 0 || n_max < 1 {
        return Err(param("grid", "need energies ≥ 1 and n_max ≥ 1"));
    }
    let k = potential.energy_bound();
    let h = 2.0 * k / energies as f64;
    let mut out = ResolventCheck {
        points: 0,
        lower_bound_violations: Vec::new(),
        coefficient_violations: Vec::new(),
        im_d_constant: f64::INFINITY,
        max_representation_defect: 0.0,
    };
    for &t in times {
        check_time(t)?;
        let eps = 1.0 / t;
        let boxed = BoxSpec::for_time(t, n_max as usize + 1, Geometry::WholeLine)?;
        let rows: Vec<Result<(f64, Vec<i64>, bool, f64, f64)>> = (0..energies)
            .into_par_iter()
            .map(|j| {
                let e = -k + (j as f64 + 0.5) * h;
                let z = C64::new(e, eps);
                let row = resolvent_row(potential, z, &boxed)?;
                let (d, b, c) = (row.d(), row.b(), row.c());
                let coeff_ok = d.norm() <= (1.0 + 1e-12) / eps && c.norm() <= (1.0 + 1e-12) / eps && b.norm() <= (2.0 + 1e-12) / eps;
                let mut bad = Vec::new();
                let mut defect: f64 = 0.0;
                for n in -n_max..=n_max {
                    let phi = transfer(potential, n, z);
                    let lhs = row.get(n + 1).norm_sqr() + row.get(n).norm_sqr();
                    let rhs = d.norm_sqr() / phi.operator_norm().powi(2);
                    if lhs < rhs * (1.0 - 1e-9) {
                        bad.push(n);
                    }
                    let second = if n >= 1 { b } else { c };
                    let top = phi.a11 * d + phi.a12 * second;
                    let bottom = phi.a21 * d + phi.a22 * second;
                    let scale = phi.operator_norm() * (d.norm() + second.norm());
                    defect = defect.max(((top - row.get(n + 1)).norm() + (bottom - row.get(n)).norm()) / scale);
                }
                Ok((e, bad, coeff_ok, t * d.im, defect))
            })
            .collect();
        for r in rows {
            let (e, bad, coeff_ok, im_d, defect) = r?;
            out.points += 1;
            out.lower_bound_violations.extend(bad.into_iter().map(|n| (t, e, n)));
            if !coeff_ok {
                out.coefficient_violations.push((t, e));
            }
            out.im_d_constant = out.im_d_constant.min(im_d);
            out.max_representation_defect = out.max_representation_defect.max(defect);
        }
    }
    Ok(out)
}

/// Line fit of `log I(N, T)` against `N` (for exponential decay rates).
pub fn log_decay_fit(ns: &[f64], logs: &[f64]) -> Result<crate::fit::LinearFit> {
    linear_fit(ns, logs)
}
