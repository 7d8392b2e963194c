//! Transfer matrices `Φ(n, z)` of `Hu = zu` at real and complex energies.
//!
//! `Φ(n) = T(n)⋯T(1)` for `n ≥ 1`, `Φ(0) = Id` and
//! `Φ(n) = T(n+1)⁻¹⋯T(0)⁻¹` for `n ≤ −1`, with one-step matrices
//! `T(m, z) = [[z − V(m), −1], [1, 0]]`. The first column of `Φ(n)` is
//! `(u₀(n+1), u₀(n))` and the second is `(u₁(n+1), u₁(n))`, where
//! `u₀(0) = 0, u₀(1) = 1` and `u₁(0) = 1, u₁(1) = 0`.

use std::fmt::Write as _;
use std::ops::Mul;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{param, Result};
use crate::potentials::{Phase, Potential};

type C64 = Complex64;

/// Products are rescaled once their norm passes this value.
const RESCALE_AT: f64 = 1e100;
/// [`NormScan`] stops once `‖Φ‖` exceeds this value.
pub const SATURATION_NORM: f64 = 1e300;

/// A 2×2 complex matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2 {
    pub a11: C64,
    pub a12: C64,
    pub a21: C64,
    pub a22: C64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        a11: C64::new(1.0, 0.0),
        a12: C64::new(0.0, 0.0),
        a21: C64::new(0.0, 0.0),
        a22: C64::new(1.0, 0.0),
    };

    pub fn new(a11: C64, a12: C64, a21: C64, a22: C64) -> Self {
        Self { a11, a12, a21, a22 }
    }

    /// Real diagonal matrix.
    pub fn diag(a: f64, b: f64) -> Self {
        Self::new(C64::new(a, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(b, 0.0))
    }

    pub fn det(&self) -> C64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn trace(&self) -> C64 {
        self.a11 + self.a22
    }

    /// Adjugate, which is the inverse when `det = 1`.
    pub fn adjugate(&self) -> Self {
        Self::new(self.a22, -self.a12, -self.a21, self.a11)
    }

    /// `P M P` with `P = [[0, 1], [1, 0]]`.
    pub fn swap_conjugate(&self) -> Self {
        Self::new(self.a22, self.a21, self.a12, self.a11)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }

    /// `Tr(M*M)`, the squared Hilbert–Schmidt norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.a11.norm_sqr() + self.a12.norm_sqr() + self.a21.norm_sqr() + self.a22.norm_sqr()
    }

    /// Largest singular value, from `σ₁ ± σ₂ = √(‖M‖²_HS ± 2|det M|)`.
    pub fn operator_norm(&self) -> f64 {
        let f = self.frobenius_sq();
        let d = self.det().norm();
        let sum = (f + 2.0 * d).sqrt();
        let diff = (f - 2.0 * d).max(0.0).sqrt();
        0.5 * (sum + diff)
    }

    /// Both singular values, largest first.
    pub fn singular_values(&self) -> (f64, f64) {
        let f = self.frobenius_sq();
        let d = self.det().norm();
        let sum = (f + 2.0 * d).sqrt();
        let diff = (f - 2.0 * d).max(0.0).sqrt();
        let top = 0.5 * (sum + diff);
        let bottom = if top > 0.0 { d / top } else { 0.0 };
        (top, bottom)
    }

    pub fn is_finite(&self) -> bool {
        [self.a11, self.a12, self.a21, self.a22]
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, r: Mat2) -> Mat2 {
        Mat2::new(
            self.a11 * r.a11 + self.a12 * r.a21,
            self.a11 * r.a12 + self.a12 * r.a22,
            self.a21 * r.a11 + self.a22 * r.a21,
            self.a21 * r.a12 + self.a22 * r.a22,
        )
    }
}

/// `T(m, z)` for site value `v = V(m)`.
#[inline]
pub fn step_matrix(v: f64, z: C64) -> Mat2 {
    Mat2::new(z - v, C64::new(-1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0))
}

/// `T(m, z)⁻¹ = [[0, 1], [−1, z − v]]`.
#[inline]
pub fn step_matrix_inverse(v: f64, z: C64) -> Mat2 {
    Mat2::new(C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(-1.0, 0.0), z - v)
}

/// `T(m, z) = [[z − V(m), −1], [1, 0]]`.
pub fn one_step(potential: &Potential, m: i64, z: C64) -> Mat2 {
    step_matrix(potential.sample(m), z)
}

/// `T(m, z)⁻¹`.
pub fn one_step_inverse(potential: &Potential, m: i64, z: C64) -> Mat2 {
    step_matrix_inverse(potential.sample(m), z)
}

/// `Φ(n, z)` as a plain product; overflows for very long hyperbolic products,
/// see [`transfer_scaled`].
pub fn transfer(potential: &Potential, n: i64, z: C64) -> Mat2 {
    let mut m = Mat2::IDENTITY;
    if n >= 1 {
        for site in 1..=n {
            m = one_step(potential, site, z) * m;
        }
    } else if n <= -1 {
        for k in 1..=(-n) {
            m = one_step_inverse(potential, 1 - k, z) * m;
        }
    }
    m
}

/// A matrix stored as `mat · e^{log_scale}` so that long products keep their
/// relative accuracy without overflow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledMat2 {
    pub mat: Mat2,
    pub log_scale: f64,
}

impl ScaledMat2 {
    pub fn identity() -> Self {
        Self {
            mat: Mat2::IDENTITY,
            log_scale: 0.0,
        }
    }

    /// Left-multiplies by `m`, renormalizing when the norm passes `1e100`.
    #[inline]
    pub fn push_left(&mut self, m: Mat2) {
        self.mat = m * self.mat;
        let norm = self.mat.operator_norm();
        if norm > RESCALE_AT {
            self.mat = self.mat.scale(1.0 / norm);
            self.log_scale += norm.ln();
        }
    }

    /// `log ‖·‖`.
    pub fn log_norm(&self) -> f64 {
        self.mat.operator_norm().ln() + self.log_scale
    }

    /// `log ‖·‖_HS`.
    pub fn log_hs_norm(&self) -> f64 {
        0.5 * self.mat.frobenius_sq().ln() + self.log_scale
    }

    /// `log Tr(·)` as a complex logarithm (principal branch of the argument).
    pub fn log_trace(&self) -> C64 {
        let t = self.mat.trace();
        C64::new(t.norm().ln() + self.log_scale, t.arg())
    }

    /// The represented matrix (may overflow to infinity).
    pub fn to_mat(&self) -> Mat2 {
        self.mat.scale(self.log_scale.exp())
    }
}

/// `Φ(n, z)` with log-scale norm tracking.
pub fn transfer_scaled(potential: &Potential, n: i64, z: C64) -> ScaledMat2 {
    let mut acc = ScaledMat2::identity();
    if n >= 1 {
        for site in 1..=n {
            acc.push_left(one_step(potential, site, z));
        }
    } else if n <= -1 {
        for k in 1..=(-n) {
            acc.push_left(one_step_inverse(potential, 1 - k, z));
        }
    }
    acc
}

/// `Φ(n, z)` for the site values `V(1), …, V(n)` given in order.
pub fn transfer_scaled_from_samples(samples: &[f64], z: C64) -> ScaledMat2 {
    let mut acc = ScaledMat2::identity();
    for &v in samples {
        acc.push_left(step_matrix(v, z));
    }
    acc
}

/// Sweep direction of a norm scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `Φ(1), Φ(2), …`
    Right,
    /// `Φ(−1), Φ(−2), …`
    Left,
}

/// Site values in sweep order: `V(1), V(2), …` to the right and
/// `V(0), V(−1), …` to the left.
pub fn sweep_samples(potential: &Potential, len: usize, direction: Direction) -> Vec<f64> {
    (0..len as i64)
        .map(|k| match direction {
            Direction::Right => potential.sample(k + 1),
            Direction::Left => potential.sample(-k),
        })
        .collect()
}

/// Running maxima `M_n = max_{1 ≤ k ≤ n} ‖Φ(±k, z)‖²`, stored as logarithms.
#[derive(Clone, Debug, PartialEq)]
pub struct NormScan {
    pub direction: Direction,
    pub z: C64,
    /// Requested length `N`.
    pub len: usize,
    /// `log M_n` for `n = 1, …` (index `n − 1`), truncated at saturation.
    pub log_max_norm_sq: Vec<f64>,
    /// First `n` with `‖Φ(±n)‖ > 10³⁰⁰`, where the scan stopped.
    pub saturated_at: Option<usize>,
}

impl NormScan {
    /// `M_n` (infinite once saturated).
    pub fn max_norm_sq(&self, n: usize) -> f64 {
        match self.log_max_norm_sq.get(n.wrapping_sub(1)) {
            Some(v) => v.exp(),
            None if n == 0 => 1.0,
            None => f64::INFINITY,
        }
    }

    /// `1/M_n`, taken as `0` at and beyond saturation.
    pub fn inverse_max_norm_sq(&self, n: usize) -> f64 {
        match self.log_max_norm_sq.get(n.wrapping_sub(1)) {
            Some(v) => (-v).exp(),
            None if n == 0 => 1.0,
            None => 0.0,
        }
    }

    /// CSV with header `n,log_max_norm_sq`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,log_max_norm_sq\n");
        for (i, v) in self.log_max_norm_sq.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, v);
        }
        out
    }
}

/// Running maxima of `log ‖Φ(±n, z)‖²` for `n = 1..=samples.len()`,
/// without saturation. `samples` must be in sweep order (see [`sweep_samples`]).
pub fn running_log_max_norm_sq(samples: &[f64], z: C64, direction: Direction) -> Vec<f64> {
    let mut acc = ScaledMat2::identity();
    let mut best = f64::NEG_INFINITY;
    samples
        .iter()
        .map(|&v| {
            acc.push_left(match direction {
                Direction::Right => step_matrix(v, z),
                Direction::Left => step_matrix_inverse(v, z),
            });
            best = best.max(2.0 * acc.log_norm());
            best
        })
        .collect()
}

/// Norm scan over `samples` in sweep order.
pub fn norm_scan_samples(samples: &[f64], z: C64, direction: Direction) -> NormScan {
    let limit = 2.0 * SATURATION_NORM.ln();
    let mut values = running_log_max_norm_sq(samples, z, direction);
    let saturated_at = values.iter().position(|v| *v > limit);
    if let Some(i) = saturated_at {
        values.truncate(i);
    }
    NormScan {
        direction,
        z,
        len: samples.len(),
        log_max_norm_sq: values,
        saturated_at: saturated_at.map(|i| i + 1),
    }
}

/// Running maxima of `‖Φ(±k, z)‖²` for `1 ≤ k ≤ n` in one product sweep.
pub fn norm_scan(potential: &Potential, z: C64, n: usize, direction: Direction) -> Result<NormScan> {
    if n == 0 {
        return Err(param("n", "norm scan length must be at least 1"));
    }
    Ok(norm_scan_samples(&sweep_samples(potential, n, direction), z, direction))
}

/// Equidistributed phase `j/count` as a fixed-point fraction.
pub fn grid_phase(j: usize, count: usize) -> Phase {
    (u128::MAX / count as u128).wrapping_mul(j as u128)
}

/// `(1/n)` times the average over `samples` equidistributed phases `ω_j = j/samples`
/// of `log ‖Φ_n(z, θ, ω_j)‖`, an upper-biased estimate of the Lyapunov exponent.
pub fn lyapunov_estimate(potential: &Potential, n: i64, z: C64, samples: usize) -> Result<f64> {
    let logs = lyapunov_log_norms(potential, n, z, samples)?;
    Ok(logs.iter().sum::<f64>() / (samples as f64 * n as f64))
}

/// `log ‖Φ_n(z, θ, ω_j)‖` for `ω_j = j/samples`, in phase order.
pub fn lyapunov_log_norms(potential: &Potential, n: i64, z: C64, samples: usize) -> Result<Vec<f64>> {
    if n <= 0 {
        return Err(param("n", "must be positive"));
    }
    if samples == 0 {
        return Err(param("samples", "must be positive"));
    }
    if !potential.is_quasi_periodic() {
        return Err(param("potential", "Lyapunov estimates need a quasi-periodic family"));
    }
    (0..samples)
        .into_par_iter()
        .map(|j| {
            let shifted = potential.with_omega(grid_phase(j, samples))?;
            Ok(transfer_scaled(&shifted, n, z).log_norm())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{Frequency, PotentialSpec};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn one_step_examples() {
        let free = PotentialSpec::Free.compile().unwrap();
        let m = one_step(&free, 1, c(0.0, 0.0));
        assert_eq!(m, Mat2::new(c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)));
        let fib = PotentialSpec::Fibonacci { lambda: 8.0 }.compile().unwrap();
        let m = one_step(&fib, 1, c(0.0, 1.0));
        assert_eq!(m.a11, c(-8.0, 1.0));
        assert_eq!(m.det(), c(1.0, 0.0));
    }

    #[test]
    fn transfer_branches() {
        let free = PotentialSpec::Free.compile().unwrap();
        assert_eq!(transfer(&free, 0, c(0.3, 0.2)), Mat2::IDENTITY);
        let m = transfer(&free, 2, c(0.0, 0.0));
        assert_eq!(m, Mat2::IDENTITY.scale(-1.0));
        let fib = PotentialSpec::Fibonacci { lambda: 8.0 }.compile().unwrap();
        let z = c(0.7, 0.3);
        for n in 1..30 {
            // Φ(−n) inverts the forward product over sites 1−n, …, 0
            let back = transfer(&fib, -n, z);
            let mut direct = Mat2::IDENTITY;
            for site in (1 - n)..=0 {
                direct = one_step(&fib, site, z) * direct;
            }
            let id = back * direct;
            let scale = back.operator_norm() * direct.operator_norm();
            let err = (id.a11 - 1.0).norm() + id.a12.norm() + id.a21.norm() + (id.a22 - 1.0).norm();
            assert!(err < 1e-13 * scale, "n = {n}");
        }
    }

    #[test]
    fn columns_are_the_two_solutions() {
        let fib = PotentialSpec::Fibonacci { lambda: 5.0 }.compile().unwrap();
        let z = c(1.3, 0.4);
        // direct recursion u(n+1) = (z − V(n)) u(n) − u(n−1)
        let (mut u0_prev, mut u0) = (c(0.0, 0.0), c(1.0, 0.0));
        let (mut u1_prev, mut u1) = (c(1.0, 0.0), c(0.0, 0.0));
        for n in 1..40 {
            let v = fib.sample(n);
            let u0_next = (z - v) * u0 - u0_prev;
            let u1_next = (z - v) * u1 - u1_prev;
            u0_prev = u0;
            u0 = u0_next;
            u1_prev = u1;
            u1 = u1_next;
            let m = transfer(&fib, n, z);
            assert!((m.a11 - u0).norm() <= 1e-12 * u0.norm().max(1.0));
            assert!((m.a21 - u0_prev).norm() <= 1e-12 * u0_prev.norm().max(1.0));
            assert!((m.a12 - u1).norm() <= 1e-12 * u1.norm().max(1.0));
            assert!((m.a22 - u1_prev).norm() <= 1e-12 * u1_prev.norm().max(1.0));
            // determinant relative to the size of its two products
            let wronskian = m.a11 * m.a22 - m.a21 * m.a12;
            assert!((wronskian - 1.0).norm() < 1e-10 * m.frobenius_sq());
        }
    }

    #[test]
    fn norms() {
        assert_eq!(Mat2::IDENTITY.operator_norm(), 1.0);
        assert_eq!(Mat2::diag(2.0, 0.5).operator_norm(), 2.0);
        assert_eq!(Mat2::IDENTITY.frobenius_sq(), 2.0);
        let m = Mat2::new(c(1.0, 2.0), c(-0.5, 0.1), c(3.0, 0.0), c(0.2, -1.0));
        // oracle: power iteration on M*M
        let mut v = (c(1.0, 0.0), c(0.3, 0.1));
        for _ in 0..200 {
            let w = (m.a11 * v.0 + m.a12 * v.1, m.a21 * v.0 + m.a22 * v.1);
            let u = (
                m.a11.conj() * w.0 + m.a21.conj() * w.1,
                m.a12.conj() * w.0 + m.a22.conj() * w.1,
            );
            let nrm = (u.0.norm_sqr() + u.1.norm_sqr()).sqrt();
            v = (u.0 / nrm, u.1 / nrm);
        }
        let w = (m.a11 * v.0 + m.a12 * v.1, m.a21 * v.0 + m.a22 * v.1);
        let sigma = (w.0.norm_sqr() + w.1.norm_sqr()).sqrt();
        assert!((sigma - m.operator_norm()).abs() < 1e-12);
    }

    #[test]
    fn scan_free_complex_energy_grows() {
        let free = PotentialSpec::Free.compile().unwrap();
        let scan = norm_scan(&free, c(0.0, 1.0), 10, Direction::Right).unwrap();
        assert!(scan.max_norm_sq(1) >= 1.0);
        for w in scan.log_max_norm_sq.windows(2).skip(2) {
            assert!(w[1] > w[0]);
        }
        // oracle: direct powers of the one-step matrix
        let t = one_step(&free, 1, c(0.0, 1.0));
        let mut p = Mat2::IDENTITY;
        let mut best: f64 = 0.0;
        for n in 1..=10 {
            p = t * p;
            best = best.max(p.operator_norm().powi(2));
            assert!((scan.max_norm_sq(n) / best - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scan_saturates() {
        let free = PotentialSpec::Free.compile().unwrap();
        let scan = norm_scan(&free, c(30.0, 1.0), 400, Direction::Left).unwrap();
        let at = scan.saturated_at.expect("must saturate");
        assert!(at < 400);
        assert_eq!(scan.inverse_max_norm_sq(at), 0.0);
        assert_eq!(scan.log_max_norm_sq.len(), at - 1);
        assert!(norm_scan(&free, c(0.0, 1.0), 0, Direction::Left).is_err());
    }

    #[test]
    fn fibonacci_real_spectrum_energy_no_saturation() {
        let fib = PotentialSpec::Fibonacci { lambda: 8.0 }.compile().unwrap();
        // E = 0 is near a band of the level-k approximants; growth stays modest
        let scan = norm_scan(&fib, c(0.0, 0.0), 100, Direction::Right).unwrap();
        assert!(scan.saturated_at.is_none());
        let direct = (1..=100)
            .map(|n| transfer(&fib, n, c(0.0, 0.0)).operator_norm().powi(2))
            .fold(0.0, f64::max);
        assert!((scan.max_norm_sq(100) / direct - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lyapunov_free_elliptic_vanishes() {
        let free_family =
            PotentialSpec::almost_mathieu(0.0, Frequency::Golden, Frequency::zero()).compile().unwrap();
        let est = lyapunov_estimate(&free_family, 4000, c(0.0, 0.0), 4).unwrap();
        assert!(est.abs() < 1e-3);
        assert!(lyapunov_estimate(&free_family, 0, c(0.0, 0.0), 4).is_err());
    }

    #[test]
    fn lyapunov_respects_herman_floor() {
        let amo = PotentialSpec::almost_mathieu(20.0, Frequency::Golden, Frequency::zero())
            .compile()
            .unwrap();
        let est = lyapunov_estimate(&amo, 1000, c(0.0, 0.0), 50).unwrap();
        assert!(est >= 10f64.ln() - 0.1, "{est}");
    }
}
