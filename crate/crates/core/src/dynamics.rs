//! Time-averaged spreading of the state `δ₁`:
//! `a(n, T) = (2/T) ∫₀^∞ e^{−2t/T} |⟨e^{−itH} δ₁, δ_n⟩|² dt`.
//!
//! Two independent routes are provided. [`amplitude_parseval`] integrates
//! `|⟨(H − E − i/T)⁻¹ δ₁, δ_n⟩|²` over the energy axis, and
//! [`amplitude_evolution`] diagonalizes the truncated operator and evaluates
//! the time average in closed form. Both work on a finite box with Dirichlet
//! walls ([`BoxSpec`]).

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::fit::{accumulate, compensated_sum, linear_fit, loglog_fit, LinearFit};
use crate::potentials::Potential;

type C64 = Complex64;

/// Energies handled by one parallel task in [`amplitude_parseval`].
const PANEL: usize = 64;

/// Whole line `[−L, L]` or half line `[1, L]` with `ψ(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    WholeLine,
    HalfLine,
}

/// Finite box with Dirichlet walls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub half_width: usize,
    pub geometry: Geometry,
}

impl BoxSpec {
    pub fn new(half_width: usize, geometry: Geometry) -> Result<Self> {
        if half_width < 8 {
            return Err(param("L", format!("box half-width must be at least 8, got {half_width}")));
        }
        Ok(Self { half_width, geometry })
    }

    pub fn whole_line(half_width: usize) -> Result<Self> {
        Self::new(half_width, Geometry::WholeLine)
    }

    pub fn half_line(half_width: usize) -> Result<Self> {
        Self::new(half_width, Geometry::HalfLine)
    }

    /// Smallest admissible box for time `T` that also contains `[−n_max, n_max]`:
    /// `L = max(⌈8T⌉, n_max + 16)`.
    pub fn for_time(time: f64, n_max: usize, geometry: Geometry) -> Result<Self> {
        if !(time >= 1.0) || !time.is_finite() {
            return Err(param("T", format!("must be a finite number ≥ 1, got {time}")));
        }
        Self::new(((8.0 * time).ceil() as usize).max(n_max + 16), geometry)
    }

    /// First and last site.
    pub fn sites(&self) -> (i64, i64) {
        let l = self.half_width as i64;
        match self.geometry {
            Geometry::WholeLine => (-l, l),
            Geometry::HalfLine => (1, l),
        }
    }

    pub fn len(&self) -> usize {
        let (lo, hi) = self.sites();
        (hi - lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Potential values on the box sites.
    pub fn samples(&self, potential: &Potential) -> Vec<f64> {
        let (lo, hi) = self.sites();
        potential.samples(lo, hi)
    }

    /// Errors unless `L ≥ 8T`.
    pub fn check_time(&self, time: f64) -> Result<()> {
        if !(time >= 1.0) || !time.is_finite() {
            return Err(param("T", format!("must be a finite number ≥ 1, got {time}")));
        }
        if (self.half_width as f64) < 8.0 * time {
            return Err(param("L", format!("box half-width {} is below 8T = {}", self.half_width, 8.0 * time)));
        }
        Ok(())
    }
}

/// `φ(n) = ⟨R(z)δ₁, δ_n⟩` on a box, with `R(z) = (H − z)⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolventRow {
    pub z: C64,
    pub first_site: i64,
    pub values: Vec<C64>,
}

impl ResolventRow {
    /// `φ(n)`, zero outside the box.
    pub fn get(&self, n: i64) -> C64 {
        let i = n - self.first_site;
        if i < 0 {
            return C64::new(0.0, 0.0);
        }
        self.values.get(i as usize).copied().unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn last_site(&self) -> i64 {
        self.first_site + self.values.len() as i64 - 1
    }

    /// `d(z) = ⟨R(z)δ₁, δ₁⟩`.
    pub fn d(&self) -> C64 {
        self.get(1)
    }

    /// `c(z) = ⟨R(z)δ₁, δ₀⟩` (zero on the half line).
    pub fn c(&self) -> C64 {
        self.get(0)
    }

    /// Coefficient of `u₁` in `φ(n) = d u₀(n) + b u₁(n)` for `n ≥ 1`.
    /// The equation at site 1 forces `b = c − 1` for `R(z) = (H − z)⁻¹`.
    pub fn b(&self) -> C64 {
        self.c() - 1.0
    }

    /// `‖φ‖²`.
    pub fn norm_sq(&self) -> f64 {
        compensated_sum(self.values.iter().map(|v| v.norm_sqr()))
    }

    /// `Σ_{n > N} |φ(n)|²`.
    pub fn right_tail_sq(&self, n: i64) -> f64 {
        let start = (n + 1 - self.first_site).max(0) as usize;
        compensated_sum(self.values.iter().skip(start).map(|v| v.norm_sqr()))
    }

    /// `Σ_{n < −N} |φ(n)|²`.
    pub fn left_tail_sq(&self, n: i64) -> f64 {
        let end = (-n - self.first_site).clamp(0, self.values.len() as i64) as usize;
        compensated_sum(self.values[..end].iter().map(|v| v.norm_sqr()))
    }
}

/// Solves `(H − z)φ = δ_source` for the tridiagonal matrix with unit
/// off-diagonals and diagonal `diag`, by Riccati ratios from both walls.
/// For `Im z > 0` every pivot has imaginary part `≤ −Im z`, so no pivot vanishes.
pub fn solve_tridiagonal(diag: &[f64], source: usize, z: C64) -> Result<Vec<C64>> {
    let n = diag.len();
    if source >= n {
        return Err(param("source", format!("site index {source} outside box of {n} sites")));
    }
    if !(z.im > 0.0) {
        return Err(param("z", format!("needs Im z > 0, got {z}")));
    }
    let mut phi = vec![C64::new(0.0, 0.0); n];
    // right ratios φ(i)/φ(i−1), stored in place
    let mut right = C64::new(0.0, 0.0);
    for i in (source + 1..n).rev() {
        right = -1.0 / (diag[i] - z + right);
        phi[i] = right;
    }
    let mut left = C64::new(0.0, 0.0);
    for i in 0..source {
        left = -1.0 / (diag[i] - z + left);
        phi[i] = left;
    }
    let pivot = diag[source] - z + right + left;
    if pivot.norm() == 0.0 || !pivot.is_finite() {
        return Err(Error::Structural(format!("singular resolvent system at z = {z}")));
    }
    phi[source] = 1.0 / pivot;
    for i in source + 1..n {
        phi[i] = phi[i] * phi[i - 1];
    }
    for i in (0..source).rev() {
        phi[i] = phi[i] * phi[i + 1];
    }
    Ok(phi)
}

/// `⟨R(z)δ₁, δ_n⟩` for all sites of the box.
pub fn resolvent_row(potential: &Potential, z: C64, boxed: &BoxSpec) -> Result<ResolventRow> {
    resolvent_row_from_samples(&boxed.samples(potential), boxed, z)
}

/// As [`resolvent_row`], with the diagonal given directly on the box sites.
pub fn resolvent_row_from_samples(samples: &[f64], boxed: &BoxSpec, z: C64) -> Result<ResolventRow> {
    if samples.len() != boxed.len() {
        return Err(param("samples", "length must match the box"));
    }
    let (first, _) = boxed.sites();
    let values = solve_tridiagonal(samples, (1 - first) as usize, z)?;
    Ok(ResolventRow {
        z,
        first_site: first,
        values,
    })
}

/// Exponential decay rate of `|φ(n)|` to the right of the initial site,
/// from a line fit of `log |φ(n)|` over `2 ≤ n ≤ n_max`.
pub fn decay_rate(row: &ResolventRow, n_max: i64) -> Result<LinearFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = (2..=n_max.min(row.last_site()))
        .map(|n| (n as f64, row.get(n).norm()))
        .filter(|(_, v)| *v > 0.0)
        .map(|(n, v)| (n, v.ln()))
        .unzip();
    let mut fit = linear_fit(&xs, &ys)?;
    fit.slope = -fit.slope;
    Ok(fit)
}

/// Energy quadrature for [`amplitude_parseval`]: composite midpoint on
/// `[−K−1, K+1]` and a midpoint rule in `u = 1/E` on each exterior half-line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyQuadrature {
    /// Interior step; must not exceed `1/(4T)`.
    pub step: f64,
    /// Nodes per exterior half-line.
    pub exterior_nodes: usize,
}

impl EnergyQuadrature {
    /// Step `min(1/(4T), 0.01)` and 400 exterior nodes.
    pub fn for_time(time: f64) -> Self {
        Self {
            step: (0.25 / time).min(0.01),
            exterior_nodes: 400,
        }
    }

    pub fn validate(&self, time: f64) -> Result<()> {
        if !(self.step > 0.0) || self.step > 0.25 / time * (1.0 + 1e-12) {
            return Err(param(
                "quadrature.step",
                format!("step {} must lie in (0, 1/(4T)] = (0, {}]", self.step, 0.25 / time),
            ));
        }
        if self.exterior_nodes == 0 {
            return Err(param("quadrature.exterior_nodes", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Parseval,
    Evolution,
}

/// `a(n, T)` on the sites of a box.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AmplitudeProfile {
    pub time: f64,
    pub method: Method,
    pub boxed: BoxSpec,
    pub first_site: i64,
    pub values: Vec<f64>,
    /// `Σ_n a(n, T)`.
    pub mass: f64,
    /// Interior quadrature step (Parseval only).
    pub step: Option<f64>,
    /// Contribution of `|E| > K+1` to the mass (Parseval only).
    pub exterior_mass: Option<f64>,
    /// Weight on the outer eighth of the box, a proxy for wall reflections.
    pub edge_weight: f64,
    /// Set when `mass < 0.999` or `edge_weight > 10⁻³`.
    pub leak_warning: bool,
}

impl AmplitudeProfile {
    fn assemble(time: f64, method: Method, boxed: BoxSpec, values: Vec<f64>, step: Option<f64>, exterior: Option<f64>) -> Self {
        let (first_site, last) = boxed.sites();
        let mass = compensated_sum(values.iter().copied());
        let margin = (boxed.half_width / 8) as i64;
        let edge_weight = compensated_sum(
            values
                .iter()
                .enumerate()
                .filter(|(i, _)| {
                    let n = first_site + *i as i64;
                    n > last - margin || (boxed.geometry == Geometry::WholeLine && n < first_site + margin)
                })
                .map(|(_, v)| *v),
        );
        Self {
            time,
            method,
            boxed,
            first_site,
            mass,
            leak_warning: mass < 0.999 || edge_weight > 1e-3,
            values,
            step,
            exterior_mass: exterior,
            edge_weight,
        }
    }

    /// `a(n, T)`, zero outside the box.
    pub fn get(&self, n: i64) -> f64 {
        let i = n - self.first_site;
        if i < 0 {
            return 0.0;
        }
        self.values.get(i as usize).copied().unwrap_or(0.0)
    }

    pub fn sites(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values.iter().enumerate().map(move |(i, v)| (self.first_site + i as i64, *v))
    }

    /// `Σ|a − b| / Σ|b|` over the union of both supports.
    pub fn relative_l1_distance(&self, reference: &AmplitudeProfile) -> f64 {
        let lo = self.first_site.min(reference.first_site);
        let hi = (self.first_site + self.values.len() as i64).max(reference.first_site + reference.values.len() as i64);
        let diff = compensated_sum((lo..hi).map(|n| (self.get(n) - reference.get(n)).abs()));
        diff / compensated_sum(reference.values.iter().map(|v| v.abs()))
    }

    /// CSV with header `n,a`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,a\n");
        for (n, v) in self.sites() {
            let _ = writeln!(out, "{n},{v:e}");
        }
        out
    }
}

fn check_potential_box(potential: &Potential, boxed: &BoxSpec, time: f64) -> Result<Vec<f64>> {
    boxed.check_time(time)?;
    let samples = boxed.samples(potential);
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(param("potential", "non-finite value on the box"));
    }
    Ok(samples)
}

/// `a(n, T) = (1/(Tπ)) ∫ |⟨(H − E − i/T)⁻¹δ₁, δ_n⟩|² dE` on the box.
///
/// The interior `[−K−1, K+1]` (with `K` from [`Potential::energy_bound`]) uses the
/// composite midpoint rule; the exterior is mapped to `u = 1/E ∈ (0, 1/(K+1))`,
/// where the integrand is smooth and bounded, and integrated the same way.
/// Panels run in parallel and are reduced in a fixed order with compensation.
pub fn amplitude_parseval(potential: &Potential, time: f64, boxed: &BoxSpec, quadrature: &EnergyQuadrature) -> Result<AmplitudeProfile> {
    let samples = check_potential_box(potential, boxed, time)?;
    quadrature.validate(time)?;
    let (first, _) = boxed.sites();
    let source = (1 - first) as usize;
    let eps = 1.0 / time;
    let edge = potential.energy_bound() + 1.0;
    let panels = ((2.0 * edge) / quadrature.step).ceil() as usize;
    let h = 2.0 * edge / panels as f64;
    let u_max = 1.0 / edge;
    let m = quadrature.exterior_nodes;
    let hu = u_max / m as f64;

    // node j: interior for j < panels, then exterior right, then exterior left
    let total = panels + 2 * m;
    let node = |j: usize| -> (f64, f64) {
        if j < panels {
            (-edge + (j as f64 + 0.5) * h, h)
        } else {
            let i = (j - panels) % m;
            let u = (i as f64 + 0.5) * hu;
            let e = if j < panels + m { 1.0 / u } else { -1.0 / u };
            (e, hu / (u * u))
        }
    };
    let len = samples.len();
    let chunks: Vec<Result<(Vec<f64>, f64)>> = (0..total.div_ceil(PANEL))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; len];
            let mut carry = vec![0.0; len];
            let mut exterior = 0.0;
            let mut term = vec![0.0; len];
            for j in c * PANEL..((c + 1) * PANEL).min(total) {
                let (e, w) = node(j);
                let phi = solve_tridiagonal(&samples, source, C64::new(e, eps))?;
                for (t, p) in term.iter_mut().zip(&phi) {
                    *t = w * p.norm_sqr();
                }
                if j >= panels {
                    exterior += term.iter().sum::<f64>();
                }
                accumulate(&mut acc, &mut carry, &term);
            }
            for (a, c) in acc.iter_mut().zip(&carry) {
                *a += c;
            }
            Ok((acc, exterior))
        })
        .collect();
    let mut acc = vec![0.0; len];
    let mut carry = vec![0.0; len];
    let mut exterior = 0.0;
    for chunk in chunks {
        let (part, ext) = chunk?;
        accumulate(&mut acc, &mut carry, &part);
        exterior += ext;
    }
    let scale = eps / std::f64::consts::PI;
    let values: Vec<f64> = acc.iter().zip(&carry).map(|(a, c)| (a + c) * scale).collect();
    Ok(AmplitudeProfile::assemble(
        time,
        Method::Parseval,
        *boxed,
        values,
        Some(h),
        Some(exterior * scale),
    ))
}

/// Eigenvalues and orthonormal eigenvectors of the real symmetric tridiagonal
/// matrix with diagonal `diag` and off-diagonal `off` (`off[i]` couples `i`
/// and `i+1`), by implicit QL iteration with Wilkinson-type shifts.
/// Returns eigenvalues in ascending order and `vectors[j]` for eigenvalue `j`.
pub fn tridiagonal_eigen(diag: &[f64], off: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = diag.len();
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    if off.len() + 1 != n {
        return Err(param("off", "off-diagonal must have one entry fewer than the diagonal"));
    }
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    let mut z: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut v = vec![0.0; n];
            v[j] = 1.0;
            v
        })
        .collect();
    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > 60 {
                return Err(Error::Structural(format!("QL iteration did not converge for eigenvalue {l}")));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let (lo, hi) = z.split_at_mut(i + 1);
                let zi = &mut lo[i];
                let zi1 = &mut hi[0];
                for k in 0..n {
                    let f = zi1[k];
                    zi1[k] = s * zi[k] + c * f;
                    zi[k] = c * zi[k] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| d[*a].total_cmp(&d[*b]));
    let values = order.iter().map(|&j| d[j]).collect();
    let vectors = order.iter().map(|&j| std::mem::take(&mut z[j])).collect();
    Ok((values, vectors))
}

/// `a(n, T)` from the eigen-decomposition `H_box = UΛUᵀ`:
/// `a(n, T) = Σ_{j,k} U_{1j}U_{nj}U_{1k}U_{nk} · 4/(4 + T²(λ_j − λ_k)²)`.
pub fn amplitude_evolution(potential: &Potential, time: f64, boxed: &BoxSpec) -> Result<AmplitudeProfile> {
    let samples = check_potential_box(potential, boxed, time)?;
    let (first, _) = boxed.sites();
    let source = (1 - first) as usize;
    let len = samples.len();
    let (lambdas, vectors) = tridiagonal_eigen(&samples, &vec![1.0; len - 1])?;
    let t2 = time * time;
    // kernel rows, symmetric
    let kernel: Vec<Vec<f64>> = (0..len)
        .into_par_iter()
        .map(|j| {
            (0..len)
                .map(|k| {
                    let gap = lambdas[j] - lambdas[k];
                    4.0 / (4.0 + t2 * gap * gap)
                })
                .collect()
        })
        .collect();
    let head: Vec<f64> = vectors.iter().map(|v| v[source]).collect();
    let values: Vec<f64> = (0..len)
        .into_par_iter()
        .map(|site| {
            let w: Vec<f64> = vectors.iter().zip(&head).map(|(v, h)| v[site] * h).collect();
            let total = compensated_sum(w.iter().zip(&kernel).map(|(wj, row)| {
                let inner: f64 = row.iter().zip(&w).map(|(k, wk)| k * wk).sum();
                wj * inner
            }));
            total.max(0.0)
        })
        .collect();
    Ok(AmplitudeProfile::assemble(time, Method::Evolution, *boxed, values, None, None))
}

/// Outside probabilities `P(N,T) = Σ_{|n|>N} a`, `P_r = Σ_{n>N} a`, `P_l = Σ_{n<−N} a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OutsideProbability {
    pub total: f64,
    pub right: f64,
    pub left: f64,
}

/// For `N ≥ 0` the two sides are disjoint; for `N < 0` every site counts and
/// the split is `n ≥ 1` (right) versus `n ≤ 0` (left).
pub fn outside_probability(profile: &AmplitudeProfile, n: i64) -> OutsideProbability {
    let (r_from, l_to) = if n >= 0 { (n + 1, -n - 1) } else { (1, 0) };
    let right = compensated_sum(profile.sites().filter(|(k, _)| *k >= r_from).map(|(_, v)| v));
    let left = compensated_sum(profile.sites().filter(|(k, _)| *k <= l_to).map(|(_, v)| v));
    OutsideProbability {
        total: right + left,
        right,
        left,
    }
}

/// `⟨|X|^p⟩(T) = Σ_n |n|^p a(n, T)`.
pub fn moments(profile: &AmplitudeProfile, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(param("p", format!("must be positive, got {p}")));
    }
    Ok(compensated_sum(profile.sites().map(|(n, v)| (n.abs() as f64).powf(p) * v)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Lower,
    Upper,
}

/// Finite-time proxy for a liminf/limsup growth exponent of a curve `T ↦ value`:
/// the minimum (lower) or maximum (upper) of consecutive two-point log-log
/// slopes over the largest-`T` half of a geometric grid. An estimate only.
pub fn exponent_fit(curve: &[(f64, f64)], mode: FitMode) -> Result<f64> {
    if curve.len() < 4 {
        return Err(param("curve", "need at least four grid points"));
    }
    if curve.iter().any(|(t, v)| !(*t > 0.0) || !(*v > 0.0)) {
        return Err(param("curve", "times and values must be positive"));
    }
    let mut pts = curve.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ratio = pts[1].0 / pts[0].0;
    if !(ratio > 1.0) || pts.windows(2).any(|w| ((w[1].0 / w[0].0) / ratio - 1.0).abs() > 1e-6) {
        return Err(param("curve", "times must form a strictly increasing geometric grid"));
    }
    let tail = &pts[pts.len() / 2..];
    let slopes = tail.windows(2).map(|w| (w[1].1 / w[0].1).ln() / (w[1].0 / w[0].0).ln());
    Ok(match mode {
        FitMode::Lower => slopes.fold(f64::INFINITY, f64::min),
        FitMode::Upper => slopes.fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Least-squares log-log slope of `T ↦ value`, usable on short grids.
pub fn growth_slope(curve: &[(f64, f64)]) -> Result<LinearFit> {
    let (ts, vs): (Vec<f64>, Vec<f64>) = curve.iter().copied().unzip();
    loglog_fit(&ts, &vs)
}

/// CSV with header `T,value`.
pub fn curve_to_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("T,value\n");
    for (t, v) in curve {
        let _ = writeln!(out, "{t},{v:e}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::PotentialSpec;
    use std::collections::BTreeMap;

    fn free() -> Potential {
        Potential::new(&PotentialSpec::Free).unwrap()
    }

    fn fibonacci(lambda: f64) -> Potential {
        Potential::new(&PotentialSpec::Fibonacci { lambda }).unwrap()
    }

    /// Dense complex Gaussian elimination as an independent oracle.
    fn dense_solve(diag: &[f64], source: usize, z: C64) -> Vec<C64> {
        let n = diag.len();
        let mut a = vec![vec![C64::new(0.0, 0.0); n + 1]; n];
        for i in 0..n {
            a[i][i] = diag[i] - z;
            if i + 1 < n {
                a[i][i + 1] = C64::new(1.0, 0.0);
                a[i + 1][i] = C64::new(1.0, 0.0);
            }
        }
        a[source][n] = C64::new(1.0, 0.0);
        for col in 0..n {
            let piv = (col..n).max_by(|x, y| a[*x][col].norm().total_cmp(&a[*y][col].norm())).unwrap();
            a.swap(col, piv);
            for row in 0..n {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..=n {
                        let t = a[col][k];
                        a[row][k] -= f * t;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n] / a[i][i]).collect()
    }

    #[test]
    fn riccati_solver_matches_dense_elimination() {
        let pot = fibonacci(3.0);
        let b = BoxSpec::whole_line(12).unwrap();
        let samples = b.samples(&pot);
        for z in [C64::new(0.3, 0.05), C64::new(-2.0, 1.0), C64::new(5.0, 0.3)] {
            let row = resolvent_row(&pot, z, &b).unwrap();
            let oracle = dense_solve(&samples, 13, z);
            for (x, y) in row.values.iter().zip(&oracle) {
                assert!((x - y).norm() < 1e-12 * (1.0 + y.norm()));
            }
        }
    }

    #[test]
    fn resolvent_bounds() {
        let pot = fibonacci(8.0);
        let b = BoxSpec::whole_line(200).unwrap();
        for e in [-9.0, -1.0, 0.0, 0.7, 8.0] {
            for eps in [1.0, 0.1, 0.02] {
                let row = resolvent_row(&pot, C64::new(e, eps), &b).unwrap();
                assert!(row.norm_sq().sqrt() <= 1.0 / eps * (1.0 + 1e-12));
                assert!(row.d().im > 0.0);
                // Σ|φ|² = Im d / ε for the resolvent of a self-adjoint matrix
                assert!((row.norm_sq() * eps / row.d().im - 1.0).abs() < 1e-9);
            }
        }
        assert!(resolvent_row(&pot, C64::new(0.0, 0.0), &b).is_err());
    }

    #[test]
    fn combes_thomas_decay_outside_spectrum() {
        let row = resolvent_row(&free(), C64::new(3.0, 1.0), &BoxSpec::whole_line(64).unwrap()).unwrap();
        let fit = decay_rate(&row, 40).unwrap();
        // exact rate: |λ₁| with λ₁ + 1/λ₁ = z, |λ₁| < 1
        let z = C64::new(3.0, 1.0);
        let root = (z * z - 4.0).sqrt();
        let lam = [(z - root) / 2.0, (z + root) / 2.0].into_iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min);
        assert!((fit.slope + lam.ln()).abs() < 1e-8);
        assert!(fit.slope > 0.0);
    }

    #[test]
    fn eigen_solver_on_free_chain() {
        let n = 40;
        let (vals, vecs) = tridiagonal_eigen(&vec![0.0; n], &vec![1.0; n - 1]).unwrap();
        for (j, v) in vals.iter().enumerate() {
            let exact = 2.0 * (std::f64::consts::PI * (n - j) as f64 / (n + 1) as f64).cos();
            assert!((v - exact).abs() < 1e-12);
        }
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = vecs[a].iter().zip(&vecs[b]).map(|(x, y)| x * y).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parseval_and_evolution_agree_for_free_motion() {
        let b = BoxSpec::whole_line(128).unwrap();
        let pars = amplitude_parseval(&free(), 10.0, &b, &EnergyQuadrature::for_time(10.0)).unwrap();
        let evol = amplitude_evolution(&free(), 10.0, &b).unwrap();
        assert!(pars.relative_l1_distance(&evol) < 0.02);
        for p in [&pars, &evol] {
            assert!(p.mass > 0.999 && p.mass <= 1.0 + 1e-6, "mass {}", p.mass);
            assert!(!p.leak_warning);
            // reflection symmetry about site 1
            for n in -60..60 {
                assert!((p.get(n) - p.get(2 - n)).abs() < 1e-9);
            }
        }
        let out = outside_probability(&evol, -1);
        assert!((out.total - evol.mass).abs() < 1e-15);
    }

    #[test]
    fn step_guard() {
        let b = BoxSpec::whole_line(128).unwrap();
        let q = EnergyQuadrature {
            step: 0.1,
            exterior_nodes: 10,
        };
        assert!(amplitude_parseval(&free(), 10.0, &b, &q).is_err());
        assert!(amplitude_parseval(&free(), 20.0, &b, &EnergyQuadrature::for_time(20.0)).is_err());
    }

    #[test]
    fn frozen_potential_stays_put() {
        let samples: BTreeMap<i64, f64> = (-200..=200).map(|n| (n, if n % 2 == 0 { 1e6 } else { -1e6 })).collect();
        let pot = Potential::new(&PotentialSpec::Explicit { samples }).unwrap();
        let prof = amplitude_evolution(&pot, 10.0, &BoxSpec::whole_line(80).unwrap()).unwrap();
        assert!(outside_probability(&prof, 5).total < 1e-9);
        assert!(prof.get(1) > 0.999);
    }

    #[test]
    fn outside_probabilities_and_moments() {
        let b = BoxSpec::whole_line(16).unwrap();
        let mut values = vec![0.0; b.len()];
        values[17] = 1.0;
        let delta = AmplitudeProfile::assemble(1.0, Method::Evolution, b, values, None, None);
        for p in [0.5, 1.0, 2.0, 3.5] {
            assert_eq!(moments(&delta, p).unwrap(), 1.0);
        }
        assert_eq!(outside_probability(&delta, 0).right, 1.0);
        assert_eq!(outside_probability(&delta, 1).total, 0.0);
        assert_eq!(outside_probability(&delta, 40).total, 0.0);
        assert!(moments(&delta, 0.0).is_err());
    }

    #[test]
    fn exponent_fit_on_power_laws() {
        let curve: Vec<(f64, f64)> = (0..6).map(|i| 10.0 * 2f64.powi(i)).map(|t| (t, 3.0 * t.powf(0.7))).collect();
        for mode in [FitMode::Lower, FitMode::Upper] {
            assert!((exponent_fit(&curve, mode).unwrap() - 0.7).abs() < 1e-6);
        }
        let flat: Vec<(f64, f64)> = curve.iter().map(|(t, _)| (*t, 2.0)).collect();
        assert_eq!(exponent_fit(&flat, FitMode::Upper).unwrap(), 0.0);
        assert!(exponent_fit(&curve[..3], FitMode::Lower).is_err());
        let mut bad = curve.clone();
        bad[2].1 = -1.0;
        assert!(exponent_fit(&bad, FitMode::Lower).is_err());
    }
}
