//! Compensated summation and least-squares line fits used by the estimators.

use serde::Serialize;

use crate::error::{param, Result};

/// Neumaier's compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Compensated sum of a sequence, in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Adds `other` into `acc` elementwise with compensation carried in `carry`.
pub(crate) fn accumulate(acc: &mut [f64], carry: &mut [f64], other: &[f64]) {
    for ((s, c), &x) in acc.iter_mut().zip(carry.iter_mut()).zip(other) {
        let t = *s + x;
        if s.abs() >= x.abs() {
            *c += (*s - t) + x;
        } else {
            *c += (x - t) + *s;
        }
        *s = t;
    }
}

/// `log Σ exp(x_i)` without overflow or underflow; `−∞` for an empty input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + compensated_sum(values.iter().map(|v| (v - top).exp())).ln()
}

/// `y ≈ slope·x + intercept` by ordinary least squares.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination (1 for a perfect fit, also when `y` is constant).
    pub r_squared: f64,
    pub points: usize,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Least-squares line through `(x_i, y_i)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(param("points", "x and y lengths differ"));
    }
    if xs.len() < 2 {
        return Err(param("points", "a line fit needs at least two points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(param("points", "non-finite value"));
    }
    let n = xs.len() as f64;
    let mx = compensated_sum(xs.iter().copied()) / n;
    let my = compensated_sum(ys.iter().copied()) / n;
    let sxx = compensated_sum(xs.iter().map(|x| (x - mx) * (x - mx)));
    let sxy = compensated_sum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)));
    let syy = compensated_sum(ys.iter().map(|y| (y - my) * (y - my)));
    if sxx <= 0.0 {
        return Err(param("points", "all abscissae coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        points: xs.len(),
    })
}

/// Line fit of `log y` against `log x`; every value must be positive.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(param("curve", "log-log fit needs positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensation_recovers_lost_bits() {
        let values = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(values), 2.0);
        let mut acc = vec![0.0; 2];
        let mut carry = vec![0.0; 2];
        for v in values {
            accumulate(&mut acc, &mut carry, &[v, 2.0 * v]);
        }
        assert_eq!(acc[0] + carry[0], 2.0);
        assert_eq!(acc[1] + carry[1], 4.0);
    }

    #[test]
    fn log_domain_sums() {
        assert!((log_sum_exp(&[-800.0, -800.0]) - (-800.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[1.0, 2.0]) - (1f64.exp() + 2f64.exp()).ln()).abs() < 1e-14);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn exact_lines() {
        let xs = [1.0, 2.0, 3.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 3.0).abs() < 1e-14);
        assert!((fit.intercept + 1.0).abs() < 1e-13);
        assert!((fit.r_squared - 1.0).abs() < 1e-14);

        let ts = [10.0, 20.0, 40.0];
        let vs: Vec<f64> = ts.iter().map(|t: &f64| 0.5 * t.powf(1.7)).collect();
        let fit = loglog_fit(&ts, &vs).unwrap();
        assert!((fit.slope - 1.7).abs() < 1e-12);
        assert!(loglog_fit(&ts, &[1.0, 0.0, 1.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }
}
