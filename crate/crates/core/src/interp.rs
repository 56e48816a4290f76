//! Shape-preserving piecewise cubic Hermite interpolation (PCHIP).

use serde::{Deserialize, Serialize};

/// Monotone cubic interpolant through `(xs[k], ys[k])`.
///
/// Slopes follow the Fritsch-Butland weighted harmonic mean, which keeps the
/// interpolant monotone on every interval where the data are monotone. Outside
/// the sample range the curve continues linearly with the end slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    /// Returns `None` unless there are at least two finite samples with
    /// strictly increasing abscissae.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Option<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return None;
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return None;
        }
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let d: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = d[0];
        slopes[n - 1] = d[n - 2];
        for k in 1..n - 1 {
            if d[k - 1] * d[k] <= 0.0 {
                slopes[k] = 0.0;
            } else {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                slopes[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
            }
        }
        Some(Self { xs, ys, slopes })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.slopes[0] * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.slopes[n - 1] * (x - self.xs[n - 1]);
        }
        let k = self.xs.partition_point(|&xk| xk <= x) - 1;
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[k] + h10 * h * self.slopes[k] + h01 * self.ys[k + 1] + h11 * h * self.slopes[k + 1]
    }

    /// Slope used for extrapolation past the last sample.
    pub fn right_slope(&self) -> f64 {
        self.slopes[self.slopes.len() - 1]
    }

    /// Returns the same curve shifted vertically by `dy`.
    pub fn shifted(&self, dy: f64) -> Self {
        Self {
            xs: self.xs.clone(),
            ys: self.ys.iter().map(|y| y + dy).collect(),
            slopes: self.slopes.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_knots_and_lines() {
        let c = MonotoneCubic::new(vec![0.0, 1.0, 2.0, 4.0], vec![0.0, 2.0, 4.0, 8.0]).unwrap();
        for x in [0.0, 0.3, 1.0, 1.7, 3.1, 4.0] {
            assert!((c.eval(x) - 2.0 * x).abs() < 1e-14);
        }
        assert!((c.eval(5.0) - 10.0).abs() < 1e-14);
        assert!((c.eval(-1.0) + 2.0).abs() < 1e-14);
    }

    #[test]
    fn stays_monotone_on_steps() {
        let c = MonotoneCubic::new(vec![0.0, 1.0, 1.1, 3.0], vec![5.0, 5.0, 0.0, -0.1]).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=3000 {
            let y = c.eval(k as f64 * 1e-3);
            assert!(y <= prev + 1e-12);
            prev = y;
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(MonotoneCubic::new(vec![0.0], vec![1.0]).is_none());
        assert!(MonotoneCubic::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_none());
        assert!(MonotoneCubic::new(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_none());
    }
}
