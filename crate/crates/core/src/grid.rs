//! Piecewise density on a strictly increasing support grid.
//!
//! Every posterior marginal in the crate, conditional or model-averaged, is
//! carried as a [`GridDensity`]. The density is normalized by the trapezoid
//! rule at construction. Between support points the log density is
//! interpolated linearly; outside the support the density is zero.

use serde::Serialize;

use crate::error::{MixError, Result};
use crate::special::trapezoid;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridDensity {
    support: Vec<f64>,
    log_density: Vec<f64>,
}

impl GridDensity {
    /// Builds a normalized density from unnormalized log values.
    pub fn new(support: Vec<f64>, log_density: Vec<f64>) -> Result<Self> {
        if support.len() < 2 {
            return Err(MixError::InvalidGrid("need at least two support points".into()));
        }
        if support.len() != log_density.len() {
            return Err(MixError::InvalidGrid(format!(
                "support has {} points but log density has {}",
                support.len(),
                log_density.len()
            )));
        }
        if support.iter().any(|x| !x.is_finite()) {
            return Err(MixError::InvalidGrid("non-finite support point".into()));
        }
        if support.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MixError::InvalidGrid("support is not strictly increasing".into()));
        }
        if log_density.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(MixError::InvalidGrid("log density is NaN or +inf".into()));
        }
        let max = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(MixError::InvalidGrid("density is zero everywhere".into()));
        }
        let scaled: Vec<f64> = log_density.iter().map(|&l| (l - max).exp()).collect();
        let mass = trapezoid(&support, &scaled);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(MixError::InvalidGrid(format!("cannot normalize (mass {mass})")));
        }
        let shift = max + mass.ln();
        let log_density = log_density.into_iter().map(|l| l - shift).collect();
        Ok(Self { support, log_density })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    pub fn densities(&self) -> Vec<f64> {
        self.log_density.iter().map(|l| l.exp()).collect()
    }

    pub fn lower(&self) -> f64 {
        self.support[0]
    }

    pub fn upper(&self) -> f64 {
        self.support[self.support.len() - 1]
    }

    /// Trapezoid integral of the density over its support (1 after construction).
    pub fn integral(&self) -> f64 {
        trapezoid(&self.support, &self.densities())
    }

    pub fn log_density_at(&self, x: f64) -> f64 {
        let s = &self.support;
        if !(x >= s[0] && x <= s[s.len() - 1]) {
            return f64::NEG_INFINITY;
        }
        // index of the first support point > x
        let hi = s.partition_point(|&p| p <= x);
        if hi == 0 {
            return self.log_density[0];
        }
        if hi == s.len() {
            return self.log_density[s.len() - 1];
        }
        let lo = hi - 1;
        if x == s[lo] {
            return self.log_density[lo];
        }
        let (l0, l1) = (self.log_density[lo], self.log_density[hi]);
        if l0 == f64::NEG_INFINITY || l1 == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let t = (x - s[lo]) / (s[hi] - s[lo]);
        l0 + t * (l1 - l0)
    }

    pub fn density_at(&self, x: f64) -> f64 {
        self.log_density_at(x).exp()
    }

    pub fn mean(&self) -> f64 {
        let f: Vec<f64> = self
            .support
            .iter()
            .zip(&self.log_density)
            .map(|(x, l)| x * l.exp())
            .collect();
        trapezoid(&self.support, &f)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let f: Vec<f64> = self
            .support
            .iter()
            .zip(&self.log_density)
            .map(|(x, l)| (x - m) * (x - m) * l.exp())
            .collect();
        trapezoid(&self.support, &f).max(0.0)
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Evaluates the density on `points` spaced evenly over the support.
    pub fn resample_even(&self, points: usize) -> Vec<(f64, f64)> {
        let points = points.max(2);
        let (lo, hi) = (self.lower(), self.upper());
        (0..points)
            .map(|i| {
                let x = if i + 1 == points {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (points - 1) as f64
                };
                (x, self.density_at(x))
            })
            .collect()
    }
}
