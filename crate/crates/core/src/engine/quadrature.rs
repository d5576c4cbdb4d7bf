//! Mode-centred adaptive Simpson quadrature for one-dimensional, unimodal
//! log-integrands.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::special::logsumexp;

/// Tails are extended until the log-integrand has dropped this far below its
/// maximum (or a hard bound is reached).
const TAIL_DROP: f64 = 40.0;

/// Halving passes allowed beyond `refinement` when the estimate has not yet
/// settled.
const EXTRA_PASSES: usize = 4;

/// Maximum relative change of the integral between the last two passes.
pub const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Points of the base grid; odd, at least 21.
    pub grid_size: usize,
    /// Minimum half-width of the grid in posterior standard deviations.
    pub log_range_halfwidth: f64,
    /// Number of grid-halving passes after the base grid (more are taken, up
    /// to four, while the integral is still moving).
    pub refinement: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { grid_size: 201, log_range_halfwidth: 8.0, refinement: 2 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 21 || self.grid_size.is_multiple_of(2) {
            return Err(MixError::InvalidConfig(format!(
                "grid_size must be odd and >= 21, got {}",
                self.grid_size
            )));
        }
        if !(self.log_range_halfwidth.is_finite() && self.log_range_halfwidth > 0.0) {
            return Err(MixError::InvalidConfig("log_range_halfwidth must be positive".into()));
        }
        Ok(())
    }
}

/// A log-integrand tabulated on the finest Simpson grid, with its integral
/// and the base-grid quadrature weights.
#[derive(Debug, Clone)]
pub(crate) struct LogGrid {
    pub nodes: Vec<f64>,
    pub log_f: Vec<f64>,
    pub log_integral: f64,
    /// Base grid nodes (every `2^passes`-th fine node).
    pub coarse_nodes: Vec<f64>,
    /// Normalized log quadrature weights on the base grid (sum of exp = 1).
    pub coarse_log_weights: Vec<f64>,
}

impl LogGrid {
    /// Inverse-CDF draw from the normalized integrand, linear within cells.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let max = self.log_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let f: Vec<f64> = self.log_f.iter().map(|l| (l - max).exp()).collect();
        let mut cdf = Vec::with_capacity(f.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 1..f.len() {
            acc += 0.5 * (self.nodes[i] - self.nodes[i - 1]) * (f[i] + f[i - 1]);
            cdf.push(acc);
        }
        let target = rng.random::<f64>() * acc;
        let i = cdf.partition_point(|&c| c < target).clamp(1, f.len() - 1);
        let (x0, x1) = (self.nodes[i - 1], self.nodes[i]);
        let (f0, f1) = (f[i - 1], f[i]);
        let need = target - cdf[i - 1];
        let h = x1 - x0;
        // solve f0 t h + (f1 - f0) t^2 h / 2 = need for t in [0, 1]
        let a = 0.5 * (f1 - f0) * h;
        let b = f0 * h;
        let t = if a.abs() < 1e-14 * b.abs().max(1e-300) {
            if b > 0.0 { need / b } else { 0.5 }
        } else {
            let disc = (b * b + 4.0 * a * need).max(0.0);
            (-b + disc.sqrt()) / (2.0 * a)
        };
        x0 + t.clamp(0.0, 1.0) * h
    }
}

/// Maximizes a unimodal function: a coarse scan on `[lo, hi]` followed by
/// golden-section refinement around the best scan point.
pub(crate) fn maximize<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, step: f64) -> f64 {
    let steps = ((hi - lo) / step).ceil() as usize;
    let mut best = lo;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..=steps {
        let x = (lo + step * i as f64).min(hi);
        let v = f(x);
        if v > best_v {
            best_v = v;
            best = x;
        }
    }
    golden_section(f, (best - step).max(lo), (best + step).min(hi))
}

pub(crate) fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Distance from `mode` (in direction `dir`) at which `f` has dropped by
/// half a nat; one standard deviation for a Gaussian.
fn half_nat_distance<F: Fn(f64) -> f64>(f: &F, mode: f64, fmax: f64, dir: f64, limit: f64) -> f64 {
    let target = fmax - 0.5;
    let mut inner = 0.0;
    let mut outer = 1e-4 * (1.0 + mode.abs());
    while f(mode + dir * outer) > target {
        inner = outer;
        outer *= 2.0;
        if outer > limit {
            return limit;
        }
    }
    for _ in 0..40 {
        let mid = 0.5 * (inner + outer);
        if f(mode + dir * mid) > target {
            inner = mid;
        } else {
            outer = mid;
        }
    }
    0.5 * (inner + outer)
}

/// Pulls `edge` back towards `mode` to where the log-integrand is
/// [`TAIL_DROP`] nats below `fmax`. Steep walls otherwise waste most of the
/// grid on negligible mass.
fn trim_tail<F: Fn(f64) -> f64>(f: &F, mode: f64, edge: f64, fmax: f64) -> f64 {
    let target = fmax - TAIL_DROP;
    if !(f(edge) < target) {
        return edge;
    }
    let (mut inner, mut outer) = (mode, edge);
    for _ in 0..60 {
        let mid = 0.5 * (inner + outer);
        if f(mid) > target {
            inner = mid;
        } else {
            outer = mid;
        }
    }
    outer
}

/// Composite Simpson log-weights for consecutive segments sharing their
/// end nodes. Each segment is `(intervals, step)` with an even interval count.
fn simpson_log_weights(segments: &[(usize, f64)]) -> Vec<f64> {
    let total: usize = segments.iter().map(|s| s.0).sum();
    let mut w = vec![0.0; total + 1];
    let mut start = 0;
    for &(m, h) in segments {
        for i in 0..=m {
            let c = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w[start + i] += c * h / 3.0;
        }
        start += m;
    }
    w.into_iter().map(f64::ln).collect()
}

fn simpson_log_integral(log_f: &[f64], segments: &[(usize, f64)]) -> f64 {
    let lw = simpson_log_weights(segments);
    let terms: Vec<f64> = lw.iter().zip(log_f).map(|(w, f)| w + f).collect();
    logsumexp(&terms)
}

/// Splits `grid_size - 1` intervals between `[lo, mode]` and `[mode, hi]`,
/// each side getting an even count and its own step.
fn base_segments(lo: f64, mode: f64, hi: f64, n0: usize) -> Vec<(usize, f64)> {
    let intervals = n0 - 1;
    if !(mode > lo && mode < hi) {
        return vec![(intervals, (hi - lo) / intervals as f64)];
    }
    let left = (intervals / 2 + 1) & !1;
    let left = left.clamp(2, intervals - 2);
    let right = intervals - left;
    vec![(left, (mode - lo) / left as f64), (right, (hi - mode) / right as f64)]
}

/// Integrates `exp(log_f)` over a grid centred at `mode`, widened to at least
/// `log_range_halfwidth` half-nat scales on each side and extended until the
/// tails have dropped by [`TAIL_DROP`] nats, within `bounds`.
pub(crate) fn integrate<F: Fn(f64) -> f64>(
    log_f: &F,
    mode: f64,
    bounds: (f64, f64),
    q: &QuadratureConfig,
) -> Result<LogGrid> {
    let fmax = log_f(mode);
    if !fmax.is_finite() {
        return Err(MixError::Quadrature(format!("log-integrand not finite at mode {mode}")));
    }
    let span = bounds.1 - bounds.0;
    let sd_lo = half_nat_distance(log_f, mode, fmax, -1.0, span);
    let sd_hi = half_nat_distance(log_f, mode, fmax, 1.0, span);

    let mut lo = (mode - q.log_range_halfwidth * sd_lo).max(bounds.0);
    let mut hi = (mode + q.log_range_halfwidth * sd_hi).min(bounds.1);
    let mut step = sd_lo;
    while lo > bounds.0 && log_f(lo) > fmax - TAIL_DROP {
        lo = (lo - step).max(bounds.0);
        step *= 1.5;
    }
    let mut step = sd_hi;
    while hi < bounds.1 && log_f(hi) > fmax - TAIL_DROP {
        hi = (hi + step).min(bounds.1);
        step *= 1.5;
    }
    lo = trim_tail(log_f, mode, lo, fmax);
    hi = trim_tail(log_f, mode, hi, fmax);

    let n0 = q.grid_size;
    let mut segments = base_segments(lo, mode, hi, n0);
    let mut nodes = Vec::with_capacity(n0);
    let mut left = lo;
    for &(m, h) in &segments {
        nodes.extend((0..m).map(|i| left + h * i as f64));
        left += h * m as f64;
    }
    nodes.push(hi);
    if segments.len() == 2 {
        nodes[segments[0].0] = mode;
    }
    let mut values: Vec<f64> = nodes.iter().map(|&x| log_f(x)).collect();
    if values.iter().any(|v| v.is_nan()) {
        return Err(MixError::Quadrature("log-integrand is NaN on the grid".into()));
    }
    let coarse_nodes = nodes.clone();
    let coarse_values = values.clone();
    let coarse_segments = segments.clone();
    let mut estimate = simpson_log_integral(&values, &segments);
    let mut change = f64::NAN;

    let mut passes = 0;
    while passes < q.refinement || (passes < q.refinement + EXTRA_PASSES && !(change <= CONVERGENCE_TOL)) {
        passes += 1;
        for s in segments.iter_mut() {
            *s = (2 * s.0, 0.5 * s.1);
        }
        let mut fine_nodes = Vec::with_capacity(2 * nodes.len() - 1);
        let mut fine_values = Vec::with_capacity(2 * nodes.len() - 1);
        for i in 0..nodes.len() {
            fine_nodes.push(nodes[i]);
            fine_values.push(values[i]);
            if i + 1 < nodes.len() {
                let mid = 0.5 * (nodes[i] + nodes[i + 1]);
                let v = log_f(mid);
                if v.is_nan() {
                    return Err(MixError::Quadrature("log-integrand is NaN on the grid".into()));
                }
                fine_nodes.push(mid);
                fine_values.push(v);
            }
        }
        nodes = fine_nodes;
        values = fine_values;
        let next = simpson_log_integral(&values, &segments);
        change = (next - estimate).abs();
        estimate = next;
    }
    if !estimate.is_finite() {
        return Err(MixError::Quadrature("integral is not finite".into()));
    }
    if q.refinement > 0 && !(change <= CONVERGENCE_TOL) {
        return Err(MixError::Quadrature(format!(
            "relative change {change:.3e} between refinement passes exceeds {CONVERGENCE_TOL:e}"
        )));
    }

    let coarse_terms: Vec<f64> = simpson_log_weights(&coarse_segments)
        .iter()
        .zip(&coarse_values)
        .map(|(w, f)| w + f)
        .collect();
    let coarse_total = logsumexp(&coarse_terms);
    let coarse_log_weights = coarse_terms.iter().map(|t| t - coarse_total).collect();

    Ok(LogGrid {
        nodes,
        log_f: values,
        log_integral: estimate,
        coarse_nodes,
        coarse_log_weights,
    })
}
