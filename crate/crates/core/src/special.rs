//! Small numerical helpers shared across modules.

use std::f64::consts::PI;

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn ln_factorial(k: f64) -> f64 {
    ln_gamma(k + 1.0)
}

/// `log(sum(exp(xs)))`, returning `-inf` for an empty or all `-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log weights into probabilities with max-subtraction.
pub fn softmax(log_w: &[f64]) -> Vec<f64> {
    let lse = logsumexp(log_w);
    log_w.iter().map(|&x| (x - lse).exp()).collect()
}

pub fn normal_ln_pdf(x: f64, mean: f64, precision: f64) -> f64 {
    0.5 * (precision / (2.0 * PI)).ln() - 0.5 * precision * (x - mean) * (x - mean)
}

/// Poisson log pmf; a zero rate puts all mass on zero.
pub fn poisson_ln_pmf(y: f64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if y == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    y * rate.ln() - rate - ln_factorial(y)
}

/// Gamma(shape, rate) log density.
pub fn gamma_ln_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    if x == 0.0 {
        return match shape.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => rate.ln(),
            _ => f64::NEG_INFINITY,
        };
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn beta_ln_pdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return f64::NEG_INFINITY;
    }
    ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
}

/// Trapezoid rule over an arbitrary increasing abscissa.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}
