//! Poisson components: conjugate Gamma prior on the rate (exact), or a
//! Gaussian prior on the log rate (integrated on a grid).

use std::f64::consts::PI;

use crate::engine::quadrature::{integrate, LogGrid, QuadratureConfig};
use crate::error::{MixError, Result};
use crate::grid::GridDensity;
use crate::model::{ComponentPosterior, LocationMarginal, NormalPrior};
use crate::special::{ln_factorial, ln_gamma};

const LOG_RATE_BOUNDS: (f64, f64) = (-300.0, 300.0);

fn count_stats(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let s: f64 = values.iter().sum();
    let log_fact: f64 = values.iter().map(|&y| ln_factorial(y)).sum();
    (n, s, log_fact)
}

/// Mode of Gamma(shape, rate), zero when the shape is below one.
pub(crate) fn gamma_rate_mode(shape: f64, rate: f64) -> f64 {
    if shape >= 1.0 {
        (shape - 1.0) / rate
    } else {
        0.0
    }
}

/// Exact conjugate update `Gamma(a + s, b + n)`.
pub fn fit_poisson_gamma(subset: &[f64], a: f64, b: f64) -> Result<ComponentPosterior> {
    if !(a.is_finite() && a > 0.0 && b.is_finite() && b > 0.0) {
        return Err(MixError::InvalidPrior(format!("Gamma({a}, {b}) on a Poisson rate")));
    }
    let (n, s, log_fact) = count_stats(subset);
    let shape = a + s;
    let rate = b + n;
    let log_evidence = if subset.is_empty() {
        0.0
    } else {
        a * b.ln() - ln_gamma(a) + ln_gamma(shape) - shape * rate.ln() - log_fact
    };
    Ok(ComponentPosterior {
        n: subset.len(),
        location: LocationMarginal::Gamma { shape, rate },
        precision: None,
        location_mode: gamma_rate_mode(shape, rate),
        precision_mode: None,
        log_evidence,
    })
}

/// Log-rate posterior on a grid.
#[derive(Debug, Clone)]
pub(crate) struct LogRateFit {
    pub n: usize,
    pub log_evidence: f64,
    pub eta_mode: f64,
    pub grid: LogGrid,
}

/// Newton iteration on the concave objective
/// `-p0 (eta - m0)^2 / 2 + s eta - n exp(eta)`.
pub(crate) fn log_rate_mode(n: f64, s: f64, prior: NormalPrior) -> f64 {
    let p0 = prior.precision;
    let mut eta = if n > 0.0 { ((s + 0.5) / n).ln() } else { prior.mean };
    for _ in 0..200 {
        let e = eta.exp();
        let grad = -p0 * (eta - prior.mean) + s - n * e;
        let curv = p0 + n * e;
        let step = (grad / curv).clamp(-2.0, 2.0);
        eta += step;
        if step.abs() <= 1e-14 * (1.0 + eta.abs()) {
            break;
        }
    }
    eta
}

pub(crate) fn fit_log_rate(values: &[f64], prior: NormalPrior, q: &QuadratureConfig) -> Result<LogRateFit> {
    let (n, s, log_fact) = count_stats(values);
    let p0 = prior.precision;
    let log_post = |eta: f64| -0.5 * p0 * (eta - prior.mean).powi(2) + s * eta - n * eta.exp();
    let eta_mode = log_rate_mode(n, s, prior);
    let grid = integrate(&log_post, eta_mode, LOG_RATE_BOUNDS, q)?;
    let log_evidence = if values.is_empty() {
        0.0
    } else {
        grid.log_integral - log_fact + 0.5 * (p0 / (2.0 * PI)).ln()
    };
    Ok(LogRateFit { n: values.len(), log_evidence, eta_mode, grid })
}

pub(crate) fn build_log_rate_component(fit: &LogRateFit) -> Result<ComponentPosterior> {
    let etas = &fit.grid.nodes;
    let support: Vec<f64> = etas.iter().map(|e| e.exp()).collect();
    let ld = fit.grid.log_f.iter().zip(etas).map(|(f, e)| f - e).collect();
    Ok(ComponentPosterior {
        n: fit.n,
        location: LocationMarginal::Grid(GridDensity::new(support, ld)?),
        precision: None,
        location_mode: fit.eta_mode.exp(),
        precision_mode: None,
        log_evidence: fit.log_evidence,
    })
}

/// Conditional posterior of a Poisson rate with `log rate ~ N(m0, 1/p0)`.
pub fn fit_poisson_lognormal(
    subset: &[f64],
    m0: f64,
    p0: f64,
    q: &QuadratureConfig,
) -> Result<ComponentPosterior> {
    q.validate()?;
    if !(m0.is_finite() && p0.is_finite() && p0 > 0.0) {
        return Err(MixError::InvalidPrior(format!("N({m0}, 1/{p0}) on a log rate")));
    }
    let fit = fit_log_rate(subset, NormalPrior { mean: m0, precision: p0 }, q)?;
    build_log_rate_component(&fit)
}
