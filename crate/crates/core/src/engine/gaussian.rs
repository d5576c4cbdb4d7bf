//! Gaussian components with independent priors `mu ~ N(m0, 1/p0)` and
//! `tau ~ Gamma(a, b)`. The mean is integrated analytically for fixed `tau`;
//! `log tau` is integrated numerically.

use std::f64::consts::PI;

use crate::engine::quadrature::{integrate, maximize, LogGrid, QuadratureConfig};
use crate::error::{MixError, Result};
use crate::grid::GridDensity;
use crate::model::{ComponentPosterior, GammaPrior, LocationMarginal, NormalPrior};
use crate::special::{ln_gamma, logsumexp, normal_ln_pdf};

const LOG_TAU_BOUNDS: (f64, f64) = (-250.0, 250.0);

/// Sufficient statistics of one component's observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GaussianStats {
    pub n: usize,
    pub sum: f64,
    pub mean: f64,
    /// Sum of squares around the sample mean.
    pub ss: f64,
}

impl GaussianStats {
    pub fn new(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, sum: 0.0, mean: 0.0, ss: 0.0 };
        }
        let sum: f64 = values.iter().sum();
        let mean = sum / n as f64;
        let ss = values.iter().map(|y| (y - mean) * (y - mean)).sum();
        Self { n, sum, mean, ss }
    }

    fn log_evidence(&self, prior: NormalPrior, tau: f64) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        let p0 = prior.precision;
        let post = p0 + n * tau;
        let d = self.mean - prior.mean;
        0.5 * n * (tau / (2.0 * PI)).ln() + 0.5 * (p0 / post).ln()
            - 0.5 * (tau * self.ss + p0 * n * tau / post * d * d)
    }

    /// Mean and precision of `mu | tau, y`.
    pub fn mean_given_tau(&self, prior: NormalPrior, tau: f64) -> (f64, f64) {
        let n = self.n as f64;
        let prec = prior.precision + n * tau;
        ((prior.precision * prior.mean + tau * self.sum) / prec, prec)
    }
}

/// `log ∫ prod_i N(y_i | mu, 1/tau) N(mu | m0, 1/p0) dmu`.
pub fn gaussian_evidence_given_tau(values: &[f64], m0: f64, p0: f64, tau: f64) -> f64 {
    GaussianStats::new(values).log_evidence(NormalPrior { mean: m0, precision: p0 }, tau)
}

/// Posterior of `log tau` under a precision shared by all the given subsets.
#[derive(Debug, Clone)]
pub(crate) struct TauFit {
    pub stats: Vec<GaussianStats>,
    pub log_evidence: f64,
    pub tau_mode: f64,
    pub grid: LogGrid,
}

fn log_gamma_on_log_scale(prior: GammaPrior, u: f64) -> f64 {
    prior.shape * prior.rate.ln() - ln_gamma(prior.shape) + prior.shape * u - prior.rate * u.exp()
}

pub(crate) fn fit_tau(
    stats: Vec<GaussianStats>,
    mean_prior: NormalPrior,
    prec_prior: GammaPrior,
    q: &QuadratureConfig,
) -> Result<TauFit> {
    let log_post = |u: f64| {
        let tau = u.exp();
        log_gamma_on_log_scale(prec_prior, u)
            + stats.iter().map(|s| s.log_evidence(mean_prior, tau)).sum::<f64>()
    };
    let empty = stats.iter().all(|s| s.n == 0);
    let mode = if empty {
        (prec_prior.shape / prec_prior.rate).ln()
    } else {
        maximize(&log_post, -60.0, 60.0, 0.25)
    };
    let grid = integrate(&log_post, mode, LOG_TAU_BOUNDS, q)?;
    let log_evidence = if empty { 0.0 } else { grid.log_integral };
    Ok(TauFit { log_evidence, tau_mode: mode.exp(), grid, stats })
}

/// Normal mixture over the base tau grid for `mu | y`, tabulated at
/// `points` values spanning the mixture mean ± 10 sd.
fn location_marginal(
    stats: &GaussianStats,
    mean_prior: NormalPrior,
    fit: &TauFit,
    points: usize,
) -> Result<GridDensity> {
    let mut comps: Vec<(f64, f64, f64)> = Vec::new();
    let max_w = fit.grid.coarse_log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (&u, &lw) in fit.grid.coarse_nodes.iter().zip(&fit.grid.coarse_log_weights) {
        if lw < max_w - 32.0 {
            continue;
        }
        let (m, p) = stats.mean_given_tau(mean_prior, u.exp());
        comps.push((lw, m, p));
    }
    let total = logsumexp(&comps.iter().map(|c| c.0).collect::<Vec<_>>());
    let mut mean = 0.0;
    let mut second = 0.0;
    for &(lw, m, p) in &comps {
        let w = (lw - total).exp();
        mean += w * m;
        second += w * (1.0 / p + m * m);
    }
    let sd = (second - mean * mean).max(0.0).sqrt();
    let xs: Vec<f64> = (0..points)
        .map(|i| mean - 10.0 * sd + 20.0 * sd * i as f64 / (points - 1) as f64)
        .collect();
    let mut terms = vec![0.0; comps.len()];
    let ld = xs
        .iter()
        .map(|&x| {
            for (t, &(lw, m, p)) in terms.iter_mut().zip(&comps) {
                *t = lw + normal_ln_pdf(x, m, p);
            }
            logsumexp(&terms)
        })
        .collect();
    GridDensity::new(xs, ld)
}

fn prior_location_marginal(prior: NormalPrior, points: usize) -> Result<GridDensity> {
    let sd = prior.precision.recip().sqrt();
    let xs: Vec<f64> = (0..points)
        .map(|i| prior.mean - 10.0 * sd + 20.0 * sd * i as f64 / (points - 1) as f64)
        .collect();
    let ld = xs.iter().map(|&x| normal_ln_pdf(x, prior.mean, prior.precision)).collect();
    GridDensity::new(xs, ld)
}

/// `tau | y` as a density on the precision scale over the refined grid.
fn precision_marginal(fit: &TauFit) -> Result<GridDensity> {
    let us = &fit.grid.nodes;
    let support: Vec<f64> = us.iter().map(|u| u.exp()).collect();
    let ld = fit.grid.log_f.iter().zip(us).map(|(f, u)| f - u).collect();
    GridDensity::new(support, ld)
}

pub(crate) fn location_mode(stats: &GaussianStats, mean_prior: NormalPrior, tau: f64) -> f64 {
    if stats.n == 0 {
        mean_prior.mean
    } else {
        stats.mean_given_tau(mean_prior, tau).0
    }
}

pub(crate) fn build_components(
    fit: &TauFit,
    mean_prior: NormalPrior,
    q: &QuadratureConfig,
) -> Result<Vec<ComponentPosterior>> {
    let precision = precision_marginal(fit)?;
    fit.stats
        .iter()
        .map(|s| {
            let location = if s.n == 0 {
                prior_location_marginal(mean_prior, q.grid_size)?
            } else {
                location_marginal(s, mean_prior, fit, q.grid_size)?
            };
            Ok(ComponentPosterior {
                n: s.n,
                location: LocationMarginal::Grid(location),
                precision: Some(precision.clone()),
                location_mode: location_mode(s, mean_prior, fit.tau_mode),
                precision_mode: Some(fit.tau_mode),
                log_evidence: if fit.stats.len() == 1 {
                    fit.log_evidence
                } else {
                    s.log_evidence(mean_prior, fit.tau_mode)
                },
            })
        })
        .collect()
}

fn check_priors(mean_prior: NormalPrior, prec_prior: GammaPrior) -> Result<()> {
    let ok = |v: f64| v.is_finite() && v > 0.0;
    if !mean_prior.mean.is_finite() || !ok(mean_prior.precision) || !ok(prec_prior.shape) || !ok(prec_prior.rate)
    {
        return Err(MixError::InvalidPrior("Gaussian component prior".into()));
    }
    Ok(())
}

/// Conditional posterior of a Gaussian component with its own precision.
pub fn fit_gaussian_component(
    subset: &[f64],
    m0: f64,
    p0: f64,
    a: f64,
    b: f64,
    q: &QuadratureConfig,
) -> Result<ComponentPosterior> {
    let (mut comps, _) = fit_gaussian_shared_precision(&[subset.to_vec()], m0, p0, a, b, q)?;
    Ok(comps.remove(0))
}

/// Conditional posteriors of Gaussian components that share one precision,
/// and the joint conditional log evidence.
pub fn fit_gaussian_shared_precision(
    subsets: &[Vec<f64>],
    m0: f64,
    p0: f64,
    a: f64,
    b: f64,
    q: &QuadratureConfig,
) -> Result<(Vec<ComponentPosterior>, f64)> {
    q.validate()?;
    let mean_prior = NormalPrior { mean: m0, precision: p0 };
    let prec_prior = GammaPrior { shape: a, rate: b };
    check_priors(mean_prior, prec_prior)?;
    let stats = subsets.iter().map(|s| GaussianStats::new(s)).collect();
    let fit = fit_tau(stats, mean_prior, prec_prior, q)?;
    let comps = build_components(&fit, mean_prior, q)?;
    Ok((comps, fit.log_evidence))
}
