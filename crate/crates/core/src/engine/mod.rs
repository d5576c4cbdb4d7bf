//! Conditional fits given an allocation: per-component posteriors,
//! conditional modes and the conditional marginal likelihood `p(y | z)`.

mod gaussian;
mod poisson;
pub mod quadrature;

pub use gaussian::{fit_gaussian_component, fit_gaussian_shared_precision, gaussian_evidence_given_tau};
pub use poisson::{fit_poisson_gamma, fit_poisson_lognormal};
pub use quadrature::QuadratureConfig;

pub(crate) use gaussian::{fit_tau, GaussianStats, TauFit};
pub(crate) use poisson::{fit_log_rate, LogRateFit};

use crate::error::{MixError, Result};
use crate::model::{
    Allocation, ComponentPosterior, ConditionalFit, Family, FitSummary, ModalParams, Observations,
    PoissonPriorKind, PriorSpec,
};

/// Mode of `Dirichlet(alpha + counts)`.
pub fn dirichlet_mode(alpha: &[f64], counts: &[usize]) -> Result<Vec<f64>> {
    if alpha.len() != counts.len() {
        return Err(MixError::InvalidConfig(format!(
            "{} concentrations for {} components",
            alpha.len(),
            counts.len()
        )));
    }
    let k = alpha.len() as f64;
    let mut total = -k;
    for (j, (&a, &c)) in alpha.iter().zip(counts).enumerate() {
        let v = a + c as f64;
        if !(v > 1.0) {
            return Err(MixError::ModeUndefined { component: j, value: v });
        }
        total += v;
    }
    Ok(alpha
        .iter()
        .zip(counts)
        .map(|(&a, &c)| (a + c as f64 - 1.0) / total)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Detail {
    Summary,
    Full,
}

struct Fitted {
    modes: Vec<ModalParams>,
    log_evidence: f64,
    components: Option<Vec<ComponentPosterior>>,
}

fn check_inputs(y: &Observations, z: &Allocation, family: &Family, priors: &PriorSpec) -> Result<()> {
    if y.len() != z.n() {
        return Err(MixError::InvalidConfig(format!(
            "{} observations but allocation has length {}",
            y.len(),
            z.n()
        )));
    }
    if priors.k() != z.k() {
        return Err(MixError::InvalidConfig(format!(
            "{} concentrations for K = {}",
            priors.k(),
            z.k()
        )));
    }
    priors.validate(family)
}

fn fit_impl(
    y: &Observations,
    z: &Allocation,
    family: &Family,
    priors: &PriorSpec,
    q: &QuadratureConfig,
    detail: Detail,
) -> Result<Fitted> {
    check_inputs(y, z, family, priors)?;
    q.validate()?;
    let parts = z.partition(y.values());
    let full = detail == Detail::Full;
    match *family {
        Family::Gaussian { shared_precision: true } => {
            let stats: Vec<GaussianStats> = parts.iter().map(|p| GaussianStats::new(p)).collect();
            let fit = fit_tau(stats, priors.gaussian_mean, priors.gaussian_precision, q)?;
            Ok(gaussian_fitted(&[fit], priors, q, full, true)?)
        }
        Family::Gaussian { shared_precision: false } => {
            let fits = parts
                .iter()
                .map(|p| fit_tau(vec![GaussianStats::new(p)], priors.gaussian_mean, priors.gaussian_precision, q))
                .collect::<Result<Vec<_>>>()?;
            Ok(gaussian_fitted(&fits, priors, q, full, false)?)
        }
        Family::Poisson { prior: PoissonPriorKind::GammaConjugate } => {
            let g = priors.poisson_gamma;
            let comps = parts
                .iter()
                .map(|p| fit_poisson_gamma(p, g.shape, g.rate))
                .collect::<Result<Vec<_>>>()?;
            let log_evidence = comps.iter().map(|c| c.log_evidence).sum();
            let modes = comps.iter().map(ComponentPosterior::modal_params).collect();
            Ok(Fitted { modes, log_evidence, components: full.then_some(comps) })
        }
        Family::Poisson { prior: PoissonPriorKind::LogNormal } => {
            let fits: Vec<LogRateFit> = parts
                .iter()
                .map(|p| fit_log_rate(p, priors.poisson_lognormal, q))
                .collect::<Result<_>>()?;
            let log_evidence = fits.iter().map(|f| f.log_evidence).sum();
            let modes = fits
                .iter()
                .map(|f| ModalParams { location: f.eta_mode.exp(), precision: None })
                .collect();
            let components = if full {
                Some(fits.iter().map(poisson::build_log_rate_component).collect::<Result<_>>()?)
            } else {
                None
            };
            Ok(Fitted { modes, log_evidence, components })
        }
    }
}

fn gaussian_fitted(
    fits: &[TauFit],
    priors: &PriorSpec,
    q: &QuadratureConfig,
    full: bool,
    shared: bool,
) -> Result<Fitted> {
    let mut modes = Vec::new();
    for fit in fits {
        for s in &fit.stats {
            modes.push(ModalParams {
                location: gaussian::location_mode(s, priors.gaussian_mean, fit.tau_mode),
                precision: Some(fit.tau_mode),
            });
        }
    }
    let log_evidence = fits.iter().map(|f| f.log_evidence).sum();
    let components = if full {
        let mut out = Vec::new();
        for fit in fits {
            out.extend(gaussian::build_components(fit, priors.gaussian_mean, q)?);
        }
        Some(out)
    } else {
        None
    };
    debug_assert!(!shared || fits.len() == 1);
    Ok(Fitted { modes, log_evidence, components })
}

/// Full conditional fit: marginals, modes, modal weights and `log p(y | z)`.
pub fn conditional_fit(
    y: &Observations,
    z: &Allocation,
    family: &Family,
    priors: &PriorSpec,
    q: &QuadratureConfig,
) -> Result<ConditionalFit> {
    let fitted = fit_impl(y, z, family, priors, q, Detail::Full)?;
    if !fitted.log_evidence.is_finite() {
        return Err(MixError::Quadrature("conditional evidence is not finite".into()));
    }
    Ok(ConditionalFit {
        allocation: z.clone(),
        components: fitted.components.expect("full detail requested"),
        log_cond_evidence: fitted.log_evidence,
        modal_weights: dirichlet_mode(&priors.alpha, z.counts())?,
        modal_params: fitted.modes,
    })
}

/// Evidence and modes only, without tabulating marginals.
pub fn conditional_summary(
    y: &Observations,
    z: &Allocation,
    family: &Family,
    priors: &PriorSpec,
    q: &QuadratureConfig,
) -> Result<FitSummary> {
    let fitted = fit_impl(y, z, family, priors, q, Detail::Summary)?;
    if !fitted.log_evidence.is_finite() {
        return Err(MixError::Quadrature("conditional evidence is not finite".into()));
    }
    Ok(FitSummary {
        log_cond_evidence: fitted.log_evidence,
        modal_weights: dirichlet_mode(&priors.alpha, z.counts())?,
        modal_params: fitted.modes,
    })
}
