use std::sync::Arc;

use lru::LruCache;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use super::cache::FitCache;
use super::modal::{component_ln_density, draw_label, init_allocation, prepare, TraceBuilder};
use super::{chain_rng, SamplerConfig};
use crate::engine::{fit_log_rate, fit_tau, GaussianStats, QuadratureConfig};
use crate::engine::quadrature::LogGrid;
use crate::error::{MixError, Result};
use crate::model::{
    Allocation, AllocationKey, AllocationTrace, Family, ModalParams, Observations, PoissonPriorKind,
    PriorSpec,
};

/// Stream offset keeping reference chains apart from modal chains.
const REFERENCE_STREAM: u64 = 1 << 32;

/// Retained parameter draws, one row per retained sweep, in canonical labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParameterDraws {
    pub weights: Vec<Vec<f64>>,
    pub locations: Vec<Vec<f64>>,
    /// Empty for Poisson components.
    pub precisions: Vec<Vec<f64>>,
}

/// Conditional posterior of all component parameters given a partition,
/// in first-occurrence label order.
enum ParamPosterior {
    Gamma(Vec<(f64, f64)>),
    LogRate(Vec<LogGrid>),
    /// One group per precision parameter; a shared precision is one group.
    Gaussian(Vec<(Vec<GaussianStats>, LogGrid)>),
}

impl ParamPosterior {
    fn build(y: &Observations, first: &Allocation, family: &Family, priors: &PriorSpec, q: &QuadratureConfig) -> Result<Self> {
        let parts = first.partition(y.values());
        Ok(match *family {
            Family::Poisson { prior: PoissonPriorKind::GammaConjugate } => {
                let g = priors.poisson_gamma;
                ParamPosterior::Gamma(
                    parts
                        .iter()
                        .map(|p| (g.shape + p.iter().sum::<f64>(), g.rate + p.len() as f64))
                        .collect(),
                )
            }
            Family::Poisson { prior: PoissonPriorKind::LogNormal } => ParamPosterior::LogRate(
                parts
                    .iter()
                    .map(|p| fit_log_rate(p, priors.poisson_lognormal, q).map(|f| f.grid))
                    .collect::<Result<_>>()?,
            ),
            Family::Gaussian { shared_precision } => {
                let stats: Vec<GaussianStats> = parts.iter().map(|p| GaussianStats::new(p)).collect();
                let groups: Vec<Vec<GaussianStats>> = if shared_precision {
                    vec![stats]
                } else {
                    stats.into_iter().map(|s| vec![s]).collect()
                };
                ParamPosterior::Gaussian(
                    groups
                        .into_iter()
                        .map(|g| {
                            fit_tau(g, priors.gaussian_mean, priors.gaussian_precision, q)
                                .map(|f| (f.stats, f.grid))
                        })
                        .collect::<Result<_>>()?,
                )
            }
        })
    }

    fn draw<R: Rng + ?Sized>(&self, priors: &PriorSpec, rng: &mut R) -> Result<Vec<ModalParams>> {
        match self {
            ParamPosterior::Gamma(post) => post
                .iter()
                .map(|&(shape, rate)| {
                    let g = Gamma::new(shape, 1.0 / rate)
                        .map_err(|e| MixError::InvalidPrior(e.to_string()))?;
                    Ok(ModalParams { location: g.sample(rng), precision: None })
                })
                .collect(),
            ParamPosterior::LogRate(grids) => Ok(grids
                .iter()
                .map(|g| ModalParams { location: g.sample(rng).exp(), precision: None })
                .collect()),
            ParamPosterior::Gaussian(groups) => {
                let mut out = Vec::new();
                for (stats, grid) in groups {
                    let tau = grid.sample(rng).exp();
                    for s in stats {
                        let (mean, prec) = s.mean_given_tau(priors.gaussian_mean, tau);
                        let z: f64 = rand_distr::StandardNormal.sample(rng);
                        out.push(ModalParams { location: mean + z / prec.sqrt(), precision: Some(tau) });
                    }
                }
                Ok(out)
            }
        }
    }
}

fn draw_dirichlet<R: Rng + ?Sized>(alpha: &[f64], counts: &[usize], rng: &mut R) -> Result<Vec<f64>> {
    let mut w = Vec::with_capacity(alpha.len());
    for (&a, &c) in alpha.iter().zip(counts) {
        let g = Gamma::new(a + c as f64, 1.0).map_err(|e| MixError::InvalidPrior(e.to_string()))?;
        w.push(g.sample(rng));
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Data-augmentation Gibbs sampler used to validate the modal sampler.
///
/// Each sweep draws the weights from `Dirichlet(alpha + counts)`, every
/// component's parameters from their conditional posterior given the
/// allocation (Gamma rates exactly; a Gaussian precision by inverse CDF on
/// the quadrature grid, then the mean given the precision; a log rate from
/// its grid), and finally all labels given the sampled values.
pub fn run_reference_gibbs(
    y: &Observations,
    k: usize,
    family: &Family,
    priors: &PriorSpec,
    q: &QuadratureConfig,
    cfg: &SamplerConfig,
) -> Result<(AllocationTrace, ParameterDraws)> {
    let priors = prepare(y, k, family, priors, q, cfg)?;
    let mut cache = FitCache::new(y, *family, &priors, *q, cfg.cache_capacity);
    let mut posteriors: LruCache<AllocationKey, Arc<ParamPosterior>> = LruCache::unbounded();
    let mut trace = TraceBuilder::new();
    let mut draws = ParameterDraws::default();
    let mut rng = chain_rng(cfg.seed, REFERENCE_STREAM + k as u64);

    let mut z = init_allocation(y, k, cfg.init, &mut rng)?;
    let mut scores = vec![0.0; k];
    for iteration in 1..=cfg.burn_in + cfg.iterations {
        let (first, to_first) = z.first_occurrence_form();
        let key = first.key();
        let post = match posteriors.get(&key) {
            Some(p) => Arc::clone(p),
            None => {
                let p = Arc::new(ParamPosterior::build(y, &first, family, &priors, q)?);
                if posteriors.len() >= cfg.cache_capacity {
                    posteriors.pop_lru();
                }
                posteriors.put(key, Arc::clone(&p));
                p
            }
        };
        let weights = draw_dirichlet(&priors.alpha, z.counts(), &mut rng)?;
        let by_first = post.draw(&priors, &mut rng)?;
        let params: Vec<ModalParams> = to_first.iter().map(|&f| by_first[f as usize]).collect();

        let mut labels = Vec::with_capacity(y.len());
        for (i, &yi) in y.values().iter().enumerate() {
            for j in 0..k {
                scores[j] = weights[j].ln() + component_ln_density(family, yi, &params[j]);
            }
            labels.push(draw_label(&mut scores, i, &mut rng)?);
        }
        z = Allocation::new(labels, k)?;

        if cfg.is_retained(iteration) {
            let entry = cache.resolve(&z)?;
            let map = entry.label_map(&z);
            let mut w = vec![0.0; k];
            let mut loc = vec![0.0; k];
            let mut prec = vec![0.0; k];
            for j in 0..k {
                let c = map[j] as usize;
                w[c] = weights[j];
                loc[c] = params[j].location;
                prec[c] = params[j].precision.unwrap_or(f64::NAN);
            }
            draws.weights.push(w);
            draws.locations.push(loc);
            if family.is_gaussian() {
                draws.precisions.push(prec);
            }
            trace.record(&cache, &entry)?;
        }
    }
    Ok((trace.finish(k, *cfg)?, draws))
}
