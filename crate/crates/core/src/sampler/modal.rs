use std::collections::BTreeMap;

use rand::Rng;

use super::cache::{CachedFit, FitCache};
use super::{chain_rng, InitStrategy, SamplerConfig};
use crate::engine::QuadratureConfig;
use crate::error::{MixError, Result};
use crate::model::{
    canonicalize, Allocation, AllocationKey, AllocationTrace, Family, ModalParams, Observations,
    PriorSpec, TraceEntry,
};
use crate::special::{normal_ln_pdf, poisson_ln_pmf};

/// Initial allocation, canonicalized by block sample means.
pub fn init_allocation<R: Rng + ?Sized>(
    y: &Observations,
    k: usize,
    strategy: InitStrategy,
    rng: &mut R,
) -> Result<Allocation> {
    let n = y.len();
    if k == 0 {
        return Err(MixError::InvalidConfig("K must be at least 1".into()));
    }
    let labels: Vec<u8> = match strategy {
        InitStrategy::Quantile => {
            if k > n {
                return Err(MixError::TooManyComponents { k, n });
            }
            let values = y.values();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
            let (base, extra) = (n / k, n % k);
            let mut labels = vec![0u8; n];
            let mut pos = 0;
            for j in 0..k {
                let size = base + usize::from(j >= k - extra);
                for &i in &order[pos..pos + size] {
                    labels[i] = j as u8;
                }
                pos += size;
            }
            labels
        }
        InitStrategy::RandomUniform => (0..n).map(|_| rng.random_range(0..k) as u8).collect(),
    };
    let z = Allocation::new(labels, k)?;
    let overall = y.values().iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = z
        .partition(y.values())
        .iter()
        .map(|p| if p.is_empty() { overall } else { p.iter().sum::<f64>() / p.len() as f64 })
        .collect();
    canonicalize(&z, &means)
}

pub(crate) fn component_ln_density(family: &Family, y: f64, params: &ModalParams) -> f64 {
    match family {
        Family::Gaussian { .. } => {
            let tau = params.precision.unwrap_or(f64::NAN);
            if tau > 0.0 {
                normal_ln_pdf(y, params.location, tau)
            } else {
                f64::NEG_INFINITY
            }
        }
        Family::Poisson { .. } => poisson_ln_pmf(y, params.location),
    }
}

/// Draws one label from unnormalized log scores.
pub(crate) fn draw_label<R: Rng + ?Sized>(scores: &mut [f64], index: usize, rng: &mut R) -> Result<u8> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(MixError::UnsupportedObservation { index });
    }
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in scores.iter().enumerate() {
        if p > 0.0 {
            last = j;
            acc += p;
            if u < acc {
                return Ok(j as u8);
            }
        }
    }
    Ok(last as u8)
}

/// Redraws every label independently from `p(z_i = j) ∝ w_j f_j(y_i | theta_j)`
/// with the weights and parameters held fixed for the whole sweep.
pub fn modal_sweep<R: Rng + ?Sized>(
    y: &Observations,
    weights: &[f64],
    params: &[ModalParams],
    family: &Family,
    rng: &mut R,
) -> Result<Allocation> {
    let k = weights.len();
    if params.len() != k {
        return Err(MixError::InvalidConfig("weights and parameters differ in length".into()));
    }
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut scores = vec![0.0; k];
    let mut labels = Vec::with_capacity(y.len());
    for (i, &yi) in y.values().iter().enumerate() {
        for j in 0..k {
            scores[j] = log_w[j] + component_ln_density(family, yi, &params[j]);
        }
        labels.push(draw_label(&mut scores, i, rng)?);
    }
    Allocation::new(labels, k)
}

/// Accumulates retained visits, fitting each newly seen allocation in full.
pub(crate) struct TraceBuilder {
    visits: Vec<AllocationKey>,
    table: BTreeMap<AllocationKey, TraceEntry>,
}

impl TraceBuilder {
    pub fn new() -> Self {
        Self { visits: Vec::new(), table: BTreeMap::new() }
    }

    pub fn record(&mut self, cache: &FitCache<'_>, entry: &CachedFit) -> Result<()> {
        let key = entry.canonical.key();
        match self.table.get_mut(&key) {
            Some(e) => e.visit_count += 1,
            None => {
                let fit = cache.full_fit(&entry.canonical)?;
                self.table.insert(key.clone(), TraceEntry { visit_count: 1, fit });
            }
        }
        self.visits.push(key);
        Ok(())
    }

    pub fn finish(self, k: usize, config: SamplerConfig) -> Result<AllocationTrace> {
        if self.visits.is_empty() {
            return Err(MixError::EmptyTrace);
        }
        Ok(AllocationTrace { k, visits: self.visits, table: self.table, config })
    }
}

pub(crate) fn prepare(
    y: &Observations,
    k: usize,
    family: &Family,
    priors: &PriorSpec,
    q: &QuadratureConfig,
    cfg: &SamplerConfig,
) -> Result<PriorSpec> {
    cfg.validate()?;
    q.validate()?;
    let priors = priors.for_components(k)?;
    priors.validate(family)?;
    if y.is_empty() {
        return Err(MixError::InvalidData("no observations".into()));
    }
    Ok(priors)
}

/// Modal Gibbs sampling over allocations.
///
/// Each iteration fits the model given the current allocation (memoized by
/// partition), takes the conditional modes of the weights and parameters, and
/// redraws all labels with [`modal_sweep`]. The new allocation is
/// canonicalized before it is recorded. With `k = 1` there is nothing to
/// sample and the single allocation is recorded for every retained sweep.
pub fn run_modal_gibbs(
    y: &Observations,
    k: usize,
    family: &Family,
    priors: &PriorSpec,
    q: &QuadratureConfig,
    cfg: &SamplerConfig,
) -> Result<AllocationTrace> {
    let priors = prepare(y, k, family, priors, q, cfg)?;
    let mut cache = FitCache::new(y, *family, &priors, *q, cfg.cache_capacity);
    let mut trace = TraceBuilder::new();

    if k == 1 {
        let only = cache.resolve(&Allocation::uniform(y.len(), 1)?)?;
        for _ in 0..cfg.retained() {
            trace.record(&cache, &only)?;
        }
        return trace.finish(k, *cfg);
    }

    let mut rng = chain_rng(cfg.seed, k as u64);
    let z0 = init_allocation(y, k, cfg.init, &mut rng)?;
    let mut current = cache.resolve(&z0)?;
    for iteration in 1..=cfg.burn_in + cfg.iterations {
        let s = &current.summary;
        let drawn = modal_sweep(y, &s.modal_weights, &s.modal_params, family, &mut rng)?;
        current = cache.resolve(&drawn)?;
        if cfg.is_retained(iteration) {
            trace.record(&cache, &current)?;
        }
    }
    trace.finish(k, *cfg)
}
