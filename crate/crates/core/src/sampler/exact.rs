use std::collections::BTreeMap;

use super::cache::FitCache;
use super::SamplerConfig;
use crate::bma::log_allocation_prior;
use crate::engine::QuadratureConfig;
use crate::error::{MixError, Result};
use crate::model::{
    Allocation, AllocationKey, AllocationTrace, Family, Observations, PriorSpec, TraceEntry,
};
use crate::special::logsumexp;

/// Largest `K^n` that [`enumerate_exact`] will visit.
pub const ENUMERATION_GUARD: f64 = 1e7;

/// One canonical class of allocations: all labellings of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactClass {
    pub canonical: Allocation,
    pub log_cond_evidence: f64,
    /// Prior mass of the whole class.
    pub log_prior: f64,
    pub log_prob: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    pub k: usize,
    /// `log p(y)`.
    pub log_evidence: f64,
    pub classes: BTreeMap<AllocationKey, ExactClass>,
    /// Number of raw allocations enumerated (`K^n`).
    pub raw_count: usize,
    /// `log p(z | y)` of every raw allocation, in [`AllAllocations`] order.
    pub raw_log_probs: Vec<f64>,
}

/// Every allocation in `{1..K}^n`, first label varying fastest.
#[derive(Debug, Clone)]
pub struct AllAllocations {
    k: usize,
    next: Option<Vec<u8>>,
}

impl AllAllocations {
    pub fn new(n: usize, k: usize) -> Self {
        Self { k, next: (k > 0).then(|| vec![0u8; n]) }
    }
}

impl Iterator for AllAllocations {
    type Item = Allocation;

    fn next(&mut self) -> Option<Allocation> {
        let labels = self.next.take()?;
        let mut succ = labels.clone();
        let mut pos = 0;
        while pos < succ.len() {
            succ[pos] += 1;
            if (succ[pos] as usize) < self.k {
                break;
            }
            succ[pos] = 0;
            pos += 1;
        }
        if pos < succ.len() {
            self.next = Some(succ);
        }
        Allocation::new(labels, self.k).ok()
    }
}

fn check_size(n: usize, k: usize, n_limit: usize) -> Result<usize> {
    let size = (k as f64).powi(n as i32);
    if n > n_limit || size > ENUMERATION_GUARD {
        return Err(MixError::EnumerationTooLarge(format!("K = {k}, n = {n} (limit n <= {n_limit}, K^n <= 1e7)")));
    }
    Ok(size as usize)
}

/// Exact allocation posterior by visiting every `z` in `{1..K}^n`.
///
/// Raw allocations are collapsed onto canonical classes the same way the
/// samplers key their traces, so class probabilities compare directly with
/// sampled estimates.
pub fn enumerate_exact(
    y: &Observations,
    k: usize,
    family: &Family,
    priors: &PriorSpec,
    q: &QuadratureConfig,
    n_limit: usize,
) -> Result<ExactPosterior> {
    let n = y.len();
    if k == 0 {
        return Err(MixError::InvalidConfig("K must be at least 1".into()));
    }
    let raw_count = check_size(n, k, n_limit)?;
    let priors = priors.for_components(k)?;
    priors.validate(family)?;
    let mut cache = FitCache::new(y, *family, &priors, *q, raw_count.min(1 << 20));

    let mut members: BTreeMap<AllocationKey, (Allocation, f64, Vec<f64>)> = BTreeMap::new();
    let mut joints = Vec::with_capacity(raw_count);
    for z in AllAllocations::new(n, k) {
        let entry = cache.resolve(&z)?;
        let log_prior = log_allocation_prior(z.counts(), &priors.alpha);
        let evidence = entry.summary.log_cond_evidence;
        joints.push(evidence + log_prior);
        members
            .entry(entry.canonical.key())
            .or_insert_with(|| (entry.canonical.clone(), evidence, Vec::new()))
            .2
            .push(log_prior);
    }

    let log_evidence = logsumexp(&joints);
    let classes = members
        .into_iter()
        .map(|(key, (canonical, log_cond_evidence, priors))| {
            let log_prior = logsumexp(&priors);
            let log_prob = log_cond_evidence + log_prior - log_evidence;
            (key, ExactClass { canonical, log_cond_evidence, log_prior, log_prob, prob: log_prob.exp() })
        })
        .collect();
    let raw_log_probs = joints.iter().map(|j| j - log_evidence).collect();
    Ok(ExactPosterior { k, log_evidence, classes, raw_count, raw_log_probs })
}

/// A trace holding every raw allocation once, each keyed by its own labels
/// and carrying a full conditional fit. Estimators applied to it see the
/// whole allocation space.
pub fn full_support_trace(
    y: &Observations,
    k: usize,
    family: &Family,
    priors: &PriorSpec,
    q: &QuadratureConfig,
    n_limit: usize,
) -> Result<AllocationTrace> {
    check_size(y.len(), k, n_limit)?;
    let priors = priors.for_components(k)?;
    priors.validate(family)?;
    let cache = FitCache::new(y, *family, &priors, *q, 1);
    let mut table = BTreeMap::new();
    for z in AllAllocations::new(y.len(), k) {
        let fit = cache.full_fit(&z)?;
        table.insert(z.key(), TraceEntry { visit_count: 1, fit });
    }
    let visits: Vec<AllocationKey> = table.keys().cloned().collect();
    let config = SamplerConfig { burn_in: 0, iterations: visits.len(), thin: 1, ..Default::default() };
    Ok(AllocationTrace { k, visits, table, config })
}
