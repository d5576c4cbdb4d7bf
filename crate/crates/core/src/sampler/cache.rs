use std::sync::Arc;

use lru::LruCache;

use crate::engine::{conditional_fit, conditional_summary, dirichlet_mode, QuadratureConfig};
use crate::error::Result;
use crate::model::{
    canonical_permutation, Allocation, AllocationKey, ConditionalFit, Family, FitSummary,
    ModalParams, Observations, PriorSpec,
};

/// Conditional fit of a partition, expressed in canonical labels.
#[derive(Debug, Clone)]
pub(crate) struct CachedFit {
    pub canonical: Allocation,
    /// Maps first-occurrence labels to canonical labels.
    pub perm: Vec<u8>,
    pub summary: FitSummary,
}

impl CachedFit {
    /// Maps the labels of `raw` (any member of the partition) to canonical labels.
    pub fn label_map(&self, raw: &Allocation) -> Vec<u8> {
        let (_, to_first) = raw.first_occurrence_form();
        to_first.iter().map(|&f| self.perm[f as usize]).collect()
    }
}

/// Memoizes conditional fits by partition. Any labelling of a partition
/// resolves to the same entry, so the canonical allocation is found without
/// refitting.
pub(crate) struct FitCache<'a> {
    y: &'a Observations,
    family: Family,
    priors: &'a PriorSpec,
    q: QuadratureConfig,
    entries: LruCache<AllocationKey, Arc<CachedFit>>,
    capacity: usize,
}

impl<'a> FitCache<'a> {
    pub fn new(
        y: &'a Observations,
        family: Family,
        priors: &'a PriorSpec,
        q: QuadratureConfig,
        capacity: usize,
    ) -> Self {
        // unbounded storage with manual eviction avoids preallocating `capacity` slots
        Self { y, family, priors, q, entries: LruCache::unbounded(), capacity: capacity.max(1) }
    }

    pub fn resolve(&mut self, z: &Allocation) -> Result<Arc<CachedFit>> {
        let (first, _) = z.first_occurrence_form();
        let key = first.key();
        if let Some(hit) = self.entries.get(&key) {
            return Ok(Arc::clone(hit));
        }
        let summary = conditional_summary(self.y, &first, &self.family, self.priors, &self.q)?;
        let perm = canonical_permutation(&summary.locations())?;
        let canonical = first.relabel(&perm)?;
        let mut params = vec![ModalParams { location: 0.0, precision: None }; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            params[new as usize] = summary.modal_params[old];
        }
        let summary = FitSummary {
            log_cond_evidence: summary.log_cond_evidence,
            modal_weights: dirichlet_mode(&self.priors.alpha, canonical.counts())?,
            modal_params: params,
        };
        let entry = Arc::new(CachedFit { canonical, perm, summary });
        if self.entries.len() >= self.capacity {
            self.entries.pop_lru();
        }
        self.entries.put(key, Arc::clone(&entry));
        Ok(entry)
    }

    pub fn full_fit(&self, canonical: &Allocation) -> Result<ConditionalFit> {
        conditional_fit(self.y, canonical, &self.family, self.priors, &self.q)
    }
}
