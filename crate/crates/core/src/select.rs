//! Marginal-likelihood estimators and posterior probabilities over the
//! number of components.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::bma::{
    bma_marginal, coverage_diagnostic, empirical_allocation_posterior, log_joint_table,
    renormalized_allocation_posterior, renormalized_log_posterior, weight_posterior_summary,
    AllocationPosterior, CoverageDiagnostic, Param, DEFAULT_COVERAGE_THRESHOLD,
};
use crate::engine::QuadratureConfig;
use crate::error::{MixError, Result};
use crate::grid::GridDensity;
use crate::model::{AllocationKey, AllocationTrace, Family, Observations, PriorSpec};
use crate::sampler::{run_modal_gibbs, SamplerConfig};
use crate::special::{logsumexp, softmax};

/// Sum of `p(y | z) p(z)` over the visited classes. Unvisited allocations
/// can only add mass, so this is a lower bound on the evidence.
pub fn log_evidence_i(trace: &AllocationTrace, alpha: &[f64]) -> Result<f64> {
    let joint = log_joint_table(trace, alpha)?;
    let values: Vec<f64> = joint.values().copied().collect();
    Ok(logsumexp(&values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChibVariant {
    /// Denominator from visit frequencies.
    G,
    /// Denominator from the renormalized evidence posterior.
    M,
}

/// Chib's identity `log p(y|z) + log p(z) - log p(z|y)` at the posterior
/// mode `z` of the chosen allocation posterior.
pub fn log_evidence_chib(trace: &AllocationTrace, alpha: &[f64], variant: ChibVariant) -> Result<f64> {
    let joint = log_joint_table(trace, alpha)?;
    let (key, log_p) = match variant {
        ChibVariant::G => {
            let post = empirical_allocation_posterior(trace)?;
            let (key, p) = post.mode().ok_or(MixError::EmptyTrace)?;
            (key.clone(), p.ln())
        }
        ChibVariant::M => {
            let (logs, _) = renormalized_log_posterior(trace, alpha)?;
            let mut best: Option<(&AllocationKey, f64)> = None;
            for (k, &v) in &logs {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
            let (k, v) = best.ok_or(MixError::EmptyTrace)?;
            (k.clone(), v)
        }
    };
    if log_p == f64::NEG_INFINITY {
        return Err(MixError::ChibDenominatorZero);
    }
    Ok(joint[&key] - log_p)
}

/// Posterior model probabilities from log evidences and prior model weights.
pub fn model_posterior_probs(log_evidences: &[f64], model_priors: &[f64]) -> Result<Vec<f64>> {
    if log_evidences.len() != model_priors.len() || log_evidences.is_empty() {
        return Err(MixError::InvalidConfig(format!(
            "{} evidences for {} model priors",
            log_evidences.len(),
            model_priors.len()
        )));
    }
    if model_priors.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(MixError::InvalidConfig("model priors must be positive".into()));
    }
    let scores: Vec<f64> = log_evidences.iter().zip(model_priors).map(|(e, p)| e + p.ln()).collect();
    Ok(softmax(&scores))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentSummary {
    pub weight_mean: f64,
    pub weight_sd: f64,
    pub location_mean: f64,
    pub location_sd: f64,
    pub precision_mean: Option<f64>,
    pub precision_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMarginals {
    /// Absent when K = 1.
    pub weight: Option<GridDensity>,
    pub location: GridDensity,
    pub precision: Option<GridDensity>,
}

/// Everything reported for one number of components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRow {
    pub k: usize,
    pub log_evidence_i: f64,
    pub log_evidence_chib_g: f64,
    pub log_evidence_chib_m: f64,
    pub prob_i: f64,
    pub prob_g: f64,
    pub prob_m: f64,
    pub components: Vec<ComponentSummary>,
    pub diagnostic: CoverageDiagnostic,
    pub distinct_allocations: usize,
    pub retained_sweeps: usize,
    pub runtime_ms: u128,
    #[serde(skip)]
    pub marginals: Vec<ComponentMarginals>,
    #[serde(skip)]
    pub trace: AllocationTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelComparisonReport {
    pub family: Family,
    pub seed: u64,
    pub rows: Vec<ModelRow>,
}

impl ModelComparisonReport {
    pub fn row(&self, k: usize) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    /// K with the highest probability under the given estimator.
    pub fn best_k(&self, variant: Option<ChibVariant>) -> usize {
        let prob = |r: &ModelRow| match variant {
            None => r.prob_i,
            Some(ChibVariant::G) => r.prob_g,
            Some(ChibVariant::M) => r.prob_m,
        };
        self.rows
            .iter()
            .fold(None::<&ModelRow>, |best, r| match best {
                Some(b) if prob(b) >= prob(r) => Some(b),
                _ => Some(r),
            })
            .map_or(0, |r| r.k)
    }
}

/// Evidence estimates, averaged summaries and diagnostic for one trace.
/// Summaries average over the visit-frequency posterior; the diagnostic
/// reports how far the renormalized posterior departs from it.
pub fn analyze_trace(trace: AllocationTrace, alpha: &[f64], family: &Family) -> Result<ModelRow> {
    let log_evidence_i = log_evidence_i(&trace, alpha)?;
    let log_evidence_chib_g = log_evidence_chib(&trace, alpha, ChibVariant::G)?;
    let log_evidence_chib_m = log_evidence_chib(&trace, alpha, ChibVariant::M)?;
    let pg = empirical_allocation_posterior(&trace)?;
    let pi = renormalized_allocation_posterior(&trace, alpha)?;
    let diagnostic = coverage_diagnostic(&pg, &pi, DEFAULT_COVERAGE_THRESHOLD);
    let post: &AllocationPosterior = &pg;

    let weights = weight_posterior_summary(&trace, post, alpha)?;
    let mut components = Vec::with_capacity(trace.k);
    let mut marginals = Vec::with_capacity(trace.k);
    for j in 0..trace.k {
        let location = bma_marginal(&trace, post, j, Param::Location)?;
        let precision = if family.is_gaussian() {
            Some(bma_marginal(&trace, post, j, Param::Precision)?)
        } else {
            None
        };
        components.push(ComponentSummary {
            weight_mean: weights.mean[j],
            weight_sd: weights.sd[j],
            location_mean: location.mean(),
            location_sd: location.sd(),
            precision_mean: precision.as_ref().map(GridDensity::mean),
            precision_sd: precision.as_ref().map(GridDensity::sd),
        });
        marginals.push(ComponentMarginals { weight: weights.marginals[j].clone(), location, precision });
    }
    Ok(ModelRow {
        k: trace.k,
        log_evidence_i,
        log_evidence_chib_g,
        log_evidence_chib_m,
        prob_i: f64::NAN,
        prob_g: f64::NAN,
        prob_m: f64::NAN,
        components,
        diagnostic,
        distinct_allocations: trace.distinct(),
        retained_sweeps: trace.retained(),
        runtime_ms: 0,
        marginals,
        trace,
    })
}

/// Fits every K in `k_range` (in parallel), then computes model
/// probabilities under a uniform prior for each estimator.
pub fn select_k(
    y: &Observations,
    family: &Family,
    priors: &PriorSpec,
    k_range: &[usize],
    cfg: &SamplerConfig,
    q: &QuadratureConfig,
) -> Result<ModelComparisonReport> {
    if k_range.is_empty() {
        return Err(MixError::InvalidConfig("empty range of K".into()));
    }
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut rows = ks
        .par_iter()
        .map(|&k| {
            let start = Instant::now();
            let p = priors.for_components(k)?;
            let trace = run_modal_gibbs(y, k, family, &p, q, cfg)?;
            let mut row = analyze_trace(trace, &p.alpha, family)?;
            row.runtime_ms = start.elapsed().as_millis();
            Ok(row)
        })
        .collect::<Result<Vec<ModelRow>>>()?;

    let uniform = vec![1.0; rows.len()];
    let pick = |f: fn(&ModelRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let prob_i = model_posterior_probs(&pick(|r| r.log_evidence_i), &uniform)?;
    let prob_g = model_posterior_probs(&pick(|r| r.log_evidence_chib_g), &uniform)?;
    let prob_m = model_posterior_probs(&pick(|r| r.log_evidence_chib_m), &uniform)?;
    for (j, row) in rows.iter_mut().enumerate() {
        row.prob_i = prob_i[j];
        row.prob_g = prob_g[j];
        row.prob_m = prob_m[j];
    }
    Ok(ModelComparisonReport { family: *family, seed: cfg.seed, rows })
}
