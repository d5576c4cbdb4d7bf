//! Allocation posteriors estimated from a trace, Bayesian-model-averaged
//! parameter marginals, the weight posterior and the coverage diagnostic.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{MixError, Result};
use crate::grid::GridDensity;
use crate::model::{AllocationKey, AllocationTrace};
use crate::special::{beta_ln_pdf, ln_gamma, logsumexp};

/// Most support points kept in an averaged marginal.
pub const MAX_UNION_POINTS: usize = 4096;
/// Grid resolution for averaged weight marginals.
pub const WEIGHT_GRID_POINTS: usize = 512;
/// Default total-variation threshold of [`coverage_diagnostic`].
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.1;
/// Mixture terms whose probability falls below this fraction of the largest
/// are dropped from averaged densities.
const NEGLIGIBLE: f64 = 1e-12;
/// Above this many label assignments an asymmetric class prior is refused.
const CLASS_PRIOR_GUARD: f64 = 1e6;

/// Dirichlet-multinomial prior of one labelled allocation with these counts.
pub fn log_allocation_prior(counts: &[usize], alpha: &[f64]) -> f64 {
    let a: f64 = alpha.iter().sum();
    let n: usize = counts.iter().sum();
    let mut out = ln_gamma(a) - ln_gamma(n as f64 + a);
    for (&c, &aj) in counts.iter().zip(alpha) {
        if c > 0 {
            out += ln_gamma(c as f64 + aj) - ln_gamma(aj);
        }
    }
    out
}

/// Prior mass of every labelling of the partition behind `counts`.
///
/// Traces store one canonical representative per partition; its prior is
/// the sum over all injective assignments of the occupied blocks to labels.
/// With a symmetric `alpha` every assignment has the same prior and the sum
/// is `K! / (K - b)!` copies of it, `b` being the number of occupied blocks.
pub fn log_class_prior(counts: &[usize], alpha: &[f64]) -> Result<f64> {
    let k = alpha.len();
    let blocks: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    let b = blocks.len();
    let symmetric = alpha.windows(2).all(|w| w[0] == w[1]);
    if symmetric {
        let arrangements: f64 = (k - b + 1..=k).map(|v| (v as f64).ln()).sum();
        return Ok(log_allocation_prior(counts, alpha) + arrangements);
    }
    let count: f64 = (k - b + 1..=k).map(|v| v as f64).product();
    if count > CLASS_PRIOR_GUARD {
        return Err(MixError::EnumerationTooLarge(format!("{count} label assignments for the class prior")));
    }
    let mut terms = Vec::new();
    let mut labels = vec![0usize; b];
    let mut used = vec![false; k];
    assign(&blocks, alpha, 0, &mut labels, &mut used, &mut terms);
    Ok(logsumexp(&terms))
}

fn assign(blocks: &[usize], alpha: &[f64], depth: usize, labels: &mut [usize], used: &mut [bool], out: &mut Vec<f64>) {
    if depth == blocks.len() {
        let mut counts = vec![0; alpha.len()];
        for (&l, &c) in labels.iter().zip(blocks) {
            counts[l] = c;
        }
        out.push(log_allocation_prior(&counts, alpha));
        return;
    }
    for l in 0..alpha.len() {
        if !used[l] {
            used[l] = true;
            labels[depth] = l;
            assign(blocks, alpha, depth + 1, labels, used, out);
            used[l] = false;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Visit frequencies of the sampler.
    GibbsFrequency,
    /// Conditional evidence times prior, renormalized over the visited set.
    EvidenceRenormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationPosterior {
    pub entries: BTreeMap<AllocationKey, f64>,
    pub estimator: Estimator,
}

impl AllocationPosterior {
    pub fn prob(&self, key: &AllocationKey) -> f64 {
        self.entries.get(key).copied().unwrap_or(0.0)
    }

    /// Highest-probability key; ties go to the smallest key.
    pub fn mode(&self) -> Option<(&AllocationKey, f64)> {
        let mut best: Option<(&AllocationKey, f64)> = None;
        for (k, &p) in &self.entries {
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((k, p));
            }
        }
        best
    }
}

pub fn empirical_allocation_posterior(trace: &AllocationTrace) -> Result<AllocationPosterior> {
    let total: usize = trace.table.values().map(|e| e.visit_count).sum();
    if total == 0 {
        return Err(MixError::EmptyTrace);
    }
    let entries = trace
        .table
        .iter()
        .map(|(k, e)| (k.clone(), e.visit_count as f64 / total as f64))
        .collect();
    Ok(AllocationPosterior { entries, estimator: Estimator::GibbsFrequency })
}

/// `log p(y | z) + log p(z)` for every allocation in the trace, with the
/// prior of the stored labelling. Other labellings of a visited partition
/// are not counted.
pub fn log_joint_table(trace: &AllocationTrace, alpha: &[f64]) -> Result<BTreeMap<AllocationKey, f64>> {
    if trace.table.is_empty() {
        return Err(MixError::EmptyTrace);
    }
    trace
        .table
        .iter()
        .map(|(k, e)| {
            let fit = &e.fit;
            if !fit.log_cond_evidence.is_finite() {
                return Err(MixError::Quadrature(format!("non-finite evidence for allocation {k}")));
            }
            Ok((k.clone(), fit.log_cond_evidence + log_allocation_prior(fit.allocation.counts(), alpha)))
        })
        .collect()
}

/// Log probabilities of the renormalized posterior, with its log normalizer.
pub fn renormalized_log_posterior(
    trace: &AllocationTrace,
    alpha: &[f64],
) -> Result<(BTreeMap<AllocationKey, f64>, f64)> {
    let joint = log_joint_table(trace, alpha)?;
    let values: Vec<f64> = joint.values().copied().collect();
    let norm = logsumexp(&values);
    Ok((joint.into_iter().map(|(k, v)| (k, v - norm)).collect(), norm))
}

pub fn renormalized_allocation_posterior(trace: &AllocationTrace, alpha: &[f64]) -> Result<AllocationPosterior> {
    let (logs, _) = renormalized_log_posterior(trace, alpha)?;
    let entries = logs.into_iter().map(|(k, v)| (k, v.exp())).collect();
    Ok(AllocationPosterior { entries, estimator: Estimator::EvidenceRenormalized })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Location,
    Precision,
}

/// `sum_z p(z | y) p(theta | y, z)` on the union of the conditional grids.
///
/// When the union exceeds [`MAX_UNION_POINTS`] it is thinned by a constant
/// stride, keeping both ends.
pub fn bma_marginal(
    trace: &AllocationTrace,
    post: &AllocationPosterior,
    component: usize,
    param: Param,
) -> Result<GridDensity> {
    if component >= trace.k {
        return Err(MixError::ComponentOutOfRange { component, k: trace.k });
    }
    let pmax = post.entries.values().copied().fold(0.0, f64::max);
    let mut terms: Vec<(f64, GridDensity)> = Vec::new();
    for (key, &p) in &post.entries {
        if p <= 0.0 || p < NEGLIGIBLE * pmax {
            continue;
        }
        let entry = trace
            .table
            .get(key)
            .ok_or_else(|| MixError::InvalidConfig(format!("allocation {key} missing from trace")))?;
        let comp = &entry.fit.components[component];
        let grid = match param {
            Param::Location => comp.location.to_grid(crate::engine::QuadratureConfig::default().grid_size)?,
            Param::Precision => comp
                .precision
                .clone()
                .ok_or_else(|| MixError::InvalidConfig("precision marginal requested for a Poisson family".into()))?,
        };
        terms.push((p, grid));
    }
    if terms.is_empty() {
        return Err(MixError::EmptyTrace);
    }
    if terms.len() == 1 {
        return Ok(terms.pop().expect("one term").1);
    }
    let mut support: Vec<f64> = terms.iter().flat_map(|(_, g)| g.support().iter().copied()).collect();
    support.sort_by(f64::total_cmp);
    support.dedup();
    if support.len() > MAX_UNION_POINTS {
        let stride = support.len().div_ceil(MAX_UNION_POINTS - 1);
        let last = *support.last().expect("non-empty");
        support = support.into_iter().step_by(stride).collect();
        if *support.last().expect("non-empty") != last {
            support.push(last);
        }
    }
    let log_density = support
        .iter()
        .map(|&x| terms.iter().map(|(p, g)| p * g.density_at(x)).sum::<f64>().ln())
        .collect();
    GridDensity::new(support, log_density)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// `None` when K = 1, where the weight is identically 1.
    #[serde(skip)]
    pub marginals: Vec<Option<GridDensity>>,
}

/// Weight posterior as the mixture `sum_z p(z | y) Dirichlet(alpha + counts(z))`.
pub fn weight_posterior_summary(
    trace: &AllocationTrace,
    post: &AllocationPosterior,
    alpha: &[f64],
) -> Result<WeightSummary> {
    let k = trace.k;
    if alpha.len() != k {
        return Err(MixError::InvalidConfig(format!("{} concentrations for K = {k}", alpha.len())));
    }
    let mut first = vec![0.0; k];
    let mut second = vec![0.0; k];
    let mut terms: Vec<(f64, Vec<f64>, f64)> = Vec::new();
    for (key, &p) in &post.entries {
        if p <= 0.0 {
            continue;
        }
        let entry = trace
            .table
            .get(key)
            .ok_or_else(|| MixError::InvalidConfig(format!("allocation {key} missing from trace")))?;
        let a: Vec<f64> = alpha.iter().zip(entry.fit.allocation.counts()).map(|(&a, &c)| a + c as f64).collect();
        let total: f64 = a.iter().sum();
        for j in 0..k {
            first[j] += p * a[j] / total;
            second[j] += p * a[j] * (a[j] + 1.0) / (total * (total + 1.0));
        }
        terms.push((p, a, total));
    }
    if terms.is_empty() {
        return Err(MixError::EmptyTrace);
    }
    let sd = first.iter().zip(&second).map(|(m, s)| (s - m * m).max(0.0).sqrt()).collect();
    let xs: Vec<f64> = (0..WEIGHT_GRID_POINTS)
        .map(|i| (i as f64 + 0.5) / WEIGHT_GRID_POINTS as f64)
        .collect();
    let mut marginals = Vec::with_capacity(k);
    if k == 1 {
        marginals.push(None);
    }
    for j in (0..k).filter(|_| k > 1) {
        let ld = xs
            .iter()
            .map(|&x| {
                let logs: Vec<f64> = terms
                    .iter()
                    .map(|(p, a, total)| p.ln() + beta_ln_pdf(x, a[j], total - a[j]))
                    .collect();
                logsumexp(&logs)
            })
            .collect();
        marginals.push(Some(GridDensity::new(xs.clone(), ld)?));
    }
    Ok(WeightSummary { mean: first, sd, marginals })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageDiagnostic {
    pub tv_distance: f64,
    pub threshold: f64,
    pub flagged: bool,
    /// `log pG - log pI` per key; `None` where either probability is zero.
    pub log_ratios: BTreeMap<AllocationKey, Option<f64>>,
}

/// Compares the two allocation posterior estimates; keys missing from one
/// side count as probability zero there.
pub fn coverage_diagnostic(
    pg: &AllocationPosterior,
    pi: &AllocationPosterior,
    threshold: f64,
) -> CoverageDiagnostic {
    let mut keys: Vec<&AllocationKey> = pg.entries.keys().chain(pi.entries.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut tv = 0.0;
    let mut log_ratios = BTreeMap::new();
    for key in keys {
        let (a, b) = (pg.prob(key), pi.prob(key));
        tv += (a - b).abs();
        let ratio = (a > 0.0 && b > 0.0).then(|| a.ln() - b.ln());
        log_ratios.insert(key.clone(), ratio);
    }
    let tv_distance = 0.5 * tv;
    CoverageDiagnostic { tv_distance, threshold, flagged: tv_distance > threshold, log_ratios }
}

#[cfg(test)]
pub(crate) mod testing {
    use std::collections::BTreeMap;

    use crate::engine::{conditional_fit, QuadratureConfig};
    use crate::model::{Allocation, AllocationTrace, Family, Observations, PoissonPriorKind, PriorSpec, TraceEntry};
    use crate::sampler::SamplerConfig;

    pub const POISSON: Family = Family::Poisson { prior: PoissonPriorKind::GammaConjugate };

    /// Trace over raw labellings of `y` with the given visit counts.
    pub fn trace_of(y: &[f64], family: Family, k: usize, allocs: &[(&[u8], usize)]) -> AllocationTrace {
        let obs = Observations::new(y.to_vec(), &family).unwrap();
        let priors = PriorSpec::new(k);
        let mut table = BTreeMap::new();
        let mut visits = Vec::new();
        for &(labels, count) in allocs {
            let z = Allocation::new(labels.to_vec(), k).unwrap();
            let fit = conditional_fit(&obs, &z, &family, &priors, &QuadratureConfig::default()).unwrap();
            visits.extend(std::iter::repeat_n(z.key(), count));
            table.insert(z.key(), TraceEntry { visit_count: count, fit });
        }
        AllocationTrace { k, visits, table, config: SamplerConfig::default() }
    }
}
