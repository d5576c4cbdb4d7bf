//! Domain types shared by every stage: observations, family and prior
//! configuration, allocations with their canonical keys, and the records a
//! conditional fit produces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::grid::GridDensity;
use crate::sampler::SamplerConfig;
use crate::special::gamma_ln_pdf;

/// Largest number of components an allocation key can encode.
pub const MAX_COMPONENTS: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoissonPriorKind {
    /// Gamma(a, b) on the rate, conjugate.
    GammaConjugate,
    /// Gaussian prior on the log rate.
    LogNormal,
}

/// Component family. Shared precision only exists for Gaussian components and
/// the prior kind only for Poisson components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Family {
    Gaussian { shared_precision: bool },
    Poisson { prior: PoissonPriorKind },
}

impl Family {
    pub fn is_gaussian(&self) -> bool {
        matches!(self, Family::Gaussian { .. })
    }

    pub fn shared_precision(&self) -> bool {
        matches!(self, Family::Gaussian { shared_precision: true })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observations {
    values: Vec<f64>,
}

impl Observations {
    pub fn new(values: Vec<f64>, family: &Family) -> Result<Self> {
        if values.is_empty() {
            return Err(MixError::InvalidData("no observations".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(MixError::InvalidData(format!("observation {i} is not finite")));
            }
            if let Family::Poisson { .. } = family {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(MixError::InvalidData(format!(
                        "observation {i} = {v} is not a non-negative integer count"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Dirichlet concentrations, one per component.
    pub alpha: Vec<f64>,
    pub gaussian_mean: NormalPrior,
    pub gaussian_precision: GammaPrior,
    pub poisson_gamma: GammaPrior,
    /// Prior on the log rate.
    pub poisson_lognormal: NormalPrior,
}

impl PriorSpec {
    pub const DEFAULT_ALPHA: f64 = 2.0;

    pub fn new(k: usize) -> Self {
        Self {
            alpha: vec![Self::DEFAULT_ALPHA; k],
            gaussian_mean: NormalPrior { mean: 0.0, precision: 0.001 },
            gaussian_precision: GammaPrior { shape: 0.5, rate: 0.5 },
            // shape above one keeps every conditional rate mode positive; a zero
            // mode would make a component unable to take any positive count
            poisson_gamma: GammaPrior { shape: 2.0, rate: 0.1 },
            poisson_lognormal: NormalPrior { mean: 0.0, precision: 0.001 },
        }
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    /// Same component priors with the concentration vector sized for `k`
    /// components. Only a symmetric concentration vector can be resized.
    pub fn for_components(&self, k: usize) -> Result<Self> {
        if self.alpha.len() == k {
            return Ok(self.clone());
        }
        let first = *self
            .alpha
            .first()
            .ok_or_else(|| MixError::InvalidPrior("empty concentration vector".into()))?;
        if self.alpha.iter().any(|&a| a != first) {
            return Err(MixError::InvalidPrior(format!(
                "asymmetric concentrations of length {} cannot be resized to K = {k}",
                self.alpha.len()
            )));
        }
        Ok(Self { alpha: vec![first; k], ..self.clone() })
    }

    pub fn validate(&self, family: &Family) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.len() > MAX_COMPONENTS {
            return Err(MixError::InvalidPrior(format!(
                "K = {} outside 1..={MAX_COMPONENTS}",
                self.alpha.len()
            )));
        }
        if self.alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(MixError::InvalidPrior("concentrations must be positive".into()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match family {
            Family::Gaussian { .. } => {
                let m = self.gaussian_mean;
                let g = self.gaussian_precision;
                if !m.mean.is_finite() || !positive(m.precision) {
                    return Err(MixError::InvalidPrior("Gaussian mean prior".into()));
                }
                if !positive(g.shape) || !positive(g.rate) {
                    return Err(MixError::InvalidPrior("Gaussian precision prior".into()));
                }
            }
            Family::Poisson { prior: PoissonPriorKind::GammaConjugate } => {
                let g = self.poisson_gamma;
                if !positive(g.shape) || !positive(g.rate) {
                    return Err(MixError::InvalidPrior("Poisson Gamma prior".into()));
                }
            }
            Family::Poisson { prior: PoissonPriorKind::LogNormal } => {
                let m = self.poisson_lognormal;
                if !m.mean.is_finite() || !positive(m.precision) {
                    return Err(MixError::InvalidPrior("Poisson log-rate prior".into()));
                }
            }
        }
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        self.alpha.windows(2).all(|w| w[0] == w[1])
    }
}

/// Canonical byte encoding of an allocation: a 4-byte little-endian length
/// followed by one byte per label. Ordering is lexicographic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct AllocationKey(Vec<u8>);

impl AllocationKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    /// Labels as a compact string, 1-based, e.g. `"1121"`; labels above 9
    /// are separated by dots.
    pub fn label_string(&self) -> String {
        let labels = &self.0[4.min(self.0.len())..];
        if labels.iter().all(|&l| l < 9) {
            labels.iter().map(|&l| char::from(b'1' + l)).collect()
        } else {
            labels.iter().map(|l| (l + 1).to_string()).collect::<Vec<_>>().join(".")
        }
    }
}

impl std::fmt::Display for AllocationKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label_string())
    }
}

/// Latent component labels, 0-based internally (`0..k`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Allocation {
    labels: Vec<u8>,
    counts: Vec<usize>,
}

impl Allocation {
    pub fn new(labels: Vec<u8>, k: usize) -> Result<Self> {
        if k == 0 || k > MAX_COMPONENTS {
            return Err(MixError::InvalidConfig(format!("K = {k} outside 1..={MAX_COMPONENTS}")));
        }
        let counts = allocation_counts(&labels, k)?;
        Ok(Self { labels, counts })
    }

    /// Builds from 1-based labels as written in most texts.
    pub fn from_one_based(labels: &[usize], k: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(labels.len());
        for &l in labels {
            if l == 0 || l > k {
                return Err(MixError::LabelOutOfRange { label: l, k });
            }
            out.push((l - 1) as u8);
        }
        Self::new(out, k)
    }

    pub fn uniform(n: usize, k: usize) -> Result<Self> {
        Self::new(vec![0; n], k)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize + 1).collect()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Number of non-empty components.
    pub fn occupied(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn key(&self) -> AllocationKey {
        let mut bytes = Vec::with_capacity(4 + self.labels.len());
        bytes.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&self.labels);
        AllocationKey(bytes)
    }

    pub fn from_key(key: &AllocationKey, k: usize) -> Result<Self> {
        let bytes = key.as_bytes();
        if bytes.len() < 4 {
            return Err(MixError::InvalidConfig("truncated allocation key".into()));
        }
        let n = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        if bytes.len() != 4 + n {
            return Err(MixError::InvalidConfig("allocation key length mismatch".into()));
        }
        Self::new(bytes[4..].to_vec(), k)
    }

    /// Applies `perm[old] = new` to every label.
    pub fn relabel(&self, perm: &[u8]) -> Result<Self> {
        if perm.len() != self.k() {
            return Err(MixError::InvalidConfig("permutation length differs from K".into()));
        }
        let labels = self.labels.iter().map(|&l| perm[l as usize]).collect();
        Self::new(labels, self.k())
    }

    /// Relabels components in order of first appearance (`0, 1, ...`), with
    /// empty components taking the remaining labels in their original order.
    /// Returns the relabeled allocation and the permutation used.
    pub fn first_occurrence_form(&self) -> (Self, Vec<u8>) {
        let k = self.k();
        let mut perm = vec![u8::MAX; k];
        let mut next = 0u8;
        for &l in &self.labels {
            if perm[l as usize] == u8::MAX {
                perm[l as usize] = next;
                next += 1;
            }
        }
        for p in perm.iter_mut() {
            if *p == u8::MAX {
                *p = next;
                next += 1;
            }
        }
        let labels = self.labels.iter().map(|&l| perm[l as usize]).collect();
        let mut counts = vec![0; k];
        for (old, &new) in perm.iter().enumerate() {
            counts[new as usize] = self.counts[old];
        }
        (Self { labels, counts }, perm)
    }

    /// Splits `values` by component.
    pub fn partition(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let mut parts: Vec<Vec<f64>> =
            self.counts.iter().map(|&c| Vec::with_capacity(c)).collect();
        for (&l, &v) in self.labels.iter().zip(values) {
            parts[l as usize].push(v);
        }
        parts
    }
}

/// Per-component counts `n_j` for 0-based labels.
pub fn allocation_counts(labels: &[u8], k: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; k];
    for &l in labels {
        let l = l as usize;
        if l >= k {
            return Err(MixError::LabelOutOfRange { label: l + 1, k });
        }
        counts[l] += 1;
    }
    Ok(counts)
}

/// Permutation `perm[old] = new` that sorts components by ascending
/// location, ties broken by the original label index.
pub fn canonical_permutation(locations: &[f64]) -> Result<Vec<u8>> {
    for (j, &v) in locations.iter().enumerate() {
        if !v.is_finite() {
            return Err(MixError::InvalidLocation { component: j, value: v });
        }
    }
    let mut order: Vec<usize> = (0..locations.len()).collect();
    order.sort_by(|&a, &b| locations[a].total_cmp(&locations[b]).then(a.cmp(&b)));
    let mut perm = vec![0u8; locations.len()];
    for (rank, &old) in order.iter().enumerate() {
        perm[old] = rank as u8;
    }
    Ok(perm)
}

/// Relabels `alloc` so component labels follow ascending `locations`.
pub fn canonicalize(alloc: &Allocation, locations: &[f64]) -> Result<Allocation> {
    if locations.len() != alloc.k() {
        return Err(MixError::InvalidConfig(format!(
            "{} locations for K = {}",
            locations.len(),
            alloc.k()
        )));
    }
    let perm = canonical_permutation(locations)?;
    alloc.relabel(&perm)
}

/// Conditional posterior of a component's location parameter: a grid, or an
/// exact Gamma(shape, rate) for the conjugate Poisson case.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LocationMarginal {
    Grid(GridDensity),
    Gamma { shape: f64, rate: f64 },
}

impl LocationMarginal {
    pub fn mean(&self) -> f64 {
        match self {
            LocationMarginal::Grid(g) => g.mean(),
            LocationMarginal::Gamma { shape, rate } => shape / rate,
        }
    }

    pub fn sd(&self) -> f64 {
        match self {
            LocationMarginal::Grid(g) => g.sd(),
            LocationMarginal::Gamma { shape, rate } => shape.sqrt() / rate,
        }
    }

    /// Grid view; the Gamma case is tabulated over mean ± 12 sd clipped at zero.
    pub fn to_grid(&self, points: usize) -> Result<GridDensity> {
        match self {
            LocationMarginal::Grid(g) => Ok(g.clone()),
            &LocationMarginal::Gamma { shape, rate } => {
                let mean = shape / rate;
                let sd = shape.sqrt() / rate;
                let hi = mean + 12.0 * sd;
                let lo = if shape < 1.0 {
                    hi * 1e-12
                } else {
                    (mean - 12.0 * sd).max(0.0)
                };
                let points = points.max(3);
                let xs: Vec<f64> = (0..points)
                    .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
                    .collect();
                let ld = xs.iter().map(|&x| gamma_ln_pdf(x, shape, rate)).collect();
                GridDensity::new(xs, ld)
            }
        }
    }
}

/// Conditional posterior of one component given an allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentPosterior {
    pub n: usize,
    pub location: LocationMarginal,
    /// Gaussian components only.
    pub precision: Option<GridDensity>,
    pub location_mode: f64,
    pub precision_mode: Option<f64>,
    /// Additive contribution to `log p(y | z)`. Under a shared precision the
    /// joint evidence does not split; there this holds the component's
    /// evidence at the modal precision, and 0 when empty.
    pub log_evidence: f64,
}

impl ComponentPosterior {
    pub fn modal_params(&self) -> ModalParams {
        ModalParams { location: self.location_mode, precision: self.precision_mode }
    }
}

/// Conditional modes of one component's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModalParams {
    /// Gaussian mean or Poisson rate.
    pub location: f64,
    /// Gaussian precision.
    pub precision: Option<f64>,
}

/// What the sampler needs from a conditional fit: evidence and modes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub log_cond_evidence: f64,
    pub modal_weights: Vec<f64>,
    pub modal_params: Vec<ModalParams>,
}

impl FitSummary {
    pub fn locations(&self) -> Vec<f64> {
        self.modal_params.iter().map(|p| p.location).collect()
    }
}

/// Full conditional fit for one allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalFit {
    #[serde(skip)]
    pub allocation: Allocation,
    pub components: Vec<ComponentPosterior>,
    pub log_cond_evidence: f64,
    pub modal_weights: Vec<f64>,
    pub modal_params: Vec<ModalParams>,
}

impl ConditionalFit {
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            log_cond_evidence: self.log_cond_evidence,
            modal_weights: self.modal_weights.clone(),
            modal_params: self.modal_params.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub visit_count: usize,
    pub fit: ConditionalFit,
}

/// Retained allocations of a sampler run, keyed canonically.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationTrace {
    pub k: usize,
    pub visits: Vec<AllocationKey>,
    pub table: BTreeMap<AllocationKey, TraceEntry>,
    pub config: SamplerConfig,
}

impl AllocationTrace {
    pub fn retained(&self) -> usize {
        self.visits.len()
    }

    pub fn distinct(&self) -> usize {
        self.table.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_based(z: &[usize], k: usize) -> Allocation {
        Allocation::from_one_based(z, k).unwrap()
    }

    #[test]
    fn canonicalize_examples() {
        let z = one_based(&[1, 1, 2], 2);
        assert_eq!(canonicalize(&z, &[1.0, 5.0]).unwrap().one_based(), vec![1, 1, 2]);
        assert_eq!(canonicalize(&z, &[5.0, 1.0]).unwrap().one_based(), vec![2, 2, 1]);
        let z = one_based(&[1, 2, 3], 3);
        assert_eq!(canonicalize(&z, &[3.0, 3.0, 1.0]).unwrap().one_based(), vec![2, 3, 1]);
    }

    #[test]
    fn canonicalize_rejects_non_finite() {
        let z = one_based(&[1, 2], 2);
        let err = canonicalize(&z, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, MixError::InvalidLocation { component: 1, .. }));
        assert!(err.to_string().contains("invalid location estimate"));
    }

    #[test]
    fn counts_examples() {
        assert_eq!(one_based(&[1, 1, 1], 2).counts(), &[3, 0]);
        assert_eq!(one_based(&[1, 2, 1, 2], 2).counts(), &[2, 2]);
        assert_eq!(one_based(&[3, 3, 1], 3).counts(), &[1, 0, 2]);
        assert!(matches!(
            allocation_counts(&[0, 2], 2),
            Err(MixError::LabelOutOfRange { label: 3, k: 2 })
        ));
        assert!(Allocation::from_one_based(&[0, 1], 2).is_err());
    }

    #[test]
    fn counts_are_permuted_with_labels() {
        let z = one_based(&[1, 1, 2, 3, 3, 3], 3);
        let c = canonicalize(&z, &[9.0, 1.0, 4.0]).unwrap();
        assert_eq!(c.one_based(), vec![3, 3, 1, 2, 2, 2]);
        assert_eq!(c.counts(), &[1, 3, 2]);
    }

    #[test]
    fn first_occurrence_form_orders_labels() {
        let z = one_based(&[3, 3, 1, 3], 4);
        let (f, perm) = z.first_occurrence_form();
        assert_eq!(f.one_based(), vec![1, 1, 2, 1]);
        assert_eq!(f.counts(), &[3, 1, 0, 0]);
        assert_eq!(perm, vec![1, 2, 0, 3]);
    }

    #[test]
    fn label_string_is_one_based() {
        assert_eq!(one_based(&[1, 2, 2], 2).key().to_string(), "122");
    }

    proptest! {
        #[test]
        fn key_round_trips(labels in prop::collection::vec(0u8..5, 0..=20)) {
            let z = Allocation::new(labels.clone(), 5).unwrap();
            let back = Allocation::from_key(&z.key(), 5).unwrap();
            prop_assert_eq!(back.labels(), &labels[..]);
            prop_assert_eq!(back.counts(), z.counts());
        }

        #[test]
        fn canonicalize_is_idempotent(
            labels in prop::collection::vec(0u8..4, 1..=20),
            locs in prop::collection::vec(-10.0f64..10.0, 4),
        ) {
            let z = Allocation::new(labels, 4).unwrap();
            let once = canonicalize(&z, &locs).unwrap();
            let mut sorted = locs.clone();
            sorted.sort_by(f64::total_cmp);
            let twice = canonicalize(&once, &sorted).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once.counts().iter().sum::<usize>(), z.n());
        }

        #[test]
        fn counts_sum_to_n(labels in prop::collection::vec(0u8..3, 0..=30)) {
            let c = allocation_counts(&labels, 3).unwrap();
            prop_assert_eq!(c.iter().sum::<usize>(), labels.len());
        }
    }
}
