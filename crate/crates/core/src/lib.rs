//! Finite mixture inference driven by the posterior over allocations.
//!
//! The allocation vector `z` is explored by *modal* Gibbs sampling: at every
//! iteration the model is fitted conditionally on the current `z`, the modes
//! of the weights and component parameters are extracted, and a fresh `z` is
//! drawn with those modes plugged in. Conditional posteriors are then mixed by
//! Bayesian model averaging, and three marginal-likelihood estimates are used
//! to compare models with different numbers of components.
//!
//! Module map:
//!
//! * [`model`], [`grid`]: shared domain types, allocation bookkeeping and
//!   label canonicalization.
//! * [`engine`]: exact and quadrature-based conditional fits given `z`.
//! * [`sampler`]: modal Gibbs, a reference data-augmentation Gibbs sampler
//!   and exact enumeration for small problems.
//! * [`bma`]: allocation posteriors, averaged marginals, weight posterior and
//!   the coverage diagnostic.
//! * [`select`]: evidence estimators and posterior model probabilities.

pub mod bma;
pub mod engine;
pub mod error;
pub mod grid;
pub mod model;
pub mod sampler;
pub mod select;
pub mod special;

pub use error::{MixError, Result};
pub use grid::GridDensity;
pub use model::{
    allocation_counts, canonical_permutation, canonicalize, Allocation, AllocationKey,
    AllocationTrace, ComponentPosterior, ConditionalFit, Family, FitSummary, GammaPrior,
    LocationMarginal, ModalParams, NormalPrior, Observations, PoissonPriorKind, PriorSpec,
    TraceEntry,
};
