//! Samplers over the allocation space.
//!
//! [`run_modal_gibbs`] is the main algorithm: fit conditionally on the current
//! allocation, take the conditional modes of the weights and component
//! parameters, and redraw every label with those modes held fixed.
//! [`run_reference_gibbs`] is a classic data-augmentation sampler used to
//! validate it, and [`enumerate_exact`] evaluates the exact allocation
//! posterior when `K^n` is small.
//!
//! All recorded allocations are canonical: components are ordered by their
//! conditional location mode, so label-switched copies of a partition share
//! one key.

mod cache;
mod exact;
mod modal;
mod reference;

pub use exact::{enumerate_exact, AllAllocations, full_support_trace, ExactClass, ExactPosterior, ENUMERATION_GUARD};
pub use modal::{init_allocation, modal_sweep, run_modal_gibbs};
pub use reference::{run_reference_gibbs, ParameterDraws};


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Sorted observations split into K contiguous blocks.
    Quantile,
    RandomUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub burn_in: usize,
    pub iterations: usize,
    pub thin: usize,
    pub seed: u64,
    pub init: InitStrategy,
    /// Upper bound on memoized conditional fits (least recently used evicted).
    pub cache_capacity: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            burn_in: 200,
            iterations: 10_000,
            thin: 10,
            seed: 1,
            init: InitStrategy::Quantile,
            cache_capacity: 1_000_000,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.iterations < self.thin {
            return Err(MixError::InvalidConfig(format!(
                "need iterations >= thin >= 1 (iterations {}, thin {})",
                self.iterations, self.thin
            )));
        }
        if self.cache_capacity == 0 {
            return Err(MixError::InvalidConfig("cache capacity must be positive".into()));
        }
        Ok(())
    }

    /// Number of sweeps kept after burn-in and thinning.
    pub fn retained(&self) -> usize {
        self.iterations / self.thin
    }

    pub(crate) fn is_retained(&self, iteration: usize) -> bool {
        iteration > self.burn_in && (iteration - self.burn_in).is_multiple_of(self.thin)
    }
}

/// ChaCha8 stream for one chain; `stream` separates chains sharing a seed.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
