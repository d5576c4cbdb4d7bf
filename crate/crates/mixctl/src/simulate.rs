use modalmix::sampler::chain_rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Components of a synthetic mixture; observations are emitted component by
/// component in the order given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SimSpec {
    Gaussian { means: Vec<f64>, precisions: Vec<f64>, sizes: Vec<usize> },
    Poisson { means: Vec<f64>, sizes: Vec<usize> },
}

impl SimSpec {
    /// Three unit-precision Gaussians at 0, 5 and 10, 50 draws each.
    pub fn gaussian_replica() -> Self {
        SimSpec::Gaussian { means: vec![0.0, 5.0, 10.0], precisions: vec![1.0; 3], sizes: vec![50; 3] }
    }

    /// Three Poisson components with means 1, 15 and 45, 50 draws each.
    pub fn poisson_replica() -> Self {
        SimSpec::Poisson { means: vec![1.0, 15.0, 45.0], sizes: vec![50; 3] }
    }

    fn validate(&self) -> Result<(), CliError> {
        let (k, sizes) = match self {
            SimSpec::Gaussian { means, precisions, sizes } => {
                if precisions.len() != means.len() {
                    return Err(CliError::Config("one precision per mean is required".into()));
                }
                if means.iter().any(|m| !m.is_finite()) || precisions.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                    return Err(CliError::Config("means must be finite and precisions positive".into()));
                }
                (means.len(), sizes)
            }
            SimSpec::Poisson { means, sizes } => {
                if means.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                    return Err(CliError::Config("Poisson means must be positive".into()));
                }
                (means.len(), sizes)
            }
        };
        if sizes.len() != k || k == 0 {
            return Err(CliError::Config(format!("{} sizes for {k} components", sizes.len())));
        }
        if sizes.iter().sum::<usize>() == 0 {
            return Err(CliError::Config("empty data: all component sizes are zero".into()));
        }
        Ok(())
    }
}

pub fn simulate(spec: &SimSpec, seed: u64) -> Result<Vec<f64>, CliError> {
    spec.validate()?;
    let mut rng = chain_rng(seed, 0);
    let mut out = Vec::new();
    match spec {
        SimSpec::Gaussian { means, precisions, sizes } => {
            for ((&m, &p), &n) in means.iter().zip(precisions).zip(sizes) {
                let d = Normal::new(m, 1.0 / p.sqrt()).map_err(|e| CliError::Config(e.to_string()))?;
                out.extend((0..n).map(|_| d.sample(&mut rng)));
            }
        }
        SimSpec::Poisson { means, sizes } => {
            for (&m, &n) in means.iter().zip(sizes) {
                let d = Poisson::new(m).map_err(|e| CliError::Config(e.to_string()))?;
                out.extend((0..n).map(|_| d.sample(&mut rng)));
            }
        }
    }
    Ok(out)
}
