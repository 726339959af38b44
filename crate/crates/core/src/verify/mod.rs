//! Statistical checks tying the simulated walk to the limit theory.

pub mod heatkernel;
pub mod ks;
pub mod lemmas;
pub mod main_check;
pub mod tightness;
pub mod uclt;

use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::Result;
use crate::rng::derive_seed;
use crate::scaling::{build_whitening, estimate_sigma, DiffusivityEstimate, WhiteningMap};

pub use heatkernel::{heatkernel_envelope, EnvelopeFit};
pub use ks::{ks_test, null_calibration, EcdfTable, KsReference, KsResult};
pub use lemmas::{lemma_probe, LemmaId, LemmaParams};
pub use main_check::{fdd_check, main_theorem_check, ConditionedEnsemble, MainCheckParams};
pub use tightness::{modulus_of_continuity, tightness_check, TightnessParams, TightnessReport};
pub use uclt::{uclt_check, UcltFunctional, UcltParams};

/// Where the whitening map comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum WhiteningSource {
    /// Estimate `Sigma` from unconditioned walks of `n` steps.
    Estimate { n: usize, replicas: u64 },
    /// Use a known covariance matrix.
    Given { sigma: Vec<Vec<f64>> },
}

impl Default for WhiteningSource {
    fn default() -> Self {
        WhiteningSource::Estimate {
            n: 400,
            replicas: 200_000,
        }
    }
}

/// Seed tag separating the diffusivity estimate from the other streams.
const SIGMA_TAG: u64 = 0x5167;

impl WhiteningSource {
    pub fn estimate(&self, env: &Environment, seed: u64) -> Result<DiffusivityEstimate> {
        match self {
            WhiteningSource::Estimate { n, replicas } => estimate_sigma(env, *n, *replicas, derive_seed(seed, SIGMA_TAG)),
            WhiteningSource::Given { sigma } => Ok(DiffusivityEstimate::exact(sigma.clone())),
        }
    }

    pub fn resolve(&self, env: &Environment, seed: u64) -> Result<WhiteningMap> {
        build_whitening(&self.estimate(env, seed)?)
    }
}
