//! Server-side defenses: client up-sampling driven by the server's own run of
//! loss-difference identification, and the clip norm handed to aggregation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::adversary::{self, ContributionLedger, ObservationMode};
use crate::error::{Error, Result};
use crate::model::LabeledExample;

/// Per-client selection probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    p: Vec<f64>,
}

impl SamplingDistribution {
    pub fn uniform(n: usize) -> Self {
        SamplingDistribution {
            p: vec![1.0 / n as f64; n],
        }
    }

    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidDistribution(
                "entries must be finite and non-negative".into(),
            ));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(SamplingDistribution { p })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Up-sampling vector: `lambda / n` for each identified client and
/// `(n - k_s * lambda) / (n^2 - k_s * n)` for everyone else.
pub fn upsample_probabilities(
    identified: &BTreeSet<usize>,
    n: usize,
    lambda: f64,
) -> Result<SamplingDistribution> {
    if !(lambda >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "upsampling factor must be >= 1, got {lambda}"
        )));
    }
    if let Some(&j) = identified.iter().find(|&&j| j >= n) {
        return Err(Error::InvalidArgument(format!(
            "client {j} out of range for n = {n}"
        )));
    }
    let k_s = identified.len() as f64;
    let nf = n as f64;
    if k_s * lambda >= nf {
        return Err(Error::UpsamplingFactorTooLarge {
            product: k_s * lambda,
            n,
        });
    }
    let others = (nf - k_s * lambda) / (nf * nf - k_s * nf);
    let up = lambda / nf;
    let p = (0..n)
        .map(|j| if identified.contains(&j) { up } else { others })
        .collect();
    Ok(SamplingDistribution { p })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerMode {
    /// The server receives individual client updates.
    #[default]
    Plain,
    /// Secure aggregation: the server only learns the aggregate.
    AggregateOnly,
}

impl ServerMode {
    /// The identification observation model matching this deployment.
    pub fn observation_mode(self) -> ObservationMode {
        match self {
            ServerMode::Plain => ObservationMode::plain(),
            ServerMode::AggregateOnly => ObservationMode::encrypted(),
        }
    }
}

/// Clients the server up-samples; same ranking contract as the adversary.
pub fn server_identify(ledger: &ContributionLedger, k_s: usize) -> Vec<usize> {
    adversary::identify_clients(ledger, k_s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefensePlan {
    pub rounds_before_upsample: usize,
    pub upsample_count: usize,
    pub upsample_factor: f64,
    pub clip_norm: Option<f64>,
    pub validation_set: Vec<LabeledExample>,
    pub server_mode: ServerMode,
}

impl DefensePlan {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.rounds_before_upsample == 0 {
            return Err(Error::InvalidArgument(
                "rounds_before_upsample must be >= 1".into(),
            ));
        }
        if !(self.upsample_factor >= 1.0) {
            return Err(Error::InvalidArgument(
                "upsample_factor must be >= 1".into(),
            ));
        }
        let product = self.upsample_count as f64 * self.upsample_factor;
        if product >= n as f64 {
            return Err(Error::UpsamplingFactorTooLarge { product, n });
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let z: BTreeSet<usize> = [3, 7].into();
        let p = upsample_probabilities(&z, 10, 2.0).unwrap();
        let p = p.probabilities();
        assert!((p[3] - 0.2).abs() < 1e-15 && (p[7] - 0.2).abs() < 1e-15);
        assert!((p[0] - 0.075).abs() < 1e-15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collapses_to_uniform() {
        let empty = upsample_probabilities(&BTreeSet::new(), 12, 3.0).unwrap();
        assert_eq!(empty, SamplingDistribution::uniform(12));
        let z: BTreeSet<usize> = [0, 5].into();
        let unit = upsample_probabilities(&z, 12, 1.0).unwrap();
        assert_eq!(unit, SamplingDistribution::uniform(12));
    }

    #[test]
    fn rejects_oversized_factor() {
        let z: BTreeSet<usize> = [0, 1, 2, 3, 4].into();
        assert!(matches!(
            upsample_probabilities(&z, 10, 2.0),
            Err(Error::UpsamplingFactorTooLarge { .. })
        ));
        assert!(upsample_probabilities(&z, 10, 0.5).is_err());
        let out_of_range: BTreeSet<usize> = [10].into();
        assert!(upsample_probabilities(&out_of_range, 10, 2.0).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(SamplingDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(SamplingDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(SamplingDistribution::new(vec![1.5, -0.5]).is_err());
    }
}
