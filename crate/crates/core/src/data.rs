//! Client population construction: a synthetic Gaussian-blob dataset and the
//! non-IID partition where only `k` designated clients hold the target class.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LabeledExample;
use crate::seed::{self, stream};

pub mod idx;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSource {
    pub examples: Vec<LabeledExample>,
    pub class_count: usize,
    /// `per_class_index[c]` lists the indices of all examples labelled `c`.
    pub per_class_index: Vec<Vec<usize>>,
}

impl DatasetSource {
    pub fn new(examples: Vec<LabeledExample>, class_count: usize) -> Result<Self> {
        let mut per_class_index = vec![Vec::new(); class_count];
        for (i, ex) in examples.iter().enumerate() {
            if ex.label >= class_count {
                return Err(Error::LabelOutOfRange {
                    label: ex.label,
                    class_count,
                });
            }
            if ex.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "example {i} has non-finite features"
                )));
            }
            per_class_index[ex.label].push(i);
        }
        Ok(DatasetSource {
            examples,
            class_count,
            per_class_index,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.features.len())
    }

    pub fn gather(&self, indices: &[usize]) -> Vec<LabeledExample> {
        indices.iter().map(|&i| self.examples[i].clone()).collect()
    }

    /// Split off the first `take` examples of every class (in index order)
    /// into a new source, returning `(taken, rest)`.
    pub fn split_per_class(&self, take: usize) -> Result<(DatasetSource, DatasetSource)> {
        let mut taken = Vec::new();
        let mut rest = Vec::new();
        for (class, indices) in self.per_class_index.iter().enumerate() {
            if indices.len() < take {
                return Err(Error::InsufficientExamples {
                    class,
                    needed: take,
                    available: indices.len(),
                });
            }
            taken.extend(indices[..take].iter().map(|&i| self.examples[i].clone()));
            rest.extend(indices[take..].iter().map(|&i| self.examples[i].clone()));
        }
        Ok((
            DatasetSource::new(taken, self.class_count)?,
            DatasetSource::new(rest, self.class_count)?,
        ))
    }

    pub fn of_class(&self, class: usize) -> Vec<LabeledExample> {
        self.per_class_index
            .get(class)
            .map(|idx| self.gather(idx))
            .unwrap_or_default()
    }
}

/// Isotropic Gaussian blobs: class `c` is centred at `separation * u_c` for
/// a seeded unit direction `u_c`, with identity covariance.
pub fn gen_synthetic(
    class_count: usize,
    input_dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<DatasetSource> {
    if class_count < 2 || per_class == 0 || input_dim == 0 {
        return Err(Error::InvalidArgument(
            "gen_synthetic needs class_count >= 2, input_dim >= 1, per_class >= 1".into(),
        ));
    }
    let mut rng = seed::rng(seed, &[stream::SYNTH]);
    let means: Vec<Vec<f64>> = (0..class_count)
        .map(|_| {
            let dir: Vec<f64> = (0..input_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.into_iter().map(|v| separation * v / norm).collect()
        })
        .collect();
    let mut examples = Vec::with_capacity(class_count * per_class);
    // Interleave classes so any prefix of the data is roughly balanced.
    for _ in 0..per_class {
        for (label, mean) in means.iter().enumerate() {
            let features = mean
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            examples.push(LabeledExample { features, label });
        }
    }
    DatasetSource::new(examples, class_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionParams {
    pub n: usize,
    pub k: usize,
    pub target_class: usize,
    pub alpha_t: f64,
    pub alpha_d: f64,
    pub local_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub n: usize,
    pub k: usize,
    pub target_class: usize,
    pub target_client_ids: BTreeSet<usize>,
    pub shards: Vec<Vec<usize>>,
    pub alpha_t: f64,
    pub alpha_d: f64,
    pub local_size: usize,
}

impl PartitionPlan {
    /// Number of target-class examples a target holder receives.
    pub fn target_quota(&self) -> usize {
        target_quota(self.alpha_t, self.local_size)
    }

    pub fn is_target(&self, client: usize) -> bool {
        self.target_client_ids.contains(&client)
    }
}

fn target_quota(alpha_t: f64, local_size: usize) -> usize {
    // 0.6 * 200 must give 120, not 121.
    ((alpha_t * local_size as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Draw from Dirichlet(alpha, ..., alpha) of dimension `dim`.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: f64, dim: usize) -> Vec<f64> {
    sample_dirichlet_with(rng, &vec![alpha; dim])
}

/// Draw from Dirichlet(concentrations) via normalized Gamma variates.
pub fn sample_dirichlet_with<R: Rng + ?Sized>(rng: &mut R, concentrations: &[f64]) -> Vec<f64> {
    let draws: Vec<f64> = concentrations
        .iter()
        .map(|&a| {
            Gamma::new(a, 1.0)
                .expect("concentration must be positive")
                .sample(rng)
        })
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // Every Gamma draw underflowed: the limit is a point mass.
        let mut out = vec![0.0; concentrations.len()];
        out[rng.gen_range(0..concentrations.len())] = 1.0;
        out
    }
}

/// Largest-remainder apportionment of `total` items by `proportions`; ties
/// go to the lower index.
pub fn apportion(proportions: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Assign examples to `n` disjoint client shards. `k` randomly chosen clients
/// receive `ceil(alpha_t * local_size)` target-class examples; every other
/// slot is filled from the non-target classes with Dirichlet(`alpha_d`)
/// proportions drawn per client.
pub fn partition(
    src: &DatasetSource,
    params: &PartitionParams,
    seed: u64,
) -> Result<PartitionPlan> {
    let PartitionParams {
        n,
        k,
        target_class,
        alpha_t,
        alpha_d,
        local_size,
    } = *params;
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    if target_class >= src.class_count {
        return Err(Error::InvalidArgument(format!(
            "target class {target_class} out of range"
        )));
    }
    if !(alpha_t > 0.0 && alpha_t <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha_t must be in (0, 1], got {alpha_t}"
        )));
    }
    if !(alpha_d > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha_d must be positive, got {alpha_d}"
        )));
    }

    let mut rng = seed::rng(seed, &[stream::PARTITION]);
    let mut pools: Vec<Vec<usize>> = src.per_class_index.clone();
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let target_client_ids: BTreeSet<usize> = index::sample(&mut rng, n, k).into_iter().collect();
    let other_classes: Vec<usize> = (0..src.class_count)
        .filter(|&c| c != target_class)
        .collect();
    let quota = target_quota(alpha_t, local_size).min(local_size);

    let take = |pool: &mut Vec<usize>, class: usize, count: usize| -> Result<Vec<usize>> {
        if pool.len() < count {
            return Err(Error::InsufficientExamples {
                class,
                needed: count,
                available: pool.len(),
            });
        }
        Ok(pool.split_off(pool.len() - count))
    };

    let mut shards = Vec::with_capacity(n);
    for client in 0..n {
        let mut shard = Vec::with_capacity(local_size);
        let remainder = if target_client_ids.contains(&client) {
            shard.extend(take(&mut pools[target_class], target_class, quota)?);
            local_size - quota
        } else {
            local_size
        };
        let proportions = sample_dirichlet(&mut rng, alpha_d, other_classes.len());
        for (&class, count) in other_classes.iter().zip(apportion(&proportions, remainder)) {
            shard.extend(take(&mut pools[class], class, count)?);
        }
        shards.push(shard);
    }

    Ok(PartitionPlan {
        n,
        k,
        target_class,
        target_client_ids,
        shards,
        alpha_t,
        alpha_d,
        local_size,
    })
}
