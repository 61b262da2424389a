//! Boosted model-replacement poisoning. A compromised client trains on a
//! label-flipped shard and sends `beta * (theta* - theta_prev)`.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{self, LabeledExample, LocalUpdate, ModelSpec, ParamVector, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonPlan {
    pub compromised_ids: BTreeSet<usize>,
    pub boost: f64,
    pub target_class: usize,
    pub flip_to: usize,
    pub start_round: usize,
}

impl PoisonPlan {
    pub fn count(&self) -> usize {
        self.compromised_ids.len()
    }

    pub fn is_active(&self, t: usize, client: usize) -> bool {
        t >= self.start_round && self.compromised_ids.contains(&client)
    }
}

/// Default relabelling target for `target_class`.
pub fn default_flip_to(target_class: usize, class_count: usize) -> usize {
    (target_class + 1) % class_count
}

pub fn flip_labels(
    shard: &[LabeledExample],
    target_class: usize,
    flip_to: usize,
) -> Result<Vec<LabeledExample>> {
    if flip_to == target_class {
        return Err(Error::FlipToTargetClass(target_class));
    }
    Ok(shard
        .iter()
        .map(|ex| LabeledExample {
            features: ex.features.clone(),
            label: if ex.label == target_class {
                flip_to
            } else {
                ex.label
            },
        })
        .collect())
}

/// Train on `poisoned_shard` from `f_prev` and boost the resulting delta.
pub fn craft_poison_update(
    client_id: usize,
    f_prev: &ParamVector,
    spec: &ModelSpec,
    poisoned_shard: &[LabeledExample],
    train: &TrainConfig,
    boost: f64,
    seed: u64,
) -> Result<LocalUpdate> {
    if !(boost > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "boost factor must be positive, got {boost}"
        )));
    }
    let mut update = model::local_train(client_id, f_prev, spec, poisoned_shard, train, seed)?;
    update.delta.0.iter_mut().for_each(|d| *d *= boost);
    Ok(update)
}
