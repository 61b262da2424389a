//! Network-level adversary: what it can observe, loss-difference client
//! identification, and targeted dropping of the identified clients' updates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::sample_dirichlet_with;
use crate::error::{Error, Result};
use crate::model::{self, LabeledExample, LocalUpdate, ModelSpec, ParamVector};
use crate::protocol::weighted_sample_without_replacement;
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    /// Individual client updates are visible.
    Plain,
    /// Only the participant set and successive global models are visible.
    Encrypted,
    /// As `Encrypted`, but only participants inside a fixed visible set are seen.
    EncryptedLimited,
}

impl ObservationKind {
    fn name(self) -> &'static str {
        match self {
            ObservationKind::Plain => "plain",
            ObservationKind::Encrypted => "encrypted",
            ObservationKind::EncryptedLimited => "encrypted_limited",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMode {
    pub kind: ObservationKind,
    pub visible_set: Option<BTreeSet<usize>>,
}

impl ObservationMode {
    pub fn plain() -> Self {
        ObservationMode {
            kind: ObservationKind::Plain,
            visible_set: None,
        }
    }

    pub fn encrypted() -> Self {
        ObservationMode {
            kind: ObservationKind::Encrypted,
            visible_set: None,
        }
    }

    pub fn encrypted_limited(visible_set: BTreeSet<usize>) -> Self {
        ObservationMode {
            kind: ObservationKind::EncryptedLimited,
            visible_set: Some(visible_set),
        }
    }
}

/// One round as seen by an observer. `local_models` is present only when
/// individual updates are visible.
#[derive(Debug, Clone)]
pub struct RoundObservation<'a> {
    pub t: usize,
    pub participants: &'a [usize],
    pub global_before: &'a ParamVector,
    pub global_after: &'a ParamVector,
    pub local_models: Option<Vec<(usize, ParamVector)>>,
}

impl<'a> RoundObservation<'a> {
    /// Reconstruct each client's local model as `f_{t-1} + delta`.
    pub fn with_updates(
        t: usize,
        participants: &'a [usize],
        global_before: &'a ParamVector,
        global_after: &'a ParamVector,
        updates: &[LocalUpdate],
    ) -> Self {
        let local_models = updates
            .iter()
            .map(|u| (u.client_id, global_before.add_scaled(&u.delta.0, 1.0)))
            .collect();
        RoundObservation {
            t,
            participants,
            global_before,
            global_after,
            local_models: Some(local_models),
        }
    }

    pub fn aggregate_only(
        t: usize,
        participants: &'a [usize],
        global_before: &'a ParamVector,
        global_after: &'a ParamVector,
    ) -> Self {
        RoundObservation {
            t,
            participants,
            global_before,
            global_after,
            local_models: None,
        }
    }
}

/// Per-client history of observed target-loss decreases.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContributionLedger {
    entries: BTreeMap<usize, Vec<f64>>,
}

impl ContributionLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, client: usize, loss_difference: f64) {
        self.entries
            .entry(client)
            .or_default()
            .push(loss_difference);
    }

    pub fn entries(&self, client: usize) -> &[f64] {
        self.entries.get(&client).map_or(&[], Vec::as_slice)
    }

    pub fn rounds_seen(&self, client: usize) -> usize {
        self.entries(client).len()
    }

    pub fn observed_clients(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn mean(&self, client: usize) -> Option<f64> {
        let e = self.entries.get(&client)?;
        if e.is_empty() {
            return None;
        }
        Some(e.iter().sum::<f64>() / e.len() as f64)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Append one round of loss differences to `ledger`.
///
/// Plain mode credits each participant with the loss decrease of its own
/// local model; the encrypted modes credit every (visible) participant with
/// the decrease of the aggregated model.
pub fn record_round(
    ledger: &mut ContributionLedger,
    mode: &ObservationMode,
    obs: &RoundObservation<'_>,
    target_set: &[LabeledExample],
    spec: &ModelSpec,
) -> Result<()> {
    let mismatch = |reason: &str| Error::ObservationMismatch {
        mode: mode.kind.name(),
        reason: reason.to_string(),
    };
    let before = model::forward_eval(obs.global_before, spec, target_set)?.mean_loss;
    match mode.kind {
        ObservationKind::Plain => {
            let locals = obs
                .local_models
                .as_ref()
                .ok_or_else(|| mismatch("per-client models missing"))?;
            let local_ids: BTreeSet<usize> = locals.iter().map(|(j, _)| *j).collect();
            let participant_ids: BTreeSet<usize> = obs.participants.iter().copied().collect();
            if local_ids != participant_ids {
                return Err(mismatch("local models do not match the participant set"));
            }
            for (j, local) in locals {
                let after = model::forward_eval(local, spec, target_set)?.mean_loss;
                ledger.push(*j, before - after);
            }
        }
        ObservationKind::Encrypted | ObservationKind::EncryptedLimited => {
            if obs.local_models.is_some() {
                return Err(mismatch("per-client models are not observable"));
            }
            let visible = match (mode.kind, &mode.visible_set) {
                (ObservationKind::EncryptedLimited, None) => {
                    return Err(mismatch("visible set required"))
                }
                (ObservationKind::EncryptedLimited, Some(v)) => Some(v),
                _ => None,
            };
            let after = model::forward_eval(obs.global_after, spec, target_set)?.mean_loss;
            let diff = before - after;
            for &j in obs.participants {
                if visible.is_none_or(|v| v.contains(&j)) {
                    ledger.push(j, diff);
                }
            }
        }
    }
    Ok(())
}

/// The `k_n` observed clients with the largest mean loss decrease, best
/// first; ties go to the smaller client id. Unobserved clients are skipped.
pub fn identify_clients(ledger: &ContributionLedger, k_n: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = ledger
        .observed_clients()
        .filter_map(|j| ledger.mean(j).map(|m| (j, m)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(k_n).map(|(j, _)| j).collect()
}

/// Drop every update from `identified` once round `t` is past `rounds_before_drop`.
pub fn drop_filter(
    updates: Vec<LocalUpdate>,
    identified: &BTreeSet<usize>,
    t: usize,
    rounds_before_drop: usize,
) -> Vec<LocalUpdate> {
    if t <= rounds_before_drop {
        return updates;
    }
    updates
        .into_iter()
        .filter(|u| !identified.contains(&u.client_id))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentificationScore {
    pub hits: usize,
    pub precision: f64,
    pub recall: f64,
}

pub fn identification_score(
    identified: &[usize],
    targets: &BTreeSet<usize>,
) -> IdentificationScore {
    let hits = identified.iter().filter(|j| targets.contains(j)).count();
    let ratio = |den: usize| {
        if den == 0 {
            0.0
        } else {
            hits as f64 / den as f64
        }
    };
    IdentificationScore {
        hits,
        precision: ratio(identified.len()),
        recall: ratio(targets.len()),
    }
}

/// Fixed subset of `v` clients a limited observer can see. Client weights
/// are drawn from a Dirichlet with concentration `alpha_v` on target clients
/// and 1 elsewhere, then `v` clients are sampled without replacement
/// proportional to those weights.
pub fn sample_visible_set(
    n: usize,
    target_client_ids: &BTreeSet<usize>,
    v: usize,
    alpha_v: f64,
    seed: u64,
) -> Result<BTreeSet<usize>> {
    if v == 0 || v > n {
        return Err(Error::InvalidArgument(format!(
            "visible set size must be in [1, n], got {v}"
        )));
    }
    if !(alpha_v > 0.0) {
        return Err(Error::InvalidArgument("alpha_v must be positive".into()));
    }
    let mut rng = seed::rng(seed, &[stream::VISIBLE]);
    let concentrations: Vec<f64> = (0..n)
        .map(|j| {
            if target_client_ids.contains(&j) {
                alpha_v
            } else {
                1.0
            }
        })
        .collect();
    let weights = sample_dirichlet_with(&mut rng, &concentrations);
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    let mut chosen: BTreeSet<usize> =
        weighted_sample_without_replacement(&mut rng, &weights, v.min(positive))
            .unwrap_or_default()
            .into_iter()
            .collect();
    if chosen.len() < v {
        // Weights that underflowed to zero: fill uniformly from the rest.
        let rest: Vec<usize> = (0..n).filter(|j| !chosen.contains(j)).collect();
        let fill = rand::seq::index::sample(&mut rng, rest.len(), v - chosen.len());
        chosen.extend(fill.into_iter().map(|i| rest[i]));
    }
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlan {
    pub rounds_before_drop: usize,
    pub drop_count: usize,
    pub mode: ObservationMode,
    pub refresh: bool,
    pub target_set: Vec<LabeledExample>,
}

/// Stateful targeted-dropping adversary driven once per round.
#[derive(Debug, Clone)]
pub struct TargetedDropper {
    pub plan: AttackPlan,
    pub ledger: ContributionLedger,
    identified: BTreeSet<usize>,
    ranked: Vec<usize>,
    /// Clients the adversary controls; never recorded nor dropped.
    own_clients: BTreeSet<usize>,
    dropped_last_round: usize,
}

impl TargetedDropper {
    pub fn new(plan: AttackPlan, own_clients: BTreeSet<usize>) -> Self {
        TargetedDropper {
            plan,
            ledger: ContributionLedger::new(),
            identified: BTreeSet::new(),
            ranked: Vec::new(),
            own_clients,
            dropped_last_round: 0,
        }
    }

    /// Current ranked identification (`drop_count` clients at most).
    pub fn identified(&self) -> &[usize] {
        &self.ranked
    }

    pub fn drop_set(&self) -> &BTreeSet<usize> {
        &self.identified
    }

    fn reidentify(&mut self) {
        self.ranked = identify_clients(&self.ledger, self.plan.drop_count);
        self.identified = self.ranked.iter().copied().collect();
    }

    /// Drop identified clients' updates for round `t`.
    pub fn filter(&mut self, t: usize, updates: Vec<LocalUpdate>) -> Vec<LocalUpdate> {
        // Without refresh the set is fixed at the first dropping round.
        let first = t == self.plan.rounds_before_drop + 1;
        if t > self.plan.rounds_before_drop && (self.plan.refresh || first) {
            self.reidentify();
        }
        let before = updates.len();
        let kept = drop_filter(updates, &self.identified, t, self.plan.rounds_before_drop);
        self.dropped_last_round = before - kept.len();
        kept
    }

    /// Update the ledger with what this adversary saw in round `t`.
    pub fn observe(
        &mut self,
        t: usize,
        participants: &[usize],
        sent: &[LocalUpdate],
        global_before: &ParamVector,
        global_after: &ParamVector,
        spec: &ModelSpec,
    ) -> Result<()> {
        let honest: Vec<usize> = participants
            .iter()
            .copied()
            .filter(|j| !self.own_clients.contains(j))
            .collect();
        let obs = match self.plan.mode.kind {
            ObservationKind::Plain => {
                let updates: Vec<LocalUpdate> = sent
                    .iter()
                    .filter(|u| !self.own_clients.contains(&u.client_id))
                    .cloned()
                    .collect();
                RoundObservation::with_updates(t, &honest, global_before, global_after, &updates)
            }
            _ => {
                // The aggregate is contaminated by our own interference.
                if self.dropped_last_round > 0 {
                    self.dropped_last_round = 0;
                    return self.finish_round(t);
                }
                RoundObservation::aggregate_only(t, &honest, global_before, global_after)
            }
        };
        record_round(
            &mut self.ledger,
            &self.plan.mode,
            &obs,
            &self.plan.target_set,
            spec,
        )?;
        self.dropped_last_round = 0;
        self.finish_round(t)
    }

    fn finish_round(&mut self, t: usize) -> Result<()> {
        // Track the ranking even before dropping starts so progress is visible.
        if t <= self.plan.rounds_before_drop || self.plan.refresh {
            self.ranked = identify_clients(&self.ledger, self.plan.drop_count);
        }
        Ok(())
    }
}
