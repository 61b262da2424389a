//! Federated Averaging engine.
//!
//! Each round the server draws `m` participants from a sampling distribution,
//! the participants train locally from the current global model, the network
//! may drop some of the resulting updates, and the server applies the
//! (optionally clipped) mean of what arrives, scaled by the server rate.
//! Attacks and defenses plug in through [`RoundHooks`].

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defense::SamplingDistribution;
use crate::error::{Error, Result};
use crate::model::{
    self, Evaluation, LabeledExample, LocalUpdate, ModelSpec, ParamVector, TrainConfig,
};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// Divide by `m` regardless of how many updates arrived.
    FixedM,
    /// Divide by the number of updates that arrived.
    #[default]
    ReceivedCount,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationRule {
    pub server_lr: f64,
    pub clip_norm: Option<f64>,
    pub denominator: DenominatorMode,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub n: usize,
    pub m: usize,
    pub rounds: usize,
    pub server_lr: f64,
    pub local: TrainConfig,
    pub clip_norm: Option<f64>,
    pub denominator: DenominatorMode,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > self.n {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= m <= n (m = {}, n = {})",
                self.m, self.n
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("rounds must be >= 1".into()));
        }
        if !(self.server_lr > 0.0) {
            return Err(Error::InvalidArgument("server_lr must be positive".into()));
        }
        if !(self.local.lr > 0.0) {
            return Err(Error::InvalidArgument("local lr must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn aggregation_rule(&self) -> AggregationRule {
        AggregationRule {
            server_lr: self.server_lr,
            clip_norm: self.clip_norm,
            denominator: self.denominator,
            m: self.m,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// 1-based round index.
    pub t: usize,
    pub participants: Vec<usize>,
    pub received: Vec<usize>,
    pub global_before: Arc<ParamVector>,
    pub global_after: Arc<ParamVector>,
    pub target_loss: f64,
    pub target_acc: f64,
    pub overall_acc: f64,
    /// Accuracy restricted to test examples outside the target class.
    pub nontarget_acc: f64,
}

/// Sample `count` distinct indices, each draw proportional to the remaining
/// weights (renormalized after every draw).
pub(crate) fn weighted_sample_without_replacement<R: Rng + ?Sized>(
    rng: &mut R,
    weights: &[f64],
    count: usize,
) -> Option<Vec<usize>> {
    let mut remaining: Vec<f64> = weights.to_vec();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = remaining.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut u = rng.gen::<f64>() * total;
        let mut pick = None;
        for (i, &w) in remaining.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            pick = Some(i);
            if u < w {
                break;
            }
            u -= w;
        }
        // `pick` falls through to the last positive weight on rounding.
        let i = pick?;
        chosen.push(i);
        remaining[i] = 0.0;
    }
    Some(chosen)
}

/// Draw the round-`t` participant set: `m` distinct clients, sampled
/// sequentially without replacement proportional to `p`. Returned sorted.
pub fn select_participants(
    n: usize,
    m: usize,
    p: &SamplingDistribution,
    seed: u64,
    t: usize,
) -> Result<Vec<usize>> {
    if p.len() != n {
        return Err(Error::InvalidDistribution(format!(
            "length {} does not match n = {n}",
            p.len()
        )));
    }
    let positive = p.probabilities().iter().filter(|&&x| x > 0.0).count();
    if positive < m {
        return Err(Error::InvalidDistribution(format!(
            "only {positive} clients have positive probability, need {m}"
        )));
    }
    let mut rng = seed::rng(seed, &[stream::SELECT, t as u64]);
    let mut chosen = weighted_sample_without_replacement(&mut rng, p.probabilities(), m)
        .ok_or_else(|| Error::InvalidDistribution("ran out of probability mass".into()))?;
    chosen.sort_unstable();
    Ok(chosen)
}

/// Scale factor `min(1, C / ||delta||)`.
pub fn clip_scale(norm: f64, clip_norm: f64) -> f64 {
    if norm > clip_norm {
        clip_norm / norm
    } else {
        1.0
    }
}

/// `f_prev + server_lr * sum(clip(delta_i)) / denominator`, summed in
/// ascending client-id order.
pub fn aggregate(
    f_prev: &ParamVector,
    updates: &[LocalUpdate],
    rule: &AggregationRule,
) -> Result<ParamVector> {
    for u in updates {
        if u.delta.len() != f_prev.len() {
            return Err(Error::DimensionMismatch {
                expected: f_prev.len(),
                actual: u.delta.len(),
            });
        }
    }
    if updates.is_empty() {
        return Ok(f_prev.clone());
    }
    let mut ordered: Vec<&LocalUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);

    let mut sum = vec![0.0; f_prev.len()];
    for u in ordered {
        let scale = rule
            .clip_norm
            .map_or(1.0, |c| clip_scale(u.delta.norm(), c));
        for (s, d) in sum.iter_mut().zip(&u.delta.0) {
            *s += scale * d;
        }
    }
    let denominator = match rule.denominator {
        DenominatorMode::FixedM => rule.m,
        DenominatorMode::ReceivedCount => updates.len(),
    } as f64;
    Ok(f_prev.add_scaled(&sum, rule.server_lr / denominator))
}

/// What the protocol exposes to hooks after a round has been aggregated.
#[derive(Debug)]
pub struct RoundContext<'a> {
    pub t: usize,
    pub participants: &'a [usize],
    /// Every update put on the wire this round, in client-id order.
    pub sent: &'a [LocalUpdate],
    /// The subset that reached the server.
    pub received: &'a [LocalUpdate],
    pub global_before: &'a ParamVector,
    pub global_after: &'a ParamVector,
}

/// Extension points for adversaries and defenses. Every method defaults to
/// the behaviour of an unmodified protocol.
pub trait RoundHooks: Sync {
    /// Client-sampling distribution for round `t`.
    fn sampling(&mut self, _t: usize, n: usize) -> Result<SamplingDistribution> {
        Ok(SamplingDistribution::uniform(n))
    }

    /// Replace a participant's honest update. Called concurrently.
    fn poison(
        &self,
        _t: usize,
        _client_id: usize,
        _global: &ParamVector,
    ) -> Option<Result<LocalUpdate>> {
        None
    }

    /// Remove updates in transit.
    fn filter(&mut self, _t: usize, updates: Vec<LocalUpdate>) -> Result<Vec<LocalUpdate>> {
        Ok(updates)
    }

    fn observe(&mut self, _round: &RoundContext<'_>) -> Result<()> {
        Ok(())
    }
}

/// Hooks that leave the protocol untouched.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHooks;

impl RoundHooks for NoHooks {}

#[derive(Debug, Clone)]
pub struct EvalSets {
    pub target_class: usize,
    /// Held-out examples of the target class.
    pub target: Vec<LabeledExample>,
    /// Held-out examples of every class.
    pub full: Vec<LabeledExample>,
}

impl EvalSets {
    pub fn new(target_class: usize, full: Vec<LabeledExample>) -> Self {
        let target = full
            .iter()
            .filter(|e| e.label == target_class)
            .cloned()
            .collect();
        EvalSets {
            target_class,
            target,
            full,
        }
    }
}

struct Metrics {
    target: Evaluation,
    overall_acc: f64,
    nontarget_acc: f64,
}

fn evaluate(params: &ParamVector, spec: &ModelSpec, eval: &EvalSets) -> Result<Metrics> {
    let target = model::forward_eval(params, spec, &eval.target)?;
    let overall = model::forward_eval(params, spec, &eval.full)?;
    let n_full = eval.full.len() as f64;
    let n_target = eval.target.len() as f64;
    let nontarget_acc = if n_full > n_target {
        (overall.accuracy * n_full - target.accuracy * n_target) / (n_full - n_target)
    } else {
        0.0
    };
    Ok(Metrics {
        target,
        overall_acc: overall.accuracy,
        nontarget_acc,
    })
}

/// Local-training seed of one client in one round; independent of the
/// order in which participants are processed.
pub fn client_seed(seed: u64, t: usize, client_id: usize) -> u64 {
    seed::derive(seed, &[stream::LOCAL, t as u64, client_id as u64])
}

/// Run `cfg.rounds` rounds of Federated Averaging from `init`.
///
/// `clients[j]` is client `j`'s local dataset. Local training of the round's
/// participants runs in parallel; everything else is sequential, and the
/// result is identical to a fully sequential execution.
pub fn run_protocol<H: RoundHooks>(
    cfg: &ProtocolConfig,
    clients: &[Vec<LabeledExample>],
    spec: &ModelSpec,
    init: ParamVector,
    hooks: &mut H,
    eval: &EvalSets,
    seed: u64,
) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    if clients.len() != cfg.n {
        return Err(Error::InvalidArgument(format!(
            "{} client datasets for n = {}",
            clients.len(),
            cfg.n
        )));
    }
    let rule = cfg.aggregation_rule();
    let mut global = Arc::new(init);
    let mut records = Vec::with_capacity(cfg.rounds);

    for t in 1..=cfg.rounds {
        let p = hooks.sampling(t, cfg.n)?;
        let participants = select_participants(cfg.n, cfg.m, &p, seed, t)?;

        let hooks_ref: &H = hooks;
        let sent: Vec<LocalUpdate> = participants
            .par_iter()
            .map(|&j| {
                hooks_ref.poison(t, j, &global).unwrap_or_else(|| {
                    model::local_train(
                        j,
                        &global,
                        spec,
                        &clients[j],
                        &cfg.local,
                        client_seed(seed, t, j),
                    )
                })
            })
            .collect::<Result<_>>()?;

        let mut received = hooks.filter(t, sent.clone())?;
        received.sort_by_key(|u| u.client_id);
        let next = Arc::new(aggregate(&global, &received, &rule)?);

        hooks.observe(&RoundContext {
            t,
            participants: &participants,
            sent: &sent,
            received: &received,
            global_before: &global,
            global_after: &next,
        })?;

        let metrics = evaluate(&next, spec, eval)?;
        records.push(RoundRecord {
            t,
            participants,
            received: received.iter().map(|u| u.client_id).collect(),
            global_before: Arc::clone(&global),
            global_after: Arc::clone(&next),
            target_loss: metrics.target.mean_loss,
            target_acc: metrics.target.accuracy,
            overall_acc: metrics.overall_acc,
            nontarget_acc: metrics.nontarget_acc,
        });
        global = next;
    }
    Ok(records)
}
