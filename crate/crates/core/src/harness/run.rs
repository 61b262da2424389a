use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rayon::prelude::*;

use crate::adversary::{
    identification_score, sample_visible_set, AttackPlan, ContributionLedger, ObservationKind,
    ObservationMode, RoundObservation, TargetedDropper,
};
use crate::data::{self, gen_synthetic, DatasetSource, PartitionParams, PartitionPlan};
use crate::defense::{self, upsample_probabilities, SamplingDistribution};
use crate::error::{Error, Result};
use crate::harness::config::{AttackKind, ScenarioConfig};
use crate::harness::metrics::{RoundMetrics, RunSummary, TrialSeries};
use crate::model::{init_model, LabeledExample, LocalUpdate, ModelSpec, ParamVector, TrainConfig};
use crate::poisoning::{craft_poison_update, default_flip_to, flip_labels, PoisonPlan};
use crate::protocol::{client_seed, run_protocol, EvalSets, RoundContext, RoundHooks, RoundRecord};
use crate::seed::{self, stream};

/// Everything one trial needs, materialized from a config and a seed.
#[derive(Debug, Clone)]
pub struct Population {
    pub spec: ModelSpec,
    pub plan: PartitionPlan,
    pub clients: Vec<Vec<LabeledExample>>,
    /// Honest clients holding the target class.
    pub targets: BTreeSet<usize>,
    /// Poisoning clients, drawn from the target-like shards.
    pub compromised: BTreeSet<usize>,
    pub eval: EvalSets,
    /// Target-population sample held by the adversary.
    pub attacker_set: Vec<LabeledExample>,
    /// Target-population sample held by the server.
    pub server_set: Vec<LabeledExample>,
}

fn load_source(cfg: &ScenarioConfig, seed: u64) -> Result<DatasetSource> {
    let d = &cfg.data;
    if let Some(s) = &d.synthetic {
        let per_class = s.pool_per_class + d.test_per_class + 2 * d.target_set_size;
        return gen_synthetic(s.class_count, s.input_dim, per_class, s.separation, seed);
    }
    let idx = d.idx.as_ref().expect("validated: one data source present");
    data::idx::load_idx(&idx.images, &idx.labels, idx.class_count)
}

pub fn build_population(cfg: &ScenarioConfig, seed: u64) -> Result<Population> {
    let d = &cfg.data;
    let source = load_source(cfg, seed)?;
    if d.target_class >= source.class_count {
        return Err(Error::config(
            "data.target_class",
            format!("dataset has only {} classes", source.class_count),
        ));
    }
    let (test, rest) = source.split_per_class(d.test_per_class)?;
    let (attacker_pool, rest) = rest.split_per_class(d.target_set_size)?;
    let (server_pool, pool) = rest.split_per_class(d.target_set_size)?;

    let k_p = cfg.poison_count();
    let params = PartitionParams {
        n: cfg.population_size(),
        k: d.k + k_p,
        target_class: d.target_class,
        alpha_t: d.alpha_t,
        alpha_d: d.alpha_d,
        local_size: d.local_size,
    };
    let plan = data::partition(&pool, &params, seed)?;

    let holders: Vec<usize> = plan.target_client_ids.iter().copied().collect();
    let mut rng = seed::rng(seed, &[stream::COMPROMISED]);
    let compromised: BTreeSet<usize> = index::sample(&mut rng, holders.len(), k_p)
        .into_iter()
        .map(|i| holders[i])
        .collect();
    let targets = holders
        .iter()
        .copied()
        .filter(|j| !compromised.contains(j))
        .collect();

    let spec = ModelSpec::new(
        source.input_dim(),
        cfg.model.hidden_dims.clone(),
        source.class_count,
        cfg.model.activation,
    )?;
    let clients = plan.shards.iter().map(|s| pool.gather(s)).collect();
    Ok(Population {
        spec,
        clients,
        targets,
        compromised,
        eval: EvalSets::new(d.target_class, test.examples),
        attacker_set: attacker_pool.of_class(d.target_class),
        server_set: server_pool.of_class(d.target_class),
        plan,
    })
}

enum Attacker {
    Passive,
    /// Drops a fixed set from the first round.
    Fixed(BTreeSet<usize>),
    Targeted(Box<TargetedDropper>),
}

struct Poisoner {
    plan: PoisonPlan,
    shards: BTreeMap<usize, Vec<LabeledExample>>,
    train: TrainConfig,
    seed: u64,
}

struct UpsamplingServer<'a> {
    ledger: ContributionLedger,
    mode: ObservationMode,
    validation: &'a [LabeledExample],
    count: usize,
    factor: f64,
    rounds_before: usize,
}

struct ScenarioHooks<'a> {
    spec: &'a ModelSpec,
    targets: &'a BTreeSet<usize>,
    attacker: Attacker,
    poisoner: Option<Poisoner>,
    server: Option<UpsamplingServer<'a>>,
    dropped: usize,
    log: Vec<(usize, usize)>,
}

impl RoundHooks for ScenarioHooks<'_> {
    fn sampling(&mut self, t: usize, n: usize) -> Result<SamplingDistribution> {
        match &self.server {
            Some(s) if t > s.rounds_before => {
                let z: BTreeSet<usize> = defense::server_identify(&s.ledger, s.count)
                    .into_iter()
                    .collect();
                upsample_probabilities(&z, n, s.factor)
            }
            _ => Ok(SamplingDistribution::uniform(n)),
        }
    }

    fn poison(
        &self,
        t: usize,
        client_id: usize,
        global: &ParamVector,
    ) -> Option<Result<LocalUpdate>> {
        let p = self.poisoner.as_ref()?;
        if !p.plan.is_active(t, client_id) {
            return None;
        }
        Some(craft_poison_update(
            client_id,
            global,
            self.spec,
            &p.shards[&client_id],
            &p.train,
            p.plan.boost,
            client_seed(p.seed, t, client_id),
        ))
    }

    fn filter(&mut self, t: usize, updates: Vec<LocalUpdate>) -> Result<Vec<LocalUpdate>> {
        let before = updates.len();
        let kept = match &mut self.attacker {
            Attacker::Passive => updates,
            Attacker::Fixed(set) => crate::adversary::drop_filter(updates, set, t, 0),
            Attacker::Targeted(dropper) => dropper.filter(t, updates),
        };
        self.dropped = before - kept.len();
        Ok(kept)
    }

    fn observe(&mut self, round: &RoundContext<'_>) -> Result<()> {
        if let Attacker::Targeted(dropper) = &mut self.attacker {
            dropper.observe(
                round.t,
                round.participants,
                round.sent,
                round.global_before,
                round.global_after,
                self.spec,
            )?;
        }
        if let Some(server) = &mut self.server {
            let received: Vec<usize> = round.received.iter().map(|u| u.client_id).collect();
            let obs = match server.mode.kind {
                ObservationKind::Plain => RoundObservation::with_updates(
                    round.t,
                    &received,
                    round.global_before,
                    round.global_after,
                    round.received,
                ),
                _ => RoundObservation::aggregate_only(
                    round.t,
                    &received,
                    round.global_before,
                    round.global_after,
                ),
            };
            crate::adversary::record_round(
                &mut server.ledger,
                &server.mode,
                &obs,
                server.validation,
                self.spec,
            )?;
        }
        let hits = match &self.attacker {
            Attacker::Passive => 0,
            Attacker::Fixed(set) => {
                let ids: Vec<usize> = set.iter().copied().collect();
                identification_score(&ids, self.targets).hits
            }
            Attacker::Targeted(dropper) => {
                identification_score(dropper.identified(), self.targets).hits
            }
        };
        self.log.push((hits, self.dropped));
        Ok(())
    }
}

fn build_attacker(cfg: &ScenarioConfig, pop: &Population, seed: u64) -> Result<Attacker> {
    let Some(a) = &cfg.attack else {
        return Ok(Attacker::Passive);
    };
    let mut rng = seed::rng(seed, &[stream::BASELINE]);
    Ok(match a.kind {
        AttackKind::PerfectKnowledge => {
            let targets: Vec<usize> = pop.targets.iter().copied().collect();
            let count = a.drop_count.min(targets.len());
            Attacker::Fixed(
                index::sample(&mut rng, targets.len(), count)
                    .into_iter()
                    .map(|i| targets[i])
                    .collect(),
            )
        }
        AttackKind::RandomDrop => {
            let eligible: Vec<usize> = (0..cfg.population_size())
                .filter(|j| !pop.compromised.contains(j))
                .collect();
            let count = a.drop_count.min(eligible.len());
            Attacker::Fixed(
                index::sample(&mut rng, eligible.len(), count)
                    .into_iter()
                    .map(|i| eligible[i])
                    .collect(),
            )
        }
        AttackKind::Targeted => {
            let mode = match a.observation {
                ObservationKind::Plain => ObservationMode::plain(),
                ObservationKind::Encrypted => ObservationMode::encrypted(),
                ObservationKind::EncryptedLimited => {
                    let v = a.visible_count.unwrap_or(cfg.population_size());
                    ObservationMode::encrypted_limited(sample_visible_set(
                        cfg.population_size(),
                        &pop.targets,
                        v,
                        a.alpha_v,
                        seed,
                    )?)
                }
            };
            let plan = AttackPlan {
                rounds_before_drop: a.rounds_before_drop,
                drop_count: a.drop_count,
                mode,
                refresh: a.refresh,
                target_set: pop.attacker_set.clone(),
            };
            Attacker::Targeted(Box::new(TargetedDropper::new(
                plan,
                pop.compromised.clone(),
            )))
        }
    })
}

/// One full protocol run.
pub fn run_trial(cfg: &ScenarioConfig, trial: usize) -> Result<TrialSeries> {
    let seed = cfg.base_seed.wrapping_add(trial as u64);
    let pop = build_population(cfg, seed)?;
    let protocol = cfg.protocol_config();

    let poisoner = match &cfg.poison {
        Some(p) if p.count > 0 => {
            let flip_to = p
                .flip_to
                .unwrap_or_else(|| default_flip_to(cfg.data.target_class, pop.spec.class_count));
            let shards = pop
                .compromised
                .iter()
                .map(|&j| {
                    flip_labels(&pop.clients[j], cfg.data.target_class, flip_to).map(|s| (j, s))
                })
                .collect::<Result<_>>()?;
            Some(Poisoner {
                plan: PoisonPlan {
                    compromised_ids: pop.compromised.clone(),
                    boost: p.boost,
                    target_class: cfg.data.target_class,
                    flip_to,
                    start_round: cfg.poison_start(),
                },
                shards,
                train: protocol.local,
                seed,
            })
        }
        _ => None,
    };

    let server = cfg
        .defense
        .as_ref()
        .filter(|d| d.upsample_count > 0)
        .map(|d| UpsamplingServer {
            ledger: ContributionLedger::new(),
            mode: d.server_mode.observation_mode(),
            validation: &pop.server_set,
            count: d.upsample_count,
            factor: d.upsample_factor,
            rounds_before: d.rounds_before_upsample,
        });

    let mut hooks = ScenarioHooks {
        spec: &pop.spec,
        targets: &pop.targets,
        attacker: build_attacker(cfg, &pop, seed)?,
        poisoner,
        server,
        dropped: 0,
        log: Vec::with_capacity(protocol.rounds),
    };

    let init = init_model(&pop.spec, seed);
    let records = run_protocol(
        &protocol,
        &pop.clients,
        &pop.spec,
        init,
        &mut hooks,
        &pop.eval,
        seed,
    )?;
    Ok(series_from(trial, seed, &records, &hooks.log))
}

fn series_from(
    trial: usize,
    seed: u64,
    records: &[RoundRecord],
    log: &[(usize, usize)],
) -> TrialSeries {
    let rounds = records
        .iter()
        .zip(log)
        .map(|(r, &(hits, dropped))| RoundMetrics {
            round: r.t,
            target_acc: r.target_acc,
            target_loss: r.target_loss,
            overall_acc: r.overall_acc,
            nontarget_acc: r.nontarget_acc,
            identified_hits: hits,
            dropped_count: dropped,
        })
        .collect();
    TrialSeries {
        trial,
        seed,
        rounds,
    }
}

/// Run every trial of `cfg` (in parallel) and summarize.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunSummary::new(cfg.clone(), trials))
}
