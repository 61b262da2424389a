use std::collections::BTreeSet;

use fldrop_core::data::gen_synthetic;
use fldrop_core::defense::{upsample_probabilities, SamplingDistribution};
use fldrop_core::model::{init_model, LocalUpdate, ModelSpec, TrainConfig};
use fldrop_core::poisoning::{craft_poison_update, flip_labels};
use fldrop_core::protocol::{aggregate, select_participants, AggregationRule, DenominatorMode};
use proptest::prelude::*;

proptest! {
    #[test]
    fn upsampled_distribution_is_a_distribution(
        n in 2usize..=100,
        k_frac in 0.0f64..1.0,
        lambda in 1.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let k_s = ((n as f64 * k_frac) as usize).min(n - 1);
        prop_assume!((k_s as f64) * lambda < n as f64);
        let ids: BTreeSet<usize> = rand::seq::index::sample(
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed),
            n,
            k_s,
        )
        .into_iter()
        .collect();
        let p = upsample_probabilities(&ids, n, lambda).unwrap();
        let probs = p.probabilities();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(probs.iter().all(|&x| x >= 0.0));
        for (j, &x) in probs.iter().enumerate() {
            if ids.contains(&j) {
                prop_assert_eq!(x, lambda / n as f64);
            }
        }
    }
}

#[test]
fn unit_factor_is_uniform_and_oversized_factor_is_rejected() {
    let ids: BTreeSet<usize> = [1, 4, 7].into();
    let p = upsample_probabilities(&ids, 20, 1.0).unwrap();
    assert!(p.probabilities().iter().all(|&x| x == 1.0 / 20.0));
    assert!(upsample_probabilities(&ids, 6, 2.0).is_err());
    assert!(upsample_probabilities(&ids, 8, 2.0).is_ok());
}

#[test]
fn empty_upsampling_set_selects_like_plain_fedavg() {
    let p = upsample_probabilities(&BTreeSet::new(), 30, 2.0).unwrap();
    let uniform = SamplingDistribution::uniform(30);
    for t in 1..50 {
        assert_eq!(
            select_participants(30, 6, &p, 8, t).unwrap(),
            select_participants(30, 6, &uniform, 8, t).unwrap()
        );
    }
}

#[test]
fn upsampled_clients_are_selected_lambda_times_as_often() {
    let (n, m, lambda, rounds) = (100, 5, 2.0, 20_000);
    let ids: BTreeSet<usize> = (0..5).collect();
    let p = upsample_probabilities(&ids, n, lambda).unwrap();
    let hits: usize = (1..=rounds)
        .map(|t| {
            select_participants(n, m, &p, 13, t)
                .unwrap()
                .iter()
                .filter(|j| ids.contains(j))
                .count()
        })
        .sum();
    let per_client = hits as f64 / (rounds * ids.len()) as f64;
    let expected = m as f64 * lambda / n as f64;
    assert!(
        (per_client - expected).abs() <= 0.1 * expected,
        "{per_client} vs {expected}"
    );
}

struct PoisonFixture {
    spec: ModelSpec,
    shard: Vec<fldrop_core::LabeledExample>,
    train: TrainConfig,
}

fn poison_fixture() -> PoisonFixture {
    let src = gen_synthetic(3, 4, 20, 3.0, 2).unwrap();
    PoisonFixture {
        spec: ModelSpec::new(4, vec![5], 3, Default::default()).unwrap(),
        shard: flip_labels(&src.examples, 0, 1).unwrap(),
        train: TrainConfig {
            epochs: 2,
            lr: 0.1,
            batch_size: 10,
        },
    }
}

#[test]
fn boosting_scales_the_delta_linearly() {
    let fx = poison_fixture();
    let f_prev = init_model(&fx.spec, 6);
    let craft =
        |beta| craft_poison_update(3, &f_prev, &fx.spec, &fx.shard, &fx.train, beta, 17).unwrap();
    let (one, two, ten) = (craft(1.0), craft(2.0), craft(10.0));
    assert!(one
        .delta
        .0
        .iter()
        .zip(&two.delta.0)
        .all(|(a, b)| 2.0 * a == *b));
    let ratio = ten.delta.norm() / one.delta.norm();
    assert!((ratio - 10.0).abs() < 1e-12);
}

#[test]
fn clipping_saturates_boosted_updates() {
    let fx = poison_fixture();
    let f_prev = init_model(&fx.spec, 6);
    let rule = AggregationRule {
        server_lr: 0.25,
        clip_norm: Some(1.0),
        denominator: DenominatorMode::ReceivedCount,
        m: 10,
    };
    let base = craft_poison_update(3, &f_prev, &fx.spec, &fx.shard, &fx.train, 1.0, 17).unwrap();
    let honest = LocalUpdate {
        client_id: 1,
        delta: f_prev.sub(&f_prev),
    };
    let with_boost = |beta| {
        let poisoned =
            craft_poison_update(3, &f_prev, &fx.spec, &fx.shard, &fx.train, beta, 17).unwrap();
        aggregate(&f_prev, &[honest.clone(), poisoned], &rule).unwrap()
    };
    // Saturation needs the boosted norm past C for both factors.
    assert!(10.0 * base.delta.norm() > 1.0);
    let (a, b) = (with_boost(10.0), with_boost(1000.0));
    let gap = a.sub(&b).norm();
    assert!(gap < 1e-9, "gap {gap}");
}
