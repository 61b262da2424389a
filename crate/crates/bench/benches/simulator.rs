use criterion::{black_box, criterion_group, criterion_main, Criterion};
use fldrop_bench::training_fixture;
use fldrop_core::analysis::{monte_carlo_rounds, ArrivalModel, CollectorSetup, IdentificationMode};
use fldrop_core::model::{forward_eval, local_train, TrainConfig};
use fldrop_core::protocol::{aggregate, AggregationRule, DenominatorMode};
use fldrop_core::{LocalUpdate, ParamVector};

fn model(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    for (name, hidden) in [("logistic", vec![]), ("mlp32", vec![32])] {
        let fx = training_fixture(hidden);
        let train = TrainConfig {
            epochs: 2,
            lr: 0.1,
            batch_size: 20,
        };
        group.bench_function(format!("local_train/{name}"), |b| {
            b.iter(|| local_train(0, &fx.params, &fx.spec, &fx.shard, black_box(&train), 3))
        });
        group.bench_function(format!("forward_eval/{name}"), |b| {
            b.iter(|| forward_eval(black_box(&fx.params), &fx.spec, &fx.shard))
        });
    }
    group.finish();
}

fn aggregation(c: &mut Criterion) {
    let dim = 170;
    let prev = ParamVector::zeros(dim);
    let updates: Vec<LocalUpdate> = (0..10)
        .map(|j| LocalUpdate {
            client_id: j,
            delta: ParamVector((0..dim).map(|i| ((i * j) % 7) as f64 * 0.1).collect()),
        })
        .collect();
    let rule = AggregationRule {
        server_lr: 0.25,
        clip_norm: Some(1.0),
        denominator: DenominatorMode::ReceivedCount,
        m: 10,
    };
    c.bench_function("aggregate/clipped_10x170", |b| {
        b.iter(|| aggregate(black_box(&prev), &updates, &rule))
    });
}

fn analysis(c: &mut Criterion) {
    let setup = CollectorSetup {
        n: 60,
        m: 10,
        k: 15,
        k_n: 15,
    };
    c.bench_function("monte_carlo/plain_1000", |b| {
        b.iter(|| {
            monte_carlo_rounds(
                black_box(setup),
                IdentificationMode::Plain,
                ArrivalModel::Batch,
                1000,
                5,
            )
        })
    });
}

criterion_group!(benches, model, aggregation, analysis);
criterion_main!(benches);
