use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tsdistill::data::{make_windows, synth_seesaw, DataBundle, Normalization, SeesawConfig, Split};
use tsdistill::students::{StudentConfig, StudentKind};
use tsdistill::teacher::synthetic_oracle;
use tsdistill::trainer::{train, KdVariant, TrainConfig};

fn one_epoch(c: &mut Criterion) {
    let (l, t) = (96, 48);
    let s = synth_seesaw(&SeesawConfig {
        lookback: l,
        horizon: t,
        length: 1500,
        ..SeesawConfig::default()
    })
    .unwrap();
    let data = DataBundle::build(&s.observed, l, t, 4, Normalization::PerWindow).unwrap();
    let trace = synthetic_oracle(&make_windows(&s.latent, l, t, 4, Split::Train).unwrap(), 0.05, 8, 0).unwrap();

    let mut group = c.benchmark_group("one training epoch");
    group.sample_size(10);
    for variant in [KdVariant::Baseline, KdVariant::Distilts, KdVariant::FdKd] {
        let cfg = TrainConfig {
            student: StudentConfig {
                kind: StudentKind::Variate,
                trend_kernel: 25,
                d_model: 16,
                d_ff: 32,
            },
            epochs: 1,
            kd_variant: variant,
            ..TrainConfig::default()
        };
        group.bench_function(variant.name(), |b| {
            b.iter(|| black_box(train(&cfg, &data, Some(&trace)).unwrap().record.best_val_mse))
        });
    }
    group.finish();
}

criterion_group!(benches, one_epoch);
criterion_main!(benches);
