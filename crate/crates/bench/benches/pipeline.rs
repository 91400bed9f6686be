use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use neurotrade::backtest::{self, TradingConfig};
use neurotrade::dataset;
use neurotrade::indicators::{self, IndicatorConfig};
use neurotrade::neuralnet::{MlpConfig, MlpModel};
use neurotrade_bench::{bars, prices_and_labels, samples};

fn features(c: &mut Criterion) {
    let bars = bars(20, 1);
    let cfg = IndicatorConfig::default();
    c.bench_function("feature_rows_20y", |b| {
        b.iter(|| indicators::compute_feature_rows(black_box(&bars), &cfg).unwrap())
    });
    let closes: Vec<f64> = bars.iter().map(|b| b.close).collect();
    c.bench_function("rsi_20y", |b| {
        b.iter(|| indicators::rsi(black_box(&closes), 14).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let data = samples(&bars(10, 2));
    let resampled = dataset::resample_minority(&data, 1234).unwrap();
    let model = MlpModel::init(&MlpConfig {
        epochs: 1,
        ..Default::default()
    })
    .unwrap();
    let mut group = c.benchmark_group("training");
    group.sample_size(20);
    group.bench_function("one_epoch_10y_resampled", |b| {
        b.iter(|| model.train(black_box(&resampled)).unwrap())
    });
    group.bench_function("predict_10y", |b| {
        b.iter(|| {
            data.iter()
                .map(|s| model.predict(black_box(&s.features)).unwrap())
                .collect::<Vec<_>>()
        })
    });
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let data = samples(&bars(10, 3));
    let (prices, labels) = prices_and_labels(&data);
    let cfg = TradingConfig::default();
    c.bench_function("simulate_10y", |b| {
        b.iter_batched(
            || labels.clone(),
            |l| backtest::simulate(black_box(&prices), &l, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("buy_and_hold_10y", |b| {
        b.iter(|| backtest::buy_and_hold(black_box(&prices), &cfg).unwrap())
    });
}

criterion_group!(benches, features, training, simulation);
criterion_main!(benches);
