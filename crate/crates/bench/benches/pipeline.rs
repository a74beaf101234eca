use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ngcc_bench::{noise_channels, random_labels};
use ngcc_core::pit::{pit_loss_with_grad, AssignmentMode};
use ngcc_core::signal::{gcc_phat_direct, GccPhat, PHAT_EPSILON};
use ngcc_core::{Frame, ModelConfig, NgccModel};

fn gcc(c: &mut Criterion) {
    let x = noise_channels(2, 480, 1);
    let fft = GccPhat::new(480);
    c.bench_function("gcc_phat_fft_480", |b| {
        b.iter(|| fft.correlate(black_box(&x[0]), black_box(&x[1]), 6, PHAT_EPSILON).unwrap())
    });
    let (a, bb) = (
        Frame::new(x[0].clone(), 24_000.0).unwrap(),
        Frame::new(x[1].clone(), 24_000.0).unwrap(),
    );
    c.bench_function("gcc_phat_direct_480", |b| {
        b.iter(|| gcc_phat_direct(black_box(&a), black_box(&bb), 6, PHAT_EPSILON).unwrap())
    });
}

fn model(c: &mut Criterion) {
    let model = NgccModel::new(ModelConfig::default(), 1).unwrap();
    let x = noise_channels(4, 480, 2);
    let labels = random_labels(4, 2, 6, 3);
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("forward", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
    group.bench_function("forward_backward_pit", |b| {
        b.iter(|| {
            let cache = model.forward_cached(black_box(&x)).unwrap();
            let post = cache.posterior(6).unwrap();
            let (_, grad) = pit_loss_with_grad(&post, &labels, AssignmentMode::PerPair).unwrap();
            model.backward(&cache, &grad.unwrap()).unwrap()
        })
    });
    group.finish();

    let (post, _) = model.forward(&x).unwrap();
    c.bench_function("pit_loss_3_events", |b| {
        let labels = random_labels(4, 3, 6, 4);
        b.iter(|| pit_loss_with_grad(black_box(&post), &labels, AssignmentMode::PerPair).unwrap())
    });
}

criterion_group!(benches, gcc, model);
criterion_main!(benches);
