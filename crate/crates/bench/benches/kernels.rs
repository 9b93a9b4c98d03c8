use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use monoe_core::metrics::ssim;
use monoe_core::nn::{AdamConfig, ClassifierConfig, GeneratorConfig};
use monoe_core::phantom::{make_dataset, PhantomSpec, Role};
use monoe_core::trainer::{classifier_step, generator_l1_step, stack};
use monoe_core::{ClassifierNet, GeneratorNet, Tape, Tensor};

fn ramp(shape: Vec<usize>, scale: f32) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|i| ((i * 7919 % 1000) as f32 / 500.0 - 1.0) * scale).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let x = ramp(vec![4, 16, 64, 64], 1.0);
    let w = ramp(vec![16, 16, 3, 3], 0.1);
    let b = ramp(vec![16], 0.1);
    c.bench_function("conv2d 4x16x64x64 k3 forward+backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xi, wi, bi) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
            let y = tape.conv2d(xi, wi, bi, 1, 1).unwrap();
            let loss = tape.reduce_mean(y).unwrap();
            tape.backward(loss).unwrap();
            black_box(tape.grad(wi).map(|g| g[0]))
        })
    });
}

fn training_steps(c: &mut Criterion) {
    let recs = make_dataset(&PhantomSpec::default(), 2, 2, Role::Eval, 0).unwrap();
    let x = stack(recs.iter().map(|r| &r.poly)).unwrap();
    let y = stack(recs.iter().map(|r| r.mono.as_ref().unwrap())).unwrap();
    let z: Vec<f64> = recs.iter().map(|r| f64::from(r.label.unwrap())).collect();
    let adam = AdamConfig::default();
    let gen = GeneratorNet::<f32>::new(GeneratorConfig { in_channels: 1, base_channels: 8, n_blocks: 2 }, 1).unwrap();
    let cls = ClassifierNet::<f32>::new(ClassifierConfig { in_channels: 1, base_channels: 8, n_stages: 4 }, 2).unwrap();

    let mut group = c.benchmark_group("train step, batch 4 at 64x64");
    group.sample_size(10);
    group.bench_function("generator L1", |bench| {
        let mut g = gen.clone();
        bench.iter(|| black_box(generator_l1_step(&mut g, &x, &y, &adam, 2e-4).unwrap()))
    });
    group.bench_function("classifier through frozen generator", |bench| {
        let mut k = cls.clone();
        bench.iter(|| black_box(classifier_step(&mut k, Some(&gen), &x, &z, &adam, 2e-4).unwrap()))
    });
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let a = ramp(vec![1, 64, 64], 0.9);
    let b = ramp(vec![1, 64, 64], 0.8);
    c.bench_function("ssim 64x64", |bench| bench.iter(|| black_box(ssim(&a, &b).unwrap())));
}

criterion_group!(benches, conv, training_steps, metrics);
criterion_main!(benches);
