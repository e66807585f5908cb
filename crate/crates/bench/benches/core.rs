use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use trajfield_bench::{toy_model, toy_sequence};
use trajfield_core::autodiff::{Graph, Tensor};
use trajfield_core::render::{quadrature_render, Ray, RayBatch};
use trajfield_core::trajectory::integrate;
use trajfield_core::training::Trainer;
use trajfield_core::{ImageOptions, LossWeights, SolverConfig, TrainConfig};

fn matmul(c: &mut Criterion) {
    let a = Tensor::from_fn(&[2048, 64], |i| (i % 13) as f64 * 0.01);
    let b = Tensor::from_fn(&[64, 64], |i| (i % 7) as f64 * 0.02);
    c.bench_function("matmul 2048x64x64", |bench| bench.iter(|| black_box(a.matmul(&b))));
}

fn quadrature(c: &mut Criterion) {
    let seq = toy_sequence(16, 2);
    let rays: Vec<Ray> = (0..256)
        .map(|i| Ray::through_pixel(&seq.cameras[0], i % 16, i / 16, seq.near, seq.far, 0, 0.0))
        .collect();
    let batch = RayBatch::new(rays, 64, None);
    let n = batch.len() * batch.samples;
    c.bench_function("quadrature 256 rays x 64 forward+backward", |bench| {
        bench.iter(|| {
            let g = Graph::new();
            let sigma = g.param(Tensor::from_fn(&[n, 1], |i| (i % 5) as f64));
            let rgb = g.param(Tensor::from_fn(&[n, 3], |i| (i % 3) as f64 / 3.0));
            let out = quadrature_render(&g, sigma, rgb, &batch.depths, &batch.delta);
            let loss = g.sum(out.color);
            black_box(g.backward(loss).unwrap());
        })
    });
}

fn trajectories(c: &mut Criterion) {
    let n = 4096;
    let t0 = vec![0.0; n];
    let t1 = vec![1.0; n];
    let spin = |g: &Graph, x, _t| {
        let m = g.constant(Tensor::matrix(3, 3, vec![0., 1., 0., -1., 0., 0., 0., 0., 0.]));
        g.matmul(x, m)
    };
    for solver in [SolverConfig::euler(2), SolverConfig::rk4(16)] {
        c.bench_function(&format!("integrate 4096 points {} N={}", solver.kind_name(), solver.steps), |bench| {
            bench.iter(|| {
                let g = Graph::new();
                let x = g.constant(Tensor::from_fn(&[n, 3], |i| (i % 11) as f64 * 0.1));
                black_box(g.value(integrate(&g, &spin, x, &t0, &t1, solver)));
            })
        });
    }
}

fn training_step(c: &mut Criterion) {
    let seq = toy_sequence(32, 6);
    let model = toy_model();
    let cfg = TrainConfig { rays_per_batch: 64, samples: 32, mf_points: 32, ..TrainConfig::default() };
    let mut t = Trainer::new(&model, model.init(0), cfg, LossWeights::default()).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("step 64 rays x 32 samples", |bench| bench.iter(|| black_box(t.step(std::slice::from_ref(&seq)).unwrap())));
    group.finish();
}

fn render(c: &mut Criterion) {
    let seq = toy_sequence(16, 4);
    let model = toy_model();
    let store = model.init(0);
    let video = model.encode_frozen(&store, &seq);
    let opts = ImageOptions { samples: 32, ..ImageOptions::default() };
    let mut group = c.benchmark_group("render");
    group.sample_size(10);
    group.bench_function("16x16 view 32 samples", |bench| {
        bench.iter(|| black_box(trajfield_core::render_view(&model, &store, &video, &seq.cameras[1], seq.times[1], &opts, None)))
    });
    group.finish();
}

criterion_group!(benches, matmul, quadrature, trajectories, training_step, render);
criterion_main!(benches);
