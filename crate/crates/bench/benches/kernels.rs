use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use wings_core::svr::SvrConfig;
use wings_core::*;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = Rng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| r.uniform(-1.0, 1.0))
}

fn eigen(c: &mut Criterion) {
    let mut g = c.benchmark_group("sym_eig");
    for n in [16, 64, 128] {
        let a = random(n, n, 1);
        let s = matmul(&a.transpose(), &a).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| {
            b.iter(|| sym_eig(black_box(s)).unwrap())
        });
    }
    g.finish();
}

fn svr(c: &mut Criterion) {
    let mut g = c.benchmark_group("train_svr");
    for n in [64, 256] {
        let x = random(n, 8, 2);
        let y: Vec<f32> = (0..n)
            .map(|i| (2.0 * x.get(i, 0)).sin() + x.get(i, 1))
            .collect();
        let cfg = SvrConfig {
            c: 10.0,
            epsilon: 0.01,
            kernel: Kernel::Rbf { gamma: 0.125 },
            max_passes: 1000,
            tol: 1e-3,
        };
        g.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| train_svr(black_box(&x), black_box(&y), &cfg, 0).unwrap())
        });
    }
    g.finish();
}

fn forward_pass(c: &mut Criterion) {
    let mlp = Model::mlp(&[784, 256, 128, 10], 3).unwrap();
    let cnn = Model::from_arch("conv16-pool-conv32-pool-pool-dense10", (1, 28, 28), 3).unwrap();
    let x = random(64, 784, 4);
    c.bench_function("predict/mlp_batch64", |b| {
        b.iter(|| predict(&mlp, black_box(&x)).unwrap())
    });
    c.bench_function("predict/cnn_batch64", |b| {
        b.iter(|| predict(&cnn, black_box(&x)).unwrap())
    });
}

fn compression(c: &mut Criterion) {
    let data = gen_synth(600, 64, 4, 6.0, 5);
    let cfg = TrainConfig {
        epochs: 5,
        lr: 0.1,
        batch_size: 32,
        seed: 5,
        weight_decay: 0.01,
    };
    let (m, _) = train_sgd(&Model::mlp(&[64, 48, 24, 4], 5).unwrap(), &data, &cfg).unwrap();
    let (art, _) = compress_fcn(&m, &FcnOptions::default()).unwrap();
    let bytes = art.to_bytes();
    let mut g = c.benchmark_group("artifact");
    g.sample_size(20);
    g.bench_function("compress_fcn", |b| {
        b.iter(|| compress_fcn(black_box(&m), &FcnOptions::default()).unwrap())
    });
    g.bench_function("decode_and_materialize", |b| {
        b.iter(|| materialize(&decode_artifact(black_box(&bytes), false).unwrap()).unwrap())
    });
    g.bench_function("infer_batch64", |b| {
        let x = data.samples().select_rows(&(0..64).collect::<Vec<_>>());
        b.iter(|| infer(&art, black_box(&x)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, eigen, svr, forward_pass, compression);
criterion_main!(benches);
