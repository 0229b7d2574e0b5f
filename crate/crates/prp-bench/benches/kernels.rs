//! Hot-path benchmarks: matrix multiply, layer forward/backward, and one
//! Adam step at MNIST MLP scale.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use prp_core::layers::{ModulationInit, PrpLayer};
use prp_core::linalg::{matmul, Matrix};
use prp_core::models::{build_architecture, ModelKind, Sequential};
use prp_core::projections::{init_gaussian, InitScheme};
use prp_core::rng::SeededRng;
use prp_core::training::{AdamState, Loss};
use std::sync::Arc;

fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, rng.standard_normal_vec(rows * cols).as_slice().to_vec()).unwrap()
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = SeededRng::new(1);
    let mut group = c.benchmark_group("matmul");
    for n in [64usize, 256, 512] {
        let a = random_matrix(&mut rng, n, n);
        let b = random_matrix(&mut rng, n, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| matmul(&a, &b).unwrap())
        });
    }
    group.finish();
}

fn bench_prp_layer(c: &mut Criterion) {
    let mut rng = SeededRng::new(2);
    let proj = Arc::new(init_gaussian(784, 512, 3).unwrap());
    let mut layer = PrpLayer::new(proj, ModulationInit::Ones);
    let x = random_matrix(&mut rng, 256, 784);
    c.bench_function("prp_forward_784x512_b256", |b| {
        b.iter(|| layer.forward_batch(&x).unwrap())
    });

    let y = layer.forward_batch(&x).unwrap();
    let dy = Matrix::from_vec(y.rows(), y.cols(), vec![1e-3; y.rows() * y.cols()]).unwrap();
    c.bench_function("prp_backward_784x512_b256", |b| {
        b.iter(|| {
            layer.forward_batch(&x).unwrap();
            layer.backward_batch(&dy).unwrap()
        })
    });
}

fn mnist_model() -> Sequential {
    build_architecture("mnist_mlp", ModelKind::Prp, 0, InitScheme::Gaussian).unwrap()
}

fn bench_train_step(c: &mut Criterion) {
    let mut rng = SeededRng::new(4);
    let mut model = mnist_model();
    let mut adam = AdamState::for_model(&model);
    let names = model.param_names();
    let x = random_matrix(&mut rng, 256, 784);
    let classes: Vec<usize> = (0..256).map(|_| rng.next_below(10)).collect();
    let targets = prp_core::data::Targets::Classes(classes);
    c.bench_function("mnist_prp_train_step_b256", |b| {
        b.iter(|| {
            let pred = model.forward_batch(&x).unwrap();
            let (_, dpred) = Loss::CrossEntropy.forward_backward(&pred, &targets).unwrap();
            let grads = model.backward_batch(&dpred).unwrap();
            let grad_slices: Vec<&[f64]> = grads.iter().flat_map(|g| g.slices()).collect();
            let mut params = model.param_slices_mut();
            adam.step(&mut params, &grad_slices, &names, 1e-4).unwrap();
        })
    });
}

criterion_group!(benches, bench_matmul, bench_prp_layer, bench_train_step);
criterion_main!(benches);
