use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use decompl_core::pool::{attention_pool, multi_head_pool, set_constant, AttentionPoolParams, MultiHeadPoolParams};
use decompl_core::tensor::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("matmul");
    for (m, k, n) in [(12, 128, 128), (12, 128, 512), (128, 128, 128)] {
        let a = random(&mut rng, &[m, k]);
        let b = random(&mut rng, &[k, n]);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{m}x{k}x{n}")), &(a, b), |bench, (a, b)| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let (a, b) = (tape.constant(a.clone()), tape.constant(b.clone()));
                black_box(tape.matmul(a, b).unwrap());
            })
        });
    }
    group.finish();
}

fn conv1d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[12, 128, 12]);
    let w = random(&mut rng, &[128, 128, 3]);
    let b = random(&mut rng, &[128]);
    c.bench_function("conv1d 12x128x12 k3", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (x, w, b) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
            black_box(tape.conv1d(x, w, Some(b), 1, 1).unwrap());
        })
    });
}

fn pooling(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let single = AttentionPoolParams::init(&mut store, "single", 128, 512, &mut rng);
    let multi = MultiHeadPoolParams::init(&mut store, "multi", 2, 128, 512, &mut rng).unwrap();
    let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    c.bench_function("attention_pool forward+backward N=6", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let x = set_constant(&mut tape, &rows).unwrap();
            let out = attention_pool(&mut tape, &store, x, &single).unwrap();
            let loss = tape.sum(out);
            let mut grads = store.clone();
            tape.backward(loss, &mut grads).unwrap();
            black_box(grads);
        })
    });
    c.bench_function("multi_head_pool forward N=6 H=2", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let x = set_constant(&mut tape, &rows).unwrap();
            black_box(multi_head_pool(&mut tape, &store, x, &multi).unwrap());
        })
    });
}

criterion_group!(benches, matmul, conv1d, pooling);
criterion_main!(benches);
