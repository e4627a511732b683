//! Criterion comparison of additive (CASA) and softmax attention cost as the
//! sequence length grows at fixed embedding dimension.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mecasa_core::attention::{casa_forward, softmax_attention, CasaParams};
use mecasa_core::tensor::Tensor;

const D: usize = 64;
const NS: [usize; 4] = [256, 512, 1024, 2048];

fn bench_attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = CasaParams::init(D, &mut rng);
    let mut group = c.benchmark_group("attention");
    group.sample_size(10);
    for n in NS {
        let x = Tensor::new(
            vec![1, D, 1, n],
            (0..D * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let flat: Vec<f64> = (0..n * D).map(|_| rng.gen_range(-1.0..1.0)).collect();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("casa", n), &n, |b, _| {
            b.iter(|| casa_forward(&x, &params).unwrap().to_vec()[0])
        });
        group.bench_with_input(BenchmarkId::new("softmax", n), &n, |b, _| {
            b.iter(|| softmax_attention(&flat, &flat, &flat, n, D)[0])
        });
    }
    group.finish();
}

criterion_group!(benches, bench_attention);
criterion_main!(benches);
