use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use memlab_bench::random_stream;
use memlab_core::chunk::{chunked_omega, ChunkPlan};
use memlab_core::linalg::{newton_schulz, Mat};
use memlab_core::rng::{gaussian_mat, gaussian_vec, seeded};
use memlab_core::rules::run_sequence;
use memlab_core::{FeatureMapSpec, Gates, MemoryState, RuleConfig, RuleKind};
use std::hint::black_box;

fn bench_newton_schulz(c: &mut Criterion) {
    let mut group = c.benchmark_group("newton_schulz");
    for d in [8, 32, 64] {
        let s = gaussian_mat(&mut seeded(d as u64), d, d, 1.0);
        group.bench_with_input(BenchmarkId::new("k5", d), &s, |b, s| b.iter(|| newton_schulz(black_box(s), 5)));
    }
    group.finish();
}

fn bench_omega(c: &mut Criterion) {
    let (d, window, len) = (16, 4, 256);
    let gates = Gates::constant(0.99, 0.1, 0.0, window, 1.0);
    let stream = random_stream(0, len, d, d, &gates);
    let cfg = RuleConfig::new(RuleKind::Omega, FeatureMapSpec::identity()).with_window(window);
    let zero = MemoryState::from_matrix(Mat::zeros(d, d));

    let mut group = c.benchmark_group("omega_256_tokens");
    group.bench_function("sequential", |b| {
        b.iter(|| run_sequence(&cfg, zero.clone(), black_box(&stream)).unwrap())
    });
    for chunk in [1, 8, 32] {
        let plan = ChunkPlan::new(chunk, window).unwrap();
        group.bench_with_input(BenchmarkId::new("chunked", chunk), &plan, |b, plan| {
            b.iter(|| chunked_omega(&cfg, zero.clone(), black_box(&stream), *plan).unwrap())
        });
    }
    group.finish();
}

fn bench_kernel_dot(c: &mut Criterion) {
    let mut rng = seeded(7);
    let x = gaussian_vec(&mut rng, 16, 1.0);
    let y = gaussian_vec(&mut rng, 16, 1.0);
    let mut group = c.benchmark_group("kernel_dot_d16");
    for p in [2, 4] {
        let spec = FeatureMapSpec::polynomial(p);
        group.bench_with_input(BenchmarkId::new("closed_form", p), &spec, |b, spec| {
            b.iter(|| spec.kernel_dot(black_box(&x), black_box(&y)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("explicit_lift", p), &spec, |b, spec| {
            b.iter(|| {
                let fx = spec.apply(black_box(&x)).unwrap();
                let fy = spec.apply(black_box(&y)).unwrap();
                fx.dot(&fy)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_newton_schulz, bench_omega, bench_kernel_dot);
criterion_main!(benches);
