use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use polyrbf::protocols::hcp_like_scheme;
use polyrbf::{
    design_matrix, fit_volume, generate_phantom, normalize_b0, resample_volume, BasisConfig, PhantomSpec, Projector,
};

fn bench_design(c: &mut Criterion) {
    let scheme = normalize_scheme();
    let mut group = c.benchmark_group("design");
    for n in [6usize, 10, 16] {
        let cfg = BasisConfig::new(n, 4, scheme.max_b()).unwrap();
        group.bench_with_input(BenchmarkId::new("matrix", n), &cfg, |b, cfg| {
            b.iter(|| design_matrix(black_box(&scheme), cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("projector", n), &cfg, |b, cfg| {
            b.iter(|| Projector::for_scheme(black_box(&scheme), cfg).unwrap())
        });
    }
    group.finish();
}

fn normalize_scheme() -> polyrbf::GradientScheme {
    let scheme = hcp_like_scheme().unwrap();
    scheme.subset(&scheme.dw_indices()).unwrap()
}

fn bench_volume(c: &mut Criterion) {
    let scheme = hcp_like_scheme().unwrap();
    let phantom = generate_phantom(&PhantomSpec::layered([16, 16, 16], 20.0, 0), &scheme).unwrap();
    let norm = normalize_b0(&phantom.raw, &scheme).unwrap();
    let cfg = BasisConfig::new(10, 4, norm.scheme.max_b()).unwrap();
    let projector = Projector::for_scheme(&norm.scheme, &cfg).unwrap();
    let fits = fit_volume(&projector, &cfg, &norm.scheme, &norm.volume).unwrap();

    let mut group = c.benchmark_group("volume");
    group.sample_size(20);
    group.throughput(Throughput::Elements(fits.voxels.len() as u64));
    group.bench_function("fit_16x16x16", |b| {
        b.iter(|| fit_volume(&projector, &cfg, &norm.scheme, black_box(&norm.volume)).unwrap())
    });
    group.bench_function("resample_16x16x16", |b| {
        b.iter(|| resample_volume(black_box(&fits), &scheme, false).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_design, bench_volume);
criterion_main!(benches);
