use criterion::{criterion_group, criterion_main, Criterion};
use krylov_core::billiard::{discretize, make_geometry, solve_levels};
use krylov_core::BilliardKind;

fn eigensolver(c: &mut Criterion) {
    let mut group = c.benchmark_group("eigensolver");
    group.sample_size(10);
    for (kind, a, h) in [
        (BilliardKind::Sinai, 1.0, 0.03),
        (BilliardKind::Stadium, 0.5, 0.02),
    ] {
        let disc = discretize(&make_geometry(kind, a).unwrap(), h).unwrap();
        group.bench_function(format!("{kind}-a{a}-h{h}"), |b| {
            b.iter(|| solve_levels(&disc, 50).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, eigensolver);
criterion_main!(benches);
