use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use gfe_core::estimator::{gfe_fit, parameter_step, GfeOptions, GroupAssignment};
use gfe_core::inference::{match_labels, MatchMode};
use gfe_core::panel::within_transform;
use gfe_core::simulation::{
    equal_norm_profiles, simulate_panel, DgpSpec, GroupAllocation, Missingness,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_spec(n_units: usize, groups: usize) -> DgpSpec {
    let profiles = equal_norm_profiles(groups, 12, 0.5);
    DgpSpec {
        theta: vec![0.5, -0.5],
        profiles,
        allocation: GroupAllocation::Shares(vec![1.0 / groups as f64; groups]),
        sigma_x: vec![1.0, 1.0],
        sigma_v: 0.25,
        rho: vec![vec![0.3; groups], vec![-0.2; groups]],
        n_units,
        missingness: Missingness::Balanced,
    }
}

fn bench_within_transform(c: &mut Criterion) {
    let (panel, _) = simulate_panel(&bench_spec(9516, 4), 1).unwrap();
    c.bench_function("within_transform/N9516xT12", |b| {
        b.iter(|| black_box(within_transform(black_box(&panel))))
    });
}

fn bench_parameter_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("parameter_step");
    for &n in &[500usize, 2000] {
        let spec = bench_spec(n, 4);
        let (panel, truth) = simulate_panel(&spec, 2).unwrap();
        let dp = within_transform(&panel);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(parameter_step(black_box(&dp), &truth.gamma).unwrap()))
        });
    }
    group.finish();
}

fn bench_full_fit(c: &mut Criterion) {
    let spec = bench_spec(500, 3);
    let (panel, _) = simulate_panel(&spec, 3).unwrap();
    c.bench_function("gfe_fit/N500xT12xG3/5starts", |b| {
        b.iter(|| black_box(gfe_fit(black_box(&panel), &GfeOptions::new(3, 5, 7)).unwrap()))
    });
}

fn bench_label_matching(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = 8;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..g)
            .map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    };
    let reference = draw(&mut rng);
    let candidate = draw(&mut rng);
    let mut group = c.benchmark_group("match_labels/G8");
    group.bench_function("exhaustive", |b| {
        b.iter(|| black_box(match_labels(&reference, &candidate, MatchMode::Exhaustive).unwrap()))
    });
    group.bench_function("assignment", |b| {
        b.iter(|| black_box(match_labels(&reference, &candidate, MatchMode::Assignment).unwrap()))
    });
    group.finish();
}

fn bench_assignment_relabel(c: &mut Criterion) {
    // Relabeled assignments feed the bootstrap matching hot path.
    let labels: Vec<usize> = (0..10_000).map(|i| i % 6).collect();
    let gamma = GroupAssignment::new(labels, 6).unwrap();
    let mapping = [5usize, 3, 0, 1, 4, 2];
    c.bench_function("assignment_relabel/N10000", |b| {
        b.iter(|| black_box(gamma.relabeled(black_box(&mapping))))
    });
}

criterion_group!(
    benches,
    bench_within_transform,
    bench_parameter_step,
    bench_full_fit,
    bench_label_matching,
    bench_assignment_relabel
);
criterion_main!(benches);
