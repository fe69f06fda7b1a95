use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use facestab_core::entropic::{solve_entropic, EntropicConfig, SolverKind};
use facestab_core::instances::{generate_instance, InstanceKind, InstanceParams};
use facestab_core::projection::{brute_force_projection, project_onto_hull};

fn bench_projection(c: &mut Criterion) {
    let params = InstanceParams {
        m_count: 64,
        dim: 16,
        face_size: 4,
        ..Default::default()
    };
    let inst = generate_instance(InstanceKind::PlantedFace, &params, 1, 0).unwrap();
    c.bench_function("project_onto_hull_m64_d16", |b| {
        b.iter(|| {
            black_box(project_onto_hull(black_box(&inst.dict), black_box(&inst.query), 1e-10).unwrap())
        });
    });

    let small = InstanceParams {
        m_count: 12,
        dim: 6,
        ..Default::default()
    };
    let gauss = generate_instance(InstanceKind::Gaussian, &small, 2, 0).unwrap();
    c.bench_function("brute_force_oracle_m12_d6", |b| {
        b.iter(|| black_box(brute_force_projection(&gauss.dict, &gauss.query).unwrap()));
    });
}

fn bench_entropic(c: &mut Criterion) {
    let params = InstanceParams {
        m_count: 32,
        dim: 8,
        face_size: 3,
        ..Default::default()
    };
    let inst = generate_instance(InstanceKind::PlantedFace, &params, 3, 0).unwrap();
    let gap = inst.planted_gap.unwrap();

    let mut group = c.benchmark_group("solve_entropic_m32_d8");
    for (name, solver) in [
        ("eg", SolverKind::ExponentiatedGradient),
        ("fw", SolverKind::FrankWolfe),
    ] {
        group.bench_function(name, |b| {
            let cfg = EntropicConfig::new(gap / 8.0)
                .with_solver(solver)
                .with_gap_tol(1e-10);
            b.iter(|| black_box(solve_entropic(&inst.dict, &inst.query, &cfg).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(benches, bench_projection, bench_entropic);
criterion_main!(benches);
