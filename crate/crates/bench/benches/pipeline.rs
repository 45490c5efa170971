use criterion::{criterion_group, criterion_main, Criterion};
use hifloc_bench::{bench_circuit, bench_scenario, bench_segmentation, bench_source, bench_trajectory};
use hifloc_core::fit::{
    build_linear_design, build_quadratic_design, solve_linear_fit, solve_quadratic_fit, FitBounds,
    SolveOptions,
};
use hifloc_core::prep::{extract_lower_branch, FitMode, LowerBranchConfig};
use hifloc_core::sim::simulate_hif_trajectory;
use hifloc_core::svm::{train_binary_svm, KernelSpec, SmoParams};
use std::hint::black_box;

fn bench_simulate(c: &mut Criterion) {
    let circuit = bench_circuit();
    let source = bench_source();
    let scenario = bench_scenario();
    c.bench_function("simulate_two_cycles_20khz", |b| {
        b.iter(|| {
            simulate_hif_trajectory(
                black_box(&circuit),
                black_box(&source),
                black_box(&scenario),
                7,
            )
            .unwrap()
        })
    });
}

fn bench_lower_branch(c: &mut Criterion) {
    let traj = bench_trajectory(3);
    let config = LowerBranchConfig::default();
    c.bench_function("extract_lower_branch_667_samples", |b| {
        b.iter(|| extract_lower_branch(black_box(&traj), &config).unwrap())
    });
}

fn bench_fits(c: &mut Criterion) {
    let lin_seg = bench_segmentation(5, FitMode::Linear);
    let lin_design = build_linear_design(&lin_seg).unwrap();
    c.bench_function("solve_linear_fit_64_samples", |b| {
        b.iter(|| {
            solve_linear_fit(
                black_box(&lin_design),
                &FitBounds::none(),
                &SolveOptions::default(),
            )
            .unwrap()
        })
    });

    let quad_seg = bench_segmentation(5, FitMode::Quadratic);
    let quad_design = build_quadratic_design(&quad_seg).unwrap();
    c.bench_function("solve_quadratic_fit_64_samples", |b| {
        b.iter(|| {
            solve_quadratic_fit(
                black_box(&quad_design),
                &FitBounds::none(),
                &SolveOptions::default(),
            )
            .unwrap()
        })
    });
}

fn bench_smo(c: &mut Criterion) {
    // Two overlapping blobs, 70 points: the size of one pairwise training in
    // the far-apart study.
    let mut state = 0x1234_5678_9abc_def0u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut x = Vec::new();
    let mut y = Vec::new();
    for k in 0..70 {
        let label = if k % 2 == 0 { 1.0 } else { -1.0 };
        x.push(vec![label * 1.2 + next(), next()]);
        y.push(label);
    }
    let kernel = KernelSpec::Gaussian { gamma: 1.0 };
    let params = SmoParams::default();
    c.bench_function("smo_train_70_points_gaussian", |b| {
        b.iter(|| train_binary_svm(black_box(&x), black_box(&y), &kernel, &params).unwrap())
    });
}

criterion_group!(benches, bench_simulate, bench_lower_branch, bench_fits, bench_smo);
criterion_main!(benches);
