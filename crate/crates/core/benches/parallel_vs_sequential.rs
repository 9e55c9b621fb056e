//! Row-parallel kernels against their sequential fallback.
//!
//! Run with `cargo bench -p aclab-core`; build with
//! `--no-default-features` to see the fallback alone.

use std::f64::consts::FRAC_PI_4;
use std::hint::black_box;
use std::time::Duration;

use aclab_core::identities::square_grid;
use aclab_core::{
    build_boundary, relax, residual_with, solve_profile, BoundarySpec, Exec, Field2D, Potential, SolveConfig,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn saddle_init(l: f64, h: f64) -> (Potential, Field2D) {
    let p = Potential::quartic();
    let prof = solve_profile(&p, 16.0, 0.01, 1e-11).unwrap();
    let init = build_boundary(
        &BoundarySpec::saddle(FRAC_PI_4),
        square_grid(l, h),
        &prof,
        p.interface_width(),
        p.id(),
    )
    .unwrap();
    (p, init)
}

fn residual(c: &mut Criterion) {
    let mut group = c.benchmark_group("residual");
    for h in [0.05, 0.025] {
        let (p, f) = saddle_init(10.0, h);
        let n = f.grid.nx;
        for (name, exec) in EXECS {
            group.bench_with_input(BenchmarkId::new(name, format!("{n}x{n}")), &f, |b, f| {
                b.iter(|| residual_with(black_box(f), &p, exec))
            });
        }
    }
    group.finish();
}

fn relax_saddle(c: &mut Criterion) {
    let mut group = c.benchmark_group("relax");
    group.sample_size(10).measurement_time(Duration::from_secs(20));
    let (p, init) = saddle_init(8.0, 0.1);
    for (name, exec) in EXECS {
        let cfg = SolveConfig {
            exec,
            ..SolveConfig::default()
        };
        group.bench_function(BenchmarkId::new(name, "161x161"), |b| {
            b.iter(|| relax(black_box(&init), &p, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, residual, relax_saddle);
criterion_main!(benches);
