//! Parallel (rayon pool) against sequential (one-thread pool, or a build
//! without the `parallel` feature) on the three hot loops.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use feller_core::basesg::LevyExponent;
use feller_core::mcsim::{simulate_sde, Driver};
use feller_core::props::sign;
use feller_core::{
    apply_perturbation, BaseSemigroup, DysonConfig, Engine, Grid, GridFunction, JumpDensity, LevyCharacteristics,
    SdeSpec,
};

type Runner = Box<dyn Fn(&mut (dyn FnMut() + Send))>;

fn modes() -> Vec<(&'static str, Runner)> {
    let mut v: Vec<(&'static str, Runner)> = Vec::new();
    #[cfg(feature = "parallel")]
    {
        v.push(("parallel", Box::new(|f: &mut (dyn FnMut() + Send)| f())));
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        v.push(("sequential", Box::new(move |f: &mut (dyn FnMut() + Send)| one.install(|| f()))));
    }
    #[cfg(not(feature = "parallel"))]
    v.push(("sequential", Box::new(|f: &mut (dyn FnMut() + Send)| f())));
    v
}

fn matrix_assembly(c: &mut Criterion) {
    let g = Grid::new(-8.0, 8.0, 128).unwrap();
    let base = BaseSemigroup::new(LevyExponent::heat(), g).unwrap();
    let cfg = DysonConfig {
        rho: Some(1.1),
        ..Default::default()
    };
    let mut group = c.benchmark_group("one_step_matrix");
    group.sample_size(10);
    for (name, run) in modes() {
        group.bench_function(BenchmarkId::new(name, g.n()), |b| {
            b.iter(|| {
                run(&mut || {
                    let e = Engine::new(&base, LevyCharacteristics::zero().with_drift(sign).into(), cfg).unwrap();
                    black_box(e.one_step_matrix().unwrap());
                })
            })
        });
    }
    group.finish();
}

fn jump_operator(c: &mut Criterion) {
    let g = Grid::standard();
    let b = LevyCharacteristics::zero()
        .with_density(JumpDensity::truncated_stable(1.2, 1.0, 2.0))
        .with_beta(1.3)
        .unwrap();
    let f = GridFunction::gaussian(g, 0.0, 1.0);
    let mut group = c.benchmark_group("apply_perturbation");
    for (name, run) in modes() {
        group.bench_function(BenchmarkId::new(name, g.n()), |bch| {
            bch.iter(|| run(&mut || {
                black_box(apply_perturbation(&b, &f, 1.5).unwrap());
            })
            )
        });
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let g = Grid::standard();
    let f = GridFunction::bump(g, 0.0, 1.0);
    let spec = SdeSpec {
        t_end: 0.1,
        dt: 1e-2,
        n_paths: 20_000,
        ..SdeSpec::new(Arc::new(sign), Driver::Stable(1.5))
    };
    let mut group = c.benchmark_group("simulate_sde");
    group.sample_size(20);
    for (name, run) in modes() {
        group.bench_function(BenchmarkId::new(name, spec.n_paths), |b| {
            b.iter(|| run(&mut || {
                black_box(simulate_sde(&spec, &f).unwrap());
            })
            )
        });
    }
    group.finish();
}

criterion_group!(benches, matrix_assembly, jump_operator, monte_carlo);
criterion_main!(benches);
