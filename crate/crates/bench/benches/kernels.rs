use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use sweep_bench::fixture;
use sweep_core::adjoint::integrate_adjoint;
use sweep_core::expr::{parse, ExprJet};
use sweep_core::sweep::{catching_up, estimate_mu, integrate_penalized, Penalty, StepControl};

fn expressions(c: &mut Criterion) {
    let vars = ["t", "x1", "x2", "x3"];
    let e = parse("x1^2 + x2^2 + (x3 + 0.5)^2 - 1 + sin(t) * exp(-x1)", &vars).unwrap();
    let jet = ExprJet::new(&e, &vars[1..], true);
    let at = [0.3, -0.6, 0.2, 0.1];
    let mut g = [0.0; 3];
    let mut h = [0.0; 9];
    c.bench_function("expr/value", |b| b.iter(|| jet.value(black_box(&at)).unwrap()));
    c.bench_function("expr/gradient", |b| b.iter(|| jet.gradient(black_box(&at), &mut g).unwrap()));
    c.bench_function("expr/hessian", |b| b.iter(|| jet.hessian(black_box(&at), &mut h).unwrap()));
}

fn projection(c: &mut Criterion) {
    let p = fixture("two_sphere.json");
    let y = [0.4, 0.9, 0.05];
    c.bench_function("project/two_sphere_corner", |b| b.iter(|| p.set().project(0.0, black_box(&y)).unwrap()));
}

fn integration(c: &mut Criterion) {
    let wall = fixture("wall_1d.json");
    let spheres = fixture("two_sphere.json");
    let step = StepControl::default();
    let mut group = c.benchmark_group("penalized");
    group.sample_size(10);
    for gamma in [50.0, 400.0] {
        let pen = Penalty::new(gamma, 1.0 / gamma).with_mu(2.0);
        group.bench_with_input(BenchmarkId::new("wall", gamma), &pen, |b, pen| {
            b.iter(|| integrate_penalized(&wall, &wall.default_control(), pen, &step).unwrap())
        });
    }
    let mu = estimate_mu(&spheres, 2000, 7).unwrap().mu;
    let pen = Penalty::new(400.0, 1.0 / 400.0).with_mu(mu);
    group.bench_function("two_sphere/400", |b| {
        b.iter(|| integrate_penalized(&spheres, &spheres.default_control(), &pen, &step).unwrap())
    });
    group.finish();

    c.bench_function("catching_up/two_sphere", |b| {
        b.iter(|| catching_up(&spheres, &spheres.default_control(), 1e-3).unwrap())
    });

    let traj = integrate_penalized(&spheres, &spheres.default_control(), &pen, &step).unwrap();
    let mut group = c.benchmark_group("adjoint");
    group.sample_size(10);
    group.bench_function("two_sphere/400", |b| {
        b.iter(|| integrate_adjoint(&spheres, &traj, 0.5, &[0.5, 0.0, 0.0], &step).unwrap())
    });
    group.finish();
}

criterion_group!(benches, expressions, projection, integration);
criterion_main!(benches);
