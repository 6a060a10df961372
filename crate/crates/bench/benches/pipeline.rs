use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pamm_bench::{fitted, ped, sim_spec, survival_data};
use pamm_core::predict::{add_cumu_hazard, add_hazard, add_surv_prob, ped_info, Scale};
use pamm_core::simulate::sim_pexp;
use std::hint::black_box;

fn simulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("sim_pexp");
    for n in [500, 5000] {
        let spec = sim_spec(n, 3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &spec, |b, s| b.iter(|| sim_pexp(black_box(s)).unwrap()));
    }
    g.finish();
}

fn transform(c: &mut Criterion) {
    let mut g = c.benchmark_group("as_ped");
    for n in [500, 5000] {
        let data = survival_data(n, 3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, d| b.iter(|| ped(black_box(d))));
    }
    g.finish();
}

fn fit(c: &mut Criterion) {
    let p = ped(&survival_data(500, 3));
    let mut g = c.benchmark_group("fit_gcv");
    g.sample_size(10);
    g.bench_function("n500", |b| b.iter(|| fitted(black_box(&p))));
    g.finish();
}

fn predict(c: &mut Criterion) {
    let p = ped(&survival_data(500, 3));
    let m = fitted(&p);
    c.bench_function("predict_surv", |b| {
        b.iter(|| {
            let mut nd = ped_info(&p, &[]).unwrap();
            add_hazard(&mut nd, &m, Scale::Response).unwrap();
            add_cumu_hazard(&mut nd, &m, 100, 1).unwrap();
            add_surv_prob(&mut nd, &m, 100, 1).unwrap();
            nd
        })
    });
}

criterion_group!(benches, simulate, transform, fit, predict);
criterion_main!(benches);
