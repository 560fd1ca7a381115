use cmdp_core::lp::{build_infinite_lp, solve_lp};
use cmdp_core::model::{random_instance, RandomConfig, RngHandle};
use cmdp_core::par::map_sequential;
use cmdp_core::resolve::{run_adaptive_resolving, BasisSource, ResolveConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn err_of_run(inst: &cmdp_core::model::CmdpInstance, q_star: &[f64], m: usize) -> f64 {
    let mut rng = RngHandle::with_stream(1, m as u64);
    let out = run_adaptive_resolving(inst, &ResolveConfig::new(20, 500, BasisSource::TrueLp), &mut rng).unwrap();
    out.q_bar.iter().zip(q_star).map(|(a, b)| (a - b).abs()).sum()
}

fn replicates(c: &mut Criterion) {
    let inst = random_instance(&RandomConfig::new(5, 5, 0.7, 2, 0)).unwrap();
    let q_star = solve_lp(&build_infinite_lp(&inst)).unwrap().q;
    let mut group = c.benchmark_group("replicates");
    group.sample_size(10);
    for n in [4usize, 16] {
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, &n| {
            b.iter(|| black_box(map_sequential(n, |m| err_of_run(&inst, &q_star, m))))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, &n| {
            b.iter(|| black_box(cmdp_core::par::map_parallel(n, |m| err_of_run(&inst, &q_star, m))))
        });
    }
    group.finish();
}

criterion_group!(benches, replicates);
criterion_main!(benches);
