use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use robusthedge_bench::{abs_claim, trinomial};
use robusthedge_core::counterexample::{choose_sigma, f_band};
use robusthedge_core::{backward_value, global_sup_lp, primal_lp, FamilySpec, Rational};

fn dual_dp(c: &mut Criterion) {
    let mut g = c.benchmark_group("backward_value");
    for depth in [3, 5, 7] {
        let tree = trinomial(depth);
        let claim = abs_claim(&tree);
        for (name, fam) in [
            ("martingale", FamilySpec::martingale()),
            ("var_bounded", FamilySpec::var_bounded(0.2, 0.6)),
        ] {
            g.bench_with_input(BenchmarkId::new(name, depth), &depth, |b, _| {
                b.iter(|| backward_value::<f64>(black_box(&tree), &claim, &fam).unwrap())
            });
        }
    }
    g.finish();
}

fn oracles(c: &mut Criterion) {
    let mut g = c.benchmark_group("path_lp");
    g.sample_size(20);
    for depth in [2, 3, 4] {
        let tree = trinomial(depth);
        let claim = abs_claim(&tree);
        let fam = FamilySpec::martingale();
        g.bench_with_input(BenchmarkId::new("global_sup", depth), &depth, |b, _| {
            b.iter(|| global_sup_lp::<f64>(black_box(&tree), &claim, &fam).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("primal", depth), &depth, |b, _| {
            b.iter(|| primal_lp::<f64>(black_box(&tree), &claim, &fam).unwrap())
        });
    }
    let tree = trinomial(3);
    let claim = abs_claim(&tree);
    g.bench_function("global_sup_exact/3", |b| {
        b.iter(|| global_sup_lp::<Rational>(black_box(&tree), &claim, &FamilySpec::martingale()).unwrap())
    });
    g.finish();
}

fn counterexample(c: &mut Criterion) {
    c.bench_function("f_band/10", |b| b.iter(|| f_band(black_box(10), 1e20, 1.0).unwrap()));
    c.bench_function("choose_sigma/10", |b| b.iter(|| choose_sigma(black_box(10), 1.0, 1.0).unwrap()));
}

criterion_group!(benches, dual_dp, oracles, counterexample);
criterion_main!(benches);
