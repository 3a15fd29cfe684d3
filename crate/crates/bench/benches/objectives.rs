use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use robust_choice::experiments::SyntheticProblem;
use robust_choice::robust_feature::{rf_objective, rf_subgradient};
use robust_choice::robust_label::{rl_objective, rl_subgradient};
use robust_choice::{log_likelihood, log_likelihood_gradient, FeatureUncertainty, LabelBudget, NormOrder};

fn objectives(c: &mut Criterion) {
    let p = SyntheticProblem::three_mode(1000, 1);
    let data = p.simulate().unwrap();
    let beta = p.beta.scaled(0.5);
    let rf = FeatureUncertainty::single(NormOrder::TWO, 0.1).unwrap();
    let rl = LabelBudget::new(8.0).unwrap();

    let mut g = c.benchmark_group("three_mode_n1000");
    g.bench_function("log_likelihood", |b| b.iter(|| log_likelihood(&p.spec, black_box(&beta), &data)));
    g.bench_function("log_likelihood_gradient", |b| {
        b.iter(|| log_likelihood_gradient(&p.spec, black_box(&beta), &data))
    });
    g.bench_function("rf_objective", |b| b.iter(|| rf_objective(&p.spec, black_box(&beta), &data, &rf)));
    g.bench_function("rf_subgradient", |b| b.iter(|| rf_subgradient(&p.spec, black_box(&beta), &data, &rf)));
    g.bench_function("rl_objective", |b| b.iter(|| rl_objective(&p.spec, black_box(&beta), &data, &rl)));
    g.bench_function("rl_subgradient", |b| b.iter(|| rl_subgradient(&p.spec, black_box(&beta), &data, &rl)));
    g.finish();
}

criterion_group!(benches, objectives);
criterion_main!(benches);
