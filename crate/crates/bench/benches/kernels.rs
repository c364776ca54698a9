use std::hint::black_box;

use actugen::forest::{fit_forest, Feature, FeatureMatrix, ForestParams, Target};
use actugen::glm::{build_design, fit_poisson, DesignSpec, IrlsOptions};
use actugen::mice::{ampute_random_cells, initial_impute, mice_cycle, MiceParams};
use actugen::portfolio::{BONUS_MALUS, DENSITY, DRIVER_AGE, VEHICLE_AGE};
use actugen::{builtin_scenario, ScenarioKind};
use actugen_bench::simulated_portfolio;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn irls(c: &mut Criterion) {
    let mut group = c.benchmark_group("irls_true_structure");
    group.sample_size(10);
    let spec = DesignSpec::true_structure(&builtin_scenario(ScenarioKind::Linear)).unwrap();
    for n in [10_000usize, 100_000] {
        let ds = simulated_portfolio(n, 1);
        let design = build_design(&ds, &spec).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &design, |b, d| {
            b.iter(|| fit_poisson(black_box(d), &IrlsOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn forest(c: &mut Criterion) {
    let mut group = c.benchmark_group("forest_fit");
    group.sample_size(10);
    for n in [5_000usize, 20_000] {
        let ds = simulated_portfolio(n, 2);
        let cols = [VEHICLE_AGE, DRIVER_AGE, DENSITY];
        let features = cols
            .iter()
            .map(|c| Feature::numeric(ds.numeric(c).unwrap().to_vec(), 256))
            .collect();
        let x = FeatureMatrix::new(features).unwrap();
        let y = ds.numeric(BONUS_MALUS).unwrap().to_vec();
        let rows: Vec<usize> = (0..n).collect();
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| {
                fit_forest(&x, &[0, 1, 2], &Target::Numeric(&y), &rows, &ForestParams::default(), 7).unwrap()
            })
        });
    }
    group.finish();
}

fn mice(c: &mut Criterion) {
    let mut group = c.benchmark_group("mice_cycle");
    group.sample_size(10);
    let ds = simulated_portfolio(5_000, 3);
    let mask = ampute_random_cells(&ds, 0.2, 4).unwrap();
    let filled = initial_impute(&ds, &mask, 5).unwrap();
    let params = MiceParams::default();
    group.bench_function("5000_rows_20pct", |b| {
        b.iter(|| mice_cycle(black_box(&filled), &mask, &params, 6).unwrap())
    });
    group.finish();
}

criterion_group!(benches, irls, forest, mice);
criterion_main!(benches);
