use std::fs;

use actugen::augment::StructureParam;
use actugen::mice::{MiceParams, Strategy};
use actugen::runner::{
    augmentation_curve, rank_methods, run_experiment, write_results, ExperimentConfig, FailureKind, MethodSpec,
    RankMetric,
};
use actugen::ScenarioKind;

fn generator(strategy: Strategy) -> MethodSpec {
    MethodSpec::Generator {
        strategy,
        name: None,
        cell_fraction: None,
        rounds: None,
        disjoint: None,
    }
}

fn small(methods: Vec<MethodSpec>, rows: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ScenarioKind::Linear, methods);
    cfg.data.surrogate_rows = Some(rows);
    cfg.seed = 11;
    cfg.threads = Some(1);
    cfg
}

fn fast_mice() -> MiceParams {
    MiceParams {
        n_mi: 1,
        ..MiceParams::default()
    }
}

#[test]
fn training_reference_row() {
    let mut cfg = small(
        vec![MethodSpec::TrainingReference {
            name: "training".into(),
        }],
        4000,
    );
    cfg.n_e = 5;
    let store = run_experiment(&cfg).unwrap();
    assert!(store.failures.is_empty(), "{:?}", store.failures);
    let r = store.headline("training").unwrap();
    let d = (store.beta_star.len() - 1) as f64;
    // The intercept term adds one unit over the divisor d.
    assert_eq!(r.m1.unwrap(), (d + 1.0) / d);
    assert_eq!(r.m2.unwrap(), 1.0);
    let ds = r.dataset.unwrap();
    for v in [
        ds.categorical_mae,
        ds.categorical_mape,
        ds.numeric_mae,
        ds.numeric_mape,
        ds.pairwise_mae,
        ds.pairwise_mape,
        ds.correlation_mae,
        ds.correlation_mape,
    ] {
        assert_eq!(v, 0.0);
    }
    let ranks = rank_methods(&store, &RankMetric::TABLE);
    assert!(ranks.rows[0]
        .ranks
        .iter()
        .zip(&ranks.rows[0].values)
        .all(|(r, v)| v.is_none() || *r == Some(1)));
}

#[test]
fn mice_smoke_desk_scale() {
    let mut cfg = small(vec![generator(Strategy::MiceMethod)], 20_000);
    cfg.n_e = 1;
    let store = run_experiment(&cfg).unwrap();
    assert!(store.failures.is_empty(), "{:?}", store.failures);
    let r = store.headline("mice").unwrap();
    assert_eq!(r.n_replicates, 1);
    assert!(r.m1.unwrap().is_finite() && r.m2.unwrap() >= 1.0);
    assert!(r.fit_deviance.unwrap() > 0.0 && r.fit_rmse.unwrap() > 0.0);
    assert!(r.correct_vars.is_some() && r.incorrect_vars.is_some());
    assert!(r.missing_main_effects.is_none());
    let d = r.dataset.unwrap();
    assert!(d.categorical_mae < 0.05 && d.numeric_mae < 0.05);
}

#[test]
fn same_seed_same_bytes() {
    let run = || {
        let mut cfg = small(
            vec![
                MethodSpec::TrainingReference {
                    name: "training".into(),
                },
                generator(Strategy::MiceTabulator),
            ],
            1500,
        );
        cfg.n_e = 2;
        cfg.mice = fast_mice();
        cfg.augmentation = true;
        cfg.stepwise = false;
        let store = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_results(&store, dir.path()).unwrap();
        let mut out = Vec::new();
        for f in files {
            out.push((f.file_name().unwrap().to_owned(), fs::read(&f).unwrap()));
        }
        out
    };
    let a = run();
    let b = run();
    assert_eq!(a.len(), b.len());
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na:?} differs between runs");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let mut cfg = small(vec![generator(Strategy::MiceMethod)], 1200);
    cfg.n_e = 3;
    cfg.mice = fast_mice();
    cfg.stepwise = false;
    let one = run_experiment(&cfg).unwrap();
    cfg.threads = Some(3);
    let three = run_experiment(&cfg).unwrap();
    assert_eq!(one.fits, three.fits);
    assert_eq!(one.reports, three.reports);
}

#[test]
fn persisted_synthetic_rescores_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(vec![generator(Strategy::MiceMethod)], 1500);
    cfg.n_e = 1;
    cfg.mice = fast_mice();
    cfg.save_synthetic = true;
    let first = run_experiment(&cfg).unwrap();
    write_results(&first, dir.path()).unwrap();
    let path = dir.path().join("synthetic").join("mice_0.csv");
    assert!(path.exists());

    let missing = dir.path().join("no_response.csv");
    let text = fs::read_to_string(&path).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| l.split_once(',').unwrap().1)
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&missing, stripped).unwrap();

    let mut again = small(
        vec![
            MethodSpec::External {
                name: "ext".into(),
                paths: vec![path],
            },
            MethodSpec::External {
                name: "broken".into(),
                paths: vec![missing],
            },
        ],
        1500,
    );
    again.mice = fast_mice();
    let second = run_experiment(&again).unwrap();
    let a = first.headline("mice").unwrap();
    let b = second.headline("ext").unwrap();
    assert_eq!(a.m1, b.m1);
    assert_eq!(a.m2, b.m2);
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.fit_deviance, b.fit_deviance);
    assert_eq!(a.correct_vars, b.correct_vars);

    assert_eq!(second.failures.len(), 1);
    assert_eq!(second.failures[0].method, "broken");
    assert_eq!(second.failures[0].reason, FailureKind::MissingResponse);
    assert_eq!(second.headline("broken").unwrap().n_replicates, 0);
}

#[test]
fn augmentation_grid_and_curve() {
    let mut cfg = small(vec![generator(Strategy::MiceMethod)], 2000);
    cfg.n_e = 2;
    cfg.mice = fast_mice();
    cfg.augmentation = true;
    cfg.stepwise = false;
    let store = run_experiment(&cfg).unwrap();
    assert!(store.failures.is_empty(), "{:?}", store.failures);
    let c = augmentation_curve(&store, "mice", RankMetric::M1);
    assert!(c.missing.is_empty());
    assert_eq!(c.points.len(), 6);
    // L = 0 is the training set itself.
    let d = (store.beta_star.len() - 1) as f64;
    assert_eq!(c.points[0].value.unwrap(), (d + 1.0) / d);
    assert!(c.asymptote.is_some());
    let rows_1_5 = store
        .fits
        .iter()
        .find(|f| f.structure == StructureParam { t: 1, l: 5 })
        .unwrap()
        .n_rows;
    assert_eq!(rows_1_5, store.n_train * 2);
}
