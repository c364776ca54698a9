use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use actugen::augment::{assemble, partition_synthetic, StructureParam};
use actugen::claims_sim::{builtin_scenario_with, simulate_dataset, FormulaReading};
use actugen::glm::{build_design, fit_spec, poisson_deviance, predict, rmse, stepwise_aic, DesignSpec, FittedGlm};
use actugen::mice::{generate as run_generator, AmputationPlan, MiceParams, Strategy};
use actugen::portfolio::fremtpl2freq_schema;
use actugen::rng::{derive_named, derive_seed};
use actugen::runner::{
    load_portfolio, run_experiment, run_prepared, selection_scope, write_results, DataConfig, ExperimentConfig,
    MethodSpec, Prepared, ResultsStore, RunnerError, SeedSchedule,
};
use actugen::tabular::{load_csv, split_train_test, write_csv, ColumnSpec, CsvOptions, Dataset, Schema};
use actugen::{IrlsOptions, MetricOptions, ScenarioKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Common;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{failed} cell(s) failed; see failures.csv in {}", out.display())]
    Partial { failed: usize, out: PathBuf },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Partial { .. } => 3,
        }
    }
}

impl From<RunnerError> for CliError {
    fn from(e: RunnerError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn out_dir(c: &Common, fallback: Option<&PathBuf>) -> Result<PathBuf, CliError> {
    let dir = c
        .out
        .clone()
        .or_else(|| fallback.cloned())
        .ok_or_else(|| CliError::Config("no output directory: pass --out".into()))?;
    fs::create_dir_all(&dir).map_err(data_err)?;
    Ok(dir)
}

fn schema_of(cols: &Option<Vec<ColumnSpec>>) -> Result<Arc<Schema>, CliError> {
    match cols {
        None => Ok(Arc::new(fremtpl2freq_schema())),
        Some(c) => Schema::new(c.clone()).map(Arc::new).map_err(|e| CliError::Config(e.to_string())),
    }
}

fn load(path: &Path, schema: &Arc<Schema>) -> Result<Dataset, CliError> {
    load_csv(path, schema.clone(), CsvOptions::default()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn save(ds: &Dataset, path: &Path) -> Result<(), CliError> {
    write_csv(ds, path, CsvOptions::default()).map_err(data_err)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(data_err)?;
    fs::write(path, text + "\n").map_err(data_err)
}

fn finish(store: &ResultsStore, out: &Path) -> Result<(), CliError> {
    write_results(store, out)?;
    if store.has_failures() {
        return Err(CliError::Partial {
            failed: store.failures.len(),
            out: out.to_path_buf(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn default_train_fraction() -> Option<f64> {
    Some(0.9)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    #[serde(default)]
    data: DataConfig,
    #[serde(default)]
    schema: Option<Vec<ColumnSpec>>,
    scenario: ScenarioKind,
    #[serde(default)]
    formula_reading: FormulaReading,
    /// `null` skips the split.
    #[serde(default = "default_train_fraction")]
    train_fraction: Option<f64>,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize)]
struct SimulateSummary {
    scenario: ScenarioKind,
    rows: usize,
    mean_frequency: f64,
    seeds: SeedSchedule,
    files: Vec<PathBuf>,
}

pub fn simulate(c: &Common) -> Result<(), CliError> {
    let sc: SimulateConfig = read_config(&c.config)?;
    let out = out_dir(c, None)?;
    let mut cfg = ExperimentConfig::new(sc.scenario, vec![MethodSpec::TrainingReference { name: "training".into() }]);
    cfg.data = sc.data;
    cfg.schema = sc.schema;
    cfg.formula_reading = sc.formula_reading;
    cfg.seed = c.seed.unwrap_or(sc.seed);
    if let Some(f) = sc.train_fraction {
        cfg.train_fraction = f;
    }
    cfg.validate()?;
    let seeds = SeedSchedule::new(&cfg);
    let full = load_portfolio(&cfg, &seeds)?;
    let scenario = builtin_scenario_with(cfg.scenario, cfg.formula_reading);
    let (sim, resp) = simulate_dataset(&full, &scenario, seeds.simulate).map_err(data_err)?;
    let mut files = vec![out.join("simulated.csv")];
    save(&sim, &files[0])?;
    if sc.train_fraction.is_some() {
        let (train, test) = split_train_test(&sim, cfg.train_fraction, seeds.split).map_err(data_err)?;
        files.push(out.join("train.csv"));
        save(&train, &files[1])?;
        files.push(out.join("test.csv"));
        save(&test, &files[2])?;
    }
    log::info!("mean frequency {:.5}", resp.mean_frequency);
    write_json(
        &SimulateSummary {
            scenario: cfg.scenario,
            rows: sim.n_rows(),
            mean_frequency: resp.mean_frequency,
            seeds,
            files,
        },
        &out.join("simulate.json"),
    )
}

// ---------------------------------------------------------------------------

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateConfig {
    train: PathBuf,
    #[serde(default)]
    schema: Option<Vec<ColumnSpec>>,
    strategy: Strategy,
    #[serde(default)]
    cell_fraction: Option<f64>,
    #[serde(default)]
    rounds: Option<usize>,
    #[serde(default)]
    disjoint: Option<bool>,
    #[serde(default)]
    mice: MiceParams,
    #[serde(default = "one")]
    replicates: usize,
    #[serde(default)]
    seed: u64,
}

pub fn generate(c: &Common) -> Result<(), CliError> {
    let gc: GenerateConfig = read_config(&c.config)?;
    let mut plan = AmputationPlan::default_for(gc.strategy);
    if let Some(f) = gc.cell_fraction {
        plan.cell_fraction = f;
    }
    if let Some(r) = gc.rounds {
        plan.rounds = r;
    }
    if let Some(d) = gc.disjoint {
        plan.disjoint = d;
    }
    plan.validate().map_err(|e| CliError::Config(e.to_string()))?;
    gc.mice.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if gc.replicates == 0 {
        return Err(CliError::Config("replicates must be at least 1".into()));
    }
    let out = out_dir(c, None)?;
    let train = load(&gc.train, &schema_of(&gc.schema)?)?;
    let base = derive_named(c.seed.unwrap_or(gc.seed), &format!("method:{}", gc.strategy.as_str()));
    let mut failed = 0;
    for k in 0..gc.replicates {
        match run_generator(&train, &plan, &gc.mice, derive_seed(base, k as u64)) {
            Ok(g) => save(&g.data, &out.join(format!("{}_{k}.csv", gc.strategy.as_str())))?,
            Err(e) => {
                log::error!("replicate {k}: {e}");
                failed += 1;
            }
        }
    }
    match failed {
        0 => Ok(()),
        n if n == gc.replicates => Err(CliError::Data("every replicate failed".into())),
        n => Err(CliError::Partial { failed: n, out }),
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
enum FitModel {
    #[default]
    TrueStructure,
    MainEffects,
    Stepwise,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    data: PathBuf,
    #[serde(default)]
    test: Option<PathBuf>,
    #[serde(default)]
    schema: Option<Vec<ColumnSpec>>,
    scenario: ScenarioKind,
    #[serde(default)]
    formula_reading: FormulaReading,
    #[serde(default)]
    model: FitModel,
    #[serde(default)]
    irls: IrlsOptions,
}

#[derive(Serialize)]
struct FitSummary<'a> {
    model: FitModel,
    selected: Option<Vec<String>>,
    fit: &'a FittedGlm,
    std_errors: Vec<f64>,
    test_deviance: Option<f64>,
    test_mean_deviance: Option<f64>,
    test_rmse: Option<f64>,
}

/// Fitting is deterministic; `--seed` is accepted and unused.
pub fn fit(c: &Common) -> Result<(), CliError> {
    let fc: FitConfig = read_config(&c.config)?;
    let out = out_dir(c, None)?;
    let schema = schema_of(&fc.schema)?;
    let data = load(&fc.data, &schema)?;
    let scenario = builtin_scenario_with(fc.scenario, fc.formula_reading);
    let (spec, selected) = match fc.model {
        FitModel::TrueStructure => (DesignSpec::true_structure(&scenario).map_err(data_err)?, None),
        FitModel::MainEffects => {
            let s = data.schema();
            let cols: Vec<&str> = s.covariates().into_iter().map(|j| s.column(j).name.as_str()).collect();
            (DesignSpec::main_effects(&data, &cols).map_err(data_err)?, None)
        }
        FitModel::Stepwise => {
            let scope = selection_scope(&data, &scenario).map_err(data_err)?;
            let res = stepwise_aic(&data, &scope, &fc.irls).map_err(data_err)?;
            (res.spec, Some(res.selected))
        }
    };
    let fitted = fit_spec(&data, &spec, &fc.irls).map_err(data_err)?;
    let (mut dev, mut mdev, mut err) = (None, None, None);
    if let Some(t) = &fc.test {
        let test = load(t, &schema)?;
        let design = build_design(&test, &spec).map_err(data_err)?;
        let yhat = predict(&fitted, &design);
        let d = poisson_deviance(&design.y, &yhat).map_err(data_err)?;
        dev = Some(d);
        mdev = Some(d / design.y.len() as f64);
        err = Some(rmse(&design.y, &yhat).map_err(data_err)?);
    }
    let se = fitted.std_errors();
    let mut w = csv::Writer::from_path(out.join("coefficients.csv")).map_err(data_err)?;
    w.write_record(["term", "estimate", "std_error"]).map_err(data_err)?;
    for ((t, b), s) in fitted.terms.iter().zip(&fitted.beta).zip(&se) {
        w.write_record([t.clone(), b.to_string(), s.to_string()]).map_err(data_err)?;
    }
    w.flush().map_err(data_err)?;
    write_json(
        &FitSummary {
            model: fc.model,
            selected,
            fit: &fitted,
            std_errors: se.clone(),
            test_deviance: dev,
            test_mean_deviance: mdev,
            test_rmse: err,
        },
        &out.join("fit.json"),
    )
}

// ---------------------------------------------------------------------------

fn default_m() -> usize {
    5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateConfig {
    train: PathBuf,
    test: PathBuf,
    #[serde(default)]
    schema: Option<Vec<ColumnSpec>>,
    scenario: ScenarioKind,
    #[serde(default)]
    formula_reading: FormulaReading,
    methods: Vec<MethodSpec>,
    #[serde(default = "default_m")]
    m: usize,
    #[serde(default)]
    augmentation: bool,
    #[serde(default = "yes")]
    stepwise: bool,
    #[serde(default)]
    metrics: MetricOptions,
    #[serde(default)]
    irls: IrlsOptions,
    #[serde(default)]
    threads: Option<usize>,
    #[serde(default)]
    seed: u64,
}

fn yes() -> bool {
    true
}

pub fn evaluate(c: &Common) -> Result<(), CliError> {
    let ec: EvaluateConfig = read_config(&c.config)?;
    if ec.methods.iter().any(|m| matches!(m, MethodSpec::Generator { .. })) {
        return Err(CliError::Config("evaluate scores existing files; use `experiment` for generators".into()));
    }
    let mut cfg = ExperimentConfig::new(ec.scenario, ec.methods);
    cfg.schema = ec.schema.clone();
    cfg.formula_reading = ec.formula_reading;
    cfg.n_e = 1;
    cfg.m = ec.m;
    cfg.augmentation = ec.augmentation;
    cfg.stepwise = ec.stepwise;
    cfg.metrics = ec.metrics;
    cfg.irls = ec.irls;
    cfg.threads = ec.threads;
    cfg.seed = c.seed.unwrap_or(ec.seed);
    cfg.validate()?;
    let out = out_dir(c, None)?;
    let schema = schema_of(&ec.schema)?;
    let train = load(&ec.train, &schema)?;
    let test = load(&ec.test, &schema)?;
    let prep = Prepared::from_split(train, test, &cfg)?;
    let store = run_prepared(&cfg, SeedSchedule::new(&cfg), &prep)?;
    finish(&store, &out)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AugmentConfig {
    train: PathBuf,
    synthetic: PathBuf,
    #[serde(default)]
    schema: Option<Vec<ColumnSpec>>,
    #[serde(default = "default_m")]
    m: usize,
    /// `[t, L]` pairs; defaults to every `(1, L)` plus `(0, m)`.
    #[serde(default)]
    structures: Option<Vec<(u8, usize)>>,
    #[serde(default)]
    seed: u64,
}

pub fn augment(c: &Common) -> Result<(), CliError> {
    let ac: AugmentConfig = read_config(&c.config)?;
    if ac.m == 0 {
        return Err(CliError::Config("m must be at least 1".into()));
    }
    let structures: Vec<StructureParam> = match &ac.structures {
        None => StructureParam::grid(ac.m),
        Some(list) => list
            .iter()
            .map(|&(t, l)| {
                let s = StructureParam::new(t, l).map_err(|e| CliError::Config(e.to_string()))?;
                if l > ac.m {
                    return Err(CliError::Config(format!("L = {l} exceeds m = {}", ac.m)));
                }
                Ok(s)
            })
            .collect::<Result<_, _>>()?,
    };
    let out = out_dir(c, None)?;
    let schema = schema_of(&ac.schema)?;
    let train = load(&ac.train, &schema)?;
    let syn = load(&ac.synthetic, &schema)?;
    let seed = derive_named(c.seed.unwrap_or(ac.seed), "partition");
    let parts = partition_synthetic(&syn, ac.m, seed).map_err(data_err)?;
    for s in structures {
        let ds = assemble(&train, &parts, s).map_err(data_err)?;
        save(&ds, &out.join(format!("augmented_t{}_l{}.csv", s.t, s.l)))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn experiment(c: &Common) -> Result<(), CliError> {
    let text = fs::read_to_string(&c.config).map_err(|e| CliError::Config(format!("{}: {e}", c.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = out_dir(c, cfg.output_dir.as_ref())?;
    let store = run_experiment(&cfg)?;
    finish(&store, &out)
}
