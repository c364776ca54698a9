//! End-to-end experiments: data preparation, replicate generation or
//! ingestion, evaluation over structure parameters, ranking and persistence.
//!
//! Seed schedule, all derived from the master seed `S`:
//!
//! | stream | seed |
//! |---|---|
//! | surrogate data | `derive_named(S, "data")` |
//! | subsample | `derive_named(S, "subsample")` |
//! | simulated response | `derive_named(S, "simulate")` |
//! | train/test split | `derive_named(S, "split")` |
//! | replicate `k` of method `A` | `derive_seed(derive_named(S, "method:" + A), k)` |
//! | partition of that replicate | `derive_named(replicate seed, "partition")` |
//!
//! Cells of the (method × replicate) grid only read shared inputs, so they
//! may run on any number of threads without changing the results.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{assemble, partition_synthetic, AugmentError, StructureParam};
use crate::claims_sim::{builtin_scenario_with, simulate_dataset, FormulaReading, Scenario, ScenarioError, ScenarioKind};
use crate::glm::{
    build_design, fit_spec, poisson_deviance, predict, rmse, selection_scores, stepwise_aic, true_variables, Design,
    DesignSpec, FittedGlm, GlmError, IrlsOptions, SelectionScores,
};
use crate::metrics::{
    dataset_metrics, m1, m2, mse_ref, DatasetMetrics, MetricError, MetricOptions, ModelMetricInputs,
};
use crate::mice::{generate, AmputationPlan, MiceParams, Strategy};
use crate::portfolio::{fremtpl2freq_schema, surrogate_portfolio, FULL_ROWS};
use crate::rng::{derive_named, derive_seed};
use crate::tabular::{format_number, load_csv, split_train_test, ColumnSpec, CsvOptions, DataError, Dataset, Schema};
use crate::terms::Term;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("training reference fit: {0}")]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl RunnerError {
    pub fn is_config(&self) -> bool {
        matches!(self, RunnerError::Config(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// freMTPL2freq-style CSV; when absent a surrogate portfolio is generated.
    pub path: Option<PathBuf>,
    /// Rows of the surrogate portfolio (default: the full 678013).
    pub surrogate_rows: Option<usize>,
    /// Uniform row subsample taken before the response is simulated.
    pub subsample: Option<usize>,
}

/// One synthetic-data source in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    /// The training set scored as if it were synthetic.
    TrainingReference {
        #[serde(default = "training_name")]
        name: String,
    },
    /// An internal MICE generator.
    Generator {
        strategy: Strategy,
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        cell_fraction: Option<f64>,
        #[serde(default)]
        rounds: Option<usize>,
        #[serde(default)]
        disjoint: Option<bool>,
    },
    /// Synthetic CSVs produced elsewhere, one per replicate.
    External { name: String, paths: Vec<PathBuf> },
}

fn training_name() -> String {
    "training".to_string()
}

impl MethodSpec {
    pub fn name(&self) -> String {
        match self {
            MethodSpec::TrainingReference { name } | MethodSpec::External { name, .. } => name.clone(),
            MethodSpec::Generator { strategy, name, .. } => {
                name.clone().unwrap_or_else(|| strategy.as_str().to_string())
            }
        }
    }

    pub fn plan(&self) -> Option<AmputationPlan> {
        match self {
            MethodSpec::Generator {
                strategy,
                cell_fraction,
                rounds,
                disjoint,
                ..
            } => {
                let mut plan = AmputationPlan::default_for(*strategy);
                if let Some(f) = cell_fraction {
                    plan.cell_fraction = *f;
                }
                if let Some(r) = rounds {
                    plan.rounds = *r;
                }
                if let Some(d) = disjoint {
                    plan.disjoint = *d;
                }
                Some(plan)
            }
            _ => None,
        }
    }

    fn replicates(&self, n_e: usize) -> usize {
        match self {
            MethodSpec::TrainingReference { .. } => 1,
            MethodSpec::Generator { .. } => n_e,
            MethodSpec::External { paths, .. } => paths.len(),
        }
    }

    fn is_reference(&self) -> bool {
        matches!(self, MethodSpec::TrainingReference { .. })
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}
fn default_train_fraction() -> f64 {
    0.9
}
fn default_n_e() -> usize {
    5
}
fn default_m() -> usize {
    5
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub data: DataConfig,
    /// Column layout; defaults to freMTPL2freq.
    #[serde(default)]
    pub schema: Option<Vec<ColumnSpec>>,
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub formula_reading: FormulaReading,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_n_e")]
    pub n_e: usize,
    pub methods: Vec<MethodSpec>,
    /// Synthetic parts per replicate for augmentation.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Also evaluate the `(1, L)` grid, not only `(0, m)`.
    #[serde(default)]
    pub augmentation: bool,
    #[serde(default = "default_true")]
    pub stepwise: bool,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub mice: MiceParams,
    #[serde(default)]
    pub irls: IrlsOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write every synthetic replicate next to the result tables.
    #[serde(default)]
    pub save_synthetic: bool,
    /// Worker threads; results do not depend on it.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioKind, methods: Vec<MethodSpec>) -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            data: DataConfig::default(),
            schema: None,
            scenario,
            formula_reading: FormulaReading::default(),
            train_fraction: default_train_fraction(),
            n_e: default_n_e(),
            methods,
            m: default_m(),
            augmentation: false,
            stepwise: true,
            metrics: MetricOptions::default(),
            mice: MiceParams::default(),
            irls: IrlsOptions::default(),
            seed: 0,
            output_dir: None,
            save_synthetic: false,
            threads: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RunnerError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| RunnerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: String| Err(RunnerError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        if self.n_e == 0 {
            return bad("n_e must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("method list is empty".into());
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        if self.metrics.n_bins == 0 {
            return bad("metrics.n_bins must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        let mut names: Vec<String> = self.methods.iter().map(MethodSpec::name).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate method name `{}`", w[0]));
        }
        for m in &self.methods {
            if let Some(plan) = m.plan() {
                plan.validate().map_err(|e| RunnerError::Config(format!("{}: {e}", m.name())))?;
            }
            if let MethodSpec::External { name, paths } = m {
                if paths.is_empty() {
                    return bad(format!("external method `{name}` lists no files"));
                }
            }
        }
        self.mice.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn schema(&self) -> Result<Schema, RunnerError> {
        match &self.schema {
            None => Ok(fremtpl2freq_schema()),
            Some(cols) => Schema::new(cols.clone()).map_err(|e| RunnerError::Config(e.to_string())),
        }
    }

    /// Structure parameters evaluated for a generated or ingested method.
    pub fn structures(&self) -> Vec<StructureParam> {
        if self.augmentation {
            StructureParam::grid(self.m)
        } else {
            vec![StructureParam { t: 0, l: self.m }]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSchedule {
    pub master: u64,
    pub data: u64,
    pub subsample: u64,
    pub simulate: u64,
    pub split: u64,
    pub methods: BTreeMap<String, Vec<u64>>,
}

impl SeedSchedule {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let s = cfg.seed;
        let methods = cfg
            .methods
            .iter()
            .map(|m| {
                let name = m.name();
                let base = derive_named(s, &format!("method:{name}"));
                let seeds = (0..m.replicates(cfg.n_e)).map(|k| derive_seed(base, k as u64)).collect();
                (name, seeds)
            })
            .collect();
        SeedSchedule {
            master: s,
            data: derive_named(s, "data"),
            subsample: derive_named(s, "subsample"),
            simulate: derive_named(s, "simulate"),
            split: derive_named(s, "split"),
            methods,
        }
    }
}

/// Shared inputs of every cell: split data, truth, and the training fit.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub scenario: Scenario,
    pub true_spec: DesignSpec,
    pub test_design: Design,
    pub beta_star: Vec<f64>,
    pub reference: FittedGlm,
    pub mse_ref: Vec<f64>,
    pub truth: Vec<String>,
    pub mean_frequency: f64,
}

/// Intercept first, then the scenario's other coefficients in order.
pub fn true_coefficients(scenario: &Scenario) -> Vec<f64> {
    let intercept = scenario
        .terms()
        .iter()
        .find(|t| t.term == Term::Intercept)
        .map(|t| t.coefficient)
        .unwrap_or(0.0);
    std::iter::once(intercept)
        .chain(scenario.terms().iter().filter(|t| t.term != Term::Intercept).map(|t| t.coefficient))
        .collect()
}

pub fn load_portfolio(cfg: &ExperimentConfig, seeds: &SeedSchedule) -> Result<Dataset, RunnerError> {
    let schema = Arc::new(cfg.schema()?);
    let ds = match &cfg.data.path {
        Some(p) => load_csv(p, schema, CsvOptions::default())?,
        None => {
            if cfg.schema.is_some() {
                return Err(RunnerError::Config("a custom schema needs data.path".into()));
            }
            surrogate_portfolio(cfg.data.surrogate_rows.unwrap_or(FULL_ROWS), seeds.data)
        }
    };
    match cfg.data.subsample {
        Some(k) if k < ds.n_rows() => Ok(ds.sample_rows(k, seeds.subsample)?),
        _ => Ok(ds),
    }
}

pub fn prepare(cfg: &ExperimentConfig, seeds: &SeedSchedule) -> Result<Prepared, RunnerError> {
    let full = load_portfolio(cfg, seeds)?;
    let scenario = builtin_scenario_with(cfg.scenario, cfg.formula_reading);
    let (simulated, sim) = simulate_dataset(&full, &scenario, seeds.simulate)?;
    let (train, test) = split_train_test(&simulated, cfg.train_fraction, seeds.split)?;
    log::info!(
        "{} rows, mean frequency {:.5}; {} train / {} test",
        full.n_rows(),
        sim.mean_frequency,
        train.n_rows(),
        test.n_rows()
    );
    let mut prep = Prepared::from_split(train, test, cfg)?;
    prep.mean_frequency = sim.mean_frequency;
    Ok(prep)
}

impl Prepared {
    /// Shared inputs for a training and test set whose responses already
    /// follow `cfg.scenario`.
    pub fn from_split(train: Dataset, test: Dataset, cfg: &ExperimentConfig) -> Result<Prepared, RunnerError> {
        if train.schema().columns() != test.schema().columns() {
            return Err(DataError::SchemaMismatch("training and test schemas differ".into()).into());
        }
        let scenario = builtin_scenario_with(cfg.scenario, cfg.formula_reading);
        let true_spec = DesignSpec::true_structure(&scenario)?;
        let test_design = build_design(&test, &true_spec)?;
        let reference = fit_spec(&train, &true_spec, &cfg.irls)?;
        let beta_star = true_coefficients(&scenario);
        let mse = mse_ref(cfg.metrics.mse_convention, &beta_star, &reference)?;
        let y = train.response();
        let mean_frequency = y.iter().sum::<f64>() / y.len().max(1) as f64;
        Ok(Prepared {
            truth: true_variables(&scenario),
            train,
            test,
            scenario,
            true_spec,
            test_design,
            beta_star,
            reference,
            mse_ref: mse,
            mean_frequency,
        })
    }
}

/// Stepwise scope: main effects of every covariate, plus the scenario's
/// product terms for the interaction scenario.
pub fn selection_scope(ds: &Dataset, scenario: &Scenario) -> Result<DesignSpec, GlmError> {
    let schema = ds.schema();
    let cols: Vec<&str> = schema.covariates().into_iter().map(|j| schema.column(j).name.as_str()).collect();
    match scenario.kind() {
        ScenarioKind::Linear => DesignSpec::main_effects(ds, &cols),
        ScenarioKind::Interaction => DesignSpec::with_interactions(ds, &cols, scenario),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Ingest,
    MissingResponse,
    Generation,
    Partition,
    Metrics,
    Fit,
    Selection,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::Ingest => "ingest",
            FailureKind::MissingResponse => "missing_response",
            FailureKind::Generation => "generation",
            FailureKind::Partition => "partition",
            FailureKind::Metrics => "metrics",
            FailureKind::Fit => "fit",
            FailureKind::Selection => "selection",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub method: String,
    pub replicate: usize,
    pub structure: Option<StructureParam>,
    pub reason: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionOutcome {
    pub selected: Vec<String>,
    pub scores: SelectionScores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRecord {
    pub method: String,
    pub replicate: usize,
    pub structure: StructureParam,
    pub n_rows: usize,
    pub beta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Test-set Poisson deviance, summed.
    pub deviance: f64,
    /// Test-set Poisson deviance per observation.
    pub mean_deviance: f64,
    pub rmse: f64,
    pub selection: Option<SelectionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetRecord {
    pub method: String,
    pub replicate: usize,
    pub metrics: DatasetMetrics,
}

#[derive(Debug, Clone, Default)]
pub struct CellOutcome {
    pub fits: Vec<FitRecord>,
    pub dataset: Option<DatasetRecord>,
    pub failures: Vec<CellFailure>,
    pub synthetic: Option<Dataset>,
}

fn fit_record(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    data: &Dataset,
    method: &str,
    replicate: usize,
    structure: StructureParam,
    with_selection: bool,
    failures: &mut Vec<CellFailure>,
) -> Option<FitRecord> {
    let fail = |reason, message: String| CellFailure {
        method: method.to_string(),
        replicate,
        structure: Some(structure),
        reason,
        message,
    };
    let fit = match fit_spec(data, &prep.true_spec, &cfg.irls) {
        Ok(f) => f,
        Err(e) => {
            failures.push(fail(FailureKind::Fit, e.to_string()));
            return None;
        }
    };
    let yhat = predict(&fit, &prep.test_design);
    let scores = poisson_deviance(&prep.test_design.y, &yhat).and_then(|d| Ok((d, rmse(&prep.test_design.y, &yhat)?)));
    let (deviance, fit_rmse) = match scores {
        Ok(v) => v,
        Err(e) => {
            failures.push(fail(FailureKind::Fit, e.to_string()));
            return None;
        }
    };
    let selection = if with_selection {
        let outcome = selection_scope(data, &prep.scenario).and_then(|scope| {
            let res = stepwise_aic(data, &scope, &cfg.irls)?;
            let mains = |v: &str| -> Vec<String> {
                scope
                    .variables()
                    .iter()
                    .find(|x| x.name == v)
                    .map(|x| x.main_effects.clone())
                    .unwrap_or_default()
            };
            let scores = selection_scores(&res.selected, &prep.truth, mains);
            Ok(SelectionOutcome {
                selected: res.selected,
                scores,
            })
        });
        match outcome {
            Ok(o) => Some(o),
            Err(e) => {
                failures.push(fail(FailureKind::Selection, e.to_string()));
                None
            }
        }
    } else {
        None
    };
    Some(FitRecord {
        method: method.to_string(),
        replicate,
        structure,
        n_rows: data.n_rows(),
        converged: fit.converged,
        iterations: fit.iterations,
        beta: fit.beta,
        deviance,
        mean_deviance: deviance / prep.test_design.y.len() as f64,
        rmse: fit_rmse,
        selection,
    })
}

/// Scores one synthetic table. Internal generators, external files and the
/// training reference all pass through here.
pub fn evaluate_synthetic(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    method: &str,
    replicate: usize,
    syn: &Dataset,
    structures: &[StructureParam],
    seed: u64,
) -> CellOutcome {
    let mut out = CellOutcome::default();
    let fail = |structure, reason, message: String| CellFailure {
        method: method.to_string(),
        replicate,
        structure,
        reason,
        message,
    };
    match dataset_metrics(&prep.train, syn, &cfg.metrics) {
        Ok(metrics) => {
            out.dataset = Some(DatasetRecord {
                method: method.to_string(),
                replicate,
                metrics,
            })
        }
        Err(e) => out.failures.push(fail(None, FailureKind::Metrics, e.to_string())),
    }

    let needs_parts = structures.iter().any(|s| s.t == 1 && s.l > 0);
    let parts = if needs_parts {
        match partition_synthetic(syn, cfg.m, derive_named(seed, "partition")) {
            Ok(p) => Some(p),
            Err(e) => {
                out.failures.push(fail(None, FailureKind::Partition, e.to_string()));
                None
            }
        }
    } else {
        None
    };

    for &s in structures {
        // (0, m) is the synthetic set itself, in its own row order.
        let assembled: Result<Dataset, AugmentError> = if s.t == 0 && s.l == cfg.m {
            Ok(syn.clone())
        } else if s.t == 1 && s.l == 0 {
            Ok(prep.train.clone())
        } else {
            match &parts {
                Some(p) => assemble(&prep.train, p, s),
                None => continue,
            }
        };
        let data = match assembled {
            Ok(d) => d,
            Err(e) => {
                out.failures.push(fail(Some(s), FailureKind::Partition, e.to_string()));
                continue;
            }
        };
        let with_selection = cfg.stepwise && s.t == 0;
        log::debug!("{method}#{replicate} {s}: fitting {} rows", data.n_rows());
        if let Some(r) = fit_record(prep, cfg, &data, method, replicate, s, with_selection, &mut out.failures) {
            out.fits.push(r);
        }
    }
    out
}

fn ingest_external(path: &Path, train: &Dataset) -> Result<Dataset, (FailureKind, String)> {
    let schema = train.schema_arc().clone();
    let response = schema.column(schema.response()).clone();
    load_csv(path, schema, CsvOptions::default()).map_err(|e| match &e {
        DataError::MissingColumn(c) if c == response.header() || *c == response.name => {
            (FailureKind::MissingResponse, format!("{}: {e}", path.display()))
        }
        _ => (FailureKind::Ingest, format!("{}: {e}", path.display())),
    })
}

/// One (method, replicate) cell: obtain the synthetic table, then score it.
pub fn run_cell(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    method: &MethodSpec,
    replicate: usize,
    seed: u64,
) -> CellOutcome {
    let name = method.name();
    let failed = |reason: FailureKind, message: String| CellOutcome {
        failures: vec![CellFailure {
            method: name.clone(),
            replicate,
            structure: None,
            reason,
            message,
        }],
        ..CellOutcome::default()
    };
    let syn = match method {
        MethodSpec::TrainingReference { .. } => prep.train.clone(),
        MethodSpec::Generator { .. } => {
            let plan = method.plan().expect("generator has a plan");
            match generate(&prep.train, &plan, &cfg.mice, seed) {
                Ok(g) => g.data,
                Err(e) => return failed(FailureKind::Generation, e.to_string()),
            }
        }
        MethodSpec::External { paths, .. } => match ingest_external(&paths[replicate], &prep.train) {
            Ok(d) => d,
            Err((kind, msg)) => return failed(kind, msg),
        },
    };
    let structures = if method.is_reference() {
        vec![StructureParam { t: 0, l: cfg.m }]
    } else {
        cfg.structures()
    };
    let mut out = evaluate_synthetic(prep, cfg, &name, replicate, &syn, &structures, seed);
    if cfg.save_synthetic && !method.is_reference() {
        out.synthetic = Some(syn);
    }
    out
}

/// Averages over the replicates of one (method, structure) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub method: String,
    pub structure: StructureParam,
    pub proportion: f64,
    pub n_replicates: usize,
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub fit_deviance: Option<f64>,
    pub fit_deviance_total: Option<f64>,
    pub fit_rmse: Option<f64>,
    pub correct_vars: Option<f64>,
    pub incorrect_vars: Option<f64>,
    pub missing_main_effects: Option<f64>,
    pub dataset: Option<DatasetAverages>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetAverages {
    pub n_replicates: usize,
    pub categorical_mae: f64,
    pub categorical_mape: f64,
    pub numeric_mae: f64,
    pub numeric_mape: f64,
    pub pairwise_mae: f64,
    pub pairwise_mape: f64,
    pub correlation_mae: f64,
    pub correlation_mape: f64,
    pub zero_denominators: f64,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn average_datasets(records: &[&DatasetRecord], opts: &MetricOptions) -> Option<DatasetAverages> {
    if records.is_empty() {
        return None;
    }
    let p = opts.zero_denominator;
    let avg = |f: &dyn Fn(&DatasetMetrics) -> f64| mean(records.iter().map(|r| f(&r.metrics))).unwrap_or(f64::NAN);
    Some(DatasetAverages {
        n_replicates: records.len(),
        categorical_mae: avg(&|m| m.categorical.mae),
        categorical_mape: avg(&|m| m.categorical.mape_for(p)),
        numeric_mae: avg(&|m| m.numeric.mae),
        numeric_mape: avg(&|m| m.numeric.mape_for(p)),
        pairwise_mae: avg(&|m| m.pairwise.mae),
        pairwise_mape: avg(&|m| m.pairwise.mape_for(p)),
        correlation_mae: avg(&|m| m.correlation.mae),
        correlation_mape: avg(&|m| m.correlation.mape_for(p)),
        zero_denominators: avg(&|m| {
            (m.categorical.n_zero_denominators
                + m.numeric.n_zero_denominators
                + m.pairwise.n_zero_denominators
                + m.correlation.n_zero_denominators) as f64
        }),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultsStore {
    pub config: ExperimentConfig,
    pub crate_version: String,
    pub seeds: SeedSchedule,
    pub n_train: usize,
    pub n_test: usize,
    pub mean_frequency: f64,
    pub term_names: Vec<String>,
    pub beta_star: Vec<f64>,
    pub beta_hat_ref: Vec<f64>,
    pub mse_ref: Vec<f64>,
    pub fits: Vec<FitRecord>,
    pub datasets: Vec<DatasetRecord>,
    pub failures: Vec<CellFailure>,
    pub reports: Vec<MetricReport>,
    #[serde(skip)]
    pub synthetic: Vec<(String, usize, Dataset)>,
}

impl ResultsStore {
    pub fn report(&self, method: &str, structure: StructureParam) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.method == method && r.structure == structure)
    }

    /// The all-synthetic report, `(0, m)`, of `method`.
    pub fn headline(&self, method: &str) -> Option<&MetricReport> {
        self.report(method, StructureParam { t: 0, l: self.config.m })
    }

    pub fn methods(&self) -> Vec<String> {
        self.config.methods.iter().map(MethodSpec::name).collect()
    }

    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }
}

fn model_inputs(store: &ResultsStore, runs: Vec<Vec<f64>>) -> ModelMetricInputs {
    ModelMetricInputs {
        beta_star: store.beta_star.clone(),
        beta_hat_ref: store.beta_hat_ref.clone(),
        mse_ref: store.mse_ref.clone(),
        beta_runs: runs,
    }
}

fn aggregate(store: &mut ResultsStore) {
    let mut reports = Vec::new();
    for spec in &store.config.methods {
        let name = spec.name();
        let structures = if spec.is_reference() {
            vec![StructureParam { t: 0, l: store.config.m }]
        } else {
            store.config.structures()
        };
        let ds_records: Vec<&DatasetRecord> = store.datasets.iter().filter(|d| d.method == name).collect();
        for s in structures {
            let fits: Vec<&FitRecord> = store.fits.iter().filter(|f| f.method == name && f.structure == s).collect();
            let runs: Vec<Vec<f64>> = fits.iter().map(|f| f.beta.clone()).collect();
            let (mm1, mm2) = if runs.is_empty() {
                (None, None)
            } else {
                let inputs = model_inputs(store, runs);
                (m1(&inputs).ok(), m2(&inputs).ok())
            };
            let sel: Vec<&SelectionOutcome> = fits.iter().filter_map(|f| f.selection.as_ref()).collect();
            let with_missing = store.config.scenario == ScenarioKind::Interaction;
            reports.push(MetricReport {
                method: name.clone(),
                structure: s,
                proportion: s.synthetic_proportion(store.config.m),
                n_replicates: fits.len(),
                m1: mm1,
                m2: mm2,
                fit_deviance: mean(fits.iter().map(|f| f.mean_deviance)),
                fit_deviance_total: mean(fits.iter().map(|f| f.deviance)),
                fit_rmse: mean(fits.iter().map(|f| f.rmse)),
                correct_vars: mean(sel.iter().map(|o| o.scores.correct as f64)),
                incorrect_vars: mean(sel.iter().map(|o| o.scores.incorrect as f64)),
                missing_main_effects: if with_missing {
                    mean(sel.iter().map(|o| o.scores.missing_main_effects as f64))
                } else {
                    None
                },
                dataset: if s.t == 0 && s.l == store.config.m {
                    average_datasets(&ds_records, &store.config.metrics)
                } else {
                    None
                },
            });
        }
    }
    store.reports = reports;
}

/// Runs every (method, replicate) cell, then aggregates. Cell failures are
/// recorded in the store; only preparation errors abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsStore, RunnerError> {
    cfg.validate()?;
    let seeds = SeedSchedule::new(cfg);
    let prep = prepare(cfg, &seeds)?;
    run_prepared(cfg, seeds, &prep)
}

/// The cell grid and aggregation of [`run_experiment`] on inputs prepared
/// elsewhere, e.g. from training and test files.
pub fn run_prepared(cfg: &ExperimentConfig, seeds: SeedSchedule, prep: &Prepared) -> Result<ResultsStore, RunnerError> {

    let cells: Vec<(usize, usize, u64)> = cfg
        .methods
        .iter()
        .enumerate()
        .flat_map(|(mi, m)| {
            let s = &seeds.methods[&m.name()];
            (0..s.len()).map(move |k| (mi, k, s[k]))
        })
        .collect();
    let threads = cfg
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .min(cells.len().max(1));
    let slots: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let c = next.fetch_add(1, Ordering::Relaxed);
                if c >= cells.len() {
                    break;
                }
                let (mi, k, seed) = cells[c];
                let method = &cfg.methods[mi];
                log::info!("cell {}/{}: {} replicate {k}", c + 1, cells.len(), method.name());
                let outcome = run_cell(prep, cfg, method, k, seed);
                slots.lock().expect("no worker panicked")[c] = Some(outcome);
            });
        }
    });

    let mut store = ResultsStore {
        config: cfg.clone(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds,
        n_train: prep.train.n_rows(),
        n_test: prep.test.n_rows(),
        mean_frequency: prep.mean_frequency,
        term_names: prep.true_spec.term_names().to_vec(),
        beta_star: prep.beta_star.clone(),
        beta_hat_ref: prep.reference.beta.clone(),
        mse_ref: prep.mse_ref.clone(),
        fits: Vec::new(),
        datasets: Vec::new(),
        failures: Vec::new(),
        reports: Vec::new(),
        synthetic: Vec::new(),
    };
    for (c, slot) in slots.into_inner().expect("no worker panicked").into_iter().enumerate() {
        let outcome = slot.expect("every cell ran");
        let (mi, k, _) = cells[c];
        store.fits.extend(outcome.fits);
        store.datasets.extend(outcome.dataset);
        store.failures.extend(outcome.failures);
        if let Some(d) = outcome.synthetic {
            store.synthetic.push((cfg.methods[mi].name(), k, d));
        }
    }
    aggregate(&mut store);
    Ok(store)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMetric {
    M1,
    M2,
    CorrectVars,
    IncorrectVars,
    MissingMainEffects,
    FitDeviance,
    FitRmse,
    PairwiseMae,
    PairwiseMape,
    CorrelationMae,
    CorrelationMape,
    CategoricalMae,
    CategoricalMape,
    NumericMae,
    NumericMape,
}

impl RankMetric {
    pub const TABLE: [RankMetric; 15] = [
        RankMetric::M1,
        RankMetric::M2,
        RankMetric::CorrectVars,
        RankMetric::IncorrectVars,
        RankMetric::MissingMainEffects,
        RankMetric::FitDeviance,
        RankMetric::FitRmse,
        RankMetric::PairwiseMae,
        RankMetric::PairwiseMape,
        RankMetric::CorrelationMae,
        RankMetric::CorrelationMape,
        RankMetric::CategoricalMae,
        RankMetric::CategoricalMape,
        RankMetric::NumericMae,
        RankMetric::NumericMape,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RankMetric::M1 => "m1",
            RankMetric::M2 => "m2",
            RankMetric::CorrectVars => "correct_vars",
            RankMetric::IncorrectVars => "incorrect_vars",
            RankMetric::MissingMainEffects => "missing_main_effects",
            RankMetric::FitDeviance => "fit_deviance",
            RankMetric::FitRmse => "fit_rmse",
            RankMetric::PairwiseMae => "pairwise_mae",
            RankMetric::PairwiseMape => "pairwise_mape",
            RankMetric::CorrelationMae => "correlation_mae",
            RankMetric::CorrelationMape => "correlation_mape",
            RankMetric::CategoricalMae => "categorical_mae",
            RankMetric::CategoricalMape => "categorical_mape",
            RankMetric::NumericMae => "numeric_mae",
            RankMetric::NumericMape => "numeric_mape",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, RankMetric::CorrectVars)
    }

    pub fn value(self, r: &MetricReport) -> Option<f64> {
        let d = r.dataset.as_ref();
        match self {
            RankMetric::M1 => r.m1,
            RankMetric::M2 => r.m2,
            RankMetric::CorrectVars => r.correct_vars,
            RankMetric::IncorrectVars => r.incorrect_vars,
            RankMetric::MissingMainEffects => r.missing_main_effects,
            RankMetric::FitDeviance => r.fit_deviance,
            RankMetric::FitRmse => r.fit_rmse,
            RankMetric::PairwiseMae => d.map(|d| d.pairwise_mae),
            RankMetric::PairwiseMape => d.map(|d| d.pairwise_mape),
            RankMetric::CorrelationMae => d.map(|d| d.correlation_mae),
            RankMetric::CorrelationMape => d.map(|d| d.correlation_mape),
            RankMetric::CategoricalMae => d.map(|d| d.categorical_mae),
            RankMetric::CategoricalMape => d.map(|d| d.categorical_mape),
            RankMetric::NumericMae => d.map(|d| d.numeric_mae),
            RankMetric::NumericMape => d.map(|d| d.numeric_mape),
        }
    }
}

/// Competition ranks ("1, 1, 3"): one plus the number of strictly better
/// values. Missing or NaN values get no rank.
pub fn competition_ranks(values: &[Option<f64>], higher_is_better: bool) -> Vec<Option<usize>> {
    let valid = |v: &Option<f64>| v.filter(|x| !x.is_nan());
    values
        .iter()
        .map(|v| {
            let x = valid(v)?;
            let better = values
                .iter()
                .filter_map(valid)
                .filter(|&o| if higher_is_better { o > x } else { o < x })
                .count();
            Some(better + 1)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingRow {
    pub method: String,
    pub values: Vec<Option<f64>>,
    pub ranks: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingTable {
    pub metrics: Vec<RankMetric>,
    pub rows: Vec<RankingRow>,
}

/// Ranks methods on their all-synthetic `(0, m)` reports.
pub fn rank_methods(store: &ResultsStore, metrics: &[RankMetric]) -> RankingTable {
    let methods = store.methods();
    let reports: Vec<Option<&MetricReport>> = methods.iter().map(|m| store.headline(m)).collect();
    let mut rows: Vec<RankingRow> = methods
        .iter()
        .map(|m| RankingRow {
            method: m.clone(),
            values: Vec::with_capacity(metrics.len()),
            ranks: Vec::with_capacity(metrics.len()),
        })
        .collect();
    for &metric in metrics {
        let values: Vec<Option<f64>> = reports.iter().map(|r| r.and_then(|r| metric.value(r))).collect();
        let ranks = competition_ranks(&values, metric.higher_is_better());
        for (row, (v, r)) in rows.iter_mut().zip(values.into_iter().zip(ranks)) {
            row.values.push(v);
            row.ranks.push(r);
        }
    }
    RankingTable {
        metrics: metrics.to_vec(),
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub l: usize,
    pub proportion: f64,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentationCurve {
    pub method: String,
    pub metric: RankMetric,
    /// `(1, L)` for `L = 0..=m`.
    pub points: Vec<CurvePoint>,
    /// The all-synthetic `(0, m)` value.
    pub asymptote: Option<f64>,
    pub missing: Vec<StructureParam>,
    /// Decreases between consecutive `L = 1..=m` points.
    pub inversions: usize,
    /// No inversions and the last point above the first, over `L = 1..=m`.
    pub increasing: bool,
}

pub fn augmentation_curve(store: &ResultsStore, method: &str, metric: RankMetric) -> AugmentationCurve {
    let m = store.config.m;
    let mut missing = Vec::new();
    let mut lookup = |s: StructureParam| -> Option<f64> {
        let v = store.report(method, s).and_then(|r| metric.value(r));
        if v.is_none() {
            missing.push(s);
        }
        v
    };
    let points: Vec<CurvePoint> = (0..=m)
        .map(|l| {
            let s = StructureParam { t: 1, l };
            CurvePoint {
                l,
                proportion: s.synthetic_proportion(m),
                value: lookup(s),
            }
        })
        .collect();
    let asymptote = lookup(StructureParam { t: 0, l: m });
    let tail: Vec<f64> = points[1..].iter().filter_map(|p| p.value).collect();
    let inversions = tail.windows(2).filter(|w| w[1] < w[0]).count();
    let increasing = inversions == 0 && tail.len() == m && m >= 2 && tail[m - 1] > tail[0];
    AugmentationCurve {
        method: method.to_string(),
        metric,
        points,
        asymptote,
        missing,
        inversions,
        increasing,
    }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

fn num(x: f64) -> String {
    format_number(x)
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn safe_file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub const MODEL_HEADER: [&str; 14] = [
    "method",
    "structure",
    "t",
    "l",
    "proportion",
    "n_replicates",
    "m1",
    "m2",
    "fit_deviance",
    "fit_deviance_total",
    "fit_rmse",
    "correct_vars",
    "incorrect_vars",
    "missing_main_effects",
];

pub fn write_model_metrics<W: io::Write>(store: &ResultsStore, w: W) -> Result<(), RunnerError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(MODEL_HEADER)?;
    for r in &store.reports {
        out.write_record([
            r.method.clone(),
            r.structure.to_string(),
            r.structure.t.to_string(),
            r.structure.l.to_string(),
            num(r.proportion),
            r.n_replicates.to_string(),
            opt(r.m1),
            opt(r.m2),
            opt(r.fit_deviance),
            opt(r.fit_deviance_total),
            opt(r.fit_rmse),
            opt(r.correct_vars),
            opt(r.incorrect_vars),
            opt(r.missing_main_effects),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dataset_metrics<W: io::Write>(store: &ResultsStore, w: W) -> Result<(), RunnerError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "method",
        "n_replicates",
        "categorical_mae",
        "categorical_mape",
        "numeric_mae",
        "numeric_mape",
        "pairwise_mae",
        "pairwise_mape",
        "correlation_mae",
        "correlation_mape",
        "mape_zero_denominators",
    ])?;
    for r in &store.reports {
        if let Some(d) = &r.dataset {
            out.write_record([
                r.method.clone(),
                d.n_replicates.to_string(),
                num(d.categorical_mae),
                num(d.categorical_mape),
                num(d.numeric_mae),
                num(d.numeric_mape),
                num(d.pairwise_mae),
                num(d.pairwise_mape),
                num(d.correlation_mae),
                num(d.correlation_mape),
                num(d.zero_denominators),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_replicates<W: io::Write>(store: &ResultsStore, w: W) -> Result<(), RunnerError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "method",
        "replicate",
        "structure",
        "n_rows",
        "converged",
        "iterations",
        "fit_deviance",
        "fit_deviance_total",
        "fit_rmse",
        "correct_vars",
        "incorrect_vars",
        "missing_main_effects",
        "selected",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(store.term_names.iter().map(|t| format!("beta:{t}")));
    out.write_record(&header)?;
    for f in &store.fits {
        let sel = f.selection.as_ref();
        let mut rec = vec![
            f.method.clone(),
            f.replicate.to_string(),
            f.structure.to_string(),
            f.n_rows.to_string(),
            f.converged.to_string(),
            f.iterations.to_string(),
            num(f.mean_deviance),
            num(f.deviance),
            num(f.rmse),
            sel.map(|s| s.scores.correct.to_string()).unwrap_or_default(),
            sel.map(|s| s.scores.incorrect.to_string()).unwrap_or_default(),
            sel.map(|s| s.scores.missing_main_effects.to_string()).unwrap_or_default(),
            sel.map(|s| s.selected.join(";")).unwrap_or_default(),
        ];
        rec.extend(f.beta.iter().map(|&b| num(b)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_failures<W: io::Write>(store: &ResultsStore, w: W) -> Result<(), RunnerError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "replicate", "structure", "reason", "message"])?;
    for f in &store.failures {
        out.write_record([
            f.method.clone(),
            f.replicate.to_string(),
            f.structure.map(|s| s.to_string()).unwrap_or_default(),
            f.reason.as_str().to_string(),
            f.message.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Ranking table with a value and rank column per metric and an empty
/// free-text `ease_of_use` column.
pub fn write_ranking<W: io::Write>(table: &RankingTable, w: W) -> Result<(), RunnerError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["method".to_string()];
    for m in &table.metrics {
        header.push(m.as_str().to_string());
        header.push(format!("{}_rank", m.as_str()));
    }
    header.push("ease_of_use".into());
    out.write_record(&header)?;
    for row in &table.rows {
        let mut rec = vec![row.method.clone()];
        for (v, r) in row.values.iter().zip(&row.ranks) {
            rec.push(opt(*v));
            rec.push(r.map(|r| r.to_string()).unwrap_or_default());
        }
        rec.push(String::new());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the result tables and `manifest.json` into `dir`.
pub fn write_results(store: &ResultsStore, dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    fn create(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<fs::File, RunnerError> {
        let p = dir.join(name);
        let f = fs::File::create(&p)?;
        written.push(p);
        Ok(f)
    }
    write_model_metrics(store, create(dir, "model_metrics.csv", &mut written)?)?;
    write_dataset_metrics(store, create(dir, "dataset_metrics.csv", &mut written)?)?;
    write_replicates(store, create(dir, "replicates.csv", &mut written)?)?;
    write_failures(store, create(dir, "failures.csv", &mut written)?)?;
    let metrics: Vec<RankMetric> = RankMetric::TABLE
        .iter()
        .copied()
        .filter(|m| *m != RankMetric::MissingMainEffects || store.config.scenario == ScenarioKind::Interaction)
        .collect();
    write_ranking(&rank_methods(store, &metrics), create(dir, "table.csv", &mut written)?)?;
    if store.config.augmentation {
        let mut out = csv::Writer::from_writer(create(dir, "augmentation.csv", &mut written)?);
        out.write_record(["method", "metric", "structure", "proportion", "value"])?;
        for method in store.methods() {
            let is_ref = store
                .config
                .methods
                .iter()
                .any(|m| m.name() == method && m.is_reference());
            if is_ref {
                continue;
            }
            for metric in [RankMetric::M1, RankMetric::M2, RankMetric::FitDeviance] {
                let c = augmentation_curve(store, &method, metric);
                for p in &c.points {
                    out.write_record([
                        method.clone(),
                        metric.as_str().to_string(),
                        format!("(1,{})", p.l),
                        num(p.proportion),
                        opt(p.value),
                    ])?;
                }
                out.write_record([
                    method.clone(),
                    metric.as_str().to_string(),
                    format!("(0,{})", store.config.m),
                    "all_synthetic".to_string(),
                    opt(c.asymptote),
                ])?;
            }
        }
        out.flush()?;
    }
    for (method, k, ds) in &store.synthetic {
        let p = dir.join("synthetic").join(format!("{}_{k}.csv", safe_file_stem(method)));
        crate::tabular::write_csv(ds, &p, CsvOptions::default())?;
        written.push(p);
    }
    let f = create(dir, "manifest.json", &mut written)?;
    serde_json::to_writer_pretty(io::BufWriter::new(f), store)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_rule() {
        assert_eq!(
            competition_ranks(&[Some(0.1), Some(0.1), Some(0.3)], false),
            vec![Some(1), Some(1), Some(3)]
        );
        assert_eq!(
            competition_ranks(&[Some(5.0), Some(7.0), Some(7.0), None], true),
            vec![Some(3), Some(1), Some(1), None]
        );
        assert_eq!(competition_ranks(&[Some(2.0)], false), vec![Some(1)]);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let ok = r#"{"scenario": "linear", "methods": [{"kind": "training_reference"}]}"#;
        let cfg = ExperimentConfig::from_json(ok).unwrap();
        assert_eq!(cfg.n_e, 5);
        assert_eq!(cfg.methods[0].name(), "training");
        let bad = r#"{"scenario": "linear", "methods": [{"kind": "training_reference"}], "nE": 3}"#;
        assert!(ExperimentConfig::from_json(bad).unwrap_err().is_config());
        let bad_method = r#"{"scenario": "linear", "methods": [{"kind": "generator", "strategy": "mice_method", "fraction": 0.5}]}"#;
        assert!(ExperimentConfig::from_json(bad_method).unwrap_err().is_config());
        let nested = r#"{"scenario": "linear", "methods": [{"kind": "training_reference"}], "mice": {"trees": 3}}"#;
        assert!(ExperimentConfig::from_json(nested).unwrap_err().is_config());
    }

    #[test]
    fn config_invariants() {
        let empty = r#"{"scenario": "linear", "methods": []}"#;
        assert!(ExperimentConfig::from_json(empty).is_err());
        let zero = r#"{"scenario": "linear", "n_e": 0, "methods": [{"kind": "training_reference"}]}"#;
        assert!(ExperimentConfig::from_json(zero).is_err());
        let dup = r#"{"scenario": "linear", "methods": [{"kind": "generator", "strategy": "mice_method"}, {"kind": "generator", "strategy": "mice_method"}]}"#;
        assert!(ExperimentConfig::from_json(dup).is_err());
        let rounds = r#"{"scenario": "linear", "methods": [{"kind": "generator", "strategy": "mice_method", "rounds": 3}]}"#;
        assert!(ExperimentConfig::from_json(rounds).is_err());
    }

    #[test]
    fn seed_schedule_is_stable() {
        let cfg = ExperimentConfig::new(
            ScenarioKind::Linear,
            vec![MethodSpec::Generator {
                strategy: Strategy::MiceMethod,
                name: None,
                cell_fraction: None,
                rounds: None,
                disjoint: None,
            }],
        );
        let a = SeedSchedule::new(&cfg);
        let b = SeedSchedule::new(&cfg);
        assert_eq!(a, b);
        assert_eq!(a.methods["mice"].len(), 5);
        assert_ne!(a.methods["mice"][0], a.methods["mice"][1]);
    }

    #[test]
    fn true_coefficients_put_intercept_first() {
        let s = crate::claims_sim::builtin_scenario(ScenarioKind::Linear);
        let b = true_coefficients(&s);
        assert_eq!(b.len(), 14);
        assert_eq!(b[0], -3.0);
        let spec = DesignSpec::true_structure(&s).unwrap();
        assert_eq!(spec.n_terms(), b.len());
    }
}
