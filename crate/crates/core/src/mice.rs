//! Multiple imputation by chained equations, and the amputation-imputation
//! generators built on it.
//!
//! A generator copies the training table, deletes ("amputates") a share of
//! the copy's cells, stacks the copy under the untouched training rows and
//! lets MICE fill the holes. Each column model is a random forest whose
//! predictions are donor draws, so every synthetic cell repeats a value
//! observed in the training column.
//!
//! The exposure column is never amputated and never used as a predictor.
//! The response is imputed as a class over its observed values unless
//! [`MiceParams::response_target`] says otherwise.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{fit_forest, Feature, FeatureMatrix, ForestError, ForestParams, Target};
use crate::rng::{derive_named, derive_seed, rng_from_seed};
use crate::tabular::{floor_fraction, Column, ColumnKind, DataError, Dataset};

#[derive(Debug, Error)]
pub enum MiceError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("column `{0}` has no observed values left to impute from")]
    FullyMasked(String),
    #[error("invalid mask: {0}")]
    Mask(String),
    #[error("invalid parameter: {0}")]
    Params(String),
}

/// Cells flagged for imputation, stored column-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingMask {
    n_rows: usize,
    n_cols: usize,
    cells: Vec<bool>,
}

impl MissingMask {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        MissingMask {
            n_rows,
            n_cols,
            cells: vec![false; n_rows * n_cols],
        }
    }

    pub fn for_dataset(ds: &Dataset) -> Self {
        MissingMask::new(ds.n_rows(), ds.n_cols())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.n_rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, missing: bool) {
        self.cells[j * self.n_rows + i] = missing;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.contains(&true)
    }

    pub fn column_count(&self, j: usize) -> usize {
        self.cells[j * self.n_rows..(j + 1) * self.n_rows]
            .iter()
            .filter(|&&c| c)
            .count()
    }

    /// Rows with a masked cell in column `j`.
    pub fn missing_rows(&self, j: usize) -> Vec<usize> {
        (0..self.n_rows).filter(|&i| self.get(i, j)).collect()
    }

    /// Rows with an observed cell in column `j`.
    pub fn observed_rows(&self, j: usize) -> Vec<usize> {
        (0..self.n_rows).filter(|&i| !self.get(i, j)).collect()
    }

    pub fn union(&self, other: &MissingMask) -> MissingMask {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        MissingMask {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            cells: self.cells.iter().zip(&other.cells).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn intersects(&self, other: &MissingMask) -> bool {
        self.cells.iter().zip(&other.cells).any(|(a, b)| *a && *b)
    }

    /// `self` on top of `rows_above` all-observed rows.
    pub fn below(&self, rows_above: usize) -> MissingMask {
        let n = rows_above + self.n_rows;
        let mut out = MissingMask::new(n, self.n_cols);
        for j in 0..self.n_cols {
            for i in 0..self.n_rows {
                out.set(rows_above + i, j, self.get(i, j));
            }
        }
        out
    }

    fn check(&self, ds: &Dataset) -> Result<(), MiceError> {
        if self.n_rows != ds.n_rows() || self.n_cols != ds.n_cols() {
            return Err(MiceError::Mask(format!(
                "mask is {}×{}, dataset is {}×{}",
                self.n_rows,
                self.n_cols,
                ds.n_rows(),
                ds.n_cols()
            )));
        }
        if let Some(e) = ds.schema().exposure() {
            if self.column_count(e) > 0 {
                return Err(MiceError::Mask("the exposure column cannot be masked".into()));
            }
        }
        for j in 0..self.n_cols {
            let m = self.column_count(j);
            if m > 0 && m == self.n_rows {
                return Err(MiceError::FullyMasked(ds.schema().column(j).name.clone()));
            }
        }
        Ok(())
    }
}

/// How the response column is modelled when it is imputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseTarget {
    /// Classes over the observed counts.
    #[default]
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiceParams {
    /// Chained-equation cycles after the initial fill.
    pub n_mi: usize,
    /// Independently imputed sets produced by [`impute_sets`].
    pub n_is: usize,
    pub forest: ForestParams,
    /// Column visit order; `None` means schema order.
    pub visit_order: Option<Vec<String>>,
    pub response_target: ResponseTarget,
}

impl Default for MiceParams {
    fn default() -> Self {
        MiceParams {
            n_mi: 5,
            n_is: 1,
            forest: ForestParams::default(),
            visit_order: None,
            response_target: ResponseTarget::Categorical,
        }
    }
}

impl MiceParams {
    pub fn validate(&self) -> Result<(), MiceError> {
        if self.n_mi == 0 {
            return Err(MiceError::Params("n_mi must be ≥ 1".into()));
        }
        if self.n_is == 0 {
            return Err(MiceError::Params("n_is must be ≥ 1".into()));
        }
        self.forest.validate()?;
        Ok(())
    }

    fn order(&self, ds: &Dataset) -> Result<Vec<usize>, MiceError> {
        let modelled = ds.schema().modelled_columns();
        match &self.visit_order {
            None => Ok(modelled),
            Some(names) => {
                let mut out = Vec::with_capacity(names.len());
                for n in names {
                    let j = ds.schema().require(n)?;
                    if !modelled.contains(&j) {
                        return Err(MiceError::Params(format!("`{n}` cannot be imputed")));
                    }
                    if out.contains(&j) {
                        return Err(MiceError::Params(format!("`{n}` listed twice in visit order")));
                    }
                    out.push(j);
                }
                Ok(out)
            }
        }
    }
}

/// Fills every masked cell with a uniform draw from the column's observed
/// cells.
pub fn initial_impute(ds: &Dataset, mask: &MissingMask, seed: u64) -> Result<Dataset, MiceError> {
    mask.check(ds)?;
    let mut out = ds.clone();
    let mut rng = rng_from_seed(seed);
    for (j, col) in out.columns_mut().iter_mut().enumerate() {
        let missing = mask.missing_rows(j);
        if missing.is_empty() {
            continue;
        }
        let observed = mask.observed_rows(j);
        for i in missing {
            let donor = observed[rng.random_range(0..observed.len())];
            copy_cell(col, donor, i);
        }
    }
    Ok(out)
}

#[inline]
fn copy_cell(col: &mut Column, from: usize, to: usize) {
    match col {
        Column::Categorical(c) => c[to] = c[from],
        Column::Numeric(v) => v[to] = v[from],
    }
}

/// Working state of one MICE run: the current table plus split features of
/// every modelled column.
struct Chain<'p> {
    data: Dataset,
    modelled: Vec<usize>,
    features: FeatureMatrix,
    params: &'p MiceParams,
}

impl<'p> Chain<'p> {
    fn new(data: Dataset, params: &'p MiceParams) -> Result<Self, MiceError> {
        let modelled = data.schema().modelled_columns();
        let features = modelled
            .iter()
            .map(|&j| feature_of(&data, j, params.forest.max_bins))
            .collect();
        Ok(Chain {
            features: FeatureMatrix::new(features)?,
            data,
            modelled,
            params,
        })
    }

    fn update_column(&mut self, j: usize, mask: &MissingMask, seed: u64) -> Result<(), MiceError> {
        let missing = mask.missing_rows(j);
        if missing.is_empty() {
            return Ok(());
        }
        let observed = mask.observed_rows(j);
        let fj = self.modelled.iter().position(|&m| m == j).expect("visited column is modelled");
        let predictors: Vec<usize> = (0..self.modelled.len()).filter(|&k| k != fj).collect();
        let is_response = j == self.data.schema().response();
        let kind = self.data.schema().column(j).kind;

        let donors: Vec<usize> = {
            let col = self.data.column(j);
            let class_codes;
            let target = match (col, kind) {
                (Column::Categorical(codes), _) => Target::Categorical {
                    codes,
                    n_classes: self.data.schema().column(j).levels.len(),
                },
                (Column::Numeric(v), ColumnKind::Numeric)
                    if is_response && self.params.response_target == ResponseTarget::Categorical =>
                {
                    let (codes, n_classes) = support_codes(v, &observed);
                    class_codes = codes;
                    Target::Categorical {
                        codes: &class_codes,
                        n_classes,
                    }
                }
                (Column::Numeric(v), _) => Target::Numeric(v),
            };
            let forest = fit_forest(
                &self.features,
                &predictors,
                &target,
                &observed,
                &self.params.forest,
                derive_seed(seed, 0),
            )?;
            let mut rng = rng_from_seed(derive_seed(seed, 1));
            missing
                .iter()
                .map(|&i| forest.draw_donor(&self.features, i, &mut rng))
                .collect()
        };
        let col = &mut self.data.columns_mut()[j];
        for (&i, &d) in missing.iter().zip(&donors) {
            copy_cell(col, d, i);
        }
        self.features
            .replace(fj, feature_of(&self.data, j, self.params.forest.max_bins))?;
        Ok(())
    }
}

fn feature_of(ds: &Dataset, j: usize, max_bins: usize) -> Feature {
    match ds.column(j) {
        Column::Categorical(c) => Feature::categorical(c, ds.schema().column(j).levels.len()),
        Column::Numeric(v) => Feature::numeric(v.clone(), max_bins),
    }
}

/// Class codes of `v` over the distinct values seen at `observed`; other
/// rows get code 0 (they are never read as targets).
fn support_codes(v: &[f64], observed: &[usize]) -> (Vec<u32>, usize) {
    let mut support: BTreeMap<u64, u32> = BTreeMap::new();
    for &i in observed {
        let k = support.len() as u32;
        support.entry(v[i].to_bits()).or_insert(k);
    }
    let codes = v
        .iter()
        .map(|x| support.get(&x.to_bits()).copied().unwrap_or(0))
        .collect();
    (codes, support.len())
}

/// One chained-equation pass over the columns with masked cells. `ds` must
/// already hold placeholders in the masked cells.
pub fn mice_cycle(
    ds: &Dataset,
    mask: &MissingMask,
    params: &MiceParams,
    seed: u64,
) -> Result<Dataset, MiceError> {
    params.validate()?;
    mask.check(ds)?;
    let order = params.order(ds)?;
    let mut chain = Chain::new(ds.clone(), params)?;
    cycle(&mut chain, &order, mask, seed)?;
    Ok(chain.data)
}

fn cycle(chain: &mut Chain<'_>, order: &[usize], mask: &MissingMask, seed: u64) -> Result<(), MiceError> {
    for &j in order {
        chain.update_column(j, mask, derive_seed(seed, j as u64))?;
    }
    Ok(())
}

/// Initial fill followed by `n_mi` cycles.
pub fn run_mice(
    ds: &Dataset,
    mask: &MissingMask,
    params: &MiceParams,
    seed: u64,
) -> Result<Dataset, MiceError> {
    params.validate()?;
    let order = params.order(ds)?;
    let filled = initial_impute(ds, mask, derive_named(seed, "initial"))?;
    if mask.is_empty() {
        return Ok(filled);
    }
    let mut chain = Chain::new(filled, params)?;
    for t in 0..params.n_mi {
        log::debug!("mice cycle {}/{}", t + 1, params.n_mi);
        cycle(&mut chain, &order, mask, derive_seed(seed, t as u64 + 1))?;
    }
    Ok(chain.data)
}

/// `n_is` independent completions of the same masked table.
pub fn impute_sets(
    ds: &Dataset,
    mask: &MissingMask,
    params: &MiceParams,
    seed: u64,
) -> Result<Vec<Dataset>, MiceError> {
    params.validate()?;
    (0..params.n_is)
        .map(|s| run_mice(ds, mask, params, derive_seed(seed, s as u64)))
        .collect()
}

/// Columns that may be amputated: everything except the exposure.
fn eligible_columns(ds: &Dataset) -> Vec<usize> {
    ds.schema().modelled_columns()
}

fn mask_cells(n_rows: usize, n_cols: usize, eligible: &[usize], cells: impl Iterator<Item = usize>) -> MissingMask {
    let mut m = MissingMask::new(n_rows, n_cols);
    for c in cells {
        let (k, i) = (c / n_rows, c % n_rows);
        m.set(i, eligible[k], true);
    }
    m
}

/// Masks `⌊fraction · n · p⌋` cells chosen uniformly without replacement,
/// `p` being the number of non-exposure columns.
pub fn ampute_random_cells(ds: &Dataset, fraction: f64, seed: u64) -> Result<MissingMask, MiceError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(MiceError::Params(format!("cell fraction {fraction} not in (0, 1)")));
    }
    let eligible = eligible_columns(ds);
    let n = ds.n_rows();
    let total = n * eligible.len();
    let k = floor_fraction(total, fraction);
    let mut rng = rng_from_seed(seed);
    let m = mask_cells(n, ds.n_cols(), &eligible, sample(&mut rng, total, k).into_iter());
    for &j in &eligible {
        if n > 0 && m.column_count(j) == n {
            return Err(MiceError::FullyMasked(ds.schema().column(j).name.clone()));
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    MiceMethod,
    MiceAllSyn,
    MiceTabulator,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::MiceMethod => "mice",
            Strategy::MiceAllSyn => "mice_all_syn",
            Strategy::MiceTabulator => "mice_tabulator",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "mice" | "mice_method" => Some(Strategy::MiceMethod),
            "mice_all_syn" => Some(Strategy::MiceAllSyn),
            "mice_tabulator" => Some(Strategy::MiceTabulator),
            _ => None,
        }
    }
}

/// The amputation schedule of a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmputationPlan {
    pub strategy: Strategy,
    /// Share of cells masked per round (first round for `mice_all_syn`).
    pub cell_fraction: f64,
    pub rounds: usize,
    /// Tabulator rounds only: never re-mask a cell already regenerated.
    #[serde(default = "default_disjoint")]
    pub disjoint: bool,
}

fn default_disjoint() -> bool {
    true
}

impl AmputationPlan {
    pub fn default_for(strategy: Strategy) -> Self {
        match strategy {
            Strategy::MiceMethod => AmputationPlan {
                strategy,
                cell_fraction: 0.75,
                rounds: 1,
                disjoint: true,
            },
            Strategy::MiceAllSyn => AmputationPlan {
                strategy,
                cell_fraction: 0.75,
                rounds: 2,
                disjoint: true,
            },
            Strategy::MiceTabulator => AmputationPlan {
                strategy,
                cell_fraction: 0.2,
                rounds: 5,
                disjoint: true,
            },
        }
    }

    pub fn validate(&self) -> Result<(), MiceError> {
        if !(self.cell_fraction > 0.0 && self.cell_fraction <= 1.0) {
            return Err(MiceError::Params(format!(
                "cell fraction {} not in (0, 1]",
                self.cell_fraction
            )));
        }
        let ok_rounds = match self.strategy {
            Strategy::MiceMethod => self.rounds == 1,
            Strategy::MiceAllSyn => self.rounds == 2,
            Strategy::MiceTabulator => self.rounds >= 1,
        };
        if !ok_rounds {
            return Err(MiceError::Params(format!(
                "{} cannot run {} rounds",
                self.strategy.as_str(),
                self.rounds
            )));
        }
        Ok(())
    }

    /// Per-round masks over a copy of `ds`.
    pub fn masks(&self, ds: &Dataset, seed: u64) -> Result<Vec<MissingMask>, MiceError> {
        self.validate()?;
        let eligible = eligible_columns(ds);
        let n = ds.n_rows();
        let total = n * eligible.len();
        let per_round = floor_fraction(total, self.cell_fraction);
        let mut rng = rng_from_seed(seed);
        let mut out = Vec::with_capacity(self.rounds);
        match self.strategy {
            Strategy::MiceMethod | Strategy::MiceAllSyn => {
                let first: Vec<usize> = sample(&mut rng, total, per_round).into_vec();
                out.push(mask_cells(n, ds.n_cols(), &eligible, first.iter().copied()));
                if self.strategy == Strategy::MiceAllSyn {
                    let mut taken = vec![false; total];
                    for &c in &first {
                        taken[c] = true;
                    }
                    let rest = (0..total).filter(|&c| !taken[c]);
                    out.push(mask_cells(n, ds.n_cols(), &eligible, rest));
                }
            }
            Strategy::MiceTabulator if self.disjoint => {
                let mut pool: Vec<usize> = (0..total).collect();
                let covers_all = self.cell_fraction * self.rounds as f64 >= 1.0 - 1e-9;
                for r in 0..self.rounds {
                    let k = if r + 1 == self.rounds && covers_all {
                        pool.len()
                    } else {
                        per_round.min(pool.len())
                    };
                    let picked = sample(&mut rng, pool.len(), k).into_vec();
                    let mut chosen = vec![false; pool.len()];
                    for &p in &picked {
                        chosen[p] = true;
                    }
                    let cells = picked.iter().map(|&p| pool[p]).collect::<Vec<_>>();
                    out.push(mask_cells(n, ds.n_cols(), &eligible, cells.into_iter()));
                    pool = pool
                        .iter()
                        .zip(&chosen)
                        .filter(|(_, &c)| !c)
                        .map(|(&p, _)| p)
                        .collect();
                }
            }
            Strategy::MiceTabulator => {
                for _ in 0..self.rounds {
                    let cells = sample(&mut rng, total, per_round).into_vec();
                    out.push(mask_cells(n, ds.n_cols(), &eligible, cells.into_iter()));
                }
            }
        }
        Ok(out)
    }
}

/// A generated table with the masks that produced it.
#[derive(Debug, Clone)]
pub struct Generation {
    pub data: Dataset,
    pub masks: Vec<MissingMask>,
}

impl Generation {
    /// Cells of the copy that were regenerated at least once.
    pub fn regenerated(&self) -> MissingMask {
        let mut acc = self.masks[0].clone();
        for m in &self.masks[1..] {
            acc = acc.union(m);
        }
        acc
    }
}

/// Runs `plan` on a copy of `train`, stacking the copy under the training
/// rows for every imputation round.
pub fn generate(
    train: &Dataset,
    plan: &AmputationPlan,
    params: &MiceParams,
    seed: u64,
) -> Result<Generation, MiceError> {
    params.validate()?;
    if train.n_rows() == 0 {
        return Err(DataError::Empty.into());
    }
    let masks = plan.masks(train, derive_named(seed, "amputation"))?;
    let n = train.n_rows();
    let mut copy = train.clone();
    for (r, m) in masks.iter().enumerate() {
        log::info!(
            "{} round {}/{}: {} cells",
            plan.strategy.as_str(),
            r + 1,
            masks.len(),
            m.count()
        );
        let stacked = Dataset::vstack(&[train, &copy])?;
        let full = m.below(n);
        let done = run_mice(&stacked, &full, params, derive_seed(seed, r as u64))?;
        let rows: Vec<usize> = (n..2 * n).collect();
        copy = done.select_rows(&rows);
    }
    Ok(Generation { data: copy, masks })
}

pub fn gen_mice_method(train: &Dataset, params: &MiceParams, seed: u64) -> Result<Dataset, MiceError> {
    generate(train, &AmputationPlan::default_for(Strategy::MiceMethod), params, seed).map(|g| g.data)
}

pub fn gen_mice_all_syn(train: &Dataset, params: &MiceParams, seed: u64) -> Result<Dataset, MiceError> {
    generate(train, &AmputationPlan::default_for(Strategy::MiceAllSyn), params, seed).map(|g| g.data)
}

pub fn gen_mice_tabulator(train: &Dataset, params: &MiceParams, seed: u64) -> Result<Dataset, MiceError> {
    generate(train, &AmputationPlan::default_for(Strategy::MiceTabulator), params, seed).map(|g| g.data)
}

/// Plausibility rule for a numeric column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintRule {
    pub column: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintViolation {
    pub column: String,
    pub violations: usize,
    pub fraction: f64,
}

/// Rules for the MTPL portfolio (driver at least 18, and so on).
pub fn portfolio_constraints() -> Vec<ConstraintRule> {
    use crate::portfolio::{BONUS_MALUS, DENSITY, DRIVER_AGE, VEHICLE_AGE};
    let rule = |column: &str, min: Option<f64>, max: Option<f64>| ConstraintRule {
        column: column.to_string(),
        min,
        max,
    };
    vec![
        rule(DRIVER_AGE, Some(18.0), None),
        rule(VEHICLE_AGE, Some(0.0), None),
        rule(BONUS_MALUS, Some(50.0), Some(230.0)),
        rule(DENSITY, Some(1.0), None),
    ]
}

/// Counts cells breaking each rule. Nothing is corrected.
pub fn constraint_report(
    ds: &Dataset,
    rules: &[ConstraintRule],
) -> Result<Vec<ConstraintViolation>, MiceError> {
    rules
        .iter()
        .map(|r| {
            let v = ds.numeric(&r.column)?;
            let bad = v
                .iter()
                .filter(|&&x| r.min.is_some_and(|m| x < m) || r.max.is_some_and(|m| x > m))
                .count();
            Ok(ConstraintViolation {
                column: r.column.clone(),
                violations: bad,
                fraction: if v.is_empty() { 0.0 } else { bad as f64 / v.len() as f64 },
            })
        })
        .collect()
}
