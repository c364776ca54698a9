//! Dataset-fidelity ratios and the coefficient-consistency metrics M1 and M2.
//!
//! Every variable except the exposure is discretized with a [`BinMap`] fitted
//! on the training data, then bin shares are compared between training and
//! synthetic data for single variables and for variable pairs. Pearson
//! correlations are compared on the raw numeric columns.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glm::FittedGlm;
use crate::tabular::{BinMap, Column, DataError, Dataset};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no replicate coefficient vectors supplied")]
    NoRuns,
    #[error("need at least one non-intercept coefficient")]
    TooFewCoefficients,
    #[error("reference MSE of coefficient {index} is {value}, must be positive and finite")]
    NonPositiveMse { index: usize, value: f64 },
    #[error("variable index {0} out of range")]
    UnknownVariable(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// How MAPE treats terms whose synthetic denominator is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroDenominator {
    /// Drop the term from the mean and count it.
    #[default]
    Exclude,
    /// Keep the term; `|r|/0` is infinite, `0/0` counts as 0.
    Include,
}

/// Mean absolute and mean absolute percentage error over one set of terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mae: f64,
    /// MAPE with zero-denominator terms excluded.
    pub mape: f64,
    /// MAPE with zero-denominator terms kept.
    pub mape_all: f64,
    pub n_terms: usize,
    pub n_zero_denominators: usize,
}

impl ErrorSummary {
    /// `reference` plays the role of r (training), `synthetic` of r̂.
    pub fn from_terms(reference: &[f64], synthetic: &[f64]) -> ErrorSummary {
        debug_assert_eq!(reference.len(), synthetic.len());
        let n = reference.len();
        let mut abs = 0.0;
        let mut rel = 0.0;
        let mut rel_all = 0.0;
        let mut zeros = 0;
        for (&r, &s) in reference.iter().zip(synthetic) {
            let d = (r - s).abs();
            abs += d;
            if s == 0.0 {
                zeros += 1;
                if d > 0.0 {
                    rel_all = f64::INFINITY;
                }
            } else {
                rel += d / s.abs();
                rel_all += d / s.abs();
            }
        }
        let kept = n - zeros;
        ErrorSummary {
            mae: if n == 0 { 0.0 } else { abs / n as f64 },
            mape: if kept == 0 { 0.0 } else { rel / kept as f64 },
            mape_all: if n == 0 { 0.0 } else { rel_all / n as f64 },
            n_terms: n,
            n_zero_denominators: zeros,
        }
    }

    pub fn mape_for(&self, policy: ZeroDenominator) -> f64 {
        match policy {
            ZeroDenominator::Exclude => self.mape,
            ZeroDenominator::Include => self.mape_all,
        }
    }

    /// Unweighted mean over variables; term counts are summed.
    pub fn average(items: &[ErrorSummary]) -> ErrorSummary {
        if items.is_empty() {
            return ErrorSummary::default();
        }
        let k = items.len() as f64;
        ErrorSummary {
            mae: items.iter().map(|e| e.mae).sum::<f64>() / k,
            mape: items.iter().map(|e| e.mape).sum::<f64>() / k,
            mape_all: items.iter().map(|e| e.mape_all).sum::<f64>() / k,
            n_terms: items.iter().map(|e| e.n_terms).sum(),
            n_zero_denominators: items.iter().map(|e| e.n_zero_denominators).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableRatios {
    pub name: String,
    pub categorical: bool,
    pub train: Vec<f64>,
    pub synthetic: Vec<f64>,
}

/// Joint bin shares of variables `a < b`, row-major over `ℐ_a × ℐ_b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRatios {
    pub a: usize,
    pub b: usize,
    pub train: Vec<f64>,
    pub synthetic: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioTable {
    pub variables: Vec<VariableRatios>,
    pub pairs: Vec<PairRatios>,
}

fn shares(codes: &[u32], n_features: usize) -> Vec<f64> {
    let mut counts = vec![0u64; n_features];
    for &c in codes {
        counts[c as usize] += 1;
    }
    let n = codes.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

fn joint_shares(a: &[u32], b: &[u32], na: usize, nb: usize) -> Vec<f64> {
    let mut counts = vec![0u64; na * nb];
    for (&x, &y) in a.iter().zip(b) {
        counts[x as usize * nb + y as usize] += 1;
    }
    let n = a.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

impl RatioTable {
    /// Shares of every feature and feature pair, with bins from `map`.
    pub fn compute(map: &BinMap, train: &Dataset, synthetic: &Dataset) -> Result<RatioTable, MetricError> {
        if train.n_rows() == 0 || synthetic.n_rows() == 0 {
            return Err(DataError::Empty.into());
        }
        let tr = map.assign(train)?;
        let sy = map.assign(synthetic)?;
        let sizes: Vec<usize> = map.variables.iter().map(|v| v.n_features()).collect();
        let variables = map
            .variables
            .iter()
            .enumerate()
            .map(|(v, var)| VariableRatios {
                name: var.name.clone(),
                categorical: var.is_categorical(),
                train: shares(&tr[v], sizes[v]),
                synthetic: shares(&sy[v], sizes[v]),
            })
            .collect();
        let mut pairs = Vec::new();
        for a in 0..sizes.len() {
            for b in a + 1..sizes.len() {
                pairs.push(PairRatios {
                    a,
                    b,
                    train: joint_shares(&tr[a], &tr[b], sizes[a], sizes[b]),
                    synthetic: joint_shares(&sy[a], &sy[b], sizes[a], sizes[b]),
                });
            }
        }
        Ok(RatioTable { variables, pairs })
    }

    /// Fits the bin map on `train` with `n_bins` quantile bins per numeric variable.
    pub fn from_data(train: &Dataset, synthetic: &Dataset, n_bins: usize) -> Result<RatioTable, MetricError> {
        let map = BinMap::fit(train, n_bins)?;
        Self::compute(&map, train, synthetic)
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn marginal_mae_mape(&self, j: usize) -> Result<ErrorSummary, MetricError> {
        let v = self.variables.get(j).ok_or(MetricError::UnknownVariable(j))?;
        Ok(ErrorSummary::from_terms(&v.train, &v.synthetic))
    }

    pub fn pairwise_mae_mape(&self, a: usize, b: usize) -> Result<ErrorSummary, MetricError> {
        if a == b {
            return Err(MetricError::InvalidArgument("pairwise metric needs two distinct variables".into()));
        }
        let (a, b) = (a.min(b), a.max(b));
        let p = self
            .pairs
            .iter()
            .find(|p| p.a == a && p.b == b)
            .ok_or(MetricError::UnknownVariable(b))?;
        Ok(ErrorSummary::from_terms(&p.train, &p.synthetic))
    }
}

/// Pearson correlation; `None` when either column has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.is_empty() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationPair {
    pub a: usize,
    pub b: usize,
    pub train: f64,
    pub synthetic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub summary: ErrorSummary,
    pub pairs: Vec<CorrelationPair>,
    /// Columns with zero variance on either side; their pairs are left out.
    pub excluded: Vec<usize>,
}

/// Correlation MAE/MAPE over unordered pairs of numeric columns.
pub fn correlation_mae_mape(train: &[&[f64]], synthetic: &[&[f64]]) -> Result<CorrelationReport, MetricError> {
    if train.len() != synthetic.len() {
        return Err(MetricError::Dimension(format!(
            "{} training vs {} synthetic numeric columns",
            train.len(),
            synthetic.len()
        )));
    }
    if train.len() < 2 {
        return Err(MetricError::InvalidArgument("need at least two numeric columns".into()));
    }
    let constant = |c: &[f64]| c.iter().all(|&v| v == c[0]);
    let excluded: Vec<usize> = (0..train.len())
        .filter(|&j| train[j].is_empty() || synthetic[j].is_empty() || constant(train[j]) || constant(synthetic[j]))
        .collect();
    let mut pairs = Vec::new();
    for a in 0..train.len() {
        for b in a + 1..train.len() {
            if excluded.contains(&a) || excluded.contains(&b) {
                continue;
            }
            if let (Some(r), Some(s)) = (pearson(train[a], train[b]), pearson(synthetic[a], synthetic[b])) {
                pairs.push(CorrelationPair {
                    a,
                    b,
                    train: r,
                    synthetic: s,
                });
            }
        }
    }
    let r: Vec<f64> = pairs.iter().map(|p| p.train).collect();
    let s: Vec<f64> = pairs.iter().map(|p| p.synthetic).collect();
    Ok(CorrelationReport {
        summary: ErrorSummary::from_terms(&r, &s),
        pairs,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseConvention {
    /// `(β*_j − β̂_j)²` from the training fit.
    #[default]
    SquaredError,
    /// Diagonal of the training fit's covariance.
    SquaredSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub n_bins: usize,
    pub mse_convention: MseConvention,
    pub zero_denominator: ZeroDenominator,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            n_bins: 10,
            mse_convention: MseConvention::SquaredError,
            zero_denominator: ZeroDenominator::Exclude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableError {
    pub name: String,
    pub categorical: bool,
    pub errors: ErrorSummary,
}

/// The four dataset-level fidelity metrics of one synthetic table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetMetrics {
    pub categorical: ErrorSummary,
    pub numeric: ErrorSummary,
    pub pairwise: ErrorSummary,
    pub correlation: ErrorSummary,
    pub per_variable: Vec<VariableError>,
    pub correlation_excluded: Vec<String>,
}

/// Scores `synthetic` against `train` over every column but the exposure.
/// The response counts as a numeric variable.
pub fn dataset_metrics(train: &Dataset, synthetic: &Dataset, opts: &MetricOptions) -> Result<DatasetMetrics, MetricError> {
    if train.schema().columns() != synthetic.schema().columns() {
        return Err(DataError::SchemaMismatch("synthetic schema differs from training schema".into()).into());
    }
    let table = RatioTable::from_data(train, synthetic, opts.n_bins)?;
    let mut per_variable = Vec::with_capacity(table.variables.len());
    for (j, v) in table.variables.iter().enumerate() {
        per_variable.push(VariableError {
            name: v.name.clone(),
            categorical: v.categorical,
            errors: table.marginal_mae_mape(j)?,
        });
    }
    let group = |cat: bool| -> Vec<ErrorSummary> {
        per_variable.iter().filter(|v| v.categorical == cat).map(|v| v.errors).collect()
    };
    let pair_errors: Vec<ErrorSummary> = table
        .pairs
        .iter()
        .map(|p| ErrorSummary::from_terms(&p.train, &p.synthetic))
        .collect();

    let numeric_cols: Vec<usize> = train
        .schema()
        .modelled_columns()
        .into_iter()
        .filter(|&j| matches!(train.column(j), Column::Numeric(_)))
        .collect();
    fn as_slices<'a>(ds: &'a Dataset, cols: &[usize]) -> Vec<&'a [f64]> {
        cols.iter()
            .map(|&j| match ds.column(j) {
                Column::Numeric(v) => v.as_slice(),
                Column::Categorical(_) => unreachable!("filtered to numeric columns"),
            })
            .collect()
    }
    let (correlation, correlation_excluded) = if numeric_cols.len() >= 2 {
        let rep = correlation_mae_mape(&as_slices(train, &numeric_cols), &as_slices(synthetic, &numeric_cols))?;
        let names = rep
            .excluded
            .iter()
            .map(|&k| train.schema().column(numeric_cols[k]).name.clone())
            .collect();
        (rep.summary, names)
    } else {
        (ErrorSummary::default(), Vec::new())
    };

    Ok(DatasetMetrics {
        categorical: ErrorSummary::average(&group(true)),
        numeric: ErrorSummary::average(&group(false)),
        pairwise: ErrorSummary::average(&pair_errors),
        correlation,
        per_variable,
        correlation_excluded,
    })
}

/// Per-coefficient reference MSE from the training fit.
pub fn mse_ref(mode: MseConvention, beta_star: &[f64], fit: &FittedGlm) -> Result<Vec<f64>, MetricError> {
    if beta_star.len() != fit.beta.len() {
        return Err(MetricError::Dimension(format!(
            "{} true coefficients vs {} fitted",
            beta_star.len(),
            fit.beta.len()
        )));
    }
    Ok(match mode {
        MseConvention::SquaredError => beta_star.iter().zip(&fit.beta).map(|(b, h)| (b - h).powi(2)).collect(),
        MseConvention::SquaredSe => (0..fit.beta.len()).map(|j| fit.variance(j)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetricInputs {
    pub beta_star: Vec<f64>,
    pub beta_hat_ref: Vec<f64>,
    pub mse_ref: Vec<f64>,
    pub beta_runs: Vec<Vec<f64>>,
}

impl ModelMetricInputs {
    fn check(&self) -> Result<usize, MetricError> {
        let p = self.beta_star.len();
        if p < 2 {
            return Err(MetricError::TooFewCoefficients);
        }
        if self.beta_runs.is_empty() {
            return Err(MetricError::NoRuns);
        }
        let aligned = self.beta_hat_ref.len() == p
            && self.mse_ref.len() == p
            && self.beta_runs.iter().all(|r| r.len() == p);
        if !aligned {
            return Err(MetricError::Dimension("coefficient vectors are not aligned".into()));
        }
        for (index, &value) in self.mse_ref.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(MetricError::NonPositiveMse { index, value });
            }
        }
        Ok(p - 1)
    }
}

/// `(1/d)(1/n_E) Σ_k Σ_{j=0..d} (β*_j − β̂run_kj)² / MSE_j`, intercept included
/// in the sum but not in the divisor.
pub fn m1(inputs: &ModelMetricInputs) -> Result<f64, MetricError> {
    let d = inputs.check()?;
    let n_e = inputs.beta_runs.len() as f64;
    let mut total = 0.0;
    for run in &inputs.beta_runs {
        for j in 0..=d {
            total += (inputs.beta_star[j] - run[j]).powi(2) / inputs.mse_ref[j];
        }
    }
    Ok(total / d as f64 / n_e)
}

/// `(1/d) Σ_{j=1..d} [MSE_j + (1/n_E) Σ_k (β̂_j − β̂run_kj)²] / MSE_j`.
pub fn m2(inputs: &ModelMetricInputs) -> Result<f64, MetricError> {
    let d = inputs.check()?;
    let n_e = inputs.beta_runs.len() as f64;
    let mut total = 0.0;
    for j in 1..=d {
        let spread: f64 = inputs
            .beta_runs
            .iter()
            .map(|run| (inputs.beta_hat_ref[j] - run[j]).powi(2))
            .sum::<f64>()
            / n_e;
        total += (inputs.mse_ref[j] + spread) / inputs.mse_ref[j];
    }
    Ok(total / d as f64)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::glm::{fit_poisson, Design, IrlsOptions, SparseMatrix};
    use crate::tabular::{ColumnRole, ColumnSpec, Schema};

    fn two_binary(a: &[u32], b: &[u32]) -> Dataset {
        let schema = Schema::new(vec![
            ColumnSpec::numeric("y").with_role(ColumnRole::Response),
            ColumnSpec::categorical("a", &["0", "1"]),
            ColumnSpec::categorical("b", &["0", "1"]),
        ])
        .unwrap();
        Dataset::new(
            Arc::new(schema),
            vec![
                Column::Numeric(vec![0.0; a.len()]),
                Column::Categorical(a.to_vec()),
                Column::Categorical(b.to_vec()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn marginal_hand_case() {
        let e = ErrorSummary::from_terms(&[0.5, 0.5], &[0.6, 0.4]);
        assert_abs_diff_eq!(e.mae, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(e.mape, (0.1 / 0.6 + 0.1 / 0.4) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.mape, 0.208333333333, epsilon = 1e-9);
        let one = ErrorSummary::from_terms(&[1.0], &[1.0]);
        assert_eq!((one.mae, one.mape), (0.0, 0.0));
    }

    #[test]
    fn marginal_from_data() {
        // a: 5/10 ones in training, 4/10 in synthetic
        let train = two_binary(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 1], &[0; 10]);
        let syn = two_binary(&[0, 0, 0, 0, 0, 0, 1, 1, 1, 1], &[0; 10]);
        let t = RatioTable::from_data(&train, &syn, 10).unwrap();
        let j = t.variable_index("a").unwrap();
        let e = t.marginal_mae_mape(j).unwrap();
        assert_abs_diff_eq!(e.mae, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(e.mape, 0.208333333333, epsilon = 1e-9);
    }

    #[test]
    fn pairwise_independent_vs_dependent() {
        let train = two_binary(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        let syn = two_binary(&[0, 0, 1, 1], &[0, 0, 1, 1]);
        let t = RatioTable::from_data(&train, &syn, 10).unwrap();
        let (a, b) = (t.variable_index("a").unwrap(), t.variable_index("b").unwrap());
        let p = t.pairs.iter().find(|p| p.a == a && p.b == b).unwrap();
        assert_eq!(p.train, vec![0.25; 4]);
        assert_eq!(p.synthetic, vec![0.5, 0.0, 0.0, 0.5]);
        // Oracle: enumerate the 2x2 cells directly.
        let cells = [(0.25, 0.5), (0.25, 0.0), (0.25, 0.0), (0.25, 0.5)];
        let oracle = cells.iter().map(|(r, s): &(f64, f64)| (r - s).abs()).sum::<f64>() / 4.0;
        let e = t.pairwise_mae_mape(a, b).unwrap();
        assert_abs_diff_eq!(e.mae, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(e.mae, 0.25, epsilon = 1e-12);
        assert_eq!(e.n_zero_denominators, 2);
        assert_abs_diff_eq!(e.mape, 0.5, epsilon = 1e-12);
        assert_eq!(e.mape_all, f64::INFINITY);
        assert_abs_diff_eq!(p.train.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.synthetic.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(t.pairwise_mae_mape(a, a).is_err());
    }

    #[test]
    fn correlation_hand_case() {
        // train: ρ = 1/(√2·√2) = 0.5
        let x = [1.0, -1.0, 0.0, 0.0];
        let y = [1.0, 0.0, -1.0, 0.0];
        // synthetic: y' mean zero, Σxy' = 1, Σy'² = 8  ->  ρ̂ = 1/√16 = 0.25
        let s13 = 13f64.sqrt();
        let y2 = [1.0, 0.0, (-1.0 + s13) / 2.0, (-1.0 - s13) / 2.0];
        assert_abs_diff_eq!(pearson(&x, &y).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pearson(&x, &y2).unwrap(), 0.25, epsilon = 1e-12);
        let rep = correlation_mae_mape(&[&x, &y], &[&x, &y2]).unwrap();
        assert_abs_diff_eq!(rep.summary.mae, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.summary.mape, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn correlation_sign_flip_and_constant_column() {
        let x = [1.0, 2.0, 4.0, 3.0, 7.0];
        let y = [2.0, 1.0, 5.0, 3.0, 6.0];
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let rho = pearson(&x, &y).unwrap();
        let rep = correlation_mae_mape(&[&x, &y], &[&x, &neg]).unwrap();
        assert_abs_diff_eq!(rep.summary.mae, 2.0 * rho.abs(), epsilon = 1e-12);

        let c = [3.0; 5];
        let rep = correlation_mae_mape(&[&x, &y, &c], &[&x, &y, &c]).unwrap();
        assert_eq!(rep.excluded, vec![2]);
        assert_eq!(rep.pairs.len(), 1);
        assert_eq!(rep.summary.mae, 0.0);
    }

    #[test]
    fn mape_uses_synthetic_denominator() {
        let fwd = ErrorSummary::from_terms(&[0.2, 0.8], &[0.4, 0.6]);
        let back = ErrorSummary::from_terms(&[0.4, 0.6], &[0.2, 0.8]);
        assert_abs_diff_eq!(fwd.mae, back.mae, epsilon = 1e-15);
        assert_abs_diff_eq!(fwd.mape, (0.2 / 0.4 + 0.2 / 0.6) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(back.mape, (0.2 / 0.2 + 0.2 / 0.8) / 2.0, epsilon = 1e-12);
        assert!(fwd.mape != back.mape);
    }

    fn inputs(star: &[f64], hat: &[f64], mse: &[f64], runs: &[&[f64]]) -> ModelMetricInputs {
        ModelMetricInputs {
            beta_star: star.to_vec(),
            beta_hat_ref: hat.to_vec(),
            mse_ref: mse.to_vec(),
            beta_runs: runs.iter().map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn m1_hand_case() {
        let i = inputs(&[0.0, 0.0, 0.0], &[0.0; 3], &[1.0; 3], &[&[1.0, -1.0, 1.0]]);
        assert_abs_diff_eq!(m1(&i).unwrap(), 1.5, epsilon = 1e-12);
        let same = inputs(&[0.3, 1.0, 2.0], &[0.0; 3], &[1.0; 3], &[&[0.3, 1.0, 2.0]]);
        assert_eq!(m1(&same).unwrap(), 0.0);
    }

    #[test]
    fn m2_hand_case() {
        let i = inputs(&[0.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[&[0.0, 0.0]]);
        assert_abs_diff_eq!(m2(&i).unwrap(), 2.0, epsilon = 1e-12);
        let same = inputs(&[0.0, 0.0], &[0.2, 1.0], &[0.7, 0.4], &[&[0.2, 1.0], &[0.2, 1.0]]);
        assert_eq!(m2(&same).unwrap(), 1.0);
    }

    #[test]
    fn input_errors() {
        let zero = inputs(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], &[&[0.0, 0.0]]);
        assert!(matches!(m1(&zero), Err(MetricError::NonPositiveMse { index: 1, .. })));
        let none = inputs(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], &[]);
        assert!(matches!(m2(&none), Err(MetricError::NoRuns)));
        let short = inputs(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], &[&[0.0]]);
        assert!(matches!(m1(&short), Err(MetricError::Dimension(_))));
    }

    fn intercept_fit(y: &[f64]) -> FittedGlm {
        let rows: Vec<Vec<f64>> = y.iter().map(|_| vec![1.0]).collect();
        let design = Design {
            x: SparseMatrix::from_dense_rows(&rows),
            y: y.to_vec(),
            offset: vec![0.0; y.len()],
            term_names: vec!["(Intercept)".into()],
        };
        fit_poisson(&design, &IrlsOptions::default()).unwrap()
    }

    #[test]
    fn mse_ref_modes() {
        let fit = intercept_fit(&[0.0, 1.0, 2.0, 3.0]);
        let se = mse_ref(MseConvention::SquaredSe, &[0.0], &fit).unwrap();
        assert_abs_diff_eq!(se[0], 1.0 / 6.0, epsilon = 1e-9);
        let sq = mse_ref(MseConvention::SquaredError, &[0.0], &fit).unwrap();
        assert_abs_diff_eq!(sq[0], 1.5f64.ln().powi(2), epsilon = 1e-9);
        assert!(mse_ref(MseConvention::SquaredSe, &[0.0, 1.0], &fit).is_err());
    }

    #[test]
    fn training_reference_m1_is_d_plus_one_over_d() {
        let star = [-3.0, 0.5, -0.2, 0.1];
        let hat = [-2.9, 0.45, -0.1, 0.12];
        let mse: Vec<f64> = star.iter().zip(&hat).map(|(a, b)| (a - b) * (a - b)).collect();
        let i = inputs(&star, &hat, &mse, &[&hat]);
        assert_abs_diff_eq!(m1(&i).unwrap(), 4.0 / 3.0, epsilon = 1e-12);
        assert_eq!(m2(&i).unwrap(), 1.0);
    }

    #[test]
    fn identical_data_scores_zero() {
        let train = crate::portfolio::surrogate_portfolio(2_000, 3);
        let m = dataset_metrics(&train, &train, &MetricOptions::default()).unwrap();
        for e in [m.categorical, m.numeric, m.pairwise, m.correlation] {
            assert_eq!((e.mae, e.mape, e.mape_all), (0.0, 0.0, 0.0));
        }
        assert!(m.per_variable.iter().all(|v| v.name != crate::portfolio::EXPOSURE));
        assert!(m.per_variable.iter().any(|v| v.name == crate::portfolio::CLAIM_NB && !v.categorical));
    }

    fn runs_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
        (2usize..6, 1usize..5).prop_flat_map(|(p, n)| {
            (
                prop::collection::vec(-2.0..2.0f64, p),
                prop::collection::vec(0.01..3.0f64, p),
                prop::collection::vec(prop::collection::vec(-2.0..2.0f64, p), n),
            )
        })
    }

    proptest! {
        #[test]
        fn ratios_sum_to_one(a in prop::collection::vec(0u32..2, 5..40), seed in 0u64..1000) {
            let b: Vec<u32> = a.iter().enumerate().map(|(i, x)| (x + (i as u64 * seed % 3) as u32) % 2).collect();
            let train = two_binary(&a, &b);
            let syn = two_binary(&b, &a);
            let t = RatioTable::from_data(&train, &syn, 10).unwrap();
            for v in &t.variables {
                prop_assert!((v.train.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!((v.synthetic.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(v.train.iter().chain(&v.synthetic).all(|r| (0.0..=1.0).contains(r)));
            }
            for p in &t.pairs {
                prop_assert!((p.train.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn mae_is_symmetric(r in prop::collection::vec(0.0..1.0f64, 1..20), s in prop::collection::vec(0.0..1.0f64, 20)) {
            let s = &s[..r.len()];
            let fwd = ErrorSummary::from_terms(&r, s);
            let back = ErrorSummary::from_terms(s, &r);
            prop_assert!((fwd.mae - back.mae).abs() < 1e-12);
        }

        #[test]
        fn m1_m2_invariances((star, mse, runs) in runs_strategy(), c in 0.1..10.0f64, shift in 0usize..5) {
            let hat = runs[0].clone();
            let base = ModelMetricInputs { beta_star: star.clone(), beta_hat_ref: hat.clone(), mse_ref: mse.clone(), beta_runs: runs.clone() };
            let m1_0 = m1(&base).unwrap();
            let m2_0 = m2(&base).unwrap();
            prop_assert!(m2_0 >= 1.0);

            let mut rotated = runs.clone();
            let k = shift % rotated.len();
            rotated.rotate_left(k);
            let rot = ModelMetricInputs { beta_runs: rotated, ..base.clone() };
            prop_assert!((m1(&rot).unwrap() - m1_0).abs() <= 1e-12 * m1_0.max(1.0));
            prop_assert!((m2(&rot).unwrap() - m2_0).abs() <= 1e-12 * m2_0);

            let scaled_runs = runs.iter().map(|r| r.iter().zip(&star).map(|(b, s)| s - c * (s - b)).collect()).collect();
            let scaled = ModelMetricInputs {
                beta_runs: scaled_runs,
                mse_ref: mse.iter().map(|m| m * c * c).collect(),
                ..base.clone()
            };
            let m1_c = m1(&scaled).unwrap();
            prop_assert!((m1_c - m1_0).abs() <= 1e-9 * m1_0.max(1.0));
        }
    }
}
