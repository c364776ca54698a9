//! Known claim-frequency formulas and Poisson claim-count simulation.
//!
//! The two built-in scenarios are the linear predictor over the seven rating
//! covariates and the same predictor with ten interaction terms added.
//! DENSITY and REGION never enter either formula, which lets variable
//! selection be checked against the truth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};

use crate::portfolio::{AREA, BONUS_MALUS, DRIVER_AGE, VEHICLE_AGE, VEHICLE_BRAND, VEHICLE_GAS, VEHICLE_POWER};
use crate::rng::{rng_from_seed, Rng};
use crate::tabular::{Column, DataError, Dataset};
use crate::terms::{CompiledTerm, Factor, Term};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Linear,
    Interaction,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Linear => "linear",
            ScenarioKind::Interaction => "interaction",
        }
    }
}

/// How two ambiguous level sets of the interaction formula are read.
///
/// The formula lists the area set as `{A,c,E,F}` and one power set as
/// `(4,5}`. By default these are read as `{A,C,E,F}` and `{4,5}`. Turning a
/// flag off takes the text literally: the lowercase `c` matches no level,
/// and the half-open `(4,5}` keeps only power 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulaReading {
    #[serde(default = "yes")]
    pub area_c_is_upper: bool,
    #[serde(default = "yes")]
    pub power_set_includes_4: bool,
}

fn yes() -> bool {
    true
}

impl Default for FormulaReading {
    fn default() -> Self {
        FormulaReading {
            area_c_is_upper: true,
            power_set_includes_4: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTerm {
    #[serde(flatten)]
    pub term: Term,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    kind: ScenarioKind,
    terms: Vec<ScenarioTerm>,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, terms: Vec<ScenarioTerm>) -> Result<Self, ScenarioError> {
        let intercepts = terms.iter().filter(|t| t.term == Term::Intercept).count();
        if intercepts != 1 {
            return Err(ScenarioError::Invalid(format!(
                "expected exactly one intercept, found {intercepts}"
            )));
        }
        if let Some(t) = terms.iter().find(|t| !t.coefficient.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "coefficient of `{}` is not finite",
                t.term
            )));
        }
        Ok(Scenario { kind, terms })
    }

    pub fn kind(&self) -> ScenarioKind {
        self.kind
    }

    pub fn terms(&self) -> &[ScenarioTerm] {
        &self.terms
    }

    /// Every coefficient multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Scenario, ScenarioError> {
        let terms = self
            .terms
            .iter()
            .map(|t| ScenarioTerm {
                term: t.term.clone(),
                coefficient: t.coefficient * c,
            })
            .collect();
        Scenario::new(self.kind, terms)
    }

    /// The scenario without the term at `index`.
    pub fn without_term(&self, index: usize) -> Result<Scenario, ScenarioError> {
        let mut terms = self.terms.clone();
        if index >= terms.len() {
            return Err(ScenarioError::Invalid(format!("no term at index {index}")));
        }
        terms.remove(index);
        Scenario::new(self.kind, terms)
    }

    /// Covariates referenced by any term, in first-use order.
    pub fn columns(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.terms {
            for c in t.term.columns() {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        out
    }

    pub fn compile<'a>(&self, ds: &'a Dataset) -> Result<CompiledScenario<'a>, ScenarioError> {
        let terms = self
            .terms
            .iter()
            .map(|t| Ok((t.term.compile(ds)?, t.coefficient)))
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(CompiledScenario { terms })
    }
}

pub struct CompiledScenario<'a> {
    terms: Vec<(CompiledTerm<'a>, f64)>,
}

impl CompiledScenario<'_> {
    #[inline]
    pub fn predictor(&self, i: usize) -> f64 {
        self.terms.iter().map(|(t, b)| b * t.value(i)).sum()
    }
}

fn st(term: Term, coefficient: f64) -> ScenarioTerm {
    ScenarioTerm { term, coefficient }
}

fn ind(column: &str, levels: &[&str]) -> Factor {
    Factor::indicator(column, levels)
}

fn linear_terms() -> Vec<ScenarioTerm> {
    vec![
        st(Term::Intercept, -3.0),
        st(Term::main(Factor::centered(VEHICLE_AGE, 5.0)), 0.0075),
        st(Term::main(Factor::centered(DRIVER_AGE, 35.0)), 0.0075),
        st(Term::main(Factor::centered(BONUS_MALUS, 100.0)), 0.0075),
        st(Term::main(ind(AREA, &["A", "C", "E"])), 0.15),
        st(Term::main(ind(AREA, &["B", "F"])), -0.5),
        st(Term::main(ind(VEHICLE_POWER, &["4", "5", "6"])), -0.5),
        st(Term::main(ind(VEHICLE_POWER, &["7", "8", "9"])), -0.4),
        st(Term::main(ind(VEHICLE_POWER, &["12", "13", "14"])), 0.15),
        st(Term::main(ind(VEHICLE_POWER, &["15"])), 0.3),
        st(Term::main(ind(VEHICLE_BRAND, &["B3", "B4", "B5"])), -0.5),
        st(Term::main(ind(VEHICLE_BRAND, &["B10", "B11"])), 0.2),
        st(Term::main(ind(VEHICLE_BRAND, &["B13", "B14"])), 0.6),
        st(Term::main(ind(VEHICLE_GAS, &["Diesel"])), 0.45),
    ]
}

fn interaction_terms(reading: FormulaReading) -> Vec<ScenarioTerm> {
    let high_power = ["10", "11", "12", "13", "14", "15"];
    let low_power: &[&str] = if reading.power_set_includes_4 {
        &["4", "5"]
    } else {
        &["5"]
    };
    let area_acef: &[&str] = if reading.area_c_is_upper {
        &["A", "C", "E", "F"]
    } else {
        &["A", "E", "F"]
    };
    let bm = || Factor::numeric(BONUS_MALUS);
    let va = || Factor::numeric(VEHICLE_AGE);
    vec![
        st(Term::product(bm(), ind(AREA, &["A", "B", "C"])), 0.0015),
        st(Term::product(bm(), ind(AREA, &["D", "E"])), -0.003),
        st(Term::product(va(), ind(VEHICLE_POWER, &high_power)), 0.015),
        st(Term::product(va(), ind(VEHICLE_POWER, low_power)), -0.015),
        st(
            Term::product(ind(VEHICLE_GAS, &["Diesel"]), ind(VEHICLE_POWER, &["4", "5", "6", "7"])),
            0.15,
        ),
        st(
            Term::product(ind(VEHICLE_GAS, &["Regular"]), ind(VEHICLE_POWER, &high_power)),
            -0.25,
        ),
        st(
            Term::product(ind(AREA, &["A", "B", "D"]), ind(VEHICLE_BRAND, &["B1", "B4", "B10"])),
            0.4,
        ),
        st(
            Term::product(
                ind(AREA, &["C", "D", "E"]),
                ind(VEHICLE_BRAND, &["B2", "B6", "B11", "B12"]),
            ),
            0.2,
        ),
        st(
            Term::product(ind(AREA, area_acef), ind(VEHICLE_BRAND, &["B3", "B5", "B13", "B14"])),
            -0.6,
        ),
        st(
            Term::product(ind(AREA, &["F"]), ind(VEHICLE_BRAND, &["B1", "B2", "B12"])),
            -0.3,
        ),
    ]
}

pub fn builtin_scenario(kind: ScenarioKind) -> Scenario {
    builtin_scenario_with(kind, FormulaReading::default())
}

pub fn builtin_scenario_with(kind: ScenarioKind, reading: FormulaReading) -> Scenario {
    let mut terms = linear_terms();
    if kind == ScenarioKind::Interaction {
        terms.extend(interaction_terms(reading));
    }
    Scenario::new(kind, terms).expect("built-in scenario is valid")
}

/// `f(x)` for row `row` of `ds`.
pub fn eval_predictor(scenario: &Scenario, ds: &Dataset, row: usize) -> Result<f64, ScenarioError> {
    if row >= ds.n_rows() {
        return Err(DataError::InvalidArgument(format!(
            "row {row} out of range for {} rows",
            ds.n_rows()
        ))
        .into());
    }
    Ok(scenario.compile(ds)?.predictor(row))
}

/// `f(x_i)` for every row.
pub fn linear_predictor(scenario: &Scenario, ds: &Dataset) -> Result<Vec<f64>, ScenarioError> {
    let c = scenario.compile(ds)?;
    Ok((0..ds.n_rows()).map(|i| c.predictor(i)).collect())
}

/// One Poisson draw. Sequential inversion below rate 10, the `rand_distr`
/// sampler above.
pub fn poisson_draw(rate: f64, rng: &mut Rng) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    if rate < 10.0 {
        let u: f64 = rng.random();
        let mut p = (-rate).exp();
        let mut cdf = p;
        let mut k = 0u64;
        while u > cdf {
            k += 1;
            p *= rate / k as f64;
            cdf += p;
            // Rounding can leave cdf a hair below 1.
            if p < f64::EPSILON * cdf && k as f64 > rate {
                break;
            }
        }
        k
    } else {
        let d = Poisson::new(rate).expect("finite positive rate");
        let x: f64 = d.sample(rng);
        x as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedResponse {
    pub counts: Vec<u64>,
    pub mean_frequency: f64,
}

/// Claim counts `Y_i ~ Poisson(exp(f(x_i)))` with exposure taken as 1.
pub fn simulate_counts(
    ds: &Dataset,
    scenario: &Scenario,
    seed: u64,
) -> Result<SimulatedResponse, ScenarioError> {
    let c = scenario.compile(ds)?;
    let mut rng = rng_from_seed(seed);
    let counts: Vec<u64> = (0..ds.n_rows())
        .map(|i| poisson_draw(c.predictor(i).exp(), &mut rng))
        .collect();
    let total: u64 = counts.iter().sum();
    let mean_frequency = if counts.is_empty() {
        0.0
    } else {
        total as f64 / counts.len() as f64
    };
    Ok(SimulatedResponse {
        counts,
        mean_frequency,
    })
}

/// `ds` with the response replaced by simulated counts and exposure set to 1.
pub fn simulate_dataset(
    ds: &Dataset,
    scenario: &Scenario,
    seed: u64,
) -> Result<(Dataset, SimulatedResponse), ScenarioError> {
    let sim = simulate_counts(ds, scenario, seed)?;
    let schema = ds.schema();
    let mut out = ds.with_column(
        &schema.column(schema.response()).name,
        Column::Numeric(sim.counts.iter().map(|&c| c as f64).collect()),
    )?;
    if let Some(e) = schema.exposure() {
        out = out.with_column(&schema.column(e).name, Column::Numeric(vec![1.0; ds.n_rows()]))?;
    }
    Ok((out, sim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::portfolio::{fremtpl2freq_schema, surrogate_portfolio};
    use crate::tabular::Schema;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn row(area: &str, power: &str, brand: &str, gas: &str, va: f64, da: f64, bm: f64) -> Dataset {
        let schema: Arc<Schema> = Arc::new(fremtpl2freq_schema());
        let code = |name: &str, l: &str| {
            let j = schema.require(name).unwrap();
            schema.column(j).level_index(l).unwrap()
        };
        Dataset::new(
            schema.clone(),
            vec![
                Column::Numeric(vec![0.0]),
                Column::Numeric(vec![1.0]),
                Column::Categorical(vec![code(AREA, area)]),
                Column::Categorical(vec![code(VEHICLE_POWER, power)]),
                Column::Numeric(vec![va]),
                Column::Numeric(vec![da]),
                Column::Numeric(vec![bm]),
                Column::Categorical(vec![code(VEHICLE_BRAND, brand)]),
                Column::Categorical(vec![code(VEHICLE_GAS, gas)]),
                Column::Numeric(vec![100.0]),
                Column::Categorical(vec![code(crate::portfolio::REGION, "R11")]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn linear_has_fourteen_terms_without_density_or_region() {
        let s = builtin_scenario(ScenarioKind::Linear);
        assert_eq!(s.terms().len(), 14);
        let cols = s.columns();
        assert!(!cols.contains(&crate::portfolio::DENSITY));
        assert!(!cols.contains(&crate::portfolio::REGION));
        let i = builtin_scenario(ScenarioKind::Interaction);
        assert_eq!(i.terms().len(), 24);
        assert_eq!(i.terms()[14].coefficient, 0.0015);
        assert_eq!(i.terms()[14].term.to_string(), "BONUS_MALUS:AREA[A,B,C]");
    }

    #[test]
    fn baseline_rows() {
        let lin = builtin_scenario(ScenarioKind::Linear);
        let base = row("D", "10", "B1", "Regular", 5.0, 35.0, 100.0);
        assert_relative_eq!(eval_predictor(&lin, &base, 0).unwrap(), -3.0, epsilon = 1e-12);
        let diesel = row("D", "10", "B1", "Diesel", 5.0, 35.0, 100.0);
        assert_relative_eq!(eval_predictor(&lin, &diesel, 0).unwrap(), -2.55, epsilon = 1e-12);
    }

    #[test]
    fn interaction_baseline_counts_area_brand_term() {
        // Term-by-term: -3 (linear part) - 0.003*100 (AREA D) + 0.015*5
        // (power 10) - 0.25 (Regular, power 10) + 0.4 (AREA D, brand B1).
        let int = builtin_scenario(ScenarioKind::Interaction);
        let base = row("D", "10", "B1", "Regular", 5.0, 35.0, 100.0);
        let oracle = -3.0 - 0.003 * 100.0 + 0.015 * 5.0 - 0.25 + 0.4;
        assert_relative_eq!(eval_predictor(&int, &base, 0).unwrap(), oracle, epsilon = 1e-12);
        assert_relative_eq!(oracle, -3.075, epsilon = 1e-12);
    }

    #[test]
    fn literal_reading_changes_only_ambiguous_sets() {
        let lit = FormulaReading {
            area_c_is_upper: false,
            power_set_includes_4: false,
        };
        let a = builtin_scenario(ScenarioKind::Interaction);
        let b = builtin_scenario_with(ScenarioKind::Interaction, lit);
        let r = row("C", "4", "B3", "Regular", 8.0, 40.0, 90.0);
        let fa = eval_predictor(&a, &r, 0).unwrap();
        let fb = eval_predictor(&b, &r, 0).unwrap();
        assert_relative_eq!(fb - fa, 0.6 + 0.015 * 8.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_column_is_error() {
        let schema = Arc::new(
            Schema::new(vec![crate::tabular::ColumnSpec::numeric("y")
                .with_role(crate::tabular::ColumnRole::Response)])
            .unwrap(),
        );
        let ds = Dataset::new(schema, vec![Column::Numeric(vec![0.0])]).unwrap();
        let s = builtin_scenario(ScenarioKind::Linear);
        assert!(linear_predictor(&s, &ds).is_err());
    }

    #[test]
    fn scenario_validation() {
        assert!(Scenario::new(ScenarioKind::Linear, vec![]).is_err());
        let two = vec![st(Term::Intercept, 1.0), st(Term::Intercept, 2.0)];
        assert!(Scenario::new(ScenarioKind::Linear, two).is_err());
        let nan = vec![st(Term::Intercept, f64::NAN)];
        assert!(Scenario::new(ScenarioKind::Linear, nan).is_err());
    }

    #[test]
    fn tiny_rate_gives_zero() {
        let mut rng = rng_from_seed(0);
        let rate = (-20.0f64).exp();
        assert!((0..10_000).all(|_| poisson_draw(rate, &mut rng) == 0));
    }

    #[test]
    fn poisson_draw_moments() {
        for rate in [0.05, 2.5, 30.0] {
            let mut rng = rng_from_seed(11);
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| poisson_draw(rate, &mut rng) as f64).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let se = (rate / n as f64).sqrt();
            assert!((mean - rate).abs() < 4.0 * se, "rate {rate}: mean {mean}");
            assert!((var / rate - 1.0).abs() < 0.05, "rate {rate}: var {var}");
        }
    }

    #[test]
    fn monte_carlo_mean_matches_analytic() {
        let ds = surrogate_portfolio(50_000, 3);
        for kind in [ScenarioKind::Linear, ScenarioKind::Interaction] {
            let s = builtin_scenario(kind);
            let rates: Vec<f64> = linear_predictor(&s, &ds).unwrap().iter().map(|f| f.exp()).collect();
            let total_rate: f64 = rates.iter().sum();
            let sim = simulate_counts(&ds, &s, 9).unwrap();
            let total: u64 = sim.counts.iter().sum();
            assert!((total as f64 - total_rate).abs() < 4.0 * total_rate.sqrt());
            assert_relative_eq!(
                sim.mean_frequency,
                total as f64 / ds.n_rows() as f64,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn simulate_dataset_sets_exposure_and_response() {
        let ds = surrogate_portfolio(500, 1);
        let s = builtin_scenario(ScenarioKind::Linear);
        let (out, sim) = simulate_dataset(&ds, &s, 4).unwrap();
        assert!(out.exposure().unwrap().iter().all(|&e| e == 1.0));
        let y: Vec<u64> = out.response().iter().map(|&y| y as u64).collect();
        assert_eq!(y, sim.counts);
        let (again, _) = simulate_dataset(&ds, &s, 4).unwrap();
        assert_eq!(out, again);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn predictor_is_linear_in_coefficients(seed in 0u64..1000, c in -3.0f64..3.0) {
            let ds = surrogate_portfolio(40, seed);
            let s = builtin_scenario(ScenarioKind::Interaction);
            let f = linear_predictor(&s, &ds).unwrap();
            let g = linear_predictor(&s.scaled(c).unwrap(), &ds).unwrap();
            for (a, b) in f.iter().zip(&g) {
                prop_assert!((c * a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn dropping_group_term_only_moves_group_rows(seed in 0u64..1000, idx in 4usize..14) {
            let ds = surrogate_portfolio(60, seed);
            let s = builtin_scenario(ScenarioKind::Linear);
            let (column, levels) = match &s.terms()[idx].term {
                Term::Main { factor: Factor::Indicator { column, levels } } => (column.clone(), levels.clone()),
                other => panic!("unexpected term {other}"),
            };
            let f = linear_predictor(&s, &ds).unwrap();
            let g = linear_predictor(&s.without_term(idx).unwrap(), &ds).unwrap();
            let view = ds.categorical(&column).unwrap();
            for i in 0..ds.n_rows() {
                let in_group = levels.iter().any(|l| l == &view.levels[view.codes[i] as usize]);
                prop_assert_eq!(in_group, (f[i] - g[i]).abs() > 1e-15);
            }
        }
    }
}
