//! Term descriptors shared by the true claim-frequency formulas and GLM
//! design specifications.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tabular::{Column, DataError, Dataset};

/// A single covariate transformed into a real-valued factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Factor {
    /// `scale · (x − center)`
    Numeric {
        column: String,
        #[serde(default)]
        center: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `1{x ∈ levels}`
    Indicator { column: String, levels: Vec<String> },
}

fn one() -> f64 {
    1.0
}

impl Factor {
    pub fn numeric(column: &str) -> Self {
        Factor::Numeric {
            column: column.to_string(),
            center: 0.0,
            scale: 1.0,
        }
    }

    pub fn centered(column: &str, center: f64) -> Self {
        Factor::Numeric {
            column: column.to_string(),
            center,
            scale: 1.0,
        }
    }

    pub fn indicator<S: AsRef<str>>(column: &str, levels: &[S]) -> Self {
        Factor::Indicator {
            column: column.to_string(),
            levels: levels.iter().map(|l| l.as_ref().to_string()).collect(),
        }
    }

    pub fn column(&self) -> &str {
        match self {
            Factor::Numeric { column, .. } | Factor::Indicator { column, .. } => column,
        }
    }

    pub fn compile<'a>(&self, ds: &'a Dataset) -> Result<CompiledFactor<'a>, DataError> {
        match self {
            Factor::Numeric {
                column,
                center,
                scale,
            } => Ok(CompiledFactor::Numeric {
                values: ds.numeric(column)?,
                center: *center,
                scale: *scale,
            }),
            Factor::Indicator { column, levels } => {
                let j = ds.schema().require(column)?;
                let spec = ds.schema().column(j);
                let mut mask = vec![false; spec.levels.len()];
                for l in levels {
                    let k = spec.level_index(l).ok_or_else(|| DataError::UnknownLevel {
                        column: column.clone(),
                        level: l.clone(),
                    })?;
                    mask[k as usize] = true;
                }
                match ds.column(j) {
                    Column::Categorical(codes) => Ok(CompiledFactor::Indicator { codes, mask }),
                    Column::Numeric(_) => Err(DataError::Kind {
                        column: column.clone(),
                        expected: "categorical",
                        found: "numeric",
                    }),
                }
            }
        }
    }
}

fn trim_number(x: f64) -> String {
    let s = format!("{x}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Numeric {
                column,
                center,
                scale,
            } => {
                let inner = if *center == 0.0 {
                    column.clone()
                } else if *center > 0.0 {
                    format!("({column}-{})", trim_number(*center))
                } else {
                    format!("({column}+{})", trim_number(-*center))
                };
                if *scale == 1.0 {
                    write!(f, "{inner}")
                } else {
                    write!(f, "{}*{inner}", trim_number(*scale))
                }
            }
            Factor::Indicator { column, levels } => write!(f, "{column}[{}]", levels.join(",")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "term", rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Main { factor: Factor },
    Product { left: Factor, right: Factor },
}

impl Term {
    pub fn main(factor: Factor) -> Self {
        Term::Main { factor }
    }

    pub fn product(left: Factor, right: Factor) -> Self {
        Term::Product { left, right }
    }

    /// Covariates the term reads.
    pub fn columns(&self) -> Vec<&str> {
        match self {
            Term::Intercept => Vec::new(),
            Term::Main { factor } => vec![factor.column()],
            Term::Product { left, right } => {
                let mut c = vec![left.column(), right.column()];
                c.dedup();
                c
            }
        }
    }

    pub fn is_interaction(&self) -> bool {
        matches!(self, Term::Product { .. })
    }

    pub fn compile<'a>(&self, ds: &'a Dataset) -> Result<CompiledTerm<'a>, DataError> {
        Ok(match self {
            Term::Intercept => CompiledTerm::Intercept,
            Term::Main { factor } => CompiledTerm::Main(factor.compile(ds)?),
            Term::Product { left, right } => {
                CompiledTerm::Product(left.compile(ds)?, right.compile(ds)?)
            }
        })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "(Intercept)"),
            Term::Main { factor } => write!(f, "{factor}"),
            Term::Product { left, right } => write!(f, "{left}:{right}"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum CompiledFactor<'a> {
    Numeric {
        values: &'a [f64],
        center: f64,
        scale: f64,
    },
    Indicator {
        codes: &'a [u32],
        mask: Vec<bool>,
    },
}

impl CompiledFactor<'_> {
    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        match self {
            CompiledFactor::Numeric {
                values,
                center,
                scale,
            } => scale * (values[i] - center),
            CompiledFactor::Indicator { codes, mask } => {
                if mask[codes[i] as usize] {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum CompiledTerm<'a> {
    Intercept,
    Main(CompiledFactor<'a>),
    Product(CompiledFactor<'a>, CompiledFactor<'a>),
}

impl CompiledTerm<'_> {
    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        match self {
            CompiledTerm::Intercept => 1.0,
            CompiledTerm::Main(f) => f.value(i),
            CompiledTerm::Product(a, b) => {
                let x = a.value(i);
                if x == 0.0 {
                    0.0
                } else {
                    x * b.value(i)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_names() {
        assert_eq!(Factor::centered("VEHICLE_AGE", 5.0).to_string(), "(VEHICLE_AGE-5)");
        assert_eq!(Factor::numeric("BONUS_MALUS").to_string(), "BONUS_MALUS");
        assert_eq!(Factor::indicator("AREA", &["A", "C"]).to_string(), "AREA[A,C]");
        let t = Term::product(Factor::numeric("BONUS_MALUS"), Factor::indicator("AREA", &["A"]));
        assert_eq!(t.to_string(), "BONUS_MALUS:AREA[A]");
        assert_eq!(t.columns(), vec!["BONUS_MALUS", "AREA"]);
    }

    #[test]
    fn serde_shape_is_readable() {
        let t = Term::main(Factor::indicator("AREA", &["B", "F"]));
        let js = serde_json::to_string(&t).unwrap();
        assert_eq!(
            js,
            r#"{"term":"main","factor":{"type":"indicator","column":"AREA","levels":["B","F"]}}"#
        );
        let back: Term = serde_json::from_str(&js).unwrap();
        assert_eq!(back, t);
    }
}
