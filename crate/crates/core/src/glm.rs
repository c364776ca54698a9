//! Poisson GLM with log link and log-exposure offset.
//!
//! Designs are sparse (most columns are level indicators). Fitting is IRLS
//! in Newton form with step-halving; internally every non-intercept column
//! is rescaled to unit root-mean-square so raw covariates such as DENSITY do
//! not wreck the conditioning of `X'WX`. Coefficients and covariance are
//! reported on the original scale.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims_sim::Scenario;
use crate::tabular::{ColumnKind, DataError, Dataset};
use crate::terms::{CompiledTerm, Factor, Term};

#[derive(Debug, Error)]
pub enum GlmError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("design is rank deficient: `{term}` is collinear with earlier terms")]
    RankDeficient { term: String },
    #[error("information matrix is numerically singular at `{term}` (quasi-separation)")]
    IllConditioned { term: String },
    #[error("invalid design: {0}")]
    Design(String),
    #[error("invalid input: {0}")]
    Input(String),
}

/// Named group of design columns that enters or leaves a model as a unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    /// Indices into the spec's terms.
    pub columns: Vec<usize>,
    /// Covariates whose main effects this variable depends on (interactions).
    pub main_effects: Vec<String>,
}

/// Ordered model terms (intercept first) and their selection groups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignSpec {
    terms: Vec<Term>,
    names: Vec<String>,
    variables: Vec<Variable>,
}

impl DesignSpec {
    pub fn new(terms: Vec<Term>, variables: Vec<Variable>) -> Result<Self, GlmError> {
        if terms.first() != Some(&Term::Intercept) {
            return Err(GlmError::Design("the intercept must be the first term".into()));
        }
        if terms[1..].contains(&Term::Intercept) {
            return Err(GlmError::Design("more than one intercept".into()));
        }
        let names: Vec<String> = terms.iter().map(Term::to_string).collect();
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(GlmError::Design(format!("duplicate term `{n}`")));
            }
        }
        let mut used = vec![false; terms.len()];
        let mut vnames = BTreeSet::new();
        for v in &variables {
            if !vnames.insert(v.name.as_str()) {
                return Err(GlmError::Design(format!("duplicate variable `{}`", v.name)));
            }
            for &c in &v.columns {
                if c == 0 || c >= terms.len() || used[c] {
                    return Err(GlmError::Design(format!(
                        "variable `{}` claims term {c} that is the intercept, missing or already grouped",
                        v.name
                    )));
                }
                used[c] = true;
            }
        }
        if let Some(c) = (1..terms.len()).find(|&c| !used[c]) {
            return Err(GlmError::Design(format!("term `{}` belongs to no variable", names[c])));
        }
        Ok(DesignSpec {
            terms,
            names,
            variables,
        })
    }

    pub fn intercept_only() -> Self {
        DesignSpec::new(vec![Term::Intercept], Vec::new()).expect("valid")
    }

    /// The scenario's own parametrization. Main-effect terms are grouped by
    /// covariate and each product term is its own variable.
    pub fn true_structure(scenario: &Scenario) -> Result<Self, GlmError> {
        let mut terms = vec![Term::Intercept];
        terms.extend(
            scenario
                .terms()
                .iter()
                .filter(|t| t.term != Term::Intercept)
                .map(|t| t.term.clone()),
        );
        let variables = group_terms(&terms);
        DesignSpec::new(terms, variables)
    }

    /// Main effects of `columns` as seen in `ds`: numerics enter raw,
    /// categoricals as indicators of every present level except the most
    /// frequent one (ties to the alphabetically first).
    pub fn main_effects(ds: &Dataset, columns: &[&str]) -> Result<Self, GlmError> {
        let mut terms = vec![Term::Intercept];
        let mut variables = Vec::new();
        for &c in columns {
            let j = ds.schema().require(c)?;
            let start = terms.len();
            match ds.schema().column(j).kind {
                ColumnKind::Numeric => terms.push(Term::main(Factor::numeric(c))),
                ColumnKind::Categorical => {
                    let view = ds.categorical(c)?;
                    let reference = view.modal_level().to_string();
                    let mut present = vec![false; view.levels.len()];
                    for &code in view.codes {
                        present[code as usize] = true;
                    }
                    for (k, l) in view.levels.iter().enumerate() {
                        if present[k] && *l != reference {
                            terms.push(Term::main(Factor::indicator(c, &[l])));
                        }
                    }
                }
            }
            if terms.len() > start {
                variables.push(Variable {
                    name: c.to_string(),
                    columns: (start..terms.len()).collect(),
                    main_effects: Vec::new(),
                });
            }
        }
        DesignSpec::new(terms, variables)
    }

    /// [`DesignSpec::main_effects`] plus every product term of `scenario`,
    /// each as a single-column variable.
    pub fn with_interactions(ds: &Dataset, columns: &[&str], scenario: &Scenario) -> Result<Self, GlmError> {
        let base = DesignSpec::main_effects(ds, columns)?;
        let mut terms = base.terms;
        let mut variables = base.variables;
        for t in scenario.terms().iter().filter(|t| t.term.is_interaction()) {
            terms.push(t.term.clone());
            variables.push(Variable {
                name: t.term.to_string(),
                columns: vec![terms.len() - 1],
                main_effects: t.term.columns().iter().map(|s| s.to_string()).collect(),
            });
        }
        DesignSpec::new(terms, variables)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn term_names(&self) -> &[String] {
        &self.names
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Design columns of the intercept plus the listed variables, ascending.
    pub fn columns_of(&self, variables: &[usize]) -> Vec<usize> {
        let mut cols: Vec<usize> = std::iter::once(0)
            .chain(variables.iter().flat_map(|&v| self.variables[v].columns.iter().copied()))
            .collect();
        cols.sort_unstable();
        cols
    }

    /// The spec restricted to the listed variables.
    pub fn subset(&self, variables: &[usize]) -> DesignSpec {
        let cols = self.columns_of(variables);
        let terms = cols.iter().map(|&c| self.terms[c].clone()).collect();
        let vars = variables
            .iter()
            .map(|&v| {
                let var = &self.variables[v];
                Variable {
                    name: var.name.clone(),
                    columns: var
                        .columns
                        .iter()
                        .map(|c| cols.binary_search(c).expect("column kept"))
                        .collect(),
                    main_effects: var.main_effects.clone(),
                }
            })
            .collect();
        DesignSpec::new(terms, vars).expect("subset of a valid spec")
    }
}

fn group_terms(terms: &[Term]) -> Vec<Variable> {
    let mut variables: Vec<Variable> = Vec::new();
    for (k, t) in terms.iter().enumerate().skip(1) {
        let (name, mains) = match t {
            Term::Main { factor } => (factor.column().to_string(), Vec::new()),
            Term::Product { .. } => (
                t.to_string(),
                t.columns().iter().map(|s| s.to_string()).collect(),
            ),
            Term::Intercept => unreachable!(),
        };
        match variables.iter_mut().find(|v| v.name == name) {
            Some(v) => v.columns.push(k),
            None => variables.push(Variable {
                name,
                columns: vec![k],
                main_effects: mains,
            }),
        }
    }
    variables
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_dense_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut m = SparseMatrix {
            n_cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for r in rows {
            assert_eq!(r.len(), n_cols);
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    m.indices.push(j as u32);
                    m.values.push(v);
                }
            }
            m.indptr.push(m.indices.len());
        }
        m
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn to_dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        let (idx, val) = self.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            out[j as usize] = v;
        }
        out
    }

    /// Keeps `cols` (ascending), renumbered `0..cols.len()`.
    pub fn select_columns(&self, cols: &[usize]) -> SparseMatrix {
        let mut map = vec![u32::MAX; self.n_cols];
        for (k, &c) in cols.iter().enumerate() {
            map[c] = k as u32;
        }
        let mut out = SparseMatrix {
            n_cols: cols.len(),
            indptr: Vec::with_capacity(self.indptr.len()),
            indices: Vec::new(),
            values: Vec::new(),
        };
        out.indptr.push(0);
        for i in 0..self.n_rows() {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                let m = map[j as usize];
                if m != u32::MAX {
                    out.indices.push(m);
                    out.values.push(v);
                }
            }
            out.indptr.push(out.indices.len());
        }
        out
    }
}

/// Design matrix, response and offset for one dataset.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: SparseMatrix,
    pub y: Vec<f64>,
    pub offset: Vec<f64>,
    pub term_names: Vec<String>,
}

impl Design {
    pub fn select_columns(&self, cols: &[usize]) -> Design {
        Design {
            x: self.x.select_columns(cols),
            y: self.y.clone(),
            offset: self.offset.clone(),
            term_names: cols.iter().map(|&c| self.term_names[c].clone()).collect(),
        }
    }
}

/// Evaluates every term row-wise; the offset is `ln(exposure)`, or zero
/// without an exposure column.
pub fn build_design(ds: &Dataset, spec: &DesignSpec) -> Result<Design, GlmError> {
    let compiled: Vec<CompiledTerm<'_>> = spec
        .terms
        .iter()
        .map(|t| t.compile(ds))
        .collect::<Result<_, _>>()?;
    let n = ds.n_rows();
    let mut x = SparseMatrix {
        n_cols: compiled.len(),
        indptr: Vec::with_capacity(n + 1),
        indices: Vec::new(),
        values: Vec::new(),
    };
    x.indptr.push(0);
    for i in 0..n {
        for (j, t) in compiled.iter().enumerate() {
            let v = t.value(i);
            if v != 0.0 {
                x.indices.push(j as u32);
                x.values.push(v);
            }
        }
        x.indptr.push(x.indices.len());
    }
    let offset = match ds.exposure() {
        Some(e) => e.iter().map(|v| v.ln()).collect(),
        None => vec![0.0; n],
    };
    Ok(Design {
        x,
        y: ds.response().to_vec(),
        offset,
        term_names: spec.names.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Stop when `|D_t − D_{t−1}| / (|D_t| + 0.1)` falls below this.
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            max_iter: 50,
            tolerance: 1e-10,
            max_halvings: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedGlm {
    pub terms: Vec<String>,
    pub beta: Vec<f64>,
    /// Row-major `k × k` inverse Fisher information.
    pub covariance: Vec<f64>,
    pub deviance: f64,
    pub log_likelihood: f64,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_obs: usize,
}

impl FittedGlm {
    pub fn n_params(&self) -> usize {
        self.beta.len()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        let k = self.beta.len();
        (0..k).map(|j| self.covariance[j * k + j].sqrt()).collect()
    }

    pub fn variance(&self, j: usize) -> f64 {
        self.covariance[j * self.beta.len() + j]
    }
}

#[inline]
fn eta_row(x: &SparseMatrix, beta: &[f64], i: usize) -> f64 {
    let (idx, val) = x.row(i);
    let mut s = 0.0;
    for (&j, &v) in idx.iter().zip(val) {
        s += v * beta[j as usize];
    }
    s
}

/// Fitted means `exp(Xβ + offset)`.
pub fn predict_mean(x: &SparseMatrix, beta: &[f64], offset: &[f64]) -> Vec<f64> {
    (0..x.n_rows())
        .map(|i| (eta_row(x, beta, i) + offset[i]).exp())
        .collect()
}

pub fn predict(fit: &FittedGlm, design: &Design) -> Vec<f64> {
    predict_mean(&design.x, &fit.beta, &design.offset)
}

#[inline]
fn deviance_term(y: f64, mu: f64) -> f64 {
    if y == 0.0 {
        2.0 * mu
    } else {
        2.0 * (y * (y / mu).ln() - (y - mu))
    }
}

/// `2 Σ [y ln(y/ŷ) − (y − ŷ)]`, a `y = 0` term counting `2ŷ`.
pub fn poisson_deviance(y: &[f64], yhat: &[f64]) -> Result<f64, GlmError> {
    if y.len() != yhat.len() {
        return Err(GlmError::Input(format!("{} responses, {} predictions", y.len(), yhat.len())));
    }
    if let Some(i) = yhat.iter().position(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(GlmError::Input(format!("prediction {i} is not positive")));
    }
    if let Some(i) = y.iter().position(|&v| !(v >= 0.0)) {
        return Err(GlmError::Input(format!("response {i} is negative")));
    }
    Ok(y.iter().zip(yhat).map(|(&a, &b)| deviance_term(a, b)).sum())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64, GlmError> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(GlmError::Input("rmse needs two non-empty vectors of equal length".into()));
    }
    let ss: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / y.len() as f64).sqrt())
}

fn ln_factorial(y: f64) -> f64 {
    let k = y as u64;
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Full Poisson log-likelihood, `ln y!` included.
pub fn poisson_log_likelihood(y: &[f64], mu: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .map(|(&a, &m)| if a == 0.0 { -m } else { a * m.ln() - m - ln_factorial(a) })
        .sum()
}

/// `2k − 2ℓ`.
pub fn aic(fit: &FittedGlm) -> f64 {
    2.0 * fit.n_params() as f64 - 2.0 * fit.log_likelihood
}

/// In-place Cholesky of a row-major SPD matrix; returns the failing pivot.
fn cholesky(a: &mut [f64], p: usize) -> Result<(), usize> {
    let diag: Vec<f64> = (0..p).map(|j| a[j * p + j]).collect();
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > 1e-9 * diag[j]) || diag[j] <= 0.0 {
            return Err(j);
        }
        let l = d.sqrt();
        a[j * p + j] = l;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / l;
        }
    }
    Ok(())
}

fn chol_solve(l: &[f64], p: usize, b: &mut [f64]) {
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in i + 1..p {
            s -= l[k * p + i] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
}

/// `X'WX` (full symmetric) and `X'(y − μ)` for the scaled design.
fn normal_equations(x: &SparseMatrix, scale: &[f64], y: &[f64], mu: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = x.n_cols();
    let mut h = vec![0.0; p * p];
    let mut g = vec![0.0; p];
    for i in 0..x.n_rows() {
        let (idx, val) = x.row(i);
        let w = mu[i];
        let r = y[i] - mu[i];
        for (a, (&ja, &va)) in idx.iter().zip(val).enumerate() {
            let ja = ja as usize;
            let xa = va * scale[ja];
            g[ja] += xa * r;
            let wa = w * xa;
            for (&jb, &vb) in idx[a..].iter().zip(&val[a..]) {
                let jb = jb as usize;
                h[ja * p + jb] += wa * vb * scale[jb];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            // Rows list columns in ascending order, so only a ≤ b was filled.
            h[a * p + b] = h[b * p + a];
        }
    }
    (h, g)
}

fn scaled_mean(x: &SparseMatrix, scale: &[f64], beta: &[f64], offset: &[f64]) -> Vec<f64> {
    (0..x.n_rows())
        .map(|i| {
            let (idx, val) = x.row(i);
            let mut s = offset[i];
            for (&j, &v) in idx.iter().zip(val) {
                s += v * scale[j as usize] * beta[j as usize];
            }
            s.exp()
        })
        .collect()
}

fn check_inputs(design: &Design) -> Result<(), GlmError> {
    let n = design.x.n_rows();
    if n == 0 {
        return Err(GlmError::Input("no observations".into()));
    }
    if design.y.len() != n || design.offset.len() != n {
        return Err(GlmError::Input("response/offset length differs from the design".into()));
    }
    if let Some(i) = design.y.iter().position(|&v| !(v >= 0.0) || v.fract() != 0.0) {
        return Err(GlmError::Input(format!("response {i} is not a non-negative integer")));
    }
    if let Some(i) = design.offset.iter().position(|v| !v.is_finite()) {
        return Err(GlmError::Input(format!("offset {i} is not finite")));
    }
    if design.x.n_cols() == 0 {
        return Err(GlmError::Input("design has no columns".into()));
    }
    Ok(())
}

/// IRLS fit. The first design column is taken to be the intercept.
pub fn fit_poisson(design: &Design, opts: &IrlsOptions) -> Result<FittedGlm, GlmError> {
    check_inputs(design)?;
    let x = &design.x;
    let (n, p) = (x.n_rows(), x.n_cols());
    let y = &design.y;
    let offset = &design.offset;
    let name = |j: usize| design.term_names.get(j).cloned().unwrap_or_else(|| format!("column {j}"));

    let mut sumsq = vec![0.0; p];
    for i in 0..n {
        let (idx, val) = x.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            sumsq[j as usize] += v * v;
        }
    }
    let mut scale = vec![1.0; p];
    for j in 0..p {
        if sumsq[j] == 0.0 {
            return Err(GlmError::RankDeficient { term: name(j) });
        }
        if j > 0 {
            scale[j] = 1.0 / (sumsq[j] / n as f64).sqrt();
        }
    }

    let ones = vec![1.0; n];
    let zeros = vec![0.0; n];
    let (mut xtx, _) = normal_equations(x, &scale, &zeros, &ones);
    cholesky(&mut xtx, p).map_err(|j| GlmError::RankDeficient { term: name(j) })?;

    let mut beta = vec![0.0; p];
    let ysum: f64 = y.iter().sum();
    let mean_offset = offset.iter().sum::<f64>() / n as f64;
    beta[0] = ((ysum + 0.5) / n as f64).ln() - mean_offset;
    beta[0] /= scale[0];

    let mut mu = scaled_mean(x, &scale, &beta, offset);
    let mut dev: f64 = y.iter().zip(&mu).map(|(&a, &b)| deviance_term(a, b)).sum();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let (mut h, g) = normal_equations(x, &scale, y, &mu);
        cholesky(&mut h, p).map_err(|j| GlmError::IllConditioned { term: name(j) })?;
        let mut delta = g;
        chol_solve(&h, p, &mut delta);
        let mut trial: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + d).collect();
        let mut mu_t = scaled_mean(x, &scale, &trial, offset);
        let mut dev_t: f64 = y.iter().zip(&mu_t).map(|(&a, &b)| deviance_term(a, b)).sum();
        let mut halvings = 0;
        while !(dev_t.is_finite() && dev_t <= dev * (1.0 + 1e-15)) && halvings < opts.max_halvings {
            halvings += 1;
            for (t, (b, d)) in trial.iter_mut().zip(beta.iter().zip(&delta)) {
                *t = b + d / f64::powi(2.0, halvings as i32);
            }
            mu_t = scaled_mean(x, &scale, &trial, offset);
            dev_t = y.iter().zip(&mu_t).map(|(&a, &b)| deviance_term(a, b)).sum();
        }
        if !dev_t.is_finite() || dev_t > dev * (1.0 + 1e-15) {
            log::warn!("IRLS step-halving failed at iteration {iterations}");
            break;
        }
        let change = (dev_t - dev).abs() / (dev_t.abs() + 0.1);
        beta = trial;
        mu = mu_t;
        dev = dev_t;
        if change < opts.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("IRLS did not converge in {iterations} iterations");
    }

    let (mut h, _) = normal_equations(x, &scale, y, &mu);
    cholesky(&mut h, p).map_err(|j| GlmError::IllConditioned { term: name(j) })?;
    let mut cov = vec![0.0; p * p];
    for j in 0..p {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        chol_solve(&h, p, &mut e);
        for i in 0..p {
            cov[i * p + j] = e[i] * scale[i] * scale[j];
        }
    }
    for i in 0..p {
        for j in 0..i {
            let s = 0.5 * (cov[i * p + j] + cov[j * p + i]);
            cov[i * p + j] = s;
            cov[j * p + i] = s;
        }
    }
    let beta: Vec<f64> = beta.iter().zip(&scale).map(|(b, s)| b * s).collect();
    let mu = predict_mean(x, &beta, offset);
    let deviance = poisson_deviance(y, &mu)?;
    let log_likelihood = poisson_log_likelihood(y, &mu);
    let mut fit = FittedGlm {
        terms: (0..p).map(name).collect(),
        beta,
        covariance: cov,
        deviance,
        log_likelihood,
        aic: 0.0,
        iterations,
        converged,
        n_obs: n,
    };
    fit.aic = aic(&fit);
    Ok(fit)
}

/// Builds the design of `spec` on `ds` and fits it.
pub fn fit_spec(ds: &Dataset, spec: &DesignSpec, opts: &IrlsOptions) -> Result<FittedGlm, GlmError> {
    fit_poisson(&build_design(ds, spec)?, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// `"start"`, `"add"` or `"drop"`.
    pub action: &'static str,
    pub variable: Option<String>,
    pub aic: f64,
}

#[derive(Debug, Clone)]
pub struct StepwiseResult {
    /// Selected variable names in scope order.
    pub selected: Vec<String>,
    pub spec: DesignSpec,
    pub fit: FittedGlm,
    pub path: Vec<StepRecord>,
}

/// Bidirectional stepwise AIC over the variables of `scope`.
///
/// Starts from whichever of the intercept-only and full models has the lower
/// AIC, then repeatedly applies the single add or drop that lowers AIC most.
/// Ties go to the move leaving fewer parameters, then to the smaller variable
/// name. Candidate fits that fail (rank deficiency) are skipped.
pub fn stepwise_aic(ds: &Dataset, scope: &DesignSpec, opts: &IrlsOptions) -> Result<StepwiseResult, GlmError> {
    let design = build_design(ds, scope)?;
    let n_vars = scope.variables.len();
    let fit_set = |set: &BTreeSet<usize>| -> Result<FittedGlm, GlmError> {
        let vars: Vec<usize> = set.iter().copied().collect();
        fit_poisson(&design.select_columns(&scope.columns_of(&vars)), opts)
    };
    let empty = BTreeSet::new();
    let full: BTreeSet<usize> = (0..n_vars).collect();
    let empty_fit = fit_set(&empty)?;
    let (mut current, mut fit) = match fit_set(&full) {
        Ok(f) if f.aic < empty_fit.aic => (full, f),
        Ok(_) => (empty, empty_fit),
        Err(e) => {
            log::debug!("full scope fit failed ({e}); starting from the intercept");
            (empty, empty_fit)
        }
    };
    let mut path = vec![StepRecord {
        action: "start",
        variable: None,
        aic: fit.aic,
    }];
    loop {
        let mut best: Option<(f64, usize, String, usize, FittedGlm)> = None;
        for v in 0..n_vars {
            let adding = !current.contains(&v);
            let mut cand = current.clone();
            if adding {
                cand.insert(v);
            } else {
                cand.remove(&v);
            }
            let f = match fit_set(&cand) {
                Ok(f) => f,
                Err(e) => {
                    log::debug!("skipping move on `{}`: {e}", scope.variables[v].name);
                    continue;
                }
            };
            let key = (f.aic, f.n_params(), scope.variables[v].name.clone());
            let better = match &best {
                None => true,
                Some((a, k, name, _, _)) => {
                    key.0 < *a || (key.0 == *a && (key.1 < *k || (key.1 == *k && key.2 < *name)))
                }
            };
            if better {
                best = Some((key.0, key.1, key.2, v, f));
            }
        }
        match best {
            Some((a, _, name, v, f)) if a < fit.aic => {
                let action = if current.contains(&v) { "drop" } else { "add" };
                if action == "add" {
                    current.insert(v);
                } else {
                    current.remove(&v);
                }
                path.push(StepRecord {
                    action,
                    variable: Some(name),
                    aic: a,
                });
                fit = f;
            }
            _ => break,
        }
    }
    let vars: Vec<usize> = current.iter().copied().collect();
    Ok(StepwiseResult {
        selected: vars.iter().map(|&v| scope.variables[v].name.clone()).collect(),
        spec: scope.subset(&vars),
        fit,
        path,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SelectionScores {
    pub correct: usize,
    pub incorrect: usize,
    /// Distinct covariates whose main effect is absent although a selected
    /// interaction uses them.
    pub missing_main_effects: usize,
}

/// Scores a selection against the true variable set. `main_effects_of`
/// gives, for an interaction variable, the covariates it is built from.
pub fn selection_scores<F>(selected: &[String], truth: &[String], main_effects_of: F) -> SelectionScores
where
    F: Fn(&str) -> Vec<String>,
{
    let sel: BTreeSet<&str> = selected.iter().map(String::as_str).collect();
    let tru: BTreeSet<&str> = truth.iter().map(String::as_str).collect();
    let correct = sel.intersection(&tru).count();
    let incorrect = sel.len() - correct;
    let mut missing = BTreeSet::new();
    for s in &sel {
        for m in main_effects_of(s) {
            if !sel.contains(m.as_str()) {
                missing.insert(m);
            }
        }
    }
    SelectionScores {
        correct,
        incorrect,
        missing_main_effects: missing.len(),
    }
}

/// The variables that actually drive `scenario`, named as in a scope built
/// by [`DesignSpec::with_interactions`].
pub fn true_variables(scenario: &Scenario) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in scenario.terms() {
        let name = match &t.term {
            Term::Intercept => continue,
            Term::Main { factor } => factor.column().to_string(),
            Term::Product { .. } => t.term.to_string(),
        };
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims_sim::{builtin_scenario, simulate_dataset, ScenarioKind};
    use crate::portfolio::{surrogate_portfolio, AREA, BONUS_MALUS};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn intercept_design(y: &[f64], offset: &[f64]) -> Design {
        Design {
            x: SparseMatrix::from_dense_rows(&vec![vec![1.0]; y.len()]),
            y: y.to_vec(),
            offset: offset.to_vec(),
            term_names: vec!["(Intercept)".into()],
        }
    }

    #[test]
    fn deviance_hand_cases() {
        assert_eq!(poisson_deviance(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert_relative_eq!(
            poisson_deviance(&[2.0], &[1.0]).unwrap(),
            2.0 * (2.0 * 2f64.ln() - 1.0),
            epsilon = 1e-15
        );
        assert!((poisson_deviance(&[2.0], &[1.0]).unwrap() - 0.772589).abs() < 1e-6);
        assert_eq!(poisson_deviance(&[0.0], &[1.0]).unwrap(), 2.0);
        assert!(poisson_deviance(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn rmse_hand_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[2.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn intercept_only_closed_form() {
        let fit = fit_poisson(&intercept_design(&[0.0, 1.0, 2.0, 3.0], &[0.0; 4]), &IrlsOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.beta[0] - 1.5f64.ln()).abs() < 1e-9);
        // Fisher information of the intercept is Σμ = 6.
        assert!((fit.variance(0) - 1.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn aic_single_observation() {
        let fit = fit_poisson(&intercept_design(&[1.0], &[0.0]), &IrlsOptions::default()).unwrap();
        assert!((fit.log_likelihood + 1.0).abs() < 1e-9);
        assert!((fit.aic - 4.0).abs() < 1e-9);
    }

    #[test]
    fn offset_shift_moves_intercept_only() {
        let ds = surrogate_portfolio(3_000, 4);
        let (ds, _) = simulate_dataset(&ds, &builtin_scenario(ScenarioKind::Linear), 2).unwrap();
        let spec = DesignSpec::main_effects(&ds, &[AREA, BONUS_MALUS]).unwrap();
        let d = build_design(&ds, &spec).unwrap();
        let a = fit_poisson(&d, &IrlsOptions::default()).unwrap();
        let mut shifted = d.clone();
        shifted.offset.iter_mut().for_each(|o| *o += 0.7);
        let b = fit_poisson(&shifted, &IrlsOptions::default()).unwrap();
        assert!((a.beta[0] - 0.7 - b.beta[0]).abs() < 1e-8);
        for j in 1..a.beta.len() {
            assert!((a.beta[j] - b.beta[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn baseline_design_row() {
        let ds = surrogate_portfolio(50, 1);
        let spec = DesignSpec::true_structure(&builtin_scenario(ScenarioKind::Linear)).unwrap();
        assert_eq!(spec.n_terms(), 14);
        assert_eq!(spec.variables().len(), 7);
        let d = build_design(&ds, &spec).unwrap();
        assert!(d.offset.iter().all(|&o| o.is_finite()));
        // Baseline values make every non-intercept term vanish.
        let schema = ds.schema();
        let mut cols = ds.columns().to_vec();
        let set_num = |cols: &mut Vec<crate::tabular::Column>, name: &str, v: f64| {
            let j = schema.require(name).unwrap();
            cols[j] = crate::tabular::Column::Numeric(vec![v; 50]);
        };
        set_num(&mut cols, crate::portfolio::VEHICLE_AGE, 5.0);
        set_num(&mut cols, crate::portfolio::DRIVER_AGE, 35.0);
        set_num(&mut cols, BONUS_MALUS, 100.0);
        set_num(&mut cols, crate::portfolio::EXPOSURE, 1.0);
        let code = |name: &str, l: &str| {
            let j = schema.require(name).unwrap();
            (j, schema.column(j).level_index(l).unwrap())
        };
        for (name, l) in [
            (AREA, "D"),
            (crate::portfolio::VEHICLE_POWER, "10"),
            (crate::portfolio::VEHICLE_BRAND, "B1"),
            (crate::portfolio::VEHICLE_GAS, "Regular"),
        ] {
            let (j, c) = code(name, l);
            cols[j] = crate::tabular::Column::Categorical(vec![c; 50]);
        }
        let base = Dataset::new(ds.schema_arc().clone(), cols).unwrap();
        let d = build_design(&base, &spec).unwrap();
        let mut expect = vec![0.0; 14];
        expect[0] = 1.0;
        assert_eq!(d.x.to_dense_row(0), expect);
        assert!(d.offset.iter().all(|&o| o == 0.0));
    }

    #[test]
    fn product_term_value() {
        let ds = surrogate_portfolio(200, 2);
        let spec = DesignSpec::true_structure(&builtin_scenario(ScenarioKind::Interaction)).unwrap();
        let d = build_design(&ds, &spec).unwrap();
        let k = spec.term_names().iter().position(|n| n == "BONUS_MALUS:AREA[A,B,C]").unwrap();
        let area = ds.categorical(AREA).unwrap();
        let bm = ds.numeric(BONUS_MALUS).unwrap();
        for i in 0..200 {
            let l = &area.levels[area.codes[i] as usize];
            let want = if ["A", "B", "C"].contains(&l.as_str()) { bm[i] } else { 0.0 };
            assert_eq!(d.x.to_dense_row(i)[k], want);
        }
    }

    #[test]
    fn rank_deficiency_names_term() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64, 2.0 * i as f64]).collect();
        let d = Design {
            x: SparseMatrix::from_dense_rows(&rows),
            y: (0..20).map(|i| (i % 3) as f64).collect(),
            offset: vec![0.0; 20],
            term_names: vec!["(Intercept)".into(), "a".into(), "b".into()],
        };
        match fit_poisson(&d, &IrlsOptions::default()) {
            Err(GlmError::RankDeficient { term }) => assert_eq!(term, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn design_spec_validation() {
        assert!(DesignSpec::new(vec![], vec![]).is_err());
        let t = Term::main(Factor::numeric("x"));
        assert!(DesignSpec::new(vec![t.clone(), Term::Intercept], vec![]).is_err());
        assert!(DesignSpec::new(vec![Term::Intercept, t.clone()], vec![]).is_err());
        assert!(DesignSpec::new(
            vec![Term::Intercept, t.clone(), t.clone()],
            vec![Variable { name: "x".into(), columns: vec![1, 2], main_effects: vec![] }]
        )
        .is_err());
    }

    #[test]
    fn nested_models_gain_likelihood() {
        let ds = surrogate_portfolio(4_000, 9);
        let (ds, _) = simulate_dataset(&ds, &builtin_scenario(ScenarioKind::Linear), 5).unwrap();
        let small = fit_spec(&ds, &DesignSpec::main_effects(&ds, &[AREA]).unwrap(), &IrlsOptions::default()).unwrap();
        let big = fit_spec(&ds, &DesignSpec::main_effects(&ds, &[AREA, BONUS_MALUS]).unwrap(), &IrlsOptions::default())
            .unwrap();
        assert!(big.log_likelihood >= small.log_likelihood);
        assert_eq!(fit_spec(&ds, &DesignSpec::intercept_only(), &IrlsOptions::default()).unwrap().n_params(), 1);
    }

    #[test]
    fn stepwise_with_intercept_only_scope() {
        let ds = surrogate_portfolio(500, 3);
        let r = stepwise_aic(&ds, &DesignSpec::intercept_only(), &IrlsOptions::default()).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!(r.fit.n_params(), 1);
    }

    #[test]
    fn selection_score_cases() {
        let truth: Vec<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        let none = |_: &str| Vec::new();
        assert_eq!(
            selection_scores(&truth, &truth, none),
            SelectionScores { correct: 2, incorrect: 0, missing_main_effects: 0 }
        );
        let mut more = truth.clone();
        more.push("DENSITY".into());
        assert_eq!(selection_scores(&more, &truth, none).incorrect, 1);
        let sel = vec!["BONUS_MALUS:AREA[A,B,C]".to_string(), "AREA".to_string()];
        let mains = |v: &str| {
            if v.contains(':') {
                vec!["BONUS_MALUS".to_string(), "AREA".to_string()]
            } else {
                Vec::new()
            }
        };
        assert_eq!(selection_scores(&sel, &truth, mains).missing_main_effects, 1);
    }

    #[test]
    fn true_variable_census() {
        assert_eq!(true_variables(&builtin_scenario(ScenarioKind::Linear)).len(), 7);
        assert_eq!(true_variables(&builtin_scenario(ScenarioKind::Interaction)).len(), 17);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn score_equations_and_deviance_identity(seed in 0u64..500, n in 300usize..1500) {
            let ds = surrogate_portfolio(n, seed);
            let (ds, _) = simulate_dataset(&ds, &builtin_scenario(ScenarioKind::Linear), seed).unwrap();
            let spec = DesignSpec::main_effects(&ds, &[crate::portfolio::VEHICLE_GAS, crate::portfolio::DRIVER_AGE]).unwrap();
            let d = build_design(&ds, &spec).unwrap();
            let fit = fit_poisson(&d, &IrlsOptions::default());
            prop_assume!(!matches!(fit, Err(GlmError::IllConditioned { .. })));
            let fit = fit.unwrap();
            let mu = predict(&fit, &d);
            prop_assert_eq!(fit.deviance, poisson_deviance(&d.y, &mu).unwrap());
            prop_assert!(fit.deviance >= 0.0);
            for j in 0..d.x.n_cols() {
                let mut s = 0.0;
                let mut scale = 0.0f64;
                for i in 0..n {
                    let xij = d.x.to_dense_row(i)[j];
                    s += xij * (d.y[i] - mu[i]);
                    scale = scale.max(xij.abs());
                }
                prop_assert!((s / (n as f64 * scale.max(1.0))).abs() < 1e-6, "component {j}: {s}");
            }
            for j in 0..fit.n_params() {
                prop_assert!(fit.variance(j) > 0.0);
            }
        }

        #[test]
        fn row_permutation_leaves_fit_unchanged(seed in 0u64..500) {
            let ds = surrogate_portfolio(1_000, seed);
            let (ds, _) = simulate_dataset(&ds, &builtin_scenario(ScenarioKind::Linear), seed).unwrap();
            let spec = DesignSpec::main_effects(&ds, &[AREA]).unwrap();
            let rows: Vec<usize> = (0..1_000).rev().collect();
            let a = fit_spec(&ds, &spec, &IrlsOptions::default());
            prop_assume!(!matches!(a, Err(GlmError::IllConditioned { .. })));
            let a = a.unwrap();
            let b = fit_spec(&ds.select_rows(&rows), &spec, &IrlsOptions::default()).unwrap();
            prop_assert!((a.deviance - b.deviance).abs() < 1e-9 * (1.0 + a.deviance));
            for (x, y) in a.beta.iter().zip(&b.beta) {
                prop_assert!((x - y).abs() < 1e-7);
            }
        }
    }
}
