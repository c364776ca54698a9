//! Partitioning synthetic tables and assembling augmented training sets.
//!
//! A structure parameter `(t, L)` selects the training set (`t = 1`) and the
//! first `L` of `m` synthetic parts.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;
use crate::tabular::{DataError, Dataset};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("structure parameter (0, 0) selects no data")]
    EmptyStructure,
    #[error("t must be 0 or 1, got {0}")]
    InvalidT(u8),
    #[error("L = {l} exceeds the {m} available parts")]
    TooManyParts { l: usize, m: usize },
    #[error("cannot split {n} rows into {m} non-empty parts")]
    PartCount { n: usize, m: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StructureParam {
    pub t: u8,
    pub l: usize,
}

impl StructureParam {
    pub fn new(t: u8, l: usize) -> Result<Self, AugmentError> {
        if t > 1 {
            return Err(AugmentError::InvalidT(t));
        }
        if t == 0 && l == 0 {
            return Err(AugmentError::EmptyStructure);
        }
        Ok(StructureParam { t, l })
    }

    pub fn includes_train(self) -> bool {
        self.t == 1
    }

    /// The `(1, 0)` … `(1, m)` grid followed by the all-synthetic `(0, m)`.
    pub fn grid(m: usize) -> Vec<StructureParam> {
        let mut g: Vec<StructureParam> = (0..=m).map(|l| StructureParam { t: 1, l }).collect();
        if m > 0 {
            g.push(StructureParam { t: 0, l: m });
        }
        g
    }

    /// Synthetic rows per training row, assuming equally sized parts of a
    /// synthetic set as large as the training set.
    pub fn synthetic_proportion(self, m: usize) -> f64 {
        self.l as f64 / m as f64
    }
}

impl fmt::Display for StructureParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.t, self.l)
    }
}

/// Row indices of `m` disjoint parts after a seeded shuffle. Sizes differ by
/// at most one, larger parts first.
pub fn partition_indices(n: usize, m: usize, seed: u64) -> Result<Vec<Vec<usize>>, AugmentError> {
    if m == 0 || m > n {
        return Err(AugmentError::PartCount { n, m });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let (base, extra) = (n / m, n % m);
    let mut parts = Vec::with_capacity(m);
    let mut start = 0;
    for p in 0..m {
        let len = base + usize::from(p < extra);
        let mut part = idx[start..start + len].to_vec();
        part.sort_unstable();
        parts.push(part);
        start += len;
    }
    Ok(parts)
}

pub fn partition_synthetic(syn: &Dataset, m: usize, seed: u64) -> Result<Vec<Dataset>, AugmentError> {
    if m == 1 {
        return Ok(vec![syn.clone()]);
    }
    Ok(partition_indices(syn.n_rows(), m, seed)?
        .iter()
        .map(|rows| syn.select_rows(rows))
        .collect())
}

/// Training rows (if `t = 1`) followed by parts `1..=L` in order.
pub fn assemble(train: &Dataset, parts: &[Dataset], s: StructureParam) -> Result<Dataset, AugmentError> {
    let s = StructureParam::new(s.t, s.l)?;
    if s.l > parts.len() {
        return Err(AugmentError::TooManyParts { l: s.l, m: parts.len() });
    }
    for p in parts {
        if p.schema().columns() != train.schema().columns() {
            return Err(DataError::SchemaMismatch("synthetic part schema differs from training schema".into()).into());
        }
    }
    let mut pieces: Vec<&Dataset> = Vec::with_capacity(s.l + 1);
    if s.includes_train() {
        pieces.push(train);
    }
    pieces.extend(&parts[..s.l]);
    if pieces.len() == 1 {
        return Ok(pieces[0].clone());
    }
    Ok(Dataset::vstack(&pieces)?)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;
    use crate::portfolio::surrogate_portfolio;

    #[test]
    fn balanced_sizes() {
        let parts = partition_indices(10, 3, 1).unwrap();
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert!(partition_indices(3, 4, 1).is_err());
        assert!(partition_indices(3, 0, 1).is_err());
    }

    #[test]
    fn single_part_is_whole() {
        let syn = surrogate_portfolio(50, 2);
        let parts = partition_synthetic(&syn, 1, 9).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0], syn);
    }

    #[test]
    fn structure_identities() {
        let train = surrogate_portfolio(40, 1);
        let syn = surrogate_portfolio(35, 2);
        let parts = partition_synthetic(&syn, 5, 3).unwrap();
        assert_eq!(assemble(&train, &parts, StructureParam::new(1, 0).unwrap()).unwrap(), train);
        let all = assemble(&train, &parts, StructureParam::new(0, 5).unwrap()).unwrap();
        assert_eq!(all.n_rows(), syn.n_rows());
        let full = assemble(&train, &parts, StructureParam::new(1, 5).unwrap()).unwrap();
        assert_eq!(full.n_rows(), 75);
        assert!(matches!(StructureParam::new(0, 0), Err(AugmentError::EmptyStructure)));
        assert!(matches!(
            assemble(&train, &parts, StructureParam { t: 1, l: 6 }),
            Err(AugmentError::TooManyParts { .. })
        ));
    }

    #[test]
    fn all_synthetic_is_a_row_permutation() {
        let train = surrogate_portfolio(20, 1);
        let syn = surrogate_portfolio(23, 4);
        let parts = partition_synthetic(&syn, 5, 8).unwrap();
        let all = assemble(&train, &parts, StructureParam::new(0, 5).unwrap()).unwrap();
        let key = |ds: &Dataset| -> Vec<String> {
            let mut rows: Vec<String> = (0..ds.n_rows())
                .map(|i| (0..ds.n_cols()).map(|j| ds.label(i, j)).collect::<Vec<_>>().join("|"))
                .collect();
            rows.sort();
            rows
        };
        assert_eq!(key(&all), key(&syn));
    }

    #[test]
    fn grid_shape() {
        let g = StructureParam::grid(5);
        assert_eq!(g.len(), 7);
        assert_eq!(g[0], StructureParam { t: 1, l: 0 });
        assert_eq!(g[6], StructureParam { t: 0, l: 5 });
        assert_eq!(g[6].to_string(), "(0,5)");
    }

    proptest! {
        #[test]
        fn partition_is_exact(n in 1usize..300, m in 1usize..20, seed in any::<u64>()) {
            prop_assume!(m <= n);
            let parts = partition_indices(n, m, seed).unwrap();
            let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let all: BTreeSet<usize> = parts.iter().flatten().copied().collect();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        }

        #[test]
        fn augmented_row_count(l in 0usize..=5, seed in 0u64..50) {
            let train = surrogate_portfolio(30, seed);
            let syn = surrogate_portfolio(27, seed + 1);
            let parts = partition_synthetic(&syn, 5, seed).unwrap();
            let out = assemble(&train, &parts, StructureParam::new(1, l).unwrap()).unwrap();
            let expect = 30 + parts[..l].iter().map(Dataset::n_rows).sum::<usize>();
            prop_assert_eq!(out.n_rows(), expect);
        }
    }
}
