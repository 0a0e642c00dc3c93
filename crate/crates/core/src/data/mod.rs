//! Dataset representation, covariate preprocessing and the (U, V) group
//! construction used by every weighting method.

mod csv_io;
mod groups;
mod preprocess;

pub use csv_io::{load_csv, write_csv, ColumnRole, Schema};
pub use groups::{build_groups, CateSelector, Estimand, EstimandSpec, GroupPair, PairRole};
pub(crate) use preprocess::independent_columns;
pub use preprocess::{preprocess, DesignColumn, DesignColumnKind, DesignMatrix, DroppedColumn, DummyMode, PreprocessSpec};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Binary,
    Count,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    /// Level labels for categorical columns; the matrix stores the index
    /// into this list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

impl ColumnMeta {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        ColumnMeta {
            name: name.into(),
            kind,
            levels: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, levels: Vec<String>) -> Self {
        ColumnMeta {
            name: name.into(),
            kind: ColumnKind::Categorical,
            levels,
        }
    }
}

/// Covariates, binary treatment, optional outcome and subject labels.
///
/// Immutable once built; every constructor validates the invariants.
#[derive(Debug, Clone)]
pub struct Dataset {
    covariates: DMatrix<f64>,
    columns: Vec<ColumnMeta>,
    treatment: Vec<bool>,
    outcome: Option<Vec<f64>>,
    ids: Vec<String>,
}

impl Dataset {
    pub fn new(
        covariates: DMatrix<f64>,
        columns: Vec<ColumnMeta>,
        treatment: Vec<bool>,
        outcome: Option<Vec<f64>>,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = treatment.len();
        if covariates.nrows() != n {
            return Err(Error::Dimension {
                expected: n,
                got: covariates.nrows(),
            });
        }
        if covariates.ncols() != columns.len() {
            return Err(Error::Dimension {
                expected: columns.len(),
                got: covariates.ncols(),
            });
        }
        if !treatment.iter().any(|&z| z) || treatment.iter().all(|&z| z) {
            return Err(Error::InvalidInput(
                "treatment must contain at least one treated and one control subject".into(),
            ));
        }
        if let Some(y) = &outcome {
            if y.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: y.len(),
                });
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("outcome contains non-finite values".into()));
            }
        }
        for (j, meta) in columns.iter().enumerate() {
            for i in 0..n {
                let x = covariates[(i, j)];
                if !x.is_finite() {
                    return Err(Error::Parse {
                        row: i + 1,
                        column: meta.name.clone(),
                        message: "missing or non-finite covariate".into(),
                    });
                }
                if meta.kind == ColumnKind::Categorical
                    && (x < 0.0 || x.fract() != 0.0 || x as usize >= meta.levels.len())
                {
                    return Err(Error::Parse {
                        row: i + 1,
                        column: meta.name.clone(),
                        message: format!("level code {x} out of range"),
                    });
                }
            }
        }
        let ids = match ids {
            Some(ids) if ids.len() != n => {
                return Err(Error::Dimension {
                    expected: n,
                    got: ids.len(),
                })
            }
            Some(ids) => ids,
            None => (1..=n).map(|i| i.to_string()).collect(),
        };
        Ok(Dataset {
            covariates,
            columns,
            treatment,
            outcome,
            ids,
        })
    }

    /// Convenience constructor for numeric data where every column is
    /// continuous.
    pub fn from_rows(rows: &[Vec<f64>], treatment: &[u8], outcome: Option<&[f64]>) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidInput("ragged covariate rows".into()));
        }
        if let Some(bad) = treatment.iter().find(|&&z| z > 1) {
            return Err(Error::InvalidInput(format!("treatment value {bad} is not 0/1")));
        }
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        let columns = (0..p)
            .map(|j| ColumnMeta::new(format!("x{}", j + 1), ColumnKind::Continuous))
            .collect();
        Dataset::new(
            x,
            columns,
            treatment.iter().map(|&z| z == 1).collect(),
            outcome.map(|y| y.to_vec()),
            None,
        )
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn outcome(&self) -> Option<&[f64]> {
        self.outcome.as_deref()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.treatment[i]).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.treatment[i]).collect()
    }

    /// Same subjects and covariates with the outcome replaced.
    pub fn with_outcome(&self, outcome: Option<Vec<f64>>) -> Result<Self> {
        Dataset::new(
            self.covariates.clone(),
            self.columns.clone(),
            self.treatment.clone(),
            outcome,
            Some(self.ids.clone()),
        )
    }

    /// Subject indices sorted by id; used as the fixed summation order of
    /// the estimators.
    pub fn id_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]).then(a.cmp(&b)));
        order
    }

    /// Reorders subjects; `perm[k]` is the old index placed at position k.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidInput("not a permutation of the subjects".into()));
        }
        let x = DMatrix::from_fn(n, self.p(), |i, j| self.covariates[(perm[i], j)]);
        Dataset::new(
            x,
            self.columns.clone(),
            perm.iter().map(|&i| self.treatment[i]).collect(),
            self.outcome.as_ref().map(|y| perm.iter().map(|&i| y[i]).collect()),
            Some(perm.iter().map(|&i| self.ids[i].clone()).collect()),
        )
    }
}
