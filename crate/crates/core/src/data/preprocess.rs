use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ColumnKind, ColumnMeta, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DummyMode {
    /// Drop the first (reference) level.
    KMinusOne,
    FullK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub standardize: bool,
    pub dummy_mode: DummyMode,
    pub collinearity_tol: f64,
    pub add_intercept: bool,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            standardize: true,
            dummy_mode: DummyMode::KMinusOne,
            collinearity_tol: 1e-8,
            add_intercept: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignColumnKind {
    Intercept,
    Continuous,
    Binary,
    Count,
    Dummy { level: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignColumn {
    pub name: String,
    /// Index of the dataset column this was derived from.
    pub source: Option<usize>,
    pub kind: DesignColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: String,
}

/// Numeric design matrix built from a dataset's covariates.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    columns: Vec<DesignColumn>,
    dropped: Vec<DroppedColumn>,
}

impl DesignMatrix {
    /// Wraps a raw matrix; every column is treated as continuous.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let columns = (0..matrix.ncols())
            .map(|j| DesignColumn {
                name: format!("x{}", j + 1),
                source: Some(j),
                kind: DesignColumnKind::Continuous,
            })
            .collect();
        DesignMatrix {
            matrix,
            columns,
            dropped: Vec::new(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn columns(&self) -> &[DesignColumn] {
        &self.columns
    }

    pub fn dropped(&self) -> &[DroppedColumn] {
        &self.dropped
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn intercept_index(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.kind == DesignColumnKind::Intercept)
    }

    /// Indices of the non-intercept columns.
    pub fn covariate_indices(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&j| self.columns[j].kind != DesignColumnKind::Intercept)
            .collect()
    }

    /// The design without its intercept column.
    pub fn covariates_only(&self) -> DMatrix<f64> {
        self.matrix.select_columns(&self.covariate_indices())
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariate_indices().into_iter().map(|j| self.columns[j].name.clone()).collect()
    }

    /// Covariate columns followed by a constant column, whether or not the
    /// design carried an intercept.
    pub fn with_intercept(&self) -> DMatrix<f64> {
        let x = self.covariates_only();
        let (n, k) = x.shape();
        DMatrix::from_fn(n, k + 1, |i, j| if j < k { x[(i, j)] } else { 1.0 })
    }

    /// Re-expresses the non-intercept design columns as a dataset with the
    /// template's treatment, outcome and ids.
    pub fn as_dataset(&self, template: &Dataset) -> Result<Dataset> {
        let idx = self.covariate_indices();
        let metas = idx
            .iter()
            .map(|&j| {
                let kind = match self.columns[j].kind {
                    DesignColumnKind::Binary | DesignColumnKind::Dummy { .. } => ColumnKind::Binary,
                    DesignColumnKind::Count => ColumnKind::Count,
                    _ => ColumnKind::Continuous,
                };
                ColumnMeta::new(self.columns[j].name.clone(), kind)
            })
            .collect();
        Dataset::new(
            self.matrix.select_columns(&idx),
            metas,
            template.treatment().to_vec(),
            template.outcome().map(|y| y.to_vec()),
            Some(template.ids().to_vec()),
        )
    }
}

fn mean_and_sd(col: &[f64]) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = if col.len() > 1 {
        col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Indices of columns kept by a pivoted (column-order) Gram–Schmidt pass.
///
/// A column is dropped when its residual after projecting out the kept
/// columns (and the constant vector when `with_constant`) is at most
/// `tol` times its own norm.
pub(crate) fn independent_columns(m: &DMatrix<f64>, tol: f64, with_constant: bool) -> Vec<usize> {
    let n = m.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    if with_constant && n > 0 {
        basis.push(DVector::from_element(n, 1.0 / (n as f64).sqrt()));
    }
    let mut kept = Vec::new();
    for j in 0..m.ncols() {
        let original = m.column(j).into_owned();
        let norm0 = original.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut r = original;
        // two passes of modified Gram–Schmidt
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rn = r.norm();
        if rn > tol * norm0 {
            basis.push(r / rn);
            kept.push(j);
        }
    }
    kept
}

/// Expands categorical columns, optionally standardizes numeric columns,
/// removes near-collinear columns and appends an intercept.
pub fn preprocess(d: &Dataset, spec: &PreprocessSpec) -> Result<DesignMatrix> {
    if !(spec.collinearity_tol >= 0.0) {
        return Err(Error::InvalidInput("collinearity_tol must be nonnegative".into()));
    }
    let n = d.n();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut metas: Vec<DesignColumn> = Vec::new();
    let mut dropped = Vec::new();

    for (j, meta) in d.columns().iter().enumerate() {
        let raw: Vec<f64> = d.covariates().column(j).iter().copied().collect();
        match meta.kind {
            ColumnKind::Categorical => {
                let skip = usize::from(spec.dummy_mode == DummyMode::KMinusOne);
                for (code, level) in meta.levels.iter().enumerate().skip(skip) {
                    cols.push(raw.iter().map(|&v| if v as usize == code { 1.0 } else { 0.0 }).collect());
                    metas.push(DesignColumn {
                        name: format!("{}={}", meta.name, level),
                        source: Some(j),
                        kind: DesignColumnKind::Dummy { level: level.clone() },
                    });
                }
            }
            kind => {
                let design_kind = match kind {
                    ColumnKind::Binary => DesignColumnKind::Binary,
                    ColumnKind::Count => DesignColumnKind::Count,
                    _ => DesignColumnKind::Continuous,
                };
                let mut values = raw;
                if spec.standardize && kind != ColumnKind::Binary {
                    let (mean, sd) = mean_and_sd(&values);
                    if !(sd > 0.0) {
                        log::warn!("column '{}' has zero variance; dropped", meta.name);
                        dropped.push(DroppedColumn {
                            name: meta.name.clone(),
                            reason: "zero variance".into(),
                        });
                        continue;
                    }
                    for v in &mut values {
                        *v = (*v - mean) / sd;
                    }
                }
                cols.push(values);
                metas.push(DesignColumn {
                    name: meta.name.clone(),
                    source: Some(j),
                    kind: design_kind,
                });
            }
        }
    }

    let full = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let kept = independent_columns(&full, spec.collinearity_tol, spec.add_intercept);
    for j in 0..cols.len() {
        if !kept.contains(&j) {
            log::warn!("column '{}' is collinear with earlier columns; dropped", metas[j].name);
            dropped.push(DroppedColumn {
                name: metas[j].name.clone(),
                reason: "collinear".into(),
            });
        }
    }
    let mut columns: Vec<DesignColumn> = kept.iter().map(|&j| metas[j].clone()).collect();
    let k = kept.len() + usize::from(spec.add_intercept);
    let matrix = DMatrix::from_fn(n, k, |i, c| if c < kept.len() { full[(i, kept[c])] } else { 1.0 });
    if spec.add_intercept {
        columns.push(DesignColumn {
            name: "(intercept)".into(),
            source: None,
            kind: DesignColumnKind::Intercept,
        });
    }
    Ok(DesignMatrix {
        matrix,
        columns,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plain(spec_std: bool) -> PreprocessSpec {
        PreprocessSpec {
            standardize: spec_std,
            add_intercept: false,
            ..PreprocessSpec::default()
        }
    }

    #[test]
    fn categorical_k_minus_one() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 1.0]);
        let meta = vec![ColumnMeta::categorical("c", vec!["a".into(), "b".into(), "c".into()])];
        let d = Dataset::new(x, meta, vec![true, false, true, false], None, None).unwrap();
        let dm = preprocess(&d, &PreprocessSpec::default()).unwrap();
        assert_eq!(dm.covariate_indices().len(), 2);
        assert_eq!(dm.columns()[0].name, "c=b");
        assert_eq!(dm.intercept_index(), Some(2));

        let full = PreprocessSpec {
            dummy_mode: DummyMode::FullK,
            add_intercept: false,
            ..PreprocessSpec::default()
        };
        assert_eq!(preprocess(&d, &full).unwrap().columns().len(), 3);
    }

    #[test]
    fn duplicate_column_dropped() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 1.0, 0.3], vec![2.0, 2.0, -1.0], vec![4.0, 4.0, 0.9], vec![3.0, 3.0, 2.0]];
        let d = Dataset::from_rows(&rows, &[1, 0, 1, 0], None).unwrap();
        let dm = preprocess(&d, &PreprocessSpec::default()).unwrap();
        assert_eq!(dm.covariate_names(), vec!["x1", "x3"]);
        assert_eq!(dm.dropped().len(), 1);
        assert_eq!(dm.dropped()[0].name, "x2");
    }

    #[test]
    fn z_scores() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let d = Dataset::from_rows(&rows, &[1, 0, 1], None).unwrap();
        let dm = preprocess(&d, &plain(true)).unwrap();
        let col: Vec<f64> = dm.matrix().column(0).iter().copied().collect();
        assert_eq!(col, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_variance_is_dropped_not_divided() {
        let rows = vec![vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 0.0]];
        let d = Dataset::from_rows(&rows, &[1, 0, 1], None).unwrap();
        let dm = preprocess(&d, &plain(true)).unwrap();
        assert_eq!(dm.covariate_names(), vec!["x2"]);
        assert_eq!(dm.dropped()[0].reason, "zero variance");
        assert!(dm.matrix().iter().all(|v| v.is_finite()));
    }

    fn small_matrix() -> impl Strategy<Value = (usize, Vec<f64>, Vec<(usize, usize, f64)>)> {
        (6usize..12).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(-3.0f64..3.0, n * 4),
                prop::collection::vec((0usize..4, 0usize..4, -2.0f64..2.0), 0..3),
            )
        })
    }

    proptest! {
        #[test]
        fn kept_columns_have_full_rank((n, vals, combos) in small_matrix()) {
            // four random columns plus exact linear combinations of them
            let mut cols: Vec<Vec<f64>> = (0..4).map(|j| vals[j * n..(j + 1) * n].to_vec()).collect();
            for (a, b, c) in combos {
                let extra: Vec<f64> = (0..n).map(|i| cols[a][i] + c * cols[b][i]).collect();
                cols.push(extra);
            }
            let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
            let tol = 1e-8;
            let kept = independent_columns(&m, tol, false);
            let sub = m.select_columns(&kept);
            let sv = sub.singular_values();
            let smax = sv.max();
            let smin = sv.min();
            prop_assert!(smin > tol * smax, "smin {} smax {}", smin, smax);
        }

        #[test]
        fn idempotent_without_standardize(vals in prop::collection::vec(-3.0f64..3.0, 24)) {
            let rows: Vec<Vec<f64>> = vals.chunks(3).map(|c| c.to_vec()).collect();
            let z: Vec<u8> = (0..rows.len()).map(|i| (i % 2) as u8).collect();
            let d = Dataset::from_rows(&rows, &z, None).unwrap();
            let spec = plain(false);
            let once = preprocess(&d, &spec).unwrap();
            prop_assume!(once.dropped().is_empty());
            let twice = preprocess(&once.as_dataset(&d).unwrap(), &spec).unwrap();
            prop_assert_eq!(once.matrix(), twice.matrix());
        }
    }
}
