use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::independent_columns;
use crate::data::GroupPair;
use crate::error::{Error, Result};
use crate::metrics::{kernel_matrix, KernelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Raw,
    RawSquares,
    RawSquaresInteractions,
    /// `k(x, X_l)` for every target subject `l`.
    KernelColumns(KernelSpec),
}

/// Functions of the covariates whose V means the weighted U must reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub basis: Basis,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec { basis: Basis::Raw }
    }
}

impl std::str::FromStr for FeatureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let basis = match s {
            "raw" => Basis::Raw,
            "raw+squares" => Basis::RawSquares,
            "raw+squares+interactions" => Basis::RawSquaresInteractions,
            "kernel" => Basis::KernelColumns(KernelSpec::default()),
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown feature basis '{other}' (expected raw, raw+squares, raw+squares+interactions or kernel)"
                )))
            }
        };
        Ok(FeatureSpec { basis })
    }
}

/// Feature values for every subject, one column per retained feature.
#[derive(Debug, Clone)]
pub struct Features {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
}

impl FeatureSpec {
    pub fn raw() -> Self {
        FeatureSpec::default()
    }

    /// Evaluates the basis on the rows of `x`. Columns that are constant or
    /// linearly dependent on earlier ones are dropped.
    pub fn build(&self, x: &DMatrix<f64>, names: &[String], pair: &GroupPair) -> Result<Features> {
        let (n, p) = x.shape();
        let mut cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).iter().copied().collect()).collect();
        let mut labels: Vec<String> = names.to_vec();
        match &self.basis {
            Basis::Raw => {}
            Basis::RawSquares | Basis::RawSquaresInteractions => {
                for j in 0..p {
                    cols.push((0..n).map(|i| x[(i, j)] * x[(i, j)]).collect());
                    labels.push(format!("{}^2", names[j]));
                }
                if self.basis == Basis::RawSquaresInteractions {
                    for a in 0..p {
                        for b in a + 1..p {
                            cols.push((0..n).map(|i| x[(i, a)] * x[(i, b)]).collect());
                            labels.push(format!("{}*{}", names[a], names[b]));
                        }
                    }
                }
            }
            Basis::KernelColumns(spec) => {
                let rows: Vec<usize> = pair.u.iter().chain(&pair.v).copied().collect();
                let sigma = spec.resolve(&x.select_rows(&rows))?;
                let centers = x.select_rows(&pair.v);
                let k = kernel_matrix(x, &centers, sigma)?;
                cols.clear();
                labels.clear();
                for (c, &l) in pair.v.iter().enumerate() {
                    cols.push(k.column(c).iter().copied().collect());
                    labels.push(format!("k(.,{l})"));
                }
            }
        }
        let full = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        let keep = independent_columns(&full, 1e-8, true);
        if keep.is_empty() {
            return Err(Error::InvalidInput("no usable balance features".into()));
        }
        Ok(Features {
            matrix: full.select_columns(&keep),
            names: keep.iter().map(|&j| labels[j].clone()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PairRole;

    #[test]
    fn squares_of_binary_columns_are_dropped() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 2.0, 0.0, 0.5, 1.0, -1.0]);
        let names = vec!["b".to_string(), "c".to_string()];
        let pair = GroupPair::new(vec![0, 1], vec![2, 3], PairRole::ControlSide).unwrap();
        let f = FeatureSpec { basis: Basis::RawSquares }.build(&x, &names, &pair).unwrap();
        assert_eq!(f.names, vec!["b", "c", "c^2"]);
    }
}
