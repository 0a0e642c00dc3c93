use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::data::{Estimand, GroupPair, PairRole};
use crate::error::{Error, Result};
use crate::solvers::{logistic_fit, SolveDiagnostics, SolverOptions};

use super::{BalanceView, Balancer, WeightSolution};

/// Signed weights over all subjects: `Z/π − (1−Z)/(1−π)` for SATE and the
/// odds form `Z − (1−Z)π/(1−π)` for SATT.
pub fn ipw_weights(treatment: &[bool], estimand: Estimand, pi: &[f64]) -> Result<Vec<f64>> {
    if pi.len() != treatment.len() {
        return Err(Error::Dimension {
            expected: treatment.len(),
            got: pi.len(),
        });
    }
    if pi.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidInput("propensities must lie strictly between 0 and 1".into()));
    }
    match estimand {
        Estimand::Sate => Ok(treatment
            .iter()
            .zip(pi)
            .map(|(&z, &p)| if z { 1.0 / p } else { -1.0 / (1.0 - p) })
            .collect()),
        Estimand::Satt => Ok(treatment
            .iter()
            .zip(pi)
            .map(|(&z, &p)| if z { 1.0 } else { -p / (1.0 - p) })
            .collect()),
        Estimand::Cate => Err(Error::InvalidInput("inverse probability weights cover sate and satt".into())),
    }
}

#[derive(Debug, Clone, Default)]
pub enum Propensity {
    /// Ridge-penalized logistic regression on the design with an intercept.
    #[default]
    Logistic,
    /// Known propensities keyed by subject id.
    Known(BTreeMap<String, f64>),
}

/// Inverse probability weighting; each pair receives the magnitudes of the
/// signed weights on its U.
#[derive(Debug, Clone, Default)]
pub struct Ipw {
    pub propensity: Propensity,
    pub opts: SolverOptions,
}

impl Ipw {
    fn scores(&self, view: &BalanceView) -> Result<(Vec<f64>, SolveDiagnostics)> {
        match &self.propensity {
            Propensity::Known(map) => {
                let p = view
                    .ids()
                    .iter()
                    .map(|id| {
                        map.get(id)
                            .copied()
                            .ok_or_else(|| Error::InvalidInput(format!("no propensity for subject '{id}'")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Ok((p, SolveDiagnostics { converged: true, ..Default::default() }))
            }
            Propensity::Logistic => {
                let x = view.x();
                let (n, p) = x.shape();
                let xt = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
                let fit = logistic_fit(&xt, view.treatment(), 1e-8, &self.opts)?;
                Ok((fit.probabilities, fit.diagnostics))
            }
        }
    }
}

impl Balancer for Ipw {
    fn id(&self) -> &'static str {
        "ipw"
    }

    fn balance(&self, view: &BalanceView, pair: &GroupPair) -> Result<WeightSolution> {
        Ok(self.balance_all(view, std::slice::from_ref(pair))?.remove(0))
    }

    fn balance_all(&self, view: &BalanceView, pairs: &[GroupPair]) -> Result<Vec<WeightSolution>> {
        let (pi, diag) = self.scores(view)?;
        let signed = ipw_weights(view.treatment(), view.estimand(), &pi)?;
        pairs
            .iter()
            .map(|pair| {
                let side_ok = match pair.role {
                    PairRole::TreatedSide => pair.u.iter().all(|&i| view.treatment()[i]),
                    PairRole::ControlSide => pair.u.iter().all(|&i| !view.treatment()[i]),
                };
                if !side_ok {
                    return Err(Error::InvalidInput("group pair does not match treatment".into()));
                }
                let w = pair.u.iter().map(|&i| signed[i].abs()).collect();
                WeightSolution::new("ipw", view, pair, w, diag.clone())
            })
            .collect()
    }
}

/// Uniform weights: the unadjusted difference in means.
#[derive(Debug, Clone, Default)]
pub struct Naive;

impl Balancer for Naive {
    fn id(&self) -> &'static str {
        "naive"
    }

    fn balance(&self, view: &BalanceView, pair: &GroupPair) -> Result<WeightSolution> {
        let m = pair.u.len();
        let diag = SolveDiagnostics {
            converged: true,
            ..Default::default()
        };
        WeightSolution::new("naive", view, pair, vec![1.0 / m as f64; m], diag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_formulas() {
        let z = [true, false];
        assert_eq!(ipw_weights(&z, Estimand::Sate, &[0.5, 0.5]).unwrap(), vec![2.0, -2.0]);
        assert_eq!(ipw_weights(&z, Estimand::Satt, &[0.3, 0.5]).unwrap(), vec![1.0, -1.0]);
        assert!(ipw_weights(&z, Estimand::Sate, &[1.0, 0.5]).is_err());
        assert!(ipw_weights(&z, Estimand::Sate, &[0.5, 0.0]).is_err());
    }
}
